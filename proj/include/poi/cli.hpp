#pragma once

#include <cstring>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "poi/config.hpp"
#include "poi/image.hpp"
#include "poi/metrics.hpp"
#include "poi/planner.hpp"
#include "poi/trainer.hpp"

namespace poi {

// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric failure.
enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_numeric = 3 };

inline const char* cli_usage() {
    return "usage: poi <subcommand> [--config=FILE] [--key=value ...]\n"
           "\n"
           "subcommands:\n"
           "  gen-data   generate the interaction/observation/eval dataset under data_dir\n"
           "  train      train a model on data_dir, write checkpoint and logs to out_dir\n"
           "  eval       score a checkpoint: prediction PSNR/SSIM and decoded actions\n"
           "  plan       run visual MPC on sampled (or task_file) tasks and report success\n"
           "  inspect    print the header of a trajectory or checkpoint file\n"
           "\n"
           "options are configuration keys; --config=FILE loads key=value lines first,\n"
           "later --key=value flags override. `poi inspect FILE` takes a positional path.\n";
}

namespace detail {

struct CliArgs {
    std::string subcommand;
    RunConfig config;
    std::vector<std::string> positional;
};

// Throws std::invalid_argument for usage errors, DataError for config-file errors.
inline CliArgs parse_args(int argc, const char* const* argv) {
    if (argc < 2) throw std::invalid_argument("missing subcommand");
    CliArgs args;
    args.subcommand = argv[1];
    for (int i = 2; i < argc; ++i) {
        std::string a = argv[i];
        if (a.rfind("--", 0) != 0) {
            args.positional.push_back(a);
            continue;
        }
        size_t eq = a.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("unknown flag: " + a);
        std::string key = a.substr(2, eq - 2), value = a.substr(eq + 1);
        if (key == "config") {
            args.config = RunConfig::parse_file(value);
        } else {
            try {
                args.config.set(key, value);
            } catch (const DataError&) {
                throw std::invalid_argument("unknown flag: --" + key);
            }
        }
    }
    return args;
}

inline ModelConfig model_config_from(const RunConfig& cfg) {
    ModelConfig m;
    m.layout.shared_dim = cfg.get_int("shared_dim");
    m.layout.domain_dim = cfg.get_int("domain_dim");
    m.frame_h = cfg.get_int("frame_h");
    m.frame_w = cfg.get_int("frame_w");
    m.action_dim = cfg.get_int("action_dim");
    m.context = cfg.get_int("context");
    m.act_hidden = cfg.get_int("act_hidden");
    m.inv_c1 = cfg.get_int("inv_c1");
    m.inv_c2 = cfg.get_int("inv_c2");
    m.inv_c3 = cfg.get_int("inv_c3");
    m.gen_channels = cfg.get_int("gen_channels");
    m.prior_lstm_hidden = cfg.get_int("prior_lstm_hidden");
    return m;
}

inline TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig t;
    t.model = model_config_from(cfg);
    t.weights.image_l1 = cfg.get_double("image_l1");
    t.weights.action_mse = cfg.get_double("action_mse");
    t.weights.kl = cfg.get_double("kl");
    t.weights.js_alpha = cfg.get_double("js_alpha");
    t.weights.tv = cfg.get_double("tv");
    t.batch_size = cfg.get_int("batch_size");
    t.interaction_per_batch = cfg.get_int("interaction_per_batch");
    t.observation_per_batch = cfg.get_int("observation_per_batch");
    t.lr = cfg.get_double("lr");
    t.beta1 = cfg.get_double("beta1");
    t.beta2 = cfg.get_double("beta2");
    t.schedule_k = cfg.get_double("schedule_k");
    t.horizon = cfg.get_int("horizon");
    t.mode = train_mode_from_string(cfg.get("mode"));
    t.seed = cfg.get_u64("seed");
    t.steps = cfg.get_int("steps");
    t.val_interval = cfg.get_int("val_interval");
    t.val_members = cfg.get_int("val_members");
    t.inv_weight = cfg.get_double("inv_weight");
    return t;
}

inline CemConfig cem_config_from(const RunConfig& cfg) {
    CemConfig c;
    c.iterations = cfg.get_int("cem_iterations");
    c.candidates = cfg.get_int("cem_candidates");
    c.elite_fraction = cfg.get_double("cem_elite_fraction");
    c.plan_horizon = cfg.get_int("plan_horizon");
    c.unique_actions = cfg.get_int("unique_actions");
    c.repeat = cfg.get_int("action_repeat");
    c.init_std = cfg.get_double("init_std");
    return c;
}

inline std::string require_checkpoint(const RunConfig& cfg) {
    std::string path = cfg.get("checkpoint");
    if (path.empty()) throw DataError("this subcommand needs checkpoint=PATH");
    return path;
}

inline std::vector<Trajectory> load_split_capped(const std::string& data_dir,
                                                 const std::string& split, int cap) {
    std::vector<Trajectory> out;
    for (const auto& f : list_split(data_dir, split)) {
        if (cap > 0 && static_cast<int>(out.size()) >= cap) break;
        out.push_back(load_trajectory(f));
    }
    return out;
}

inline int cmd_gen_data(const RunConfig& cfg) {
    DatasetSpec spec;
    spec.interaction_count = cfg.get_int("interaction_count");
    spec.observation_count = cfg.get_int("observation_count");
    spec.eval_count = cfg.get_int("eval_count");
    spec.length = cfg.get_int("length");
    spec.height = cfg.get_int("frame_h");
    spec.width = cfg.get_int("frame_w");
    spec.seed = cfg.get_u64("seed");
    spec.out_dir = cfg.get("data_dir");
    gen_dataset(spec);
    std::cout << "wrote " << spec.interaction_count << " interaction, " << spec.observation_count
              << " observation, " << spec.eval_count << " eval trajectories to " << spec.out_dir
              << "\n";
    return exit_ok;
}

inline int cmd_train(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    TrainConfig tc = train_config_from(cfg);
    TrainData data = load_train_data(cfg.get("data_dir"), tc.mode);
    TrainResult res = train(tc, data);

    fs::path out = cfg.get("out_dir");
    fs::create_directories(out);
    std::string ckpt = cfg.get("checkpoint");
    if (ckpt.empty()) ckpt = (out / "checkpoint.bin").string();
    save_checkpoint(ckpt, res.model);
    write_train_log((out / "train_log.csv").string(), res.log);
    write_val_log((out / "val_log.csv").string(), res.log);
    std::cout << "trained " << tc.steps << " steps (" << train_mode_name(tc.mode)
              << "); checkpoint: " << ckpt << "\n";
    if (!res.log.validations.empty())
        std::cout << "final validation loss: " << res.log.validations.back().total << "\n";
    return exit_ok;
}

inline int cmd_eval(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    PoiModel model = load_checkpoint(require_checkpoint(cfg));
    const std::string data_dir = cfg.get("data_dir");
    const int cap = cfg.get_int("eval_max_trajectories");
    fs::path out = cfg.get("out_dir");
    fs::create_directories(out);

    std::vector<Trajectory> test_set = load_split_capped(data_dir, "eval", cap);
    PredReport pred = eval_prediction(model, test_set, cfg.get_int("eval_horizon"));
    write_pred_report((out / "prediction_report.csv").string(), pred);
    write_pred_summary((out / "prediction_summary.csv").string(), pred);

    std::vector<Trajectory> ints = load_split_capped(data_dir, "interaction", cap);
    std::vector<Trajectory> obs;
    std::vector<std::vector<float>> sealed;
    for (const auto& f : list_split(data_dir, "observation")) {
        if (cap > 0 && static_cast<int>(obs.size()) >= cap) break;
        obs.push_back(load_trajectory(f));
        sealed.push_back(load_sealed_actions(f));
    }
    ActionReport act = eval_actions(model, ints, obs, sealed);
    write_action_report((out / "action_report.csv").string(), act);
    write_action_histograms((out / "action_histograms.csv").string(), act);

    std::cout << "prediction over " << pred.rows.size() << " frames: psnr " << pred.mean_psnr
              << " dB (se " << pred.se_psnr << "), ssim " << pred.mean_ssim << " (se "
              << pred.se_ssim << ")\n";
    std::cout << "decoded-action error: interaction " << act.interaction_mean_err
              << ", observation " << act.observation_mean_err << "\n";
    return exit_ok;
}

inline int cmd_plan(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    PoiModel model = load_checkpoint(require_checkpoint(cfg));
    CemConfig cem = cem_config_from(cfg);
    const uint64_t seed = cfg.get_u64("seed");
    fs::path out = cfg.get("out_dir");
    fs::create_directories(out);

    std::vector<TaskSpec> tasks;
    if (!cfg.get("task_file").empty()) {
        tasks.push_back(load_task(cfg.get("task_file")));
    } else {
        int n = cfg.get_int("plan_tasks");
        for (int i = 0; i < n; ++i)
            tasks.push_back(sample_task(Rng::derive(seed, 0x7a50 + static_cast<uint64_t>(i)),
                                        cem.plan_horizon, model.config().frame_h,
                                        model.config().frame_w));
    }

    std::ofstream rep(out / "plan_report.csv", std::ios::trunc);
    if (!rep) throw DataError("cannot write plan report");
    rep << std::setprecision(17) << "task,success,distance,best_cost\n";
    int successes = 0;
    for (size_t i = 0; i < tasks.size(); ++i) {
        ClosedLoopResult cl = plan_closed_loop(tasks[i], model, cem,
                                               Rng::derive(seed, 0x91a0 + static_cast<uint64_t>(i)));
        successes += cl.outcome.success ? 1 : 0;
        rep << i << ',' << (cl.outcome.success ? 1 : 0) << ',' << cl.outcome.distance << ','
            << cl.replan_best_cost.back() << '\n';
        char base[32];
        std::snprintf(base, sizeof(base), "task_%03zu", i);
        write_plan_csv((out / (std::string(base) + "_plan.csv")).string(), cl);
        std::vector<Tensor> frames;
        for (const auto& s : cl.states)
            frames.push_back(detail::frame_to_tensor(
                render(s, tasks[i].frame_h, tasks[i].frame_w), tasks[i].frame_h,
                tasks[i].frame_w));
        write_ppm_grid((out / (std::string(base) + "_frames.ppm")).string(), frames, 6);
    }
    double rate = tasks.empty() ? 0.0 : static_cast<double>(successes) / tasks.size();
    std::ofstream sum(out / "plan_summary.csv", std::ios::trunc);
    sum << std::setprecision(17) << "metric,value\n"
        << "tasks," << tasks.size() << "\nsuccesses," << successes << "\nsuccess_rate," << rate
        << "\n";
    std::cout << "planning: " << successes << "/" << tasks.size() << " tasks solved\n";
    return exit_ok;
}

inline int cmd_inspect(const CliArgs& args) {
    if (args.positional.size() != 1)
        throw std::invalid_argument("inspect takes exactly one file path");
    const std::string& path = args.positional[0];
    auto bytes = detail::read_file(path);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), detail::kTrajMagic, 8) == 0) {
        std::vector<float> sealed;
        Trajectory t = detail::parse_trajectory(bytes, path, &sealed);
        std::cout << "type=trajectory domain=" << domain_name(t.domain) << " t=" << t.t
                  << " h=" << t.h << " w=" << t.w << " c=" << t.c
                  << " action_dim=" << t.action_dim
                  << " has_actions=" << (t.has_actions ? 1 : 0)
                  << " sealed=" << (sealed.empty() ? 0 : 1) << "\n";
        return exit_ok;
    }
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), detail::kCkptMagic, 8) == 0) {
        PoiModel m = load_checkpoint(path);
        const ModelConfig& c = m.config();
        std::cout << "type=checkpoint shared_dim=" << c.layout.shared_dim
                  << " domain_dim=" << c.layout.domain_dim << " frame_h=" << c.frame_h
                  << " frame_w=" << c.frame_w << " frame_c=" << c.frame_c
                  << " action_dim=" << c.action_dim << " context=" << c.context
                  << " act_hidden=" << c.act_hidden << " inv_c1=" << c.inv_c1
                  << " inv_c2=" << c.inv_c2 << " inv_c3=" << c.inv_c3
                  << " gen_channels=" << c.gen_channels
                  << " prior_lstm_hidden=" << c.prior_lstm_hidden
                  << " params=" << m.params().total_size() << "\n";
        return exit_ok;
    }
    throw DataError("unrecognized file format: " + path);
}

} // namespace detail

inline int run_cli(int argc, const char* const* argv) {
    try {
        detail::CliArgs args = detail::parse_args(argc, argv);
        if (args.subcommand == "gen-data") return detail::cmd_gen_data(args.config);
        if (args.subcommand == "train") return detail::cmd_train(args.config);
        if (args.subcommand == "eval") return detail::cmd_eval(args.config);
        if (args.subcommand == "plan") return detail::cmd_plan(args.config);
        if (args.subcommand == "inspect") return detail::cmd_inspect(args);
        throw std::invalid_argument("unknown subcommand: " + args.subcommand);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n\n" << cli_usage();
        return exit_usage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return exit_numeric;
    } catch (const DataError& e) {
        std::cerr << "data/config error: " << e.what() << "\n";
        return exit_data;
    } catch (const ShapeError& e) {
        std::cerr << "data/config error: " << e.what() << "\n";
        return exit_data;
    }
}

} // namespace poi
