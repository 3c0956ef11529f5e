#pragma once

#include <chrono>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "poi/nn.hpp"
#include "poi/objectives.hpp"
#include "poi/sim.hpp"

namespace poi {

enum class TrainMode { poi, interaction_only, shared_inverse, oracle };

inline const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::poi: return "poi";
        case TrainMode::interaction_only: return "interaction_only";
        case TrainMode::shared_inverse: return "shared_inverse";
        case TrainMode::oracle: return "oracle";
    }
    return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "poi") return TrainMode::poi;
    if (s == "interaction_only") return TrainMode::interaction_only;
    if (s == "shared_inverse") return TrainMode::shared_inverse;
    if (s == "oracle") return TrainMode::oracle;
    throw DataError("unknown training mode: " + s);
}

struct TrainConfig {
    ModelConfig model;
    LossWeights weights;
    int batch_size = 12;
    int interaction_per_batch = 9;
    int observation_per_batch = 3;
    double lr = 0.001, beta1 = 0.9, beta2 = 0.999;
    double schedule_k = 900.0;
    int horizon = 15; // predicted frames per training window
    TrainMode mode = TrainMode::poi;
    uint64_t seed = 0;
    int steps = 1000;
    int val_interval = 250;
    int val_members = 12;      // validation pool cap, keeps periodic eval cheap
    double inv_weight = 1.0;   // raw-action supervision weight (shared_inverse)
};

// Ground-truth feed-in probability at optimizer step i: min(k / e^{i/k}, 1).
inline double scheduled_sampling_prob(int64_t i, double k) {
    if (i < 0 || k <= 0.0) throw DataError("scheduled_sampling_prob: need i >= 0, k > 0");
    double p = k / std::exp(static_cast<double>(i) / k);
    return p < 1.0 ? p : 1.0;
}

struct StepLog {
    int64_t step = 0;
    double recon = 0, action_nll = 0, kl_act = 0, kl_inv = 0, js = 0, tv = 0, total = 0;
    double p = 0, wall_ms = 0;
};

struct ValLog {
    int64_t step = 0;
    double total = 0;
};

struct TrainLog {
    std::vector<StepLog> steps;
    std::vector<ValLog> validations;
};

inline void write_train_log(const std::string& path, const TrainLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write train log: " + path);
    out << "step,recon,action_nll,kl_act,kl_inv,js,tv,total,p,wall_ms\n";
    out << std::setprecision(17);
    for (const auto& s : log.steps)
        out << s.step << ',' << s.recon << ',' << s.action_nll << ',' << s.kl_act << ','
            << s.kl_inv << ',' << s.js << ',' << s.tv << ',' << s.total << ',' << s.p << ','
            << s.wall_ms << '\n';
}

inline void write_val_log(const std::string& path, const TrainLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write validation log: " + path);
    out << "step,val_total\n";
    out << std::setprecision(17);
    for (const auto& v : log.validations) out << v.step << ',' << v.total << '\n';
}

struct TrainData {
    std::vector<Trajectory> interaction;
    std::vector<Trajectory> observation;
};

// Loads the training splits. In oracle mode the sealed observation actions
// are revealed and those trajectories are re-labeled as interaction data.
inline TrainData load_train_data(const std::string& data_dir, TrainMode mode) {
    TrainData data;
    for (const auto& f : list_split(data_dir, "interaction"))
        data.interaction.push_back(load_trajectory(f));
    if (mode == TrainMode::interaction_only) return data;
    for (const auto& f : list_split(data_dir, "observation")) {
        Trajectory t = load_trajectory(f);
        if (mode == TrainMode::oracle) {
            t.actions = load_sealed_actions(f);
            t.has_actions = true;
            t.domain = Domain::interaction;
        }
        data.observation.push_back(std::move(t));
    }
    return data;
}

struct BatchIndices {
    std::vector<int> interaction;
    std::vector<int> observation;
};

namespace detail {

// without replacement when the pool is large enough, with replacement
// otherwise (tiny test datasets)
inline std::vector<int> sample_indices(int pool, int count, Rng& rng) {
    std::vector<int> out;
    if (pool >= count) {
        std::vector<bool> used(static_cast<size_t>(pool), false);
        while (static_cast<int>(out.size()) < count) {
            int i = static_cast<int>(rng.index(static_cast<uint64_t>(pool)));
            if (used[static_cast<size_t>(i)]) continue;
            used[static_cast<size_t>(i)] = true;
            out.push_back(i);
        }
    } else {
        for (int k = 0; k < count; ++k)
            out.push_back(static_cast<int>(rng.index(static_cast<uint64_t>(pool))));
    }
    return out;
}

} // namespace detail

inline BatchIndices build_batch(int interaction_pool, int observation_pool,
                                const TrainConfig& cfg, uint64_t step_seed) {
    int n_int = cfg.interaction_per_batch, n_obs = cfg.observation_per_batch;
    if (cfg.mode == TrainMode::interaction_only) {
        n_int = cfg.batch_size;
        n_obs = 0;
    }
    if (n_int + n_obs != cfg.batch_size)
        throw DataError("build_batch: per-domain counts must sum to batch_size");
    if (interaction_pool < 1 || (n_obs > 0 && observation_pool < 1))
        throw DataError("build_batch: empty required dataset");
    Rng rng(step_seed);
    BatchIndices b;
    b.interaction = detail::sample_indices(interaction_pool, n_int, rng);
    b.observation = detail::sample_indices(observation_pool, n_obs, rng);
    return b;
}

// Truncated copy used to shorten the prediction horizon during training.
inline Trajectory crop_trajectory(const Trajectory& t, int max_frames) {
    if (t.t <= max_frames) return t;
    Trajectory out = t;
    out.t = max_frames;
    out.frames.resize(static_cast<size_t>(max_frames) * t.h * t.w * t.c);
    if (t.has_actions)
        out.actions.resize(static_cast<size_t>(max_frames - 1) * t.action_dim);
    return out;
}

// Baseline losses for the raw-action training mode: the inverse model
// regresses true actions directly, the transition consumes true actions where
// available and inverse-model output where not. No priors, no alignment term.
inline LossBreakdown shared_inverse_interaction_loss(const Trajectory& traj, const PoiModel& model,
                                                     const LossWeights& weights, double inv_weight,
                                                     double sampling_p, uint64_t seed) {
    if (!traj.has_actions) throw DataError("shared_inverse: trajectory has no actions");
    detail::check_length("shared_inverse", traj, model);
    const int steps = static_cast<int>(traj.t) - 1;
    std::vector<Tensor> latents;
    LossBreakdown out;
    for (int t = 0; t < steps; ++t) {
        Tensor a = traj.action_tensor(t);
        latents.push_back(a);
        Tensor d = sub(model.infer_latent(traj.frame_tensor(t), traj.frame_tensor(t + 1)).mean, a);
        out.action_nll = add(out.action_nll, sum(mul(d, d)));
    }
    Rng rng(seed);
    detail::PathResult path = detail::run_path(model, traj, latents, sampling_p, rng);
    out.recon = path.recon;
    out.tv = path.tv;
    out.total = add(scale(out.recon, weights.image_l1), scale(out.action_nll, inv_weight));
    return out;
}

inline LossBreakdown shared_inverse_observation_loss(const Trajectory& traj, const PoiModel& model,
                                                     const LossWeights& weights, double sampling_p,
                                                     uint64_t seed) {
    detail::check_length("shared_inverse", traj, model);
    const int steps = static_cast<int>(traj.t) - 1;
    std::vector<Tensor> latents;
    for (int t = 0; t < steps; ++t)
        latents.push_back(model.infer_latent(traj.frame_tensor(t), traj.frame_tensor(t + 1)).mean);
    Rng rng(seed);
    detail::PathResult path = detail::run_path(model, traj, latents, sampling_p, rng);
    LossBreakdown out;
    out.recon = path.recon;
    out.tv = path.tv;
    out.total = scale(out.recon, weights.image_l1);
    return out;
}

// Mode-dispatched batch objective. poi / interaction_only / oracle all reduce
// to total_objective on their assembled members; shared_inverse swaps in the
// raw-action losses with the same per-domain averaging.
inline LossBreakdown batch_loss(const std::vector<const Trajectory*>& members,
                                const PoiModel& model, const TrainConfig& cfg, double sampling_p,
                                uint64_t seed) {
    if (cfg.mode != TrainMode::shared_inverse)
        return total_objective(members, model, cfg.weights, sampling_p, seed);

    if (members.empty()) throw DataError("batch_loss: empty batch");
    LossBreakdown out, acc_i, acc_o;
    int n_int = 0, n_obs = 0;
    for (size_t i = 0; i < members.size(); ++i) {
        uint64_t ms = Rng::derive(seed, i);
        if (members[i]->has_actions) {
            LossBreakdown lb = shared_inverse_interaction_loss(*members[i], model, cfg.weights,
                                                               cfg.inv_weight, sampling_p, ms);
            acc_i.recon = add(acc_i.recon, lb.recon);
            acc_i.action_nll = add(acc_i.action_nll, lb.action_nll);
            acc_i.tv = add(acc_i.tv, lb.tv);
            acc_i.total = add(acc_i.total, lb.total);
            ++n_int;
        } else {
            LossBreakdown lb =
                shared_inverse_observation_loss(*members[i], model, cfg.weights, sampling_p, ms);
            acc_o.recon = add(acc_o.recon, lb.recon);
            acc_o.tv = add(acc_o.tv, lb.tv);
            acc_o.total = add(acc_o.total, lb.total);
            ++n_obs;
        }
    }
    double wi = n_int > 0 ? 1.0 / n_int : 0.0;
    double wo = n_obs > 0 ? 1.0 / n_obs : 0.0;
    out.recon = add(scale(acc_i.recon, wi), scale(acc_o.recon, wo));
    out.action_nll = scale(acc_i.action_nll, wi);
    out.tv = add(scale(acc_i.tv, wi), scale(acc_o.tv, wo));
    out.total = add(add(scale(acc_i.total, wi), scale(acc_o.total, wo)),
                    scale(out.tv, cfg.weights.tv));
    return out;
}

struct TrainResult {
    PoiModel model;
    TrainLog log;
};

namespace detail {

inline void check_breakdown_finite(const LossBreakdown& lb, int64_t step) {
    auto chk = [step](const char* name, const Tensor& t) {
        if (!std::isfinite(t.item()))
            throw NumericError("training diverged at step " + std::to_string(step) +
                               ": component '" + name + "' is non-finite");
    };
    chk("recon", lb.recon);
    chk("action_nll", lb.action_nll);
    chk("kl_act", lb.kl_act);
    chk("kl_inv", lb.kl_inv);
    chk("js", lb.js);
    chk("tv", lb.tv);
    chk("total", lb.total);
}

} // namespace detail

inline TrainResult train(const TrainConfig& cfg_in, const TrainData& data) {
    TrainConfig cfg = cfg_in;
    if (cfg.mode == TrainMode::shared_inverse) {
        // the latent *is* the raw action in this mode
        cfg.model.layout = {cfg.model.action_dim, 0};
    }
    if (data.interaction.empty() &&
        !(cfg.mode == TrainMode::oracle && !data.observation.empty()))
        throw DataError("train: interaction dataset is empty");

    // held-out tail of each pool (10%) for periodic validation
    auto split_point = [](size_t n) { return n - n / 10; };
    size_t int_train = split_point(data.interaction.size());
    size_t obs_train = split_point(data.observation.size());

    int window = cfg.model.context + cfg.horizon;
    PoiModel model(cfg.model, cfg.seed);
    Adam opt(cfg.lr, cfg.beta1, cfg.beta2);
    TrainLog log;

    auto member_ptrs = [&](const BatchIndices& idx, std::vector<Trajectory>& storage) {
        storage.clear();
        for (int i : idx.interaction)
            storage.push_back(crop_trajectory(data.interaction[static_cast<size_t>(i)], window));
        for (int i : idx.observation)
            storage.push_back(crop_trajectory(data.observation[static_cast<size_t>(i)], window));
        std::vector<const Trajectory*> ptrs;
        for (const auto& t : storage) ptrs.push_back(&t);
        return ptrs;
    };

    auto run_validation = [&](int64_t step) {
        std::vector<Trajectory> storage;
        std::vector<const Trajectory*> ptrs;
        size_t n_val_int = data.interaction.size() - int_train;
        size_t n_val_obs = data.observation.size() - obs_train;
        for (size_t i = 0; i < n_val_int && static_cast<int>(ptrs.size()) < cfg.val_members; ++i)
            storage.push_back(crop_trajectory(data.interaction[int_train + i], window));
        if (cfg.mode != TrainMode::interaction_only)
            for (size_t i = 0; i < n_val_obs && storage.size() < static_cast<size_t>(cfg.val_members); ++i)
                storage.push_back(crop_trajectory(data.observation[obs_train + i], window));
        for (const auto& t : storage) ptrs.push_back(&t);
        if (ptrs.empty()) return;
        NoGradGuard ng;
        LossBreakdown lb = batch_loss(ptrs, model, cfg, 1.0, Rng::derive(cfg.seed, 0xa11));
        log.validations.push_back({step, lb.total.item()});
    };

    for (int64_t step = 0; step < cfg.steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        double p = scheduled_sampling_prob(step, cfg.schedule_k);
        uint64_t step_seed = Rng::derive(cfg.seed, 0x5000000 + static_cast<uint64_t>(step));
        BatchIndices idx = build_batch(static_cast<int>(int_train), static_cast<int>(obs_train),
                                       cfg, step_seed);
        std::vector<Trajectory> storage;
        auto ptrs = member_ptrs(idx, storage);

        LossBreakdown lb = batch_loss(ptrs, model, cfg, p, Rng::derive(step_seed, 1));
        detail::check_breakdown_finite(lb, step);
        model.params().zero_grads();
        backward(lb.total);
        opt.step(model.params());

        double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
        log.steps.push_back({step, lb.recon.item(), lb.action_nll.item(), lb.kl_act.item(),
                             lb.kl_inv.item(), lb.js.item(), lb.tv.item(), lb.total.item(), p, ms});
        if (cfg.val_interval > 0 && (step % cfg.val_interval == 0 || step == cfg.steps - 1))
            run_validation(step);
    }
    return {std::move(model), std::move(log)};
}

} // namespace poi
