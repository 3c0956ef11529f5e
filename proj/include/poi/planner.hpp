#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "poi/model.hpp"
#include "poi/sim.hpp"

namespace poi {

// A pixel in the goal image designating an object and where it should end up.
struct PixelPair {
    int obj_i = 0, obj_j = 0;
    int goal_i = 0, goal_j = 0;
};

struct TaskSpec {
    WorldState start;
    std::vector<Vec2> goals; // per object, arena coordinates
    std::vector<PixelPair> pairs;
    int horizon = 18;
    int frame_h = 16, frame_w = 16;
};

struct CemConfig {
    int iterations = 4;
    int candidates = 1200;
    double elite_fraction = 0.05;
    int plan_horizon = 18;
    int unique_actions = 6; // each held for `repeat` consecutive steps
    int repeat = 3;
    double init_std = 0.05;
    double var_floor = 1e-6;

    int elite_count() const {
        int e = static_cast<int>(std::ceil(candidates * elite_fraction));
        return e < 2 ? 2 : e;
    }
};

// Draws a fresh scene in the acting embodiment and designates every object's
// start and goal position as a pixel pair, giving a held-out tool-use task.
inline TaskSpec sample_task(uint64_t seed, int horizon = 18, int frame_h = 16, int frame_w = 16) {
    Rng rng(seed);
    EpisodeSetup ep = random_scene(rng, Domain::interaction);
    TaskSpec task;
    task.start = ep.state;
    task.goals = ep.goals;
    task.horizon = horizon;
    task.frame_h = frame_h;
    task.frame_w = frame_w;
    for (size_t i = 0; i < ep.goals.size() && i < 3; ++i) {
        auto to_px = [&](Vec2 v) {
            int pi = std::min(frame_h - 1, std::max(0, static_cast<int>(v.y * frame_h)));
            int pj = std::min(frame_w - 1, std::max(0, static_cast<int>(v.x * frame_w)));
            return std::pair<int, int>(pi, pj);
        };
        auto [oi, oj] = to_px(ep.state.objects[i].center);
        auto [gi, gj] = to_px(ep.goals[i]);
        task.pairs.push_back({oi, oj, gi, gj});
    }
    return task;
}

namespace detail {

inline Tensor frame_to_tensor(const std::vector<float>& hwc, int h, int w) {
    Tensor out = Tensor::zeros({3, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c)
                out.data()[(static_cast<int64_t>(c) * h + i) * w + j] =
                    hwc[(static_cast<int64_t>(i) * w + j) * 3 + c];
    return out;
}

} // namespace detail

inline void validate_task(const TaskSpec& task) {
    if (task.pairs.empty() || task.pairs.size() > 3)
        throw DataError("task: need 1-3 designated pixel pairs");
    for (const auto& p : task.pairs)
        if (p.obj_i < 0 || p.obj_i >= task.frame_h || p.obj_j < 0 || p.obj_j >= task.frame_w ||
            p.goal_i < 0 || p.goal_i >= task.frame_h || p.goal_j < 0 || p.goal_j >= task.frame_w)
            throw DataError("task: designated pixel out of frame bounds");
    if (task.goals.size() != task.start.objects.size())
        throw DataError("task: need one goal per object");
}

// Scene with every object moved to its goal position; agent and tool as at
// the start.
inline WorldState goal_state(const TaskSpec& task) {
    WorldState s = task.start;
    for (size_t i = 0; i < s.objects.size(); ++i) s.objects[i].center = task.goals[i];
    return s;
}

inline Tensor goal_frame(const TaskSpec& task) {
    return detail::frame_to_tensor(render(goal_state(task), task.frame_h, task.frame_w),
                                   task.frame_h, task.frame_w);
}

namespace detail {

// L2 over the 5x5 patch around the goal pixel (window clamped to the frame),
// all channels.
inline double patch_distance(const Tensor& a, const Tensor& b, int pi, int pj) {
    const int h = static_cast<int>(a.shape()[1]), w = static_cast<int>(a.shape()[2]);
    int i0 = std::max(pi - 2, 0), i1 = std::min(pi + 2, h - 1);
    int j0 = std::max(pj - 2, 0), j1 = std::min(pj + 2, w - 1);
    double acc = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int i = i0; i <= i1; ++i)
            for (int j = j0; j <= j1; ++j) {
                int64_t idx = (static_cast<int64_t>(c) * h + i) * w + j;
                double d = a.data()[idx] - b.data()[idx];
                acc += d * d;
            }
    return std::sqrt(acc);
}

inline double cost_against_goal(const std::vector<Tensor>& predicted, const TaskSpec& task,
                                const Tensor& goal) {
    if (predicted.empty()) throw DataError("cost: no predicted frames");
    const Tensor& fin = predicted.back();
    if (fin.shape() != goal.shape()) shape_fail("cost", fin.shape(), goal.shape());
    double acc = 0.0;
    for (const auto& p : task.pairs) acc += patch_distance(fin, goal, p.goal_i, p.goal_j);
    double l1 = 0.0;
    for (int64_t i = 0; i < fin.size(); ++i) l1 += std::fabs(fin.data()[i] - goal.data()[i]);
    return acc + 0.1 * l1 / static_cast<double>(fin.size());
}

} // namespace detail

// Designated-pixel patch distance on the final predicted frame plus a small
// whole-image L1 term against the rendered goal frame.
inline double cost(const std::vector<Tensor>& predicted, const TaskSpec& task) {
    return detail::cost_against_goal(predicted, task, goal_frame(task));
}

// success iff the mean object-to-goal distance is within the threshold
// (boundary inclusive)
struct SuccessResult {
    bool success = false;
    double distance = 0.0;
};

inline SuccessResult evaluate_success(const WorldState& final_state, const TaskSpec& task) {
    if (task.goals.size() != final_state.objects.size())
        throw DataError("evaluate_success: goal/object count mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < task.goals.size(); ++i)
        acc += (final_state.objects[i].center - task.goals[i]).norm();
    double mean = acc / static_cast<double>(task.goals.size());
    return {mean <= kSuccessDistance, mean};
}

struct CemResult {
    std::vector<Vec2> unique_actions;     // best candidate of the final iteration
    double best_cost = 0.0;
    std::vector<double> elite_mean_cost;  // one entry per iteration
    std::vector<double> final_mean;       // refit mean after the last iteration
    std::vector<double> final_var;        // refit variance (floored)
};

// Generic CEM loop over clamped action parameters. `cost_fn` scores one
// candidate (its unique actions, pre-repetition). Ties break toward the lower
// candidate index.
template <class CostFn>
CemResult cem_optimize(const CemConfig& cfg, uint64_t seed, CostFn&& cost_fn) {
    if (cfg.plan_horizon != cfg.unique_actions * cfg.repeat)
        throw DataError("cem: plan_horizon must equal unique_actions * repeat");
    const int dims = cfg.unique_actions * 2;
    std::vector<double> mean(static_cast<size_t>(dims), 0.0);
    std::vector<double> var(static_cast<size_t>(dims), cfg.init_std * cfg.init_std);

    Rng rng(seed);
    CemResult res;
    std::vector<std::vector<double>> params(static_cast<size_t>(cfg.candidates));
    std::vector<double> costs(static_cast<size_t>(cfg.candidates));
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        for (int c = 0; c < cfg.candidates; ++c) {
            auto& p = params[static_cast<size_t>(c)];
            p.resize(static_cast<size_t>(dims));
            std::vector<Vec2> unique(static_cast<size_t>(cfg.unique_actions));
            for (int d = 0; d < dims; ++d) {
                double v = mean[static_cast<size_t>(d)] +
                           std::sqrt(var[static_cast<size_t>(d)]) * rng.normal();
                p[static_cast<size_t>(d)] = clamp01(v, -kActionLimit, kActionLimit);
            }
            for (int u = 0; u < cfg.unique_actions; ++u)
                unique[static_cast<size_t>(u)] = {p[static_cast<size_t>(2 * u)],
                                                  p[static_cast<size_t>(2 * u + 1)]};
            double cost_val = cost_fn(unique);
            if (!std::isfinite(cost_val))
                throw NumericError("cem: non-finite candidate cost at iteration " +
                                   std::to_string(iter));
            costs[static_cast<size_t>(c)] = cost_val;
        }
        std::vector<int> order(static_cast<size_t>(cfg.candidates));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return costs[static_cast<size_t>(a)] <
                                                    costs[static_cast<size_t>(b)]; });
        int e = cfg.elite_count();
        double elite_sum = 0.0;
        for (int k = 0; k < e; ++k) elite_sum += costs[static_cast<size_t>(order[static_cast<size_t>(k)])];
        res.elite_mean_cost.push_back(elite_sum / e);

        // refit mean and per-dimension variance to the elites
        std::vector<double> new_mean(static_cast<size_t>(dims), 0.0);
        for (int k = 0; k < e; ++k)
            for (int d = 0; d < dims; ++d)
                new_mean[static_cast<size_t>(d)] +=
                    params[static_cast<size_t>(order[static_cast<size_t>(k)])][static_cast<size_t>(d)];
        for (double& m : new_mean) m /= e;
        std::vector<double> new_var(static_cast<size_t>(dims), 0.0);
        for (int k = 0; k < e; ++k)
            for (int d = 0; d < dims; ++d) {
                double dv = params[static_cast<size_t>(order[static_cast<size_t>(k)])][static_cast<size_t>(d)] -
                            new_mean[static_cast<size_t>(d)];
                new_var[static_cast<size_t>(d)] += dv * dv;
            }
        for (double& v : new_var) v = std::max(v / e, cfg.var_floor);
        mean = std::move(new_mean);
        var = std::move(new_var);

        if (iter == cfg.iterations - 1) {
            int best = order[0];
            res.best_cost = costs[static_cast<size_t>(best)];
            const auto& p = params[static_cast<size_t>(best)];
            res.unique_actions.resize(static_cast<size_t>(cfg.unique_actions));
            for (int u = 0; u < cfg.unique_actions; ++u)
                res.unique_actions[static_cast<size_t>(u)] = {p[static_cast<size_t>(2 * u)],
                                                              p[static_cast<size_t>(2 * u + 1)]};
        }
    }
    res.final_mean = mean;
    res.final_var = var;
    return res;
}

inline std::vector<Vec2> repeat_actions(const std::vector<Vec2>& unique, int repeat) {
    std::vector<Vec2> out;
    for (const auto& a : unique)
        for (int r = 0; r < repeat; ++r) out.push_back(a);
    return out;
}

struct PlanResult {
    std::vector<Vec2> actions; // full executable sequence, length plan_horizon
    double best_cost = 0.0;
    std::vector<double> elite_mean_cost;
    std::vector<Tensor> best_frames; // model rollout of the best candidate
};

// Visual MPC: CEM over repeated action primitives, candidates scored by
// rolling the model forward with action-encoder mean latents and comparing
// against the rendered goal.
inline PlanResult plan(const TaskSpec& task, const PoiModel& model, const CemConfig& cfg,
                       uint64_t seed) {
    validate_task(task);
    const ModelConfig& mc = model.config();
    if (mc.frame_h != task.frame_h || mc.frame_w != task.frame_w)
        throw DataError("plan: checkpoint frame size does not match task");
    if (task.horizon != cfg.plan_horizon)
        throw DataError("plan: task horizon does not match planner config");

    NoGradGuard ng;
    Tensor goal = goal_frame(task);
    Tensor start = detail::frame_to_tensor(render(task.start, task.frame_h, task.frame_w),
                                           task.frame_h, task.frame_w);
    std::vector<Tensor> context(static_cast<size_t>(std::max(mc.context, 1)), start);

    auto rollout_for = [&](const std::vector<Vec2>& unique) {
        std::vector<Tensor> latents;
        latents.reserve(static_cast<size_t>(cfg.plan_horizon));
        for (const auto& a : unique) {
            Tensor z = model.encode_action(Tensor::from({2}, {a.x, a.y})).mean;
            for (int r = 0; r < cfg.repeat; ++r) latents.push_back(z);
        }
        return model.rollout(context, latents);
    };

    CemResult cem = cem_optimize(cfg, seed, [&](const std::vector<Vec2>& unique) {
        return detail::cost_against_goal(rollout_for(unique), task, goal);
    });

    PlanResult out;
    out.actions = repeat_actions(cem.unique_actions, cfg.repeat);
    out.best_cost = cem.best_cost;
    out.elite_mean_cost = std::move(cem.elite_mean_cost);
    out.best_frames = rollout_for(cem.unique_actions);
    return out;
}

// Open-loop execution of a planned sequence in the simulator.
inline std::vector<WorldState> execute_plan(const WorldState& start,
                                            const std::vector<Vec2>& actions) {
    std::vector<WorldState> states = {start};
    for (const auto& a : actions) states.push_back(step(states.back(), a));
    return states;
}

struct ClosedLoopResult {
    std::vector<Vec2> actions;            // executed sequence, length task.horizon
    std::vector<WorldState> states;       // start plus one state per executed action
    std::vector<double> replan_best_cost; // best candidate cost of each replanning round
    SuccessResult outcome;
};

// Model-predictive control: replan from the current simulator state before
// every repeated action triple and execute only the first triple of each
// plan, shrinking the planning horizon to the steps that remain.
inline ClosedLoopResult plan_closed_loop(const TaskSpec& task, const PoiModel& model,
                                         const CemConfig& cfg, uint64_t seed) {
    if (task.horizon != cfg.plan_horizon)
        throw DataError("plan_closed_loop: task horizon does not match planner config");
    ClosedLoopResult res;
    res.states = {task.start};
    const int rounds = cfg.unique_actions;
    for (int k = 0; k < rounds; ++k) {
        TaskSpec sub = task;
        sub.start = res.states.back();
        sub.horizon = cfg.plan_horizon - cfg.repeat * k;
        CemConfig sub_cfg = cfg;
        sub_cfg.plan_horizon = sub.horizon;
        sub_cfg.unique_actions = rounds - k;
        PlanResult pr =
            plan(sub, model, sub_cfg, Rng::derive(seed, 0x6000 + static_cast<uint64_t>(k)));
        res.replan_best_cost.push_back(pr.best_cost);
        for (int a = 0; a < cfg.repeat; ++a) {
            res.actions.push_back(pr.actions[static_cast<size_t>(a)]);
            res.states.push_back(step(res.states.back(), res.actions.back()));
        }
    }
    res.outcome = evaluate_success(res.states.back(), task);
    return res;
}

// ---------------------------------------------------------------------------
// Task files: line-oriented text, one keyword per line.
// ---------------------------------------------------------------------------

inline void save_task(const std::string& path, const TaskSpec& task) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write task file: " + path);
    out.precision(17);
    out << "frame " << task.frame_h << " " << task.frame_w << "\n";
    out << "horizon " << task.horizon << "\n";
    out << "agent " << task.start.agent.x << " " << task.start.agent.y << " "
        << task.start.agent_radius << " " << static_cast<int>(task.start.embodiment) << "\n";
    out << "tool " << task.start.tool.a.x << " " << task.start.tool.a.y << " "
        << task.start.tool.b.x << " " << task.start.tool.b.y << " " << task.start.tool.radius
        << " " << (task.start.tool_attached ? 1 : 0) << "\n";
    for (size_t i = 0; i < task.start.objects.size(); ++i) {
        const auto& o = task.start.objects[i];
        out << "object " << o.center.x << " " << o.center.y << " " << o.radius << " " << o.color
            << " goal " << task.goals[i].x << " " << task.goals[i].y << "\n";
    }
    for (const auto& p : task.pairs)
        out << "pair " << p.obj_i << " " << p.obj_j << " " << p.goal_i << " " << p.goal_j << "\n";
    if (!out) throw DataError("task write failed: " + path);
}

inline TaskSpec load_task(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read task file: " + path);
    TaskSpec task;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "frame") {
            ls >> task.frame_h >> task.frame_w;
        } else if (key == "horizon") {
            ls >> task.horizon;
        } else if (key == "agent") {
            int emb = 0;
            ls >> task.start.agent.x >> task.start.agent.y >> task.start.agent_radius >> emb;
            task.start.embodiment = static_cast<Domain>(emb);
        } else if (key == "tool") {
            int attached = 0;
            ls >> task.start.tool.a.x >> task.start.tool.a.y >> task.start.tool.b.x >>
                task.start.tool.b.y >> task.start.tool.radius >> attached;
            task.start.tool_attached = attached != 0;
        } else if (key == "object") {
            ObjectDisk o;
            std::string goal_kw;
            Vec2 g;
            ls >> o.center.x >> o.center.y >> o.radius >> o.color >> goal_kw >> g.x >> g.y;
            if (goal_kw != "goal") throw DataError("task file: malformed object line: " + line);
            task.start.objects.push_back(o);
            task.goals.push_back(g);
        } else if (key == "pair") {
            PixelPair p;
            ls >> p.obj_i >> p.obj_j >> p.goal_i >> p.goal_j;
            task.pairs.push_back(p);
        } else {
            throw DataError("task file: unknown keyword '" + key + "'");
        }
        if (ls.fail()) throw DataError("task file: malformed line: " + line);
    }
    validate_task(task);
    return task;
}

inline void write_plan_csv(const std::string& path, const PlanResult& result) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write plan csv: " + path);
    out.precision(17);
    out << "record,index,a,b\n";
    for (size_t i = 0; i < result.elite_mean_cost.size(); ++i)
        out << "elite_mean_cost," << i << "," << result.elite_mean_cost[i] << ",\n";
    out << "best_cost,0," << result.best_cost << ",\n";
    for (size_t i = 0; i < result.actions.size(); ++i)
        out << "action," << i << "," << result.actions[i].x << "," << result.actions[i].y << "\n";
}

inline void write_plan_csv(const std::string& path, const ClosedLoopResult& result) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write plan csv: " + path);
    out.precision(17);
    out << "record,index,a,b\n";
    for (size_t i = 0; i < result.replan_best_cost.size(); ++i)
        out << "replan_best_cost," << i << "," << result.replan_best_cost[i] << ",\n";
    out << "distance,0," << result.outcome.distance << ",\n";
    for (size_t i = 0; i < result.actions.size(); ++i)
        out << "action," << i << "," << result.actions[i].x << "," << result.actions[i].y << "\n";
}

} // namespace poi
