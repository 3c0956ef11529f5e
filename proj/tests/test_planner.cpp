#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "poi/image.hpp"
#include "poi/planner.hpp"

using namespace poi;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.layout = {2, 1};
    c.act_hidden = 4;
    c.inv_c1 = 2;
    c.inv_c2 = 3;
    c.inv_c3 = 4;
    c.gen_channels = 4;
    c.prior_lstm_hidden = 4;
    return c;
}

TaskSpec make_task(uint64_t seed, int horizon = 6) { // test-local: short horizon default
    return sample_task(seed, horizon);
}

CemConfig small_cem() {
    CemConfig cfg;
    cfg.iterations = 2;
    cfg.candidates = 12;
    cfg.elite_fraction = 0.25;
    cfg.unique_actions = 2;
    cfg.repeat = 3;
    cfg.plan_horizon = 6;
    return cfg;
}

double quadratic_cost(const std::vector<Vec2>& unique, const std::vector<Vec2>& target) {
    double acc = 0.0;
    for (size_t i = 0; i < unique.size(); ++i) {
        Vec2 d = unique[i] - target[i];
        acc += d.x * d.x + d.y * d.y;
    }
    return acc;
}

} // namespace

TEST_CASE("planner defaults match the documented configuration") {
    CemConfig cfg;
    REQUIRE(cfg.iterations == 4);
    REQUIRE(cfg.candidates == 1200);
    REQUIRE(cfg.elite_fraction == 0.05);
    REQUIRE(cfg.plan_horizon == 18);
    REQUIRE(cfg.unique_actions == 6);
    REQUIRE(cfg.repeat == 3);
    REQUIRE(cfg.plan_horizon == cfg.unique_actions * cfg.repeat);
    REQUIRE(cfg.elite_count() == 60);
    CemConfig tiny;
    tiny.candidates = 10;
    tiny.elite_fraction = 0.05;
    REQUIRE(tiny.elite_count() == 2); // floor of two elites
}

TEST_CASE("cem converges on a stubbed quadratic cost") {
    CemConfig cfg; // paper defaults
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed * 31);
        std::vector<Vec2> target(6);
        for (auto& t : target) t = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        CemResult res = cem_optimize(cfg, seed, [&](const std::vector<Vec2>& u) {
            return quadratic_cost(u, target);
        });
        for (int u = 0; u < 6; ++u) {
            REQUIRE(res.final_mean[static_cast<size_t>(2 * u)] ==
                    Catch::Approx(target[static_cast<size_t>(u)].x).margin(1e-2));
            REQUIRE(res.final_mean[static_cast<size_t>(2 * u + 1)] ==
                    Catch::Approx(target[static_cast<size_t>(u)].y).margin(1e-2));
        }
    }
}

TEST_CASE("cem is deterministic and elite cost is monotone") {
    CemConfig cfg;
    cfg.candidates = 120;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(777 + seed);
        std::vector<Vec2> target(6);
        for (auto& t : target) t = {rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)};
        auto fn = [&](const std::vector<Vec2>& u) { return quadratic_cost(u, target); };
        CemResult a = cem_optimize(cfg, seed, fn);
        CemResult b = cem_optimize(cfg, seed, fn);
        REQUIRE(a.best_cost == b.best_cost);
        REQUIRE(a.final_mean == b.final_mean);
        for (size_t i = 0; i + 1 < a.elite_mean_cost.size(); ++i)
            REQUIRE(a.elite_mean_cost[i + 1] <= a.elite_mean_cost[i] + 1e-9);
    }
}

TEST_CASE("cem variance never collapses below the floor") {
    CemConfig cfg;
    cfg.iterations = 20;
    cfg.candidates = 60;
    std::vector<Vec2> target(6, Vec2{0.01, -0.02});
    CemResult res = cem_optimize(cfg, 3, [&](const std::vector<Vec2>& u) {
        return quadratic_cost(u, target);
    });
    for (double v : res.final_var) REQUIRE(v >= 1e-6);
}

TEST_CASE("cem rejects inconsistent horizon and non-finite costs") {
    CemConfig cfg;
    cfg.plan_horizon = 17;
    REQUIRE_THROWS_AS(cem_optimize(cfg, 0, [](const std::vector<Vec2>&) { return 0.0; }),
                      DataError);
    CemConfig ok;
    ok.candidates = 10;
    REQUIRE_THROWS_AS(
        cem_optimize(ok, 0, [](const std::vector<Vec2>&) { return std::nan(""); }),
        NumericError);
}

TEST_CASE("repeated action structure") {
    std::vector<Vec2> unique = {{0.1, 0.0}, {-0.05, 0.02}};
    std::vector<Vec2> seq = repeat_actions(unique, 3);
    REQUIRE(seq.size() == 6);
    for (size_t u = 0; u < unique.size(); ++u)
        for (int r = 0; r < 3; ++r) {
            REQUIRE(seq[u * 3 + static_cast<size_t>(r)].x == unique[u].x);
            REQUIRE(seq[u * 3 + static_cast<size_t>(r)].y == unique[u].y);
        }
}

TEST_CASE("cost identities") {
    TaskSpec task = make_task(9);
    Tensor goal = goal_frame(task);
    SECTION("final frame equal to goal gives zero cost") {
        REQUIRE(cost({goal}, task) == 0.0);
    }
    SECTION("uniform pixel offset scales the cost linearly") {
        auto shifted = [&](double d) {
            Tensor f = Tensor::zeros(goal.shape());
            for (int64_t i = 0; i < f.size(); ++i) f.data()[i] = goal.data()[i] + d;
            return f;
        };
        double c1 = cost({shifted(0.0625)}, task);
        double c2 = cost({shifted(0.125)}, task);
        REQUIRE(c1 > 0.0);
        REQUIRE(c2 == Catch::Approx(2.0 * c1).epsilon(1e-12));
    }
    SECTION("matches a naive reference implementation") {
        Rng rng(21);
        Tensor fin = Tensor::zeros(goal.shape());
        for (double& v : fin.data()) v = rng.uniform();
        double got = cost({goal, fin}, task); // only the final frame counts
        // straightforward reimplementation
        auto at = [&](const Tensor& t, int c, int i, int j) {
            return t.data()[(static_cast<int64_t>(c) * 16 + i) * 16 + j];
        };
        double want = 0.0;
        for (const auto& p : task.pairs) {
            double acc = 0.0;
            for (int c = 0; c < 3; ++c)
                for (int i = p.goal_i - 2; i <= p.goal_i + 2; ++i)
                    for (int j = p.goal_j - 2; j <= p.goal_j + 2; ++j) {
                        if (i < 0 || i > 15 || j < 0 || j > 15) continue;
                        double d = at(fin, c, i, j) - at(goal, c, i, j);
                        acc += d * d;
                    }
            want += std::sqrt(acc);
        }
        double l1 = 0.0;
        for (int64_t i = 0; i < fin.size(); ++i) l1 += std::fabs(fin.data()[i] - goal.data()[i]);
        want += 0.1 * l1 / static_cast<double>(fin.size());
        REQUIRE(got == Catch::Approx(want).margin(1e-12));
    }
    SECTION("empty prediction rejected") {
        REQUIRE_THROWS_AS(cost({}, task), DataError);
    }
}

TEST_CASE("success evaluation") {
    TaskSpec task;
    task.start.objects = {ObjectDisk{{0.3, 0.3}, 0.05, 0}, ObjectDisk{{0.7, 0.7}, 0.05, 1}};
    task.goals = {{0.3, 0.3}, {0.7, 0.7}};
    task.pairs.push_back({1, 1, 2, 2});

    SECTION("objects exactly at goals") {
        auto r = evaluate_success(task.start, task);
        REQUIRE(r.success);
        REQUIRE(r.distance == 0.0);
    }
    SECTION("boundary mean distance 0.1 counts as success") {
        WorldState s = task.start;
        s.objects[0].center = {0.5, 0.3};
        task.goals[0] = {0.3, 0.3}; // distance 0.2, other object at 0.0
        auto r = evaluate_success(s, task);
        REQUIRE(r.distance == Catch::Approx(0.1).margin(1e-15));
        REQUIRE(r.success);
    }
    SECTION("agrees with an independent distance computation") {
        Rng rng(5);
        for (int trial = 0; trial < 50; ++trial) {
            WorldState s = task.start;
            double acc = 0.0;
            for (size_t i = 0; i < s.objects.size(); ++i) {
                s.objects[i].center = {rng.uniform(), rng.uniform()};
                double dx = s.objects[i].center.x - task.goals[i].x;
                double dy = s.objects[i].center.y - task.goals[i].y;
                acc += std::hypot(dx, dy);
            }
            auto r = evaluate_success(s, task);
            double mean = acc / 2.0;
            REQUIRE(r.distance == Catch::Approx(mean).margin(1e-12));
            REQUIRE(r.success == (mean <= 0.1));
        }
    }
}

TEST_CASE("task validation") {
    TaskSpec task = make_task(3);
    SECTION("no pairs") {
        task.pairs.clear();
        REQUIRE_THROWS_AS(validate_task(task), DataError);
    }
    SECTION("too many pairs") {
        task.pairs.resize(1);
        for (int i = 0; i < 3; ++i) task.pairs.push_back(task.pairs[0]);
        REQUIRE_THROWS_AS(validate_task(task), DataError);
    }
    SECTION("pixel out of bounds") {
        task.pairs[0].goal_j = 16;
        REQUIRE_THROWS_AS(validate_task(task), DataError);
    }
    SECTION("goal count mismatch") {
        task.goals.pop_back();
        REQUIRE_THROWS_AS(validate_task(task), DataError);
    }
}

TEST_CASE("plan on a tiny model") {
    PoiModel model(tiny_model(), 17);
    TaskSpec task = make_task(11);
    CemConfig cfg = small_cem();

    std::map<std::string, std::vector<double>> before;
    for (const auto& [name, p] : model.params().all()) before[name] = p.data();

    PlanResult a = plan(task, model, cfg, 42);
    PlanResult b = plan(task, model, cfg, 42);

    SECTION("deterministic under a fixed seed") {
        REQUIRE(a.best_cost == b.best_cost);
        REQUIRE(a.actions.size() == b.actions.size());
        for (size_t i = 0; i < a.actions.size(); ++i) {
            REQUIRE(a.actions[i].x == b.actions[i].x);
            REQUIRE(a.actions[i].y == b.actions[i].y);
        }
    }
    SECTION("full sequence has the repeated-triple structure") {
        REQUIRE(a.actions.size() == 6);
        for (size_t u = 0; u < 2; ++u)
            for (int r = 1; r < 3; ++r) {
                REQUIRE(a.actions[u * 3].x == a.actions[u * 3 + static_cast<size_t>(r)].x);
                REQUIRE(a.actions[u * 3].y == a.actions[u * 3 + static_cast<size_t>(r)].y);
            }
        for (const auto& act : a.actions) {
            REQUIRE(std::fabs(act.x) <= kActionLimit);
            REQUIRE(std::fabs(act.y) <= kActionLimit);
        }
    }
    SECTION("planning does not mutate the checkpoint") {
        for (const auto& [name, p] : model.params().all())
            REQUIRE(p.data() == before.at(name));
    }
    SECTION("mismatched task horizon rejected") {
        TaskSpec bad = task;
        bad.horizon = 18;
        REQUIRE_THROWS_AS(plan(bad, model, cfg, 1), DataError);
    }
    SECTION("best frames cover the horizon") {
        REQUIRE(a.best_frames.size() == 6);
        for (const auto& f : a.best_frames) REQUIRE(f.shape() == Shape{3, 16, 16});
    }
}

TEST_CASE("execute_plan steps the simulator open-loop") {
    TaskSpec task = make_task(13);
    std::vector<Vec2> actions = repeat_actions({{0.05, 0.0}, {0.0, 0.05}}, 3);
    auto states = execute_plan(task.start, actions);
    REQUIRE(states.size() == 7);
    // replay by hand
    WorldState s = task.start;
    for (const auto& a : actions) s = step(s, a);
    REQUIRE(states.back().agent.x == s.agent.x);
    REQUIRE(states.back().agent.y == s.agent.y);
}

TEST_CASE("closed-loop planning replans per triple") {
    PoiModel model(tiny_model(), 17);
    TaskSpec task = make_task(21);
    CemConfig cfg = small_cem();

    ClosedLoopResult a = plan_closed_loop(task, model, cfg, 7);
    ClosedLoopResult b = plan_closed_loop(task, model, cfg, 7);

    SECTION("executed sequence covers the horizon") {
        REQUIRE(a.actions.size() == 6);
        REQUIRE(a.states.size() == 7);
        REQUIRE(a.replan_best_cost.size() == 2); // one round per unique action
    }
    SECTION("states replay the executed actions") {
        auto states = execute_plan(task.start, a.actions);
        REQUIRE(states.back().agent.x == a.states.back().agent.x);
        REQUIRE(states.back().agent.y == a.states.back().agent.y);
    }
    SECTION("outcome matches the final state") {
        SuccessResult sr = evaluate_success(a.states.back(), task);
        REQUIRE(a.outcome.distance == sr.distance);
        REQUIRE(a.outcome.success == sr.success);
    }
    SECTION("deterministic under a fixed seed") {
        REQUIRE(a.outcome.distance == b.outcome.distance);
        for (size_t i = 0; i < a.actions.size(); ++i) {
            REQUIRE(a.actions[i].x == b.actions[i].x);
            REQUIRE(a.actions[i].y == b.actions[i].y);
        }
    }
    SECTION("mismatched task horizon rejected") {
        TaskSpec bad = task;
        bad.horizon = 18;
        REQUIRE_THROWS_AS(plan_closed_loop(bad, model, cfg, 1), DataError);
    }
}

TEST_CASE("task files round-trip") {
    namespace fs = std::filesystem;
    TaskSpec task = make_task(19);
    fs::path path = fs::temp_directory_path() / "poi_task.txt";
    save_task(path.string(), task);
    TaskSpec loaded = load_task(path.string());
    REQUIRE(loaded.horizon == task.horizon);
    REQUIRE(loaded.frame_h == task.frame_h);
    REQUIRE(loaded.start.agent.x == task.start.agent.x);
    REQUIRE(loaded.start.tool.b.y == task.start.tool.b.y);
    REQUIRE(loaded.start.objects.size() == task.start.objects.size());
    for (size_t i = 0; i < task.goals.size(); ++i) {
        REQUIRE(loaded.goals[i].x == task.goals[i].x);
        REQUIRE(loaded.start.objects[i].center.y == task.start.objects[i].center.y);
    }
    REQUIRE(loaded.pairs.size() == task.pairs.size());
    REQUIRE(loaded.pairs[0].goal_i == task.pairs[0].goal_i);

    SECTION("unknown keyword rejected") {
        std::ofstream out(path);
        out << "bogus 1 2 3\n";
        out.close();
        REQUIRE_THROWS_AS(load_task(path.string()), DataError);
    }
    fs::remove(path);
}

TEST_CASE("ppm grid writer emits valid P6 output") {
    namespace fs = std::filesystem;
    Tensor f = Tensor::from({3, 2, 2}, {0.0, 1.0, 0.5, 0.25,   // R
                                        1.0, 0.0, 0.5, 0.75,   // G
                                        0.0, 0.0, 1.0, 1.0});  // B
    fs::path path = fs::temp_directory_path() / "poi_grid.ppm";
    write_ppm_grid(path.string(), {f}, 4);
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    int w, h, maxv;
    in >> magic >> w >> h >> maxv;
    REQUIRE(magic == "P6");
    REQUIRE(w == 2);
    REQUIRE(h == 2);
    REQUIRE(maxv == 255);
    in.get(); // single whitespace after header
    std::vector<uint8_t> px(12);
    in.read(reinterpret_cast<char*>(px.data()), 12);
    REQUIRE(in.gcount() == 12);
    // pixel (0,0): r=0, g=255, b=0; pixel (0,1): r=255, g=0, b=0
    REQUIRE(px[0] == 0);
    REQUIRE(px[1] == 255);
    REQUIRE(px[2] == 0);
    REQUIRE(px[3] == 255);
    REQUIRE(px[4] == 0);
    REQUIRE(px[5] == 0);
    // pixel (1,0): 0.5 -> 128 after rounding
    REQUIRE(px[6] == 128);
    fs::remove(path);
}
