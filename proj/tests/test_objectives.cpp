#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "poi/objectives.hpp"

using namespace poi;

namespace {

ModelConfig fd_config() {
    ModelConfig c;
    c.layout = {2, 1};
    c.frame_h = 16;
    c.frame_w = 16;
    c.act_hidden = 4;
    c.inv_c1 = 2;
    c.inv_c2 = 3;
    c.inv_c3 = 4;
    c.gen_channels = 4;
    c.prior_lstm_hidden = 4;
    return c;
}

Trajectory make_traj(Domain domain, int t, int h, int w, uint64_t seed, bool with_actions,
                     float lo = 0.3f, float hi = 0.7f) {
    Trajectory traj;
    traj.domain = domain;
    traj.t = t;
    traj.h = h;
    traj.w = w;
    traj.c = 3;
    traj.action_dim = 2;
    traj.has_actions = with_actions;
    Rng rng(seed);
    traj.frames.resize(static_cast<size_t>(t) * h * w * 3);
    for (float& v : traj.frames) v = lo + (hi - lo) * static_cast<float>(rng.uniform());
    if (with_actions) {
        traj.actions.resize(static_cast<size_t>(t - 1) * 2);
        for (float& v : traj.actions) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
    return traj;
}

void zero_params_with_prefix(PoiModel& model, const std::string& prefix) {
    for (const auto& [name, p] : model.params().all())
        if (name.rfind(prefix, 0) == 0) {
            Tensor t = p;
            std::fill(t.data().begin(), t.data().end(), 0.0);
        }
}

void scale_params_with_prefix(PoiModel& model, const std::string& prefix, double s) {
    for (const auto& [name, p] : model.params().all())
        if (name.rfind(prefix, 0) == 0) {
            Tensor t = p;
            for (double& v : t.data()) v *= s;
        }
}

} // namespace

TEST_CASE("tv_loss identities") {
    REQUIRE(tv_loss(Tensor::full({3, 4, 5}, 0.37)).item() == 0.0);
    // single horizontal difference: |1 - 0| = 1
    REQUIRE(tv_loss(Tensor::from({1, 1, 2}, {0.0, 1.0})).item() == 1.0);
    REQUIRE_THROWS_AS(tv_loss(Tensor::zeros({3, 1, 1})), ShapeError);
    REQUIRE_THROWS_AS(tv_loss(Tensor::zeros({6})), ShapeError);
}

TEST_CASE("tv_loss matches naive reference on random images") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        int c = 1 + static_cast<int>(rng.index(3));
        int h = 2 + static_cast<int>(rng.index(6));
        int w = 2 + static_cast<int>(rng.index(6));
        Tensor x = Tensor::zeros({c, h, w});
        for (double& v : x.data()) v = rng.uniform();
        auto at = [&](int ch, int i, int j) { return x.data()[(ch * h + i) * w + j]; };
        double ref = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            for (int i = 0; i + 1 < h; ++i)
                for (int j = 0; j < w; ++j) ref += std::fabs(at(ch, i + 1, j) - at(ch, i, j));
            for (int i = 0; i < h; ++i)
                for (int j = 0; j + 1 < w; ++j) ref += std::fabs(at(ch, i, j + 1) - at(ch, i, j));
        }
        REQUIRE(tv_loss(x).item() == Catch::Approx(ref).margin(1e-12));
    }
}

TEST_CASE("tv_loss gradient matches finite differences") {
    Rng rng(7);
    Tensor x = Tensor::zeros({2, 4, 4}, true);
    for (double& v : x.data()) v = rng.uniform();
    auto res = poi::test::grad_check({x}, [&] { return tv_loss(x); });
    REQUIRE(res.frac_within_tol >= 0.99);
    REQUIRE(res.all_within_hard);
}

TEST_CASE("interaction_loss preconditions") {
    PoiModel model(fd_config(), 1);
    Trajectory obs = make_traj(Domain::observation, 3, 16, 16, 2, false);
    REQUIRE_THROWS_AS(interaction_loss(obs, model, {}, 1.0, 0), DataError);
    Trajectory no_acts = make_traj(Domain::interaction, 3, 16, 16, 3, false);
    REQUIRE_THROWS_AS(interaction_loss(no_acts, model, {}, 1.0, 0), DataError);
    Trajectory short_traj = make_traj(Domain::interaction, 2, 16, 16, 4, true);
    REQUIRE_THROWS_AS(interaction_loss(short_traj, model, {}, 1.0, 0), DataError);
    REQUIRE_THROWS_AS(observation_loss(make_traj(Domain::interaction, 3, 16, 16, 5, true), model,
                                       {}, 1.0, 0),
                      DataError);
}

TEST_CASE("all-zero weights give total 0") {
    PoiModel model(fd_config(), 2);
    LossWeights w{0, 0, 0, 0, 0};
    Trajectory traj = make_traj(Domain::interaction, 4, 16, 16, 6, true);
    REQUIRE(interaction_loss(traj, model, w, 1.0, 9).total.item() == 0.0);
    Trajectory obs = make_traj(Domain::observation, 4, 16, 16, 7, false);
    REQUIRE(observation_loss(obs, model, w, 1.0, 9).total.item() == 0.0);
}

TEST_CASE("term-wise minima for a perfect model") {
    // constant frames + identity transition -> exact reconstruction; zeroed
    // action encoder -> posterior equals the (zero-initialized) prior; zeroed
    // decoder reproduces the zero actions
    PoiModel model(fd_config(), 3);
    zero_params_with_prefix(model, "trans.delta");
    zero_params_with_prefix(model, "act_enc.");
    zero_params_with_prefix(model, "act_dec.");
    Trajectory traj = make_traj(Domain::interaction, 4, 16, 16, 8, true, 0.5f, 0.5f);
    std::fill(traj.actions.begin(), traj.actions.end(), 0.0f);
    LossBreakdown lb = interaction_loss(traj, model, {}, 1.0, 11);
    REQUIRE(lb.recon.item() == 0.0);
    REQUIRE(lb.action_nll.item() == 0.0);
    REQUIRE(lb.kl_act.item() == 0.0);
}

TEST_CASE("observation_loss has no action term") {
    PoiModel model(fd_config(), 4);
    Trajectory obs = make_traj(Domain::observation, 4, 16, 16, 9, false);
    LossBreakdown lb = observation_loss(obs, model, {}, 0.5, 13);
    REQUIRE(lb.action_nll.item() == 0.0);
    REQUIRE(lb.kl_act.item() == 0.0);
}

TEST_CASE("flat latent layout with prior-matching posterior gives kl_inv 0") {
    ModelConfig c = fd_config();
    c.layout = {3, 0};
    PoiModel model(c, 5);
    zero_params_with_prefix(model, "inv.head");
    Trajectory obs = make_traj(Domain::observation, 3, 16, 16, 10, false);
    LossBreakdown lb = observation_loss(obs, model, {}, 1.0, 17);
    REQUIRE(lb.kl_inv.item() == 0.0);
}

TEST_CASE("kl and js components are nonnegative") {
    PoiModel model(fd_config(), 6);
    for (uint64_t s = 0; s < 5; ++s) {
        Trajectory ti = make_traj(Domain::interaction, 3, 16, 16, 20 + s, true);
        LossBreakdown li = interaction_loss(ti, model, {}, 0.5, s);
        REQUIRE(li.kl_act.item() >= -1e-12);
        REQUIRE(li.js.item() >= -1e-12);
        Trajectory to = make_traj(Domain::observation, 3, 16, 16, 30 + s, false);
        REQUIRE(observation_loss(to, model, {}, 0.5, s).kl_inv.item() >= -1e-12);
    }
}

TEST_CASE("losses are bit-reproducible under a fixed seed") {
    PoiModel model(fd_config(), 7);
    Trajectory ti = make_traj(Domain::interaction, 4, 16, 16, 40, true);
    Trajectory to = make_traj(Domain::observation, 4, 16, 16, 41, false);
    std::vector<const Trajectory*> batch = {&ti, &to};
    double a = total_objective(batch, model, {}, 0.5, 99).total.item();
    double b = total_objective(batch, model, {}, 0.5, 99).total.item();
    REQUIRE(a == b);
}

TEST_CASE("recon path gradients vanish when image_l1 is 0") {
    PoiModel model(fd_config(), 8);
    Trajectory ti = make_traj(Domain::interaction, 3, 16, 16, 42, true);
    LossWeights w;
    w.image_l1 = 0.0;
    model.params().zero_grads();
    backward(interaction_loss(ti, model, w, 1.0, 5).total);
    // transition parameters only feed reconstruction, so they get no gradient
    for (const auto& [name, p] : model.params().all())
        if (name.rfind("trans.", 0) == 0) {
            Tensor t = p;
            for (double g : t.grad()) REQUIRE(g == 0.0);
        }
}

TEST_CASE("L1 reconstruction is positively homogeneous") {
    PoiModel model(fd_config(), 9);
    zero_params_with_prefix(model, "trans.delta"); // identity transition
    auto build = [&](float d) {
        // base and offsets exactly representable in binary so doubling is exact
        Trajectory traj = make_traj(Domain::interaction, 3, 16, 16, 50, true, 0.5f, 0.5f);
        // last frame offset from the constant base by d in every pixel
        for (size_t i = traj.frames.size() / 3 * 2; i < traj.frames.size(); ++i)
            traj.frames[i] += d;
        return traj;
    };
    double r1 = interaction_loss(build(0.125f), model, {}, 1.0, 3).recon.item();
    double r2 = interaction_loss(build(0.25f), model, {}, 1.0, 3).recon.item();
    REQUIRE(r1 > 0.0);
    REQUIRE(r2 == 2.0 * r1);
}

TEST_CASE("total_objective decomposition") {
    PoiModel model(fd_config(), 10);
    Trajectory ti = make_traj(Domain::interaction, 4, 16, 16, 60, true);
    Trajectory to = make_traj(Domain::observation, 4, 16, 16, 61, false);
    LossWeights w;
    std::vector<const Trajectory*> batch = {&ti, &to};
    LossBreakdown whole = total_objective(batch, model, w, 0.5, 77);
    LossBreakdown li = interaction_loss(ti, model, w, 0.5, Rng::derive(77, 0));
    LossBreakdown lo = observation_loss(to, model, w, 0.5, Rng::derive(77, 1));
    double expect = li.total.item() + lo.total.item() + w.js_alpha * li.js.item() +
                    w.tv * (li.tv.item() + lo.tv.item());
    REQUIRE(whole.total.item() == Catch::Approx(expect).margin(1e-12));
    REQUIRE(whole.js.item() == li.js.item());

    SECTION("observation-only batch has zero js") {
        std::vector<const Trajectory*> obs_only = {&to};
        REQUIRE(total_objective(obs_only, model, w, 0.5, 77).js.item() == 0.0);
    }
    SECTION("js weight sweep shifts the total by exactly alpha * js") {
        LossWeights w0 = w, w1 = w;
        w0.js_alpha = 0.0;
        w1.js_alpha = 1e-7;
        double t0 = total_objective(batch, model, w0, 0.5, 77).total.item();
        double t1 = total_objective(batch, model, w1, 0.5, 77).total.item();
        // the shift matches alpha * js up to a couple of ulps of the total
        REQUIRE(t1 - t0 == Catch::Approx(1e-7 * whole.js.item()).margin(1e-13));
    }
    SECTION("empty batch rejected") {
        std::vector<const Trajectory*> empty;
        REQUIRE_THROWS_AS(total_objective(empty, model, w, 0.5, 77), DataError);
    }
}

TEST_CASE("interaction_loss gradient matches finite differences") {
    PoiModel model(fd_config(), 11);
    // keep the residual decoder small so the [0,1] clamp stays inactive
    scale_params_with_prefix(model, "trans.delta", 0.05);
    Trajectory traj = make_traj(Domain::interaction, 3, 16, 16, 70, true);
    LossWeights w{1.0, 1.0, 1.0, 0.0, 0.0}; // equal weights exercise all terms
    std::vector<Tensor> params;
    for (const auto& [name, p] : model.params().all()) params.push_back(p);
    auto res = poi::test::grad_check(
        params, [&] { return interaction_loss(traj, model, w, 1.0, 5).total; });
    REQUIRE(res.frac_within_tol >= 0.95);
    REQUIRE(res.worst_rel < 0.05);
}

TEST_CASE("observation_loss gradient matches finite differences") {
    PoiModel model(fd_config(), 12);
    scale_params_with_prefix(model, "trans.delta", 0.05);
    Trajectory traj = make_traj(Domain::observation, 3, 16, 16, 71, false);
    LossWeights w{1.0, 1.0, 1.0, 0.0, 0.0};
    std::vector<Tensor> params;
    for (const auto& [name, p] : model.params().all()) params.push_back(p);
    auto res = poi::test::grad_check(
        params, [&] { return observation_loss(traj, model, w, 1.0, 5).total; });
    REQUIRE(res.frac_within_tol >= 0.95);
    REQUIRE(res.worst_rel < 0.05);
}

TEST_CASE("total_objective gradient matches finite differences on a mixed pair") {
    PoiModel model(fd_config(), 13);
    scale_params_with_prefix(model, "trans.delta", 0.05);
    Trajectory ti = make_traj(Domain::interaction, 3, 16, 16, 80, true);
    Trajectory to = make_traj(Domain::observation, 3, 16, 16, 81, false);
    std::vector<const Trajectory*> batch = {&ti, &to};
    LossWeights w{1.0, 0.1, 0.1, 0.1, 0.1};
    std::vector<Tensor> params = {model.params().at("trans.delta.k"),
                                  model.params().at("inv.head.w"),
                                  model.params().at("act_enc.head.w"),
                                  model.params().at("prior.obs.head.w"),
                                  model.params().at("prior.shared.mean")};
    auto res = poi::test::grad_check(
        params, [&] { return total_objective(batch, model, w, 1.0, 7).total; });
    REQUIRE(res.frac_within_tol >= 0.95);
    REQUIRE(res.worst_rel < 0.05);
}
