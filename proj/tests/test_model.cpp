#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "helpers.hpp"
#include "poi/model.hpp"

using namespace poi;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.layout = {2, 1};
    c.act_hidden = 8;
    c.inv_c1 = 4;
    c.inv_c2 = 6;
    c.inv_c3 = 8;
    c.gen_channels = 6;
    c.prior_lstm_hidden = 8;
    return c;
}

Tensor random_frame(const ModelConfig& c, Rng& rng) {
    Tensor f = Tensor::zeros({c.frame_c, c.frame_h, c.frame_w});
    for (double& v : f.data()) v = rng.uniform();
    return f;
}

void zero_params_with_prefix(PoiModel& model, const std::string& prefix) {
    for (const auto& [name, p] : model.params().all())
        if (name.rfind(prefix, 0) == 0) {
            Tensor t = p;
            std::fill(t.data().begin(), t.data().end(), 0.0);
        }
}

} // namespace

TEST_CASE("encode_action shape contract and determinism") {
    PoiModel model(tiny_config(), 1);
    Tensor a = Tensor::from({2}, {0.05, -0.02});
    DiagGaussian g1 = model.encode_action(a);
    DiagGaussian g2 = model.encode_action(a);
    REQUIRE(g1.mean.shape() == Shape{3});
    REQUIRE(g1.log_var.shape() == Shape{3});
    REQUIRE(g1.mean.data() == g2.mean.data());
    REQUIRE(g1.log_var.data() == g2.log_var.data());
    REQUIRE_THROWS_AS(model.encode_action(Tensor::zeros({3})), ShapeError);
}

TEST_CASE("zero-weight action encoder emits standard parameters") {
    PoiModel model(tiny_config(), 1);
    zero_params_with_prefix(model, "act_enc.");
    DiagGaussian g = model.encode_action(Tensor::from({2}, {0.09, -0.07}));
    for (double v : g.mean.data()) REQUIRE(v == 0.0);
    for (double v : g.log_var.data()) REQUIRE(v == 0.0);
}

TEST_CASE("infer_latent shape contract") {
    PoiModel model(tiny_config(), 2);
    Rng rng(5);
    Tensor x1 = random_frame(model.config(), rng);
    Tensor x2 = random_frame(model.config(), rng);
    DiagGaussian g = model.infer_latent(x1, x2);
    REQUIRE(g.mean.shape() == Shape{3});
    REQUIRE_THROWS_AS(model.infer_latent(Tensor::zeros({3, 8, 8}), x2), ShapeError);
}

TEST_CASE("decode_action NLL identities") {
    PoiModel model(tiny_config(), 3);
    Rng rng(7);
    Tensor z = Tensor::from({3}, {0.1, -0.2, 0.3});
    Tensor decoded = model.decode_action(z);
    REQUIRE(decoded.shape() == Shape{2});
    // NLL-minus-constant is 0.5||a - a_hat||^2: zero at the decoded mean,
    // 0.5 for a unit offset in one coordinate
    Tensor diff0 = sub(decoded, decoded);
    REQUIRE(sum(scale(mul(diff0, diff0), 0.5)).item() == 0.0);
    Tensor off = add(decoded, Tensor::from({2}, {1.0, 0.0}));
    Tensor diff1 = sub(off, decoded);
    REQUIRE(sum(scale(mul(diff1, diff1), 0.5)).item() == Catch::Approx(0.5));
}

TEST_CASE("predict_next residual identity with zero delta head") {
    PoiModel model(tiny_config(), 4);
    zero_params_with_prefix(model, "trans.delta");
    Rng rng(11);
    Tensor x = random_frame(model.config(), rng);
    Tensor z = Tensor::from({3}, {0.4, 0.1, -0.3});
    auto [pred, state] = model.predict_next(x, z, model.initial_state());
    REQUIRE(pred.data() == x.data());
}

TEST_CASE("predict_next output stays in [0,1] for random parameters") {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        PoiModel model(tiny_config(), 100 + trial);
        Tensor x = random_frame(model.config(), rng);
        Tensor z = Tensor::from({3}, {rng.normal(), rng.normal(), rng.normal()});
        auto [pred, state] = model.predict_next(x, z, model.initial_state());
        for (double v : pred.data()) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("rollout contracts") {
    PoiModel model(tiny_config(), 5);
    Rng rng(17);
    std::vector<Tensor> context = {random_frame(model.config(), rng),
                                   random_frame(model.config(), rng)};

    SECTION("horizon 0 gives empty output") {
        REQUIRE(model.rollout(context, {}).empty());
    }
    SECTION("zeroed delta head repeats the last context frame") {
        zero_params_with_prefix(model, "trans.delta");
        std::vector<Tensor> latents(3, Tensor::zeros({3}));
        auto frames = model.rollout(context, latents);
        REQUIRE(frames.size() == 3);
        for (const auto& f : frames) REQUIRE(f.data() == context.back().data());
    }
    SECTION("rollout is deterministic") {
        std::vector<Tensor> latents = {Tensor::from({3}, {0.1, 0.2, 0.3}),
                                       Tensor::from({3}, {-0.1, 0.0, 0.2})};
        auto f1 = model.rollout(context, latents);
        auto f2 = model.rollout(context, latents);
        for (size_t i = 0; i < f1.size(); ++i) REQUIRE(f1[i].data() == f2[i].data());
    }
}

TEST_CASE("prior_for contracts") {
    PoiModel model(tiny_config(), 6);
    Rng rng(19);
    Tensor x1 = random_frame(model.config(), rng);

    SECTION("interaction priors identical across timesteps") {
        auto priors = model.prior_for(Domain::interaction, x1, 6);
        REQUIRE(priors.size() == 5);
        for (const auto& p : priors) {
            REQUIRE(p.mean.data() == priors[0].mean.data());
            REQUIRE(p.log_var.data() == priors[0].log_var.data());
        }
    }
    SECTION("observation prior emits T-1 distributions of full dim") {
        auto priors = model.prior_for(Domain::observation, x1, 5);
        REQUIRE(priors.size() == 4);
        for (const auto& p : priors) REQUIRE(p.mean.shape() == Shape{3});
    }
    SECTION("shared slice identical across domains and tracks parameter updates") {
        auto pi = model.prior_for(Domain::interaction, x1, 4);
        auto po = model.prior_for(Domain::observation, x1, 4);
        for (int k = 0; k < 2; ++k)
            REQUIRE(pi[0].mean.data()[k] == po[1].mean.data()[k]);
        // mutate the shared prior parameter: both domains must follow
        Tensor shared_mean = model.params().at("prior.shared.mean");
        shared_mean.data()[0] = 0.77;
        auto pi2 = model.prior_for(Domain::interaction, x1, 4);
        auto po2 = model.prior_for(Domain::observation, x1, 4);
        REQUIRE(pi2[0].mean.data()[0] == 0.77);
        REQUIRE(po2[2].mean.data()[0] == 0.77);
    }
    SECTION("domain_dim 0 observation prior degenerates to interaction case") {
        ModelConfig c = tiny_config();
        c.layout = {3, 0};
        PoiModel flat(c, 7);
        auto pi = flat.prior_for(Domain::interaction, x1, 4);
        auto po = flat.prior_for(Domain::observation, x1, 4);
        for (int k = 0; k < 3; ++k) REQUIRE(pi[0].mean.data()[k] == po[0].mean.data()[k]);
    }
    SECTION("unknown length rejected") {
        REQUIRE_THROWS_AS(model.prior_for(Domain::interaction, x1, 1), ShapeError);
    }
}

TEST_CASE("gradient flows through inverse model conv weights") {
    ModelConfig c = tiny_config();
    c.inv_c1 = 3;
    c.inv_c2 = 3;
    c.inv_c3 = 4;
    PoiModel model(c, 8);
    Rng rng(23);
    Tensor x1 = random_frame(c, rng);
    Tensor x2 = random_frame(c, rng);
    auto eval = [&] {
        DiagGaussian g = model.infer_latent(x1, x2);
        return add(sum(mul(g.mean, g.mean)), sum(g.log_var));
    };
    std::vector<Tensor> params = {model.params().at("inv.conv1.k"),
                                  model.params().at("inv.conv2.k"),
                                  model.params().at("inv.head.w")};
    auto res = poi::test::grad_check(params, eval);
    REQUIRE(res.frac_within_tol >= 0.95);
    REQUIRE(res.all_within_hard);
}

TEST_CASE("gradient flows to the latent through predict_next") {
    PoiModel model(tiny_config(), 9);
    Rng rng(29);
    Tensor x = random_frame(model.config(), rng);
    Tensor target = random_frame(model.config(), rng);
    Tensor z = Tensor::from({3}, {0.2, -0.1, 0.3}, true);
    auto eval = [&] {
        auto [pred, state] = model.predict_next(x, z, model.initial_state());
        Tensor d = sub(pred, target);
        return sum(mul(d, d));
    };
    auto res = poi::test::grad_check({z}, eval);
    REQUIRE(res.frac_within_tol >= 0.95);
    REQUIRE(res.all_within_hard);
}

TEST_CASE("checkpoint round-trip preserves parameters and config") {
    namespace fs = std::filesystem;
    PoiModel model(tiny_config(), 10);
    fs::path path = fs::temp_directory_path() / "poi_test_ckpt.bin";
    save_checkpoint(path.string(), model);
    PoiModel loaded = load_checkpoint(path.string());
    REQUIRE(loaded.config().layout.shared_dim == 2);
    REQUIRE(loaded.config().gen_channels == 6);
    for (const auto& [name, p] : model.params().all())
        REQUIRE(p.data() == loaded.params().at(name).data());
    // same outputs
    Rng rng(31);
    Tensor x1 = random_frame(model.config(), rng);
    Tensor x2 = random_frame(model.config(), rng);
    REQUIRE(model.infer_latent(x1, x2).mean.data() == loaded.infer_latent(x1, x2).mean.data());
    fs::remove(path);
}
