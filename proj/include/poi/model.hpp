#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "poi/crc32.hpp"
#include "poi/gaussian.hpp"
#include "poi/nn.hpp"
#include "poi/rng.hpp"
#include "poi/trajectory.hpp"

namespace poi {

// Latent split: z_shared is common to both domains, z_domain carries the
// embodiment-specific part and gets a per-domain prior.
struct LatentLayout {
    int shared_dim = 3;
    int domain_dim = 2;
    int total() const { return shared_dim + domain_dim; }
};

struct ModelConfig {
    LatentLayout layout;
    int frame_h = 16, frame_w = 16, frame_c = 3;
    int action_dim = 2;
    int context = 2;
    int act_hidden = 64;            // action encoder/decoder MLP width
    int inv_c1 = 32, inv_c2 = 64, inv_c3 = 128; // inverse model conv features
    int gen_channels = 32;          // transition encoder/decoder width
    int prior_lstm_hidden = 64;     // observation-domain prior LSTM

    int bottleneck_h() const { return frame_h / 8; }
    int bottleneck_w() const { return frame_w / 8; }
    int inv_feature_dim() const { return inv_c3 * bottleneck_h() * bottleneck_w(); }
};

// The generative/inference model: action encoder q_act, inverse model q_inv,
// action decoder, recurrent transition model, and the latent priors.
class PoiModel {
public:
    using TransitionState = ConvLstmState;

    explicit PoiModel(const ModelConfig& config, uint64_t seed = 0) : cfg_(config) {
        if (cfg_.frame_h % 8 != 0 || cfg_.frame_w % 8 != 0)
            throw ShapeError("PoiModel: frame extents must be divisible by 8, got " +
                             shape_str({cfg_.frame_h, cfg_.frame_w}));
        Rng rng(Rng::derive(seed, 0x9001));
        const int L = cfg_.layout.total();
        const int H = cfg_.act_hidden;

        act_l1_ = Dense(params_, "act_enc.l1", cfg_.action_dim, H, rng);
        act_l2_ = Dense(params_, "act_enc.l2", H, H, rng);
        act_l3_ = Dense(params_, "act_enc.l3", H, H, rng);
        act_head_ = Dense(params_, "act_enc.head", H, 2 * L, rng);

        dec_l1_ = Dense(params_, "act_dec.l1", L, H, rng);
        dec_l2_ = Dense(params_, "act_dec.l2", H, H, rng);
        dec_l3_ = Dense(params_, "act_dec.l3", H, H, rng);
        dec_head_ = Dense(params_, "act_dec.head", H, cfg_.action_dim, rng);

        inv_conv1_ = Conv(params_, "inv.conv1", 2 * cfg_.frame_c, cfg_.inv_c1, 4, 2, 1, rng);
        inv_norm1_ = InstanceNormAffine(params_, "inv.norm1", cfg_.inv_c1);
        inv_conv2_ = Conv(params_, "inv.conv2", cfg_.inv_c1, cfg_.inv_c2, 4, 2, 1, rng);
        inv_norm2_ = InstanceNormAffine(params_, "inv.norm2", cfg_.inv_c2);
        inv_conv3_ = Conv(params_, "inv.conv3", cfg_.inv_c2, cfg_.inv_c3, 4, 2, 1, rng);
        inv_norm3_ = InstanceNormAffine(params_, "inv.norm3", cfg_.inv_c3);
        inv_head_ = Dense(params_, "inv.head", cfg_.inv_feature_dim(), 2 * L, rng);

        const int G = cfg_.gen_channels;
        trans_enc1_ = Conv(params_, "trans.enc1", cfg_.frame_c, G, 4, 2, 1, rng);
        trans_norm1_ = InstanceNormAffine(params_, "trans.norm1", G);
        trans_enc2_ = Conv(params_, "trans.enc2", G, G, 4, 2, 1, rng);
        trans_norm2_ = InstanceNormAffine(params_, "trans.norm2", G);
        trans_enc3_ = Conv(params_, "trans.enc3", G, G, 4, 2, 1, rng);
        trans_norm3_ = InstanceNormAffine(params_, "trans.norm3", G);
        trans_lstm_ = ConvLstmCell(params_, "trans.lstm", G + L, G, rng);
        trans_dec3_ = Conv(params_, "trans.dec3", 2 * G, G, 3, 1, 1, rng);
        trans_dnorm3_ = InstanceNormAffine(params_, "trans.dnorm3", G);
        trans_dec2_ = Conv(params_, "trans.dec2", 2 * G, G, 3, 1, 1, rng);
        trans_dnorm2_ = InstanceNormAffine(params_, "trans.dnorm2", G);
        trans_delta_ = Conv(params_, "trans.delta", G, cfg_.frame_c, 3, 1, 1, rng);

        prior_shared_mean_ = params_.create_const("prior.shared.mean", {cfg_.layout.shared_dim}, 0.0);
        prior_shared_lv_ = params_.create_const("prior.shared.log_var", {cfg_.layout.shared_dim}, 0.0);
        if (cfg_.layout.domain_dim > 0) {
            prior_idom_mean_ = params_.create_const("prior.idom.mean", {cfg_.layout.domain_dim}, 0.0);
            prior_idom_lv_ = params_.create_const("prior.idom.log_var", {cfg_.layout.domain_dim}, 0.0);
            prior_proj_ = Dense(params_, "prior.obs.proj", cfg_.inv_feature_dim(),
                                cfg_.prior_lstm_hidden, rng);
            prior_lstm_ = LstmCell(params_, "prior.obs.lstm", cfg_.prior_lstm_hidden,
                                   cfg_.prior_lstm_hidden, rng);
            prior_head_ = Dense(params_, "prior.obs.head", cfg_.prior_lstm_hidden,
                                2 * cfg_.layout.domain_dim, rng);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // q_act(z | a)
    DiagGaussian encode_action(const Tensor& a) const {
        if (a.shape() != Shape{cfg_.action_dim})
            shape_fail("encode_action", a.shape(), {cfg_.action_dim});
        Tensor h = leaky_relu(act_l1_.forward(a));
        h = leaky_relu(act_l2_.forward(h));
        h = leaky_relu(act_l3_.forward(h));
        return split_head(act_head_.forward(h), cfg_.layout.total());
    }

    // Shared conv trunk over a frame pair; also encodes the first frame for
    // the observation-domain prior (applied to (x1, x1)).
    Tensor inverse_features(const Tensor& x_t, const Tensor& x_next) const {
        check_frame("infer_latent", x_t);
        check_frame("infer_latent", x_next);
        Tensor h = leaky_relu(inv_norm1_.forward(inv_conv1_.forward(concat({x_t, x_next}))));
        h = leaky_relu(inv_norm2_.forward(inv_conv2_.forward(h)));
        h = leaky_relu(inv_norm3_.forward(inv_conv3_.forward(h)));
        return reshape(h, {cfg_.inv_feature_dim()});
    }

    // q_inv(z | x_t, x_{t+1})
    DiagGaussian infer_latent(const Tensor& x_t, const Tensor& x_next) const {
        return split_head(inv_head_.forward(inverse_features(x_t, x_next)), cfg_.layout.total());
    }

    // mean of p(a | z); the likelihood is unit-variance Gaussian, so the NLL
    // up to a constant is 0.5 ||a - decode_action(z)||^2
    Tensor decode_action(const Tensor& z) const {
        if (z.shape() != Shape{cfg_.layout.total()})
            shape_fail("decode_action", z.shape(), {cfg_.layout.total()});
        Tensor h = leaky_relu(dec_l1_.forward(z));
        h = leaky_relu(dec_l2_.forward(h));
        h = leaky_relu(dec_l3_.forward(h));
        return dec_head_.forward(h);
    }

    TransitionState initial_state() const {
        return trans_lstm_.initial_state(cfg_.bottleneck_h(), cfg_.bottleneck_w());
    }

    // One transition step: conv encoder, latent tiled into the bottleneck,
    // conv LSTM carries history, decoder with skip connections emits a
    // residual; output clamped to [0,1].
    std::pair<Tensor, TransitionState> predict_next(const Tensor& x, const Tensor& z,
                                                    const TransitionState& state) const {
        check_frame("predict_next", x);
        if (z.shape() != Shape{cfg_.layout.total()})
            shape_fail("predict_next(latent)", z.shape(), {cfg_.layout.total()});
        Tensor e1 = leaky_relu(trans_norm1_.forward(trans_enc1_.forward(x)));
        Tensor e2 = leaky_relu(trans_norm2_.forward(trans_enc2_.forward(e1)));
        Tensor e3 = leaky_relu(trans_norm3_.forward(trans_enc3_.forward(e2)));
        Tensor bottleneck = concat({e3, tile_to_map(z, cfg_.bottleneck_h(), cfg_.bottleneck_w())});
        auto [hidden, next_state] = trans_lstm_.step(bottleneck, state);
        Tensor d3 = leaky_relu(trans_dnorm3_.forward(trans_dec3_.forward(concat({upsample2(hidden), e2}))));
        Tensor d2 = leaky_relu(trans_dnorm2_.forward(trans_dec2_.forward(concat({upsample2(d3), e1}))));
        Tensor delta = trans_delta_.forward(upsample2(d2));
        return {clamp(add(x, delta), 0.0, 1.0), next_state};
    }

    // Autoregressive prediction: context frames warm up the recurrent state
    // (zero latents), then each latent produces one frame which feeds back as
    // the next input.
    std::vector<Tensor> rollout(const std::vector<Tensor>& context,
                                const std::vector<Tensor>& latents) const {
        if (context.empty()) throw ShapeError("rollout: need at least one context frame");
        TransitionState state = initial_state();
        Tensor zero_z = Tensor::zeros({cfg_.layout.total()});
        for (size_t i = 0; i + 1 < context.size(); ++i)
            state = predict_next(context[i], zero_z, state).second;
        std::vector<Tensor> out;
        Tensor input = context.back();
        for (const auto& z : latents) {
            auto [pred, next_state] = predict_next(input, z, state);
            out.push_back(pred);
            state = next_state;
            input = pred;
        }
        return out;
    }

    // Per-timestep priors. Interaction: the learned static prior repeated.
    // Observation: shared slice static; domain slice emitted stepwise by the
    // LSTM seeded with an encoding of the first frame, zero inputs after.
    std::vector<DiagGaussian> prior_for(Domain domain, const Tensor& first_frame, int t) const {
        if (t < 2) throw ShapeError("prior_for: trajectory length must be >= 2");
        DiagGaussian shared(prior_shared_mean_, prior_shared_lv_);
        std::vector<DiagGaussian> out;
        if (domain == Domain::interaction || cfg_.layout.domain_dim == 0) {
            DiagGaussian p = cfg_.layout.domain_dim > 0
                                 ? concat_dist(shared, DiagGaussian(prior_idom_mean_, prior_idom_lv_))
                                 : shared;
            out.assign(t - 1, p);
            return out;
        }
        Tensor enc = leaky_relu(prior_proj_.forward(inverse_features(first_frame, first_frame)));
        Tensor zero_in = Tensor::zeros({cfg_.prior_lstm_hidden});
        LstmState st = prior_lstm_.initial_state();
        for (int i = 0; i < t - 1; ++i) {
            Tensor h;
            std::tie(h, st) = prior_lstm_.step(i == 0 ? enc : zero_in, st);
            out.push_back(concat_dist(shared, split_head(prior_head_.forward(h),
                                                         cfg_.layout.domain_dim)));
        }
        return out;
    }

    DiagGaussian interaction_prior() const {
        DiagGaussian shared(prior_shared_mean_, prior_shared_lv_);
        if (cfg_.layout.domain_dim == 0) return shared;
        return concat_dist(shared, DiagGaussian(prior_idom_mean_, prior_idom_lv_));
    }

private:
    static DiagGaussian split_head(const Tensor& raw, int dim) {
        return DiagGaussian(slice(raw, 0, dim), slice(raw, dim, dim));
    }

    void check_frame(const char* op, const Tensor& x) const {
        if (x.shape() != Shape{cfg_.frame_c, cfg_.frame_h, cfg_.frame_w})
            shape_fail(op, x.shape(), {cfg_.frame_c, cfg_.frame_h, cfg_.frame_w});
    }

    ModelConfig cfg_;
    ParamStore params_;

    Dense act_l1_, act_l2_, act_l3_, act_head_;
    Dense dec_l1_, dec_l2_, dec_l3_, dec_head_;
    Conv inv_conv1_, inv_conv2_, inv_conv3_;
    InstanceNormAffine inv_norm1_, inv_norm2_, inv_norm3_;
    Dense inv_head_;
    Conv trans_enc1_, trans_enc2_, trans_enc3_;
    InstanceNormAffine trans_norm1_, trans_norm2_, trans_norm3_;
    ConvLstmCell trans_lstm_;
    Conv trans_dec3_, trans_dec2_, trans_delta_;
    InstanceNormAffine trans_dnorm3_, trans_dnorm2_;
    Tensor prior_shared_mean_, prior_shared_lv_;
    Tensor prior_idom_mean_, prior_idom_lv_;
    Dense prior_proj_;
    LstmCell prior_lstm_;
    Dense prior_head_;
};

// ---------------------------------------------------------------------------
// Checkpoint format: magic "POICKPT1", little-endian header, parameters in
// sorted-identifier order as 64-bit floats, trailing CRC-32 of the payload.
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kCkptMagic[8] = {'P', 'O', 'I', 'C', 'K', 'P', 'T', '1'};
}

inline void save_checkpoint(const std::string& path, const PoiModel& model) {
    const ModelConfig& c = model.config();
    std::vector<uint8_t> payload;
    for (int v : {c.layout.shared_dim, c.layout.domain_dim, c.frame_h, c.frame_w, c.frame_c,
                  c.action_dim, c.context, c.act_hidden, c.inv_c1, c.inv_c2, c.inv_c3,
                  c.gen_channels, c.prior_lstm_hidden})
        detail::put(payload, static_cast<uint32_t>(v));
    detail::put(payload, static_cast<uint64_t>(model.params().total_size()));
    for (const auto& [name, p] : model.params().all())
        for (double v : p.data()) detail::put(payload, v);
    uint32_t crc = Crc32::of(payload.data(), payload.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(detail::kCkptMagic, 8);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    out.write(reinterpret_cast<const char*>(&crc), 4);
    if (!out) throw DataError("checkpoint write failed: " + path);
}

inline PoiModel load_checkpoint(const std::string& path) {
    auto bytes = detail::read_file(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), detail::kCkptMagic, 8) != 0)
        throw DataError("bad checkpoint magic: " + path);
    std::vector<uint8_t> payload(bytes.begin() + 8, bytes.end() - 4);
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (Crc32::of(payload.data(), payload.size()) != stored)
        throw DataError("checkpoint CRC mismatch: " + path);

    size_t off = 0;
    auto next = [&] { return static_cast<int>(detail::take<uint32_t>(payload, off)); };
    ModelConfig c;
    c.layout.shared_dim = next();
    c.layout.domain_dim = next();
    c.frame_h = next();
    c.frame_w = next();
    c.frame_c = next();
    c.action_dim = next();
    c.context = next();
    c.act_hidden = next();
    c.inv_c1 = next();
    c.inv_c2 = next();
    c.inv_c3 = next();
    c.gen_channels = next();
    c.prior_lstm_hidden = next();
    uint64_t count = detail::take<uint64_t>(payload, off);

    PoiModel model(c);
    if (static_cast<uint64_t>(model.params().total_size()) != count)
        throw DataError("checkpoint parameter count mismatch: " + path);
    for (const auto& [name, p] : model.params().all()) {
        Tensor t = p;
        for (double& v : t.data()) v = detail::take<double>(payload, off);
    }
    return model;
}

} // namespace poi
