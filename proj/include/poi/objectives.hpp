#pragma once

#include <string>
#include <vector>

#include "poi/gaussian.hpp"
#include "poi/model.hpp"
#include "poi/rng.hpp"
#include "poi/trajectory.hpp"

namespace poi {

struct LossWeights {
    double image_l1 = 1.0;
    double action_mse = 1e-4;
    double kl = 1e-6;
    double js_alpha = 1e-7;
    double tv = 1e-3;
};

// All components are unweighted sums over timesteps; `total` applies the
// weights. Per-trajectory totals exclude the js and tv terms — those are
// folded in once by total_objective so a mixed-batch total decomposes exactly
// as sum of member totals + js_alpha * js + tv * tv.
struct LossBreakdown {
    Tensor recon = Tensor::scalar(0.0);
    Tensor action_nll = Tensor::scalar(0.0);
    Tensor kl_act = Tensor::scalar(0.0);
    Tensor kl_inv = Tensor::scalar(0.0);
    Tensor js = Tensor::scalar(0.0);
    Tensor tv = Tensor::scalar(0.0);
    Tensor total = Tensor::scalar(0.0);
};

// Anisotropic L1 total variation of a CHW image: sum of absolute differences
// between vertically and horizontally adjacent pixels, per channel.
inline Tensor tv_loss(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() != 3) shape_fail("tv_loss", s, {-1, -1, -1});
    const int64_t c = s[0], h = s[1], w = s[2];
    if (h * w < 2) throw ShapeError("tv_loss: degenerate image " + shape_str(s));
    detail::check_finite("tv_loss", x);
    auto xn = x.node();
    Tensor out = detail::make_result({1}, {x}, [xn, c, h, w](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        double g = self.grad[0];
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < h; ++i)
                for (int64_t j = 0; j < w; ++j) {
                    int64_t idx = (ch * h + i) * w + j;
                    if (i + 1 < h) {
                        double d = xn->data[idx + w] - xn->data[idx];
                        double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                        xn->grad[idx + w] += g * sgn;
                        xn->grad[idx] -= g * sgn;
                    }
                    if (j + 1 < w) {
                        double d = xn->data[idx + 1] - xn->data[idx];
                        double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                        xn->grad[idx + 1] += g * sgn;
                        xn->grad[idx] -= g * sgn;
                    }
                }
    });
    double acc = 0.0;
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                int64_t idx = (ch * h + i) * w + j;
                if (i + 1 < h) acc += std::abs(x.data()[idx + w] - x.data()[idx]);
                if (j + 1 < w) acc += std::abs(x.data()[idx + 1] - x.data()[idx]);
            }
    out.data()[0] = acc;
    return out;
}

namespace detail {

struct PathResult {
    Tensor recon = Tensor::scalar(0.0);
    Tensor tv = Tensor::scalar(0.0);
    std::vector<Tensor> samples; // one latent per step
};

// One schedule-sampled autoregressive pass over given per-step latents. The
// first `context` frames always enter as ground truth; afterwards ground
// truth is used with probability sampling_p (one Bernoulli draw per predicted
// step), otherwise the previous prediction feeds back. Reconstruction is L1
// against frames context..T-1.
inline PathResult run_path(const PoiModel& model, const Trajectory& traj,
                           std::vector<Tensor> latents, double sampling_p, Rng& rng) {
    const int t_len = static_cast<int>(traj.t);
    const int ctx = model.config().context;
    PathResult res;
    res.samples = std::move(latents);
    PoiModel::TransitionState state = model.initial_state();
    Tensor prev_pred;
    for (int t = 0; t < t_len - 1; ++t) {
        Tensor input = traj.frame_tensor(t);
        if (t >= ctx && t > 0 && !rng.bernoulli(sampling_p)) input = prev_pred;
        auto [pred, next_state] = model.predict_next(input, res.samples[static_cast<size_t>(t)], state);
        state = next_state;
        prev_pred = pred;
        if (t + 1 >= ctx) {
            Tensor target = traj.frame_tensor(t + 1);
            res.recon = add(res.recon, sum(abs_op(sub(pred, target))));
            res.tv = add(res.tv, tv_loss(pred));
        }
    }
    return res;
}

inline std::vector<Tensor> sample_all(const std::vector<DiagGaussian>& dists, Rng& rng) {
    std::vector<Tensor> out;
    out.reserve(dists.size());
    for (const auto& d : dists) out.push_back(rsample(d, rng));
    return out;
}

inline void check_length(const char* op, const Trajectory& traj, const PoiModel& model) {
    if (static_cast<int>(traj.t) < model.config().context + 1)
        throw DataError(std::string(op) + ": trajectory too short (" + std::to_string(traj.t) +
                        " frames, need >= " + std::to_string(model.config().context + 1) + ")");
}

} // namespace detail

// Negative ELBO for an action-labeled trajectory. Two prediction passes are
// made, one with latents from the action encoder and one from the inverse
// model, and their reconstructions are averaged. The action reconstruction
// uses the action-encoder samples. `js` reports the per-step divergence
// between the two posteriors but is not part of this total.
inline LossBreakdown interaction_loss(const Trajectory& traj, const PoiModel& model,
                                      const LossWeights& weights, double sampling_p,
                                      uint64_t seed) {
    if (traj.domain != Domain::interaction)
        throw DataError("interaction_loss: trajectory is not interaction-domain");
    if (!traj.has_actions) throw DataError("interaction_loss: trajectory has no actions");
    detail::check_length("interaction_loss", traj, model);

    const int steps = static_cast<int>(traj.t) - 1;
    std::vector<DiagGaussian> q_act, q_inv;
    for (int t = 0; t < steps; ++t) {
        q_act.push_back(model.encode_action(traj.action_tensor(t)));
        q_inv.push_back(model.infer_latent(traj.frame_tensor(t), traj.frame_tensor(t + 1)));
    }

    Rng rng(seed);
    detail::PathResult path_act =
        detail::run_path(model, traj, detail::sample_all(q_act, rng), sampling_p, rng);
    detail::PathResult path_inv =
        detail::run_path(model, traj, detail::sample_all(q_inv, rng), sampling_p, rng);

    LossBreakdown out;
    out.recon = scale(add(path_act.recon, path_inv.recon), 0.5);
    out.tv = scale(add(path_act.tv, path_inv.tv), 0.5);
    DiagGaussian prior = model.interaction_prior();
    for (int t = 0; t < steps; ++t) {
        Tensor d = sub(traj.action_tensor(t), model.decode_action(path_act.samples[t]));
        out.action_nll = add(out.action_nll, scale(sum(mul(d, d)), 0.5));
        out.kl_act = add(out.kl_act, kl_divergence(q_act[t], prior));
        out.js = add(out.js, js_approx(q_act[t], q_inv[t]));
    }
    out.total = add(add(scale(out.recon, weights.image_l1), scale(out.action_nll, weights.action_mse)),
                    scale(out.kl_act, weights.kl));
    return out;
}

// Negative ELBO for an action-free trajectory: reconstruction under the
// inverse-model posterior plus its KL against the observation-domain prior.
// No action term.
inline LossBreakdown observation_loss(const Trajectory& traj, const PoiModel& model,
                                      const LossWeights& weights, double sampling_p,
                                      uint64_t seed) {
    if (traj.domain != Domain::observation)
        throw DataError("observation_loss: trajectory is not observation-domain");
    detail::check_length("observation_loss", traj, model);

    const int steps = static_cast<int>(traj.t) - 1;
    std::vector<DiagGaussian> q_inv;
    for (int t = 0; t < steps; ++t)
        q_inv.push_back(model.infer_latent(traj.frame_tensor(t), traj.frame_tensor(t + 1)));
    std::vector<DiagGaussian> priors =
        model.prior_for(Domain::observation, traj.frame_tensor(0), static_cast<int>(traj.t));

    Rng rng(seed);
    detail::PathResult path =
        detail::run_path(model, traj, detail::sample_all(q_inv, rng), sampling_p, rng);

    LossBreakdown out;
    out.recon = path.recon;
    out.tv = path.tv;
    for (int t = 0; t < steps; ++t)
        out.kl_inv = add(out.kl_inv, kl_divergence(q_inv[t], priors[static_cast<size_t>(t)]));
    out.total = add(scale(out.recon, weights.image_l1), scale(out.kl_inv, weights.kl));
    return out;
}

// Mixed-batch objective: per-trajectory losses averaged within each domain,
// plus the posterior-alignment term over interaction members and the total
// variation penalty over predicted frames. The member at batch index i uses
// seed Rng::derive(seed, i).
inline LossBreakdown total_objective(const std::vector<const Trajectory*>& batch,
                                     const PoiModel& model, const LossWeights& weights,
                                     double sampling_p, uint64_t seed) {
    if (batch.empty()) throw DataError("total_objective: empty batch");

    LossBreakdown out;
    LossBreakdown acc_i, acc_o;
    int n_int = 0, n_obs = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        uint64_t member_seed = Rng::derive(seed, i);
        if (batch[i]->domain == Domain::interaction) {
            LossBreakdown lb = interaction_loss(*batch[i], model, weights, sampling_p, member_seed);
            acc_i.recon = add(acc_i.recon, lb.recon);
            acc_i.action_nll = add(acc_i.action_nll, lb.action_nll);
            acc_i.kl_act = add(acc_i.kl_act, lb.kl_act);
            acc_i.js = add(acc_i.js, lb.js);
            acc_i.tv = add(acc_i.tv, lb.tv);
            acc_i.total = add(acc_i.total, lb.total);
            ++n_int;
        } else {
            LossBreakdown lb = observation_loss(*batch[i], model, weights, sampling_p, member_seed);
            acc_o.recon = add(acc_o.recon, lb.recon);
            acc_o.kl_inv = add(acc_o.kl_inv, lb.kl_inv);
            acc_o.tv = add(acc_o.tv, lb.tv);
            acc_o.total = add(acc_o.total, lb.total);
            ++n_obs;
        }
    }
    double wi = n_int > 0 ? 1.0 / n_int : 0.0;
    double wo = n_obs > 0 ? 1.0 / n_obs : 0.0;
    out.recon = add(scale(acc_i.recon, wi), scale(acc_o.recon, wo));
    out.action_nll = scale(acc_i.action_nll, wi);
    out.kl_act = scale(acc_i.kl_act, wi);
    out.kl_inv = scale(acc_o.kl_inv, wo);
    out.js = scale(acc_i.js, wi);
    out.tv = add(scale(acc_i.tv, wi), scale(acc_o.tv, wo));
    out.total = add(add(add(scale(acc_i.total, wi), scale(acc_o.total, wo)),
                        scale(out.js, weights.js_alpha)),
                    scale(out.tv, weights.tv));
    return out;
}

} // namespace poi
