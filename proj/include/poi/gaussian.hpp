#pragma once

#include "poi/rng.hpp"
#include "poi/tensor.hpp"

namespace poi {

// log-variance clamp range; keeps KL finite under optimizer excursions
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian over a latent vector. mean and log_var always have
// identical shape; log_var is clamped on construction.
struct DiagGaussian {
    Tensor mean;
    Tensor log_var;

    DiagGaussian() = default;
    DiagGaussian(Tensor mean_, Tensor log_var_raw) : mean(std::move(mean_)) {
        if (mean.shape() != log_var_raw.shape())
            shape_fail("DiagGaussian", mean.shape(), log_var_raw.shape());
        log_var = clamp(log_var_raw, kLogVarMin, kLogVarMax);
    }

    int dim() const { return static_cast<int>(mean.size()); }

    static DiagGaussian standard(int d) {
        return DiagGaussian(Tensor::zeros({d}), Tensor::zeros({d}));
    }
};

// mean + exp(0.5 log_var) * eps with eps ~ N(0, I) from the given stream.
// Gradients flow to mean and log_var through the reparameterization.
inline Tensor rsample(const DiagGaussian& g, Rng& rng) {
    Tensor eps = Tensor::zeros(g.mean.shape());
    for (double& v : eps.data()) v = rng.normal();
    return add(g.mean, mul(exp_op(scale(g.log_var, 0.5)), eps));
}

// KL(p || q) for diagonal Gaussians, summed over dimensions:
//   0.5 (log_var_q - log_var_p) + (var_p + (mu_p - mu_q)^2) / (2 var_q) - 1/2
inline Tensor kl_divergence(const DiagGaussian& p, const DiagGaussian& q) {
    if (p.mean.shape() != q.mean.shape()) shape_fail("kl_divergence", p.mean.shape(), q.mean.shape());
    Tensor log_ratio = scale(sub(q.log_var, p.log_var), 0.5);
    Tensor dmu = sub(p.mean, q.mean);
    // variance ratio via exp(lp - lq) so KL(p, p) is exactly zero
    Tensor quad = add(exp_op(sub(p.log_var, q.log_var)),
                      mul(mul(dmu, dmu), exp_op(scale(q.log_var, -1.0))));
    Tensor per_dim = add_scalar(add(log_ratio, scale(quad, 0.5)), -0.5);
    return sum(per_dim);
}

// Jensen-Shannon approximation with a parameter-averaged midpoint:
//   M = N((mu_p + mu_q)/2, (var_p + var_q)/2),  result = (KL(p||M) + KL(q||M)) / 2.
// Symmetric in its arguments and zero when p == q.
inline Tensor js_approx(const DiagGaussian& p, const DiagGaussian& q) {
    if (p.mean.shape() != q.mean.shape()) shape_fail("js_approx", p.mean.shape(), q.mean.shape());
    Tensor mid_mean = scale(add(p.mean, q.mean), 0.5);
    // log of the averaged variance (σp² + σq²)/2, written relative to p's
    // log-variance so identical inputs give exactly p back (and js exactly 0)
    Tensor mid_lv =
        add(p.log_var, log_op(scale(add_scalar(exp_op(sub(q.log_var, p.log_var)), 1.0), 0.5)));
    DiagGaussian m(mid_mean, mid_lv);
    return scale(add(kl_divergence(p, m), kl_divergence(q, m)), 0.5);
}

// Concatenate two distributions along the latent axis.
inline DiagGaussian concat_dist(const DiagGaussian& a, const DiagGaussian& b) {
    return DiagGaussian(concat({a.mean, b.mean}), concat({a.log_var, b.log_var}));
}

inline DiagGaussian slice_dist(const DiagGaussian& g, int start, int len) {
    return DiagGaussian(slice(g.mean, start, len), slice(g.log_var, start, len));
}

// Gaussian log-density, used by test oracles for Monte Carlo KL estimates.
inline double gaussian_log_pdf(double x, double mean, double var) {
    double d = x - mean;
    return -0.5 * std::log(6.283185307179586 * var) - d * d / (2.0 * var);
}

} // namespace poi
