#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "poi/tensor.hpp"

namespace poi::test {

// Central finite differences on every element of `params`, compared against
// the analytic gradient produced by backward(). `eval` must rebuild the loss
// from scratch (same noise) on each call. Returns the fraction of checked
// entries within `rel_tol`; entries must all be within `hard_tol`.
struct GradCheckResult {
    double frac_within_tol = 1.0;
    double worst_rel = 0.0;
    int64_t checked = 0;
    bool all_within_hard = true;
};

inline double rel_err(double a, double b) {
    // the floor makes near-zero gradients compare absolutely, keeping
    // central-difference cancellation noise (~1e-10) out of the ratio
    double denom = std::max({std::fabs(a), std::fabs(b), 1e-4});
    return std::fabs(a - b) / denom;
}

inline GradCheckResult grad_check(std::vector<poi::Tensor> params,
                                  const std::function<poi::Tensor()>& eval,
                                  double step = 1e-5, double rel_tol = 1e-4,
                                  double hard_tol = 1e-3) {
    for (auto& p : params) p.zero_grad();
    poi::Tensor loss = eval();
    poi::backward(loss);

    GradCheckResult res;
    int64_t good = 0;
    for (auto& p : params) {
        for (int64_t i = 0; i < p.size(); ++i) {
            double orig = p.data()[i];
            p.data()[i] = orig + step;
            double up = eval().item();
            p.data()[i] = orig - step;
            double down = eval().item();
            p.data()[i] = orig;
            double fd = (up - down) / (2.0 * step);
            double analytic = p.grad()[i];
            double e = rel_err(fd, analytic);
            res.worst_rel = std::max(res.worst_rel, e);
            if (e <= rel_tol) ++good;
            if (e > hard_tol) res.all_within_hard = false;
            ++res.checked;
        }
    }
    res.frac_within_tol = res.checked ? static_cast<double>(good) / res.checked : 1.0;
    return res;
}

} // namespace poi::test
