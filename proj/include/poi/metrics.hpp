#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "poi/model.hpp"
#include "poi/trajectory.hpp"

namespace poi {

// 10*log10(1/MSE) on [0,1] frames; identical frames capped at 100 dB.
inline double psnr(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) shape_fail("psnr", pred.shape(), target.shape());
    double mse = 0.0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        double d = pred.data()[i] - target.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pred.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> g(49);
        double sum = 0.0;
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < 7; ++j) {
                double di = i - 3, dj = j - 3;
                g[static_cast<size_t>(i * 7 + j)] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
                sum += g[static_cast<size_t>(i * 7 + j)];
            }
        for (double& v : g) v /= sum;
        return g;
    }();
    return w;
}

} // namespace detail

// Mean local SSIM: 7x7 Gaussian window (sigma 1.5) over all fully-contained
// window positions, K1 0.01, K2 0.03, dynamic range 1; channels averaged.
inline double ssim(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) shape_fail("ssim", pred.shape(), target.shape());
    const Shape& s = pred.shape();
    if (s.size() != 3) shape_fail("ssim", s, {-1, -1, -1});
    const int c = static_cast<int>(s[0]), h = static_cast<int>(s[1]), w = static_cast<int>(s[2]);
    if (h < 7 || w < 7) throw DataError("ssim: frame smaller than the 7x7 window");
    const auto& win = detail::ssim_window();
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    double total = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        const double* x = pred.data().data() + static_cast<int64_t>(ch) * h * w;
        const double* y = target.data().data() + static_cast<int64_t>(ch) * h * w;
        double acc = 0.0;
        int count = 0;
        for (int i = 0; i + 7 <= h; ++i)
            for (int j = 0; j + 7 <= w; ++j) {
                double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (int a = 0; a < 7; ++a)
                    for (int b = 0; b < 7; ++b) {
                        double wv = win[static_cast<size_t>(a * 7 + b)];
                        double xv = x[(i + a) * w + (j + b)], yv = y[(i + a) * w + (j + b)];
                        mx += wv * xv;
                        my += wv * yv;
                        mxx += wv * xv * xv;
                        myy += wv * yv * yv;
                        mxy += wv * xv * yv;
                    }
                double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
                acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        total += acc / count;
    }
    return total / c;
}

// ---------------------------------------------------------------------------
// Action-conditioned prediction evaluation
// ---------------------------------------------------------------------------

struct PredRow {
    int traj = 0;
    int step = 0; // 1-based prediction step past the context
    double psnr_db = 0.0;
    double ssim_score = 0.0;
};

struct PredReport {
    std::vector<PredRow> rows;
    double mean_psnr = 0.0, se_psnr = 0.0;
    double mean_ssim = 0.0, se_ssim = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_se(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double v : xs) m += v;
    m /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {m, 0.0};
    double var = 0.0;
    for (double v : xs) var += (v - m) * (v - m);
    var /= static_cast<double>(xs.size() - 1);
    return {m, std::sqrt(var / static_cast<double>(xs.size()))};
}

} // namespace detail

// Conditions on the context frames and true actions (action-encoder mean
// latents), rolls the model forward, and scores each predicted frame.
inline PredReport eval_prediction(const PoiModel& model, const std::vector<Trajectory>& test_set,
                                  int horizon) {
    NoGradGuard ng;
    const int ctx = model.config().context;
    PredReport rep;
    std::vector<double> ps, ss;
    for (size_t k = 0; k < test_set.size(); ++k) {
        const Trajectory& traj = test_set[k];
        if (!traj.has_actions) throw DataError("eval_prediction: test trajectory has no actions");
        int h = std::min(horizon, static_cast<int>(traj.t) - ctx);
        if (h <= 0) continue;
        std::vector<Tensor> context;
        for (int t = 0; t < ctx; ++t) context.push_back(traj.frame_tensor(t));
        std::vector<Tensor> latents;
        for (int t = ctx - 1; t < ctx - 1 + h; ++t)
            latents.push_back(model.encode_action(traj.action_tensor(t)).mean);
        std::vector<Tensor> pred = model.rollout(context, latents);
        for (int s = 0; s < h; ++s) {
            Tensor target = traj.frame_tensor(ctx + s);
            double p = psnr(pred[static_cast<size_t>(s)], target);
            double q = ssim(pred[static_cast<size_t>(s)], target);
            rep.rows.push_back({static_cast<int>(k), s + 1, p, q});
            ps.push_back(p);
            ss.push_back(q);
        }
    }
    std::tie(rep.mean_psnr, rep.se_psnr) = detail::mean_se(ps);
    std::tie(rep.mean_ssim, rep.se_ssim) = detail::mean_se(ss);
    return rep;
}

inline void write_pred_report(const std::string& path, const PredReport& rep) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write prediction report: " + path);
    out << std::setprecision(17);
    out << "traj,step,psnr,ssim\n";
    for (const auto& r : rep.rows)
        out << r.traj << ',' << r.step << ',' << r.psnr_db << ',' << r.ssim_score << '\n';
}

inline void write_pred_summary(const std::string& path, const PredReport& rep) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write prediction summary: " + path);
    out << std::setprecision(17);
    out << "metric,mean,se\n";
    out << "psnr," << rep.mean_psnr << ',' << rep.se_psnr << '\n';
    out << "ssim," << rep.mean_ssim << ',' << rep.se_ssim << '\n';
}

// ---------------------------------------------------------------------------
// Decoded-action evaluation: inverse-model latents pushed through the action
// decoder, compared against true (interaction) or sealed (observation)
// actions, plus fixed-bin component histograms.
// ---------------------------------------------------------------------------

inline constexpr int kHistBins = 21;
inline constexpr double kHistRange = 0.1; // histogram support [-0.1, 0.1] per component

inline int hist_bin(double v) {
    int b = static_cast<int>(std::floor((v + kHistRange) / (2.0 * kHistRange) *
                                        kHistBins));
    return b < 0 ? 0 : (b >= kHistBins ? kHistBins - 1 : b);
}

struct ActionReport {
    double interaction_mean_err = 0.0;
    double observation_mean_err = 0.0;
    int64_t n_interaction = 0, n_observation = 0;
    std::vector<int64_t> hist_int_x, hist_int_y, hist_obs_x, hist_obs_y;
    double obs_decoded_lag1 = 0.0; // lag-1 autocorrelation of decoded actions
    double obs_true_lag1 = 0.0;    // same statistic on the sealed actions
};

namespace detail {

inline double lag1_autocorr(const std::vector<double>& xs) {
    if (xs.size() < 3) return 0.0;
    double m = 0.0;
    for (double v : xs) m += v;
    m /= static_cast<double>(xs.size());
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i + 1 < xs.size(); ++i) num += (xs[i] - m) * (xs[i + 1] - m);
    for (double v : xs) den += (v - m) * (v - m);
    return den > 0.0 ? num / den : 0.0;
}

} // namespace detail

// `observation_truth[k]` carries the sealed actions for observation set entry
// k, laid out as (T-1) x action_dim floats.
inline ActionReport eval_actions(const PoiModel& model,
                                 const std::vector<Trajectory>& interaction_set,
                                 const std::vector<Trajectory>& observation_set,
                                 const std::vector<std::vector<float>>& observation_truth) {
    if (observation_set.size() != observation_truth.size())
        throw DataError("eval_actions: sealed action list does not match observation set");
    NoGradGuard ng;
    ActionReport rep;
    rep.hist_int_x.assign(kHistBins, 0);
    rep.hist_int_y.assign(kHistBins, 0);
    rep.hist_obs_x.assign(kHistBins, 0);
    rep.hist_obs_y.assign(kHistBins, 0);

    double acc_int = 0.0, acc_obs = 0.0;
    std::vector<double> dec_corr, true_corr;

    for (const auto& traj : interaction_set) {
        if (!traj.has_actions) throw DataError("eval_actions: interaction trajectory has no actions");
        for (int t = 0; t + 1 < traj.t; ++t) {
            Tensor a = model.decode_action(
                model.infer_latent(traj.frame_tensor(t), traj.frame_tensor(t + 1)).mean);
            double dx = a.data()[0] - traj.actions[static_cast<size_t>(t) * 2];
            double dy = a.data()[1] - traj.actions[static_cast<size_t>(t) * 2 + 1];
            acc_int += std::hypot(dx, dy);
            rep.hist_int_x[static_cast<size_t>(hist_bin(a.data()[0]))]++;
            rep.hist_int_y[static_cast<size_t>(hist_bin(a.data()[1]))]++;
            ++rep.n_interaction;
        }
    }
    for (size_t k = 0; k < observation_set.size(); ++k) {
        const Trajectory& traj = observation_set[k];
        const auto& truth = observation_truth[k];
        if (static_cast<int64_t>(truth.size()) != static_cast<int64_t>(traj.t - 1) * 2)
            throw DataError("eval_actions: sealed action length mismatch");
        std::vector<double> dec_seq, true_seq;
        for (int t = 0; t + 1 < traj.t; ++t) {
            Tensor a = model.decode_action(
                model.infer_latent(traj.frame_tensor(t), traj.frame_tensor(t + 1)).mean);
            double tx = truth[static_cast<size_t>(t) * 2], ty = truth[static_cast<size_t>(t) * 2 + 1];
            acc_obs += std::hypot(a.data()[0] - tx, a.data()[1] - ty);
            rep.hist_obs_x[static_cast<size_t>(hist_bin(a.data()[0]))]++;
            rep.hist_obs_y[static_cast<size_t>(hist_bin(a.data()[1]))]++;
            ++rep.n_observation;
            dec_seq.push_back(a.data()[0]);
            dec_seq.push_back(a.data()[1]);
            true_seq.push_back(tx);
            true_seq.push_back(ty);
        }
        // component-interleaving would fake correlation; measure per component
        std::vector<double> dx, dy, txs, tys;
        for (size_t i = 0; i < dec_seq.size(); i += 2) {
            dx.push_back(dec_seq[i]);
            dy.push_back(dec_seq[i + 1]);
            txs.push_back(true_seq[i]);
            tys.push_back(true_seq[i + 1]);
        }
        dec_corr.push_back(detail::lag1_autocorr(dx));
        dec_corr.push_back(detail::lag1_autocorr(dy));
        true_corr.push_back(detail::lag1_autocorr(txs));
        true_corr.push_back(detail::lag1_autocorr(tys));
    }
    if (rep.n_interaction > 0) rep.interaction_mean_err = acc_int / static_cast<double>(rep.n_interaction);
    if (rep.n_observation > 0) rep.observation_mean_err = acc_obs / static_cast<double>(rep.n_observation);
    rep.obs_decoded_lag1 = detail::mean_se(dec_corr).first;
    rep.obs_true_lag1 = detail::mean_se(true_corr).first;
    return rep;
}

inline void write_action_report(const std::string& path, const ActionReport& rep) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write action report: " + path);
    out << std::setprecision(17);
    out << "metric,value\n";
    out << "interaction_mean_err," << rep.interaction_mean_err << '\n';
    out << "observation_mean_err," << rep.observation_mean_err << '\n';
    out << "n_interaction," << rep.n_interaction << '\n';
    out << "n_observation," << rep.n_observation << '\n';
    out << "obs_decoded_lag1," << rep.obs_decoded_lag1 << '\n';
    out << "obs_true_lag1," << rep.obs_true_lag1 << '\n';
}

inline void write_action_histograms(const std::string& path, const ActionReport& rep) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write action histograms: " + path);
    out << std::setprecision(17);
    out << "bin,lo,hi,interaction_x,interaction_y,observation_x,observation_y\n";
    for (int b = 0; b < kHistBins; ++b) {
        double lo = -kHistRange + b * (2.0 * kHistRange / kHistBins);
        double hi = lo + 2.0 * kHistRange / kHistBins;
        out << b << ',' << lo << ',' << hi << ',' << rep.hist_int_x[static_cast<size_t>(b)] << ','
            << rep.hist_int_y[static_cast<size_t>(b)] << ',' << rep.hist_obs_x[static_cast<size_t>(b)]
            << ',' << rep.hist_obs_y[static_cast<size_t>(b)] << '\n';
    }
}

} // namespace poi
