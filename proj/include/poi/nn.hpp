#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "poi/rng.hpp"
#include "poi/tensor.hpp"

namespace poi {

// Named parameter map. Identifiers are unique and iterate in sorted order,
// which fixes the checkpoint layout and the gradient accumulation order.
class ParamStore {
public:
    Tensor create(const std::string& name, Shape shape, Rng& rng, int fan_in, int fan_out,
                  bool zero_init = false) {
        if (params_.count(name))
            throw std::runtime_error("ParamStore: duplicate parameter '" + name + "'");
        Tensor t = Tensor::zeros(std::move(shape), true);
        if (!zero_init) {
            double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (double& v : t.data()) v = rng.uniform(-bound, bound);
        }
        params_.emplace(name, t);
        return t;
    }

    Tensor create_const(const std::string& name, Shape shape, double value) {
        if (params_.count(name))
            throw std::runtime_error("ParamStore: duplicate parameter '" + name + "'");
        Tensor t = Tensor::full(std::move(shape), value, true);
        params_.emplace(name, t);
        return t;
    }

    const std::map<std::string, Tensor>& all() const { return params_; }
    Tensor at(const std::string& name) const { return params_.at(name); }
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& [name, t] : params_) n += t.size();
        return n;
    }

private:
    std::map<std::string, Tensor> params_;
};

struct Dense {
    Tensor w, b;
    int in = 0, out = 0;

    Dense() = default;
    Dense(ParamStore& ps, const std::string& prefix, int in_dim, int out_dim, Rng& rng)
        : in(in_dim), out(out_dim) {
        w = ps.create(prefix + ".w", {out_dim, in_dim}, rng, in_dim, out_dim);
        b = ps.create(prefix + ".b", {out_dim}, rng, in_dim, out_dim, /*zero_init=*/true);
    }

    Tensor forward(const Tensor& x) const { return affine(w, x, b); }
};

struct Conv {
    Tensor k, b;
    int cin = 0, cout = 0, kh = 0, kw = 0, stride = 1, pad = 0;

    Conv() = default;
    Conv(ParamStore& ps, const std::string& prefix, int cin_, int cout_, int kernel, int stride_,
         int pad_, Rng& rng)
        : cin(cin_), cout(cout_), kh(kernel), kw(kernel), stride(stride_), pad(pad_) {
        int fan_in = cin * kh * kw, fan_out = cout * kh * kw;
        k = ps.create(prefix + ".k", {cout, cin * kh * kw}, rng, fan_in, fan_out);
        b = ps.create(prefix + ".b", {cout}, rng, fan_in, fan_out, /*zero_init=*/true);
    }

    Tensor forward(const Tensor& x) const { return conv2d(x, k, b, cin, kh, kw, stride, pad); }
};

struct InstanceNormAffine {
    Tensor gamma, beta;

    InstanceNormAffine() = default;
    InstanceNormAffine(ParamStore& ps, const std::string& prefix, int channels) {
        gamma = ps.create_const(prefix + ".gamma", {channels}, 1.0);
        beta = ps.create_const(prefix + ".beta", {channels}, 0.0);
    }

    Tensor forward(const Tensor& x) const {
        return channel_scale_bias(instance_norm(x), gamma, beta);
    }
};

struct LstmState {
    Tensor h, c;
};

// Fully connected LSTM cell. Gate stack order along axis 0: input, forget,
// candidate, output.
struct LstmCell {
    Tensor w_ih, w_hh, b;
    int in = 0, hidden = 0;

    LstmCell() = default;
    LstmCell(ParamStore& ps, const std::string& prefix, int in_dim, int hidden_dim, Rng& rng)
        : in(in_dim), hidden(hidden_dim) {
        w_ih = ps.create(prefix + ".w_ih", {4 * hidden_dim, in_dim}, rng, in_dim, hidden_dim);
        w_hh = ps.create(prefix + ".w_hh", {4 * hidden_dim, hidden_dim}, rng, hidden_dim, hidden_dim);
        b = ps.create(prefix + ".b", {4 * hidden_dim}, rng, in_dim, hidden_dim, /*zero_init=*/true);
    }

    LstmState initial_state() const {
        return {Tensor::zeros({hidden}), Tensor::zeros({hidden})};
    }

    std::pair<Tensor, LstmState> step(const Tensor& x, const LstmState& state) const {
        if (x.shape() != Shape{in}) shape_fail("lstm_cell_step(input)", x.shape(), {in});
        if (state.h.shape() != Shape{hidden} || state.c.shape() != Shape{hidden})
            shape_fail("lstm_cell_step(state)", state.h.shape(), {hidden});
        Tensor gates = add(affine(w_ih, x, b), matvec_nobias(w_hh, state.h));
        Tensor i = sigmoid(slice(gates, 0, hidden));
        Tensor f = sigmoid(slice(gates, hidden, hidden));
        Tensor g = tanh_op(slice(gates, 2 * hidden, hidden));
        Tensor o = sigmoid(slice(gates, 3 * hidden, hidden));
        Tensor c_next = add(mul(f, state.c), mul(i, g));
        Tensor h_next = mul(o, tanh_op(c_next));
        return {h_next, LstmState{h_next, c_next}};
    }

private:
    static Tensor matvec_nobias(const Tensor& w, const Tensor& x) {
        return reshape(matmul(w, reshape(x, {x.shape()[0], 1})), {w.shape()[0]});
    }
};

struct ConvLstmState {
    Tensor h, c; // each (hidden, H, W)
};

// Convolutional LSTM cell over CHW maps (3x3 kernels, padding 1).
struct ConvLstmCell {
    Conv gates;
    int in_ch = 0, hidden_ch = 0;

    ConvLstmCell() = default;
    ConvLstmCell(ParamStore& ps, const std::string& prefix, int in_channels, int hidden_channels,
                 Rng& rng)
        : in_ch(in_channels), hidden_ch(hidden_channels) {
        gates = Conv(ps, prefix + ".gates", in_channels + hidden_channels, 4 * hidden_channels, 3,
                     1, 1, rng);
    }

    ConvLstmState initial_state(int h, int w) const {
        return {Tensor::zeros({hidden_ch, h, w}), Tensor::zeros({hidden_ch, h, w})};
    }

    std::pair<Tensor, ConvLstmState> step(const Tensor& x, const ConvLstmState& state) const {
        Tensor stacked = gates.forward(concat({x, state.h}));
        Tensor i = sigmoid(slice(stacked, 0, hidden_ch));
        Tensor f = sigmoid(slice(stacked, hidden_ch, hidden_ch));
        Tensor g = tanh_op(slice(stacked, 2 * hidden_ch, hidden_ch));
        Tensor o = sigmoid(slice(stacked, 3 * hidden_ch, hidden_ch));
        Tensor c_next = add(mul(f, state.c), mul(i, g));
        Tensor h_next = mul(o, tanh_op(c_next));
        return {h_next, ConvLstmState{h_next, c_next}};
    }
};

// Adam with bias-corrected moments; epsilon 1e-8.
class Adam {
public:
    Adam(double lr = 0.001, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (const auto& [name, p] : params.all()) {
            auto& m = m_[name];
            auto& v = v_[name];
            Tensor param = p;
            if (m.empty()) {
                m.assign(param.data().size(), 0.0);
                v.assign(param.data().size(), 0.0);
            }
            const auto& g = param.grad();
            auto& d = param.data();
            for (size_t i = 0; i < d.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                d[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

} // namespace poi
