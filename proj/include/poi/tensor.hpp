#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace poi {

using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Reverse-mode graph node. A node owns shared_ptrs to its parents, so the
// graph is kept alive by the loss root and freed when it goes out of scope.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

// When off, ops do not record parents; forward values only. Used by the
// planner and evaluation paths.
inline bool& grad_mode() {
    thread_local bool on = true;
    return on;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data.assign(static_cast<size_t>(numel(n->shape)), 0.0);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }
    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        if (static_cast<int64_t>(values.size()) != numel(n->shape))
            throw ShapeError("Tensor::from: data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(n->shape));
        n->data = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return node_->size(); }
    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
    double item() const {
        if (node_->size() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
        return node_->data[0];
    }
    std::shared_ptr<Node> node() const { return node_; }

    // Detached copy of the values (leaf, no history).
    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->data = node_->data;
        n->requires_grad = false;
        return Tensor(n);
    }

private:
    std::shared_ptr<Node> node_;
};

// Debug-mode finite checks on op inputs; defaults on in debug builds, can be
// toggled at runtime (tests enable it explicitly).
inline bool& debug_checks() {
#ifndef NDEBUG
    thread_local bool on = true;
#else
    thread_local bool on = false;
#endif
    return on;
}

namespace detail {

inline void check_finite(const char* op, const Tensor& t) {
    if (!debug_checks()) return;
    for (double v : t.data())
        if (!std::isfinite(v))
            throw NumericError(std::string(op) + ": non-finite input value");
}

inline Tensor make_result(Shape shape, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(numel(n->shape)), 0.0);
    bool need = false;
    for (const auto& in : inputs) need = need || in.requires_grad();
    if (grad_mode() && need) {
        n->requires_grad = true;
        for (auto& in : inputs) n->parents.push_back(in.node());
        n->backward_fn = std::move(backward);
    }
    return Tensor(n);
}

inline void blas_single_thread() {
    static const bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}

// C(m x n) += A(m x k) * B(k x n), optional transposes on A/B (sizes given
// post-transpose).
inline void gemm_acc(bool ta, bool tb, int m, int n, int k, const double* a, const double* b,
                     double* c, double beta = 1.0) {
    blas_single_thread();
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, 1.0, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
    auto an = a.node(), bn = b.node();
    Tensor out = detail::make_result(a.shape(), {a, b}, [an, bn](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (int64_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t i = 0; i < self.size(); ++i) bn->grad[i] += self.grad[i];
        }
    });
    for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
    auto an = a.node(), bn = b.node();
    Tensor out = detail::make_result(a.shape(), {a, b}, [an, bn](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (int64_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t i = 0; i < self.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
    for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
    auto an = a.node(), bn = b.node();
    Tensor out = detail::make_result(a.shape(), {a, b}, [an, bn](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (int64_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t i = 0; i < self.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
        }
    });
    for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    auto an = a.node();
    Tensor out = detail::make_result(a.shape(), {a}, [an, c](Node& self) {
        an->ensure_grad();
        for (int64_t i = 0; i < self.size(); ++i) an->grad[i] += c * self.grad[i];
    });
    for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = c * a.data()[i];
    return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
    auto an = a.node();
    Tensor out = detail::make_result(a.shape(), {a}, [an](Node& self) {
        an->ensure_grad();
        for (int64_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
    });
    for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + c;
    return out;
}

namespace detail {
// Generic unary op with pointwise derivative computed from (x, y).
template <class F, class DF>
Tensor unary(const char* name, const Tensor& a, F f, DF df) {
    check_finite(name, a);
    auto an = a.node();
    Tensor out = detail::make_result(a.shape(), {a}, [an, df](Node& self) {
        an->ensure_grad();
        for (int64_t i = 0; i < self.size(); ++i)
            an->grad[i] += self.grad[i] * df(an->data[i], self.data[i]);
    });
    for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = f(a.data()[i]);
    return out;
}
} // namespace detail

inline Tensor leaky_relu(const Tensor& a, double slope = 0.2) {
    return detail::unary(
        "leaky_relu", a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
        [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

inline Tensor tanh_op(const Tensor& a) {
    return detail::unary(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(
        "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp_op(const Tensor& a) {
    return detail::unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// log with the documented epsilon clamp on the argument
inline constexpr double kLogEps = 1e-12;

inline Tensor log_op(const Tensor& a) {
    return detail::unary(
        "log", a, [](double x) { return std::log(std::max(x, kLogEps)); },
        [](double x, double) { return 1.0 / std::max(x, kLogEps); });
}

inline Tensor softplus(const Tensor& a) {
    return detail::unary(
        "softplus", a,
        [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Tensor abs_op(const Tensor& a) {
    return detail::unary(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return detail::unary(
        "clamp", a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        shape_fail("matmul", a.shape(), b.shape());
    int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    auto an = a.node(), bn = b.node();
    Tensor out = detail::make_result({m, n}, {a, b}, [an, bn, m, k, n](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            detail::gemm_acc(false, true, m, k, n, self.grad.data(), bn->data.data(),
                             an->grad.data());
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            detail::gemm_acc(true, false, k, n, m, an->data.data(), self.grad.data(),
                             bn->grad.data());
        }
    });
    detail::gemm_acc(false, false, m, n, k, a.data().data(), b.data().data(), out.data().data(),
                     0.0);
    return out;
}

// y = W x + b for a vector x; the workhorse of the MLPs.
inline Tensor affine(const Tensor& w, const Tensor& x, const Tensor& b) {
    if (w.shape().size() != 2 || x.shape().size() != 1 || w.shape()[1] != x.shape()[0])
        shape_fail("affine", w.shape(), x.shape());
    int m = w.shape()[0], k = w.shape()[1];
    if (b.shape() != Shape{m}) shape_fail("affine(bias)", w.shape(), b.shape());
    auto wn = w.node(), xn = x.node(), bn = b.node();
    Tensor out = detail::make_result({m}, {w, x, b}, [wn, xn, bn, m, k](Node& self) {
        if (wn->requires_grad) {
            wn->ensure_grad();
            detail::gemm_acc(false, false, m, k, 1, self.grad.data(), xn->data.data(),
                             wn->grad.data());
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
            detail::gemm_acc(true, false, k, 1, m, wn->data.data(), self.grad.data(),
                             xn->grad.data());
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < m; ++i) bn->grad[i] += self.grad[i];
        }
    });
    for (int i = 0; i < m; ++i) out.data()[i] = b.data()[i];
    detail::gemm_acc(false, false, m, 1, k, w.data().data(), x.data().data(), out.data().data());
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
    auto an = a.node();
    Tensor out = detail::make_result(std::move(shape), {a}, [an](Node& self) {
        an->ensure_grad();
        for (int64_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
    });
    out.data() = a.data();
    return out;
}

// Concatenate along axis 0 (vectors, or channel axis of CHW maps).
inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape rest(parts[0].shape().begin() + 1, parts[0].shape().end());
    int64_t inner = numel(rest);
    int total0 = 0;
    for (const auto& p : parts) {
        Shape prest(p.shape().begin() + 1, p.shape().end());
        if (prest != rest) shape_fail("concat", parts[0].shape(), p.shape());
        total0 += p.shape()[0];
    }
    Shape out_shape = parts[0].shape();
    out_shape[0] = total0;
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    Tensor out = detail::make_result(out_shape, parts, [nodes, inner](Node& self) {
        int64_t off = 0;
        for (const auto& n : nodes) {
            int64_t len = n->shape[0] * inner;
            if (n->requires_grad) {
                n->ensure_grad();
                for (int64_t i = 0; i < len; ++i) n->grad[i] += self.grad[off + i];
            }
            off += len;
        }
    });
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
        off += p.size();
    }
    return out;
}

// Slice [start, start+len) along axis 0.
inline Tensor slice(const Tensor& a, int start, int len) {
    if (start < 0 || len < 0 || start + len > a.shape()[0])
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape[0] = len;
    Shape rest(a.shape().begin() + 1, a.shape().end());
    int64_t inner = numel(rest);
    auto an = a.node();
    Tensor out = detail::make_result(out_shape, {a}, [an, start, inner](Node& self) {
        an->ensure_grad();
        int64_t off = start * inner;
        for (int64_t i = 0; i < self.size(); ++i) an->grad[off + i] += self.grad[i];
    });
    std::copy(a.data().begin() + start * inner, a.data().begin() + (start + len) * inner,
              out.data().begin());
    return out;
}

// Broadcast a length-L vector to an L x H x W map.
inline Tensor tile_to_map(const Tensor& v, int h, int w) {
    if (v.shape().size() != 1) throw ShapeError("tile_to_map: need vector, got " + shape_str(v.shape()));
    int l = v.shape()[0];
    auto vn = v.node();
    Tensor out = detail::make_result({l, h, w}, {v}, [vn, l, h, w](Node& self) {
        vn->ensure_grad();
        for (int c = 0; c < l; ++c) {
            double s = 0.0;
            const double* g = self.grad.data() + static_cast<int64_t>(c) * h * w;
            for (int i = 0; i < h * w; ++i) s += g[i];
            vn->grad[c] += s;
        }
    });
    for (int c = 0; c < l; ++c)
        std::fill(out.data().begin() + static_cast<int64_t>(c) * h * w,
                  out.data().begin() + static_cast<int64_t>(c + 1) * h * w, v.data()[c]);
    return out;
}

// ---------------------------------------------------------------------------
// Reductions (fixed index-ascending summation order)
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    auto an = a.node();
    Tensor out = detail::make_result({1}, {a}, [an](Node& self) {
        an->ensure_grad();
        for (int64_t i = 0; i < an->size(); ++i) an->grad[i] += self.grad[0];
    });
    double s = 0.0;
    for (double v : a.data()) s += v;
    out.data()[0] = s;
    return out;
}

inline Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// 2-D convolution and friends (maps are C x H x W)
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const double* im, int c, int h, int w, int kh, int kw, int stride, int pad,
                   int oh, int ow, double* col) {
    // col is (c*kh*kw) x (oh*ow)
    for (int ch = 0; ch < c; ++ch)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                double* row = col + ((static_cast<int64_t>(ch) * kh + ki) * kw + kj) * oh * ow;
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride + ki - pad;
                    for (int oj = 0; oj < ow; ++oj) {
                        int jj = oj * stride + kj - pad;
                        row[oi * ow + oj] = (ii >= 0 && ii < h && jj >= 0 && jj < w)
                                                ? im[(static_cast<int64_t>(ch) * h + ii) * w + jj]
                                                : 0.0;
                    }
                }
            }
}

inline void col2im_acc(const double* col, int c, int h, int w, int kh, int kw, int stride, int pad,
                       int oh, int ow, double* im) {
    for (int ch = 0; ch < c; ++ch)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const double* row = col + ((static_cast<int64_t>(ch) * kh + ki) * kw + kj) * oh * ow;
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        int jj = oj * stride + kj - pad;
                        if (jj < 0 || jj >= w) continue;
                        im[(static_cast<int64_t>(ch) * h + ii) * w + jj] += row[oi * ow + oj];
                    }
                }
            }
}

} // namespace detail

// x: (Cin,H,W), kernel: (Cout, Cin*kh*kw), bias: (Cout) -> (Cout,OH,OW)
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int cin, int kh,
                     int kw, int stride, int pad) {
    if (x.shape().size() != 3 || x.shape()[0] != cin)
        shape_fail("conv2d(input)", x.shape(), {cin, -1, -1});
    if (kernel.shape().size() != 2 || kernel.shape()[1] != cin * kh * kw)
        shape_fail("conv2d(kernel)", kernel.shape(), {kernel.shape()[0], cin * kh * kw});
    int cout = kernel.shape()[0];
    if (bias.shape() != Shape{cout}) shape_fail("conv2d(bias)", bias.shape(), {cout});
    int h = x.shape()[1], w = x.shape()[2];
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) shape_fail("conv2d(output)", x.shape(), {cout, oh, ow});

    auto xn = x.node(), kn = kernel.node(), bn = bias.node();
    int krows = cin * kh * kw, opix = oh * ow;
    auto col = std::make_shared<std::vector<double>>(static_cast<size_t>(krows) * opix);
    detail::im2col(x.data().data(), cin, h, w, kh, kw, stride, pad, oh, ow, col->data());

    Tensor out = detail::make_result(
        {cout, oh, ow}, {x, kernel, bias},
        [xn, kn, bn, col, cin, h, w, kh, kw, stride, pad, oh, ow, cout, krows, opix](Node& self) {
            if (kn->requires_grad) {
                kn->ensure_grad();
                detail::gemm_acc(false, true, cout, krows, opix, self.grad.data(), col->data(),
                                 kn->grad.data());
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int c = 0; c < cout; ++c) {
                    double s = 0.0;
                    const double* g = self.grad.data() + static_cast<int64_t>(c) * opix;
                    for (int i = 0; i < opix; ++i) s += g[i];
                    bn->grad[c] += s;
                }
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                std::vector<double> dcol(static_cast<size_t>(krows) * opix);
                detail::gemm_acc(true, false, krows, opix, cout, kn->data.data(),
                                 self.grad.data(), dcol.data(), 0.0);
                detail::col2im_acc(dcol.data(), cin, h, w, kh, kw, stride, pad, oh, ow,
                                   xn->grad.data());
            }
        });
    for (int c = 0; c < cout; ++c)
        std::fill(out.data().begin() + static_cast<int64_t>(c) * opix,
                  out.data().begin() + static_cast<int64_t>(c + 1) * opix, bias.data()[c]);
    detail::gemm_acc(false, false, cout, opix, krows, kernel.data().data(), col->data(),
                     out.data().data());
    return out;
}

// Nearest-neighbour 2x upsampling of a CHW map.
inline Tensor upsample2(const Tensor& x) {
    if (x.shape().size() != 3) throw ShapeError("upsample2: need CHW, got " + shape_str(x.shape()));
    int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    auto xn = x.node();
    Tensor out = detail::make_result({c, 2 * h, 2 * w}, {x}, [xn, c, h, w](Node& self) {
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const double* g = self.grad.data() + ((static_cast<int64_t>(ch) * 2 * h) + 2 * i) * 2 * w + 2 * j;
                    xn->grad[(static_cast<int64_t>(ch) * h + i) * w + j] +=
                        g[0] + g[1] + g[2 * w] + g[2 * w + 1];
                }
    });
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double v = x.data()[(static_cast<int64_t>(ch) * h + i) * w + j];
                double* o = out.data().data() + ((static_cast<int64_t>(ch) * 2 * h) + 2 * i) * 2 * w + 2 * j;
                o[0] = o[1] = o[2 * w] = o[2 * w + 1] = v;
            }
    return out;
}

// Per-channel normalization over the spatial extent; epsilon 1e-5 inside the
// square root, constant channels normalize to exactly zero.
inline constexpr double kInstanceNormEps = 1e-5;

inline Tensor instance_norm(const Tensor& x) {
    if (x.shape().size() != 3) throw ShapeError("instance_norm: need CHW, got " + shape_str(x.shape()));
    int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    auto xn = x.node();
    auto stats = std::make_shared<std::vector<double>>(2 * c); // mean, inv_std per channel
    Tensor out = detail::make_result({x.shape()[0], x.shape()[1], x.shape()[2]}, {x},
                                     [xn, stats, c, hw](Node& self) {
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double inv_std = (*stats)[2 * ch + 1];
            const double* g = self.grad.data() + static_cast<int64_t>(ch) * hw;
            const double* y = self.data.data() + static_cast<int64_t>(ch) * hw;
            double gs = 0.0, gys = 0.0;
            for (int i = 0; i < hw; ++i) {
                gs += g[i];
                gys += g[i] * y[i];
            }
            double* dx = xn->grad.data() + static_cast<int64_t>(ch) * hw;
            double n = static_cast<double>(hw);
            for (int i = 0; i < hw; ++i)
                dx[i] += inv_std * (g[i] - gs / n - y[i] * gys / n);
        }
    });
    for (int ch = 0; ch < c; ++ch) {
        const double* xd = x.data().data() + static_cast<int64_t>(ch) * hw;
        // constant channels normalize to exactly zero
        bool constant = true;
        for (int i = 1; i < hw && constant; ++i) constant = xd[i] == xd[0];
        if (constant) {
            (*stats)[2 * ch] = xd[0];
            (*stats)[2 * ch + 1] = 1.0 / std::sqrt(kInstanceNormEps);
            std::fill(out.data().begin() + static_cast<int64_t>(ch) * hw,
                      out.data().begin() + static_cast<int64_t>(ch + 1) * hw, 0.0);
            continue;
        }
        double m = 0.0;
        for (int i = 0; i < hw; ++i) m += xd[i];
        m /= hw;
        double var = 0.0;
        for (int i = 0; i < hw; ++i) var += (xd[i] - m) * (xd[i] - m);
        var /= hw;
        double inv_std = 1.0 / std::sqrt(var + kInstanceNormEps);
        (*stats)[2 * ch] = m;
        (*stats)[2 * ch + 1] = inv_std;
        double* o = out.data().data() + static_cast<int64_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) o[i] = (xd[i] - m) * inv_std;
    }
    return out;
}

// y[c,:,:] = x[c,:,:] * gamma[c] + beta[c] — the affine part of instance norm.
inline Tensor channel_scale_bias(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    if (x.shape().size() != 3) throw ShapeError("channel_scale_bias: need CHW, got " + shape_str(x.shape()));
    int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    if (gamma.shape() != Shape{c}) shape_fail("channel_scale_bias(gamma)", gamma.shape(), {c});
    if (beta.shape() != Shape{c}) shape_fail("channel_scale_bias(beta)", beta.shape(), {c});
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    Tensor out = detail::make_result(x.shape(), {x, gamma, beta}, [xn, gn, bn, c, hw](Node& self) {
        for (int ch = 0; ch < c; ++ch) {
            const double* g = self.grad.data() + static_cast<int64_t>(ch) * hw;
            const double* xd = xn->data.data() + static_cast<int64_t>(ch) * hw;
            if (xn->requires_grad) {
                xn->ensure_grad();
                double* dx = xn->grad.data() + static_cast<int64_t>(ch) * hw;
                double ga = gn->data[ch];
                for (int i = 0; i < hw; ++i) dx[i] += g[i] * ga;
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                double s = 0.0;
                for (int i = 0; i < hw; ++i) s += g[i] * xd[i];
                gn->grad[ch] += s;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                double s = 0.0;
                for (int i = 0; i < hw; ++i) s += g[i];
                bn->grad[ch] += s;
            }
        }
    });
    for (int ch = 0; ch < c; ++ch) {
        const double* xd = x.data().data() + static_cast<int64_t>(ch) * hw;
        double* o = out.data().data() + static_cast<int64_t>(ch) * hw;
        double ga = gamma.data()[ch], be = beta.data()[ch];
        for (int i = 0; i < hw; ++i) o[i] = xd[i] * ga + be;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!std::isfinite(loss.item())) throw NumericError("backward: loss is non-finite");

    // Post-order DFS: parents appear before their consumers; processing the
    // reversed list pushes gradients root-to-leaves exactly once per node.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior-node gradients are scratch space for this pass; only leaves
    // (parameters) accumulate across repeated backward calls.
    for (Node* n : order)
        if (!n->parents.empty() && !n->grad.empty())
            std::fill(n->grad.begin(), n->grad.end(), 0.0);

    Node* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->requires_grad) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

} // namespace poi
