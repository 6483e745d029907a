#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "gbx/tensor.hpp"

namespace gbx {

/// Thrown when training produces non-finite numbers; the CLI maps it to its
/// own exit code so scripted runs can tell divergence from bad input.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void add_scaled(Tensor& dst, const Tensor& src, double s) {
    require(dst.same_shape(src), "add_scaled: shape mismatch " + dst.shape_string() + " vs " + src.shape_string());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

inline void scale(Tensor& t, double s) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= s;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation) with zero padding. Maps are
// [channels, rows, cols], kernels are [out_channels, in_channels, kh, kw].
// ---------------------------------------------------------------------------

inline Tensor conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& b,
                             std::size_t stride, std::size_t pad) {
    require(in.rank() == 3, "conv2d: input must be rank 3, got " + in.shape_string());
    require(w.rank() == 4, "conv2d: weights must be rank 4, got " + w.shape_string());
    require(b.rank() == 1 && b.extent(0) == w.extent(0), "conv2d: bias must match out channels");
    require(w.extent(1) == in.extent(0), "conv2d: in channels mismatch, input " + in.shape_string() +
                                             " vs weights " + w.shape_string());
    require(stride >= 1, "conv2d: stride must be positive");
    const std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
    const std::size_t F = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    require(H + 2 * pad >= kh && W + 2 * pad >= kw, "conv2d: kernel larger than padded input");
    const std::size_t oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;

    Tensor out({F, oh, ow});
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                double acc = b(f);
                for (std::size_t ch = 0; ch < C; ++ch)
                    for (std::size_t i = 0; i < kh; ++i) {
                        const long long ir = static_cast<long long>(r * stride + i) - static_cast<long long>(pad);
                        if (ir < 0 || ir >= static_cast<long long>(H)) continue;
                        for (std::size_t j = 0; j < kw; ++j) {
                            const long long ic = static_cast<long long>(c * stride + j) - static_cast<long long>(pad);
                            if (ic < 0 || ic >= static_cast<long long>(W)) continue;
                            acc += in(ch, static_cast<std::size_t>(ir), static_cast<std::size_t>(ic)) * w(f, ch, i, j);
                        }
                    }
                out(f, r, c) = acc;
            }
    return out;
}

/// Returns d_in; accumulates kernel and bias gradients into d_w / d_b.
inline Tensor conv2d_backward(const Tensor& in, const Tensor& w, std::size_t stride, std::size_t pad,
                              const Tensor& d_out, Tensor& d_w, Tensor& d_b) {
    require(d_w.same_shape(w), "conv2d_backward: d_w shape mismatch");
    require(d_out.rank() == 3 && d_out.extent(0) == w.extent(0), "conv2d_backward: d_out shape mismatch");
    const std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
    const std::size_t kh = w.extent(2), kw = w.extent(3);
    const std::size_t F = w.extent(0), oh = d_out.extent(1), ow = d_out.extent(2);

    Tensor d_in({C, H, W});
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                const double g = d_out(f, r, c);
                if (g == 0.0) continue;
                d_b(f) += g;
                for (std::size_t ch = 0; ch < C; ++ch)
                    for (std::size_t i = 0; i < kh; ++i) {
                        const long long ir = static_cast<long long>(r * stride + i) - static_cast<long long>(pad);
                        if (ir < 0 || ir >= static_cast<long long>(H)) continue;
                        for (std::size_t j = 0; j < kw; ++j) {
                            const long long ic = static_cast<long long>(c * stride + j) - static_cast<long long>(pad);
                            if (ic < 0 || ic >= static_cast<long long>(W)) continue;
                            const std::size_t ur = static_cast<std::size_t>(ir), uc = static_cast<std::size_t>(ic);
                            d_w(f, ch, i, j) += g * in(ch, ur, uc);
                            d_in(ch, ur, uc) += g * w(f, ch, i, j);
                        }
                    }
            }
    return d_in;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

/// Gradient at exactly 0 is defined as 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& d_out) {
    require(x.same_shape(d_out), "relu_backward: shape mismatch");
    Tensor d_in(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) d_in[i] = x[i] > 0.0 ? d_out[i] : 0.0;
    return d_in;
}

// ---------------------------------------------------------------------------
// Max pooling. Ties pick the smallest flat (row-major) input index so runs
// do not depend on visit order.
// ---------------------------------------------------------------------------

struct PoolResult {
    Tensor out;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

inline PoolResult maxpool_forward(const Tensor& in, std::size_t window, std::size_t stride) {
    require(in.rank() == 3, "maxpool: input must be rank 3, got " + in.shape_string());
    require(window >= 1 && stride >= 1, "maxpool: window and stride must be positive");
    const std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
    require(window <= H && window <= W, "maxpool: window larger than input " + in.shape_string());
    const std::size_t oh = (H - window) / stride + 1, ow = (W - window) / stride + 1;

    PoolResult res{Tensor({C, oh, ow}), {}};
    res.argmax.resize(C * oh * ow);
    std::size_t o = 0;
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c, ++o) {
                double best = in(ch, r * stride, c * stride);
                std::size_t best_idx = (ch * H + r * stride) * W + c * stride;
                for (std::size_t i = 0; i < window; ++i)
                    for (std::size_t j = 0; j < window; ++j) {
                        const double v = in(ch, r * stride + i, c * stride + j);
                        if (v > best) {
                            best = v;
                            best_idx = (ch * H + r * stride + i) * W + c * stride + j;
                        }
                    }
                res.out[o] = best;
                res.argmax[o] = best_idx;
            }
    return res;
}

inline Tensor maxpool_backward(const std::vector<std::size_t>& in_shape,
                               const std::vector<std::size_t>& argmax, const Tensor& d_out) {
    Tensor d_in(in_shape);
    require(argmax.size() == d_out.size(), "maxpool_backward: argmax size mismatch");
    for (std::size_t o = 0; o < d_out.size(); ++o) d_in[argmax[o]] += d_out[o];
    return d_in;
}

// ---------------------------------------------------------------------------
// Fully connected: out = W x + b with W of shape [out_dim, in_dim].
// ---------------------------------------------------------------------------

inline Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(w.rank() == 2, "fc: weights must be rank 2, got " + w.shape_string());
    require(x.size() == w.extent(1), "fc: input size " + std::to_string(x.size()) +
                                         " does not match weight cols " + std::to_string(w.extent(1)));
    require(b.rank() == 1 && b.extent(0) == w.extent(0), "fc: bias must match out dim");
    const std::size_t K = w.extent(0), D = w.extent(1);
    Tensor out({K});
    for (std::size_t k = 0; k < K; ++k) {
        double acc = b(k);
        for (std::size_t d = 0; d < D; ++d) acc += w(k, d) * x[d];
        out(k) = acc;
    }
    return out;
}

/// Returns d_x (flat, same size as x); accumulates into d_w / d_b.
inline Tensor fc_backward(const Tensor& x, const Tensor& w, const Tensor& d_out,
                          Tensor& d_w, Tensor& d_b) {
    const std::size_t K = w.extent(0), D = w.extent(1);
    Tensor d_x({D});
    for (std::size_t k = 0; k < K; ++k) {
        const double g = d_out(k);
        d_b(k) += g;
        for (std::size_t d = 0; d < D; ++d) {
            d_w(k, d) += g * x[d];
            d_x(d) += g * w(k, d);
        }
    }
    return d_x;
}

// ---------------------------------------------------------------------------
// Task losses over one sample's logits. Both return the per-sample loss and
// write the logit gradient; batch averaging is the caller's job.
// ---------------------------------------------------------------------------

enum class TaskLossKind { logistic_binary, softmax_multiclass };

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
    return (t > 0.0 ? t : 0.0) + std::log1p(std::exp(-std::abs(t)));
}

/// One-vs-rest logistic loss averaged over classes; labels become +1 for the
/// true class and -1 elsewhere.
inline double logistic_loss(const Tensor& logits, std::size_t label, Tensor& d_logits) {
    require(logits.rank() == 1, "logistic_loss: logits must be rank 1");
    require(label < logits.extent(0), "logistic_loss: label out of range");
    const std::size_t C = logits.extent(0);
    double loss = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        const double y = c == label ? 1.0 : -1.0;
        const double t = -y * logits(c);
        loss += softplus(t);
        // d/dz log(1+exp(-y z)) = -y * sigmoid(-y z)
        const double sig = 1.0 / (1.0 + std::exp(-t));
        d_logits(c) = -y * sig / static_cast<double>(C);
    }
    return loss / static_cast<double>(C);
}

/// Softmax cross entropy; gradient is softmax(logits) minus the one-hot label.
inline double softmax_loss(const Tensor& logits, std::size_t label, Tensor& d_logits) {
    require(logits.rank() == 1, "softmax_loss: logits must be rank 1");
    require(label < logits.extent(0), "softmax_loss: label out of range");
    const std::size_t C = logits.extent(0);
    double mx = logits(0);
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits(c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits(c) - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c)
        d_logits(c) = std::exp(logits(c) - log_z) - (c == label ? 1.0 : 0.0);
    return log_z - logits(label);
}

inline double task_loss(const Tensor& logits, std::size_t label, TaskLossKind kind,
                        Tensor& d_logits) {
    return kind == TaskLossKind::logistic_binary ? logistic_loss(logits, label, d_logits)
                                                 : softmax_loss(logits, label, d_logits);
}

// ---------------------------------------------------------------------------
// SGD with classical momentum: v <- momentum*v + g; p <- p - lr*v.
// ---------------------------------------------------------------------------

inline void sgd_step(Tensor& param, Tensor& velocity, const Tensor& grad, double lr,
                     double momentum, const std::string& name) {
    require(param.same_shape(velocity) && param.same_shape(grad),
            "sgd_step: shape mismatch for " + name);
    require(lr > 0.0, "sgd_step: lr must be positive");
    require(momentum >= 0.0 && momentum < 1.0, "sgd_step: momentum must be in [0, 1)");
    if (!grad.all_finite())
        throw DivergenceError("non-finite gradient for parameter " + name);
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] -= lr * velocity[i];
    }
    if (!param.all_finite())
        throw DivergenceError("non-finite value in parameter " + name + " after update");
}

}  // namespace gbx
