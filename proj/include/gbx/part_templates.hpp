#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gbx/tensor.hpp"

namespace gbx {

/// Positive location templates plus the flat negative template for one n x n
/// feature map. Positive template mu = (mi, mj) peaks at tau on its own cell
/// and decays linearly with L1 distance, clamped at -tau:
///   t_ij = tau * max(1 - beta * (|i-mi| + |j-mj|) / n, -1)
/// The negative template is -tau everywhere. Positives are indexed row-major,
/// mu = mi * n + mj.
struct TemplateBank {
    std::size_t n = 0;
    double tau = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    std::vector<Tensor> pos;
    Tensor neg{{1}};

    std::size_t num_pos() const { return n * n; }
    double prior_pos() const { return alpha / static_cast<double>(n * n); }
    double prior_neg() const { return 1.0 - alpha; }

    /// Template for mixture component mu; index num_pos() is the negative.
    const Tensor& at(std::size_t mu) const { return mu < pos.size() ? pos[mu] : neg; }
    double prior(std::size_t mu) const { return mu < pos.size() ? prior_pos() : prior_neg(); }
};

inline double default_tau(std::size_t n) { return 0.5 / static_cast<double>(n * n); }
inline double default_alpha(std::size_t n) {
    const double nn = static_cast<double>(n * n);
    return nn / (1.0 + nn);
}

inline TemplateBank build_templates(std::size_t n, double tau, double alpha, double beta) {
    require(n >= 1, "build_templates: n must be positive");
    require(tau > 0.0, "build_templates: tau must be positive");
    require(alpha > 0.0 && alpha < 1.0, "build_templates: alpha must be in (0, 1)");
    require(beta > 0.0, "build_templates: beta must be positive");
    TemplateBank bank;
    bank.n = n;
    bank.tau = tau;
    bank.alpha = alpha;
    bank.beta = beta;
    bank.pos.reserve(n * n);
    for (std::size_t mi = 0; mi < n; ++mi)
        for (std::size_t mj = 0; mj < n; ++mj) {
            Tensor t({n, n});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double d1 = std::abs(static_cast<double>(i) - static_cast<double>(mi)) +
                                      std::abs(static_cast<double>(j) - static_cast<double>(mj));
                    t(i, j) = tau * std::max(1.0 - beta * d1 / static_cast<double>(n), -1.0);
                }
            bank.pos.push_back(std::move(t));
        }
    bank.neg = Tensor({n, n}, -tau);
    return bank;
}

/// tr(x . T) = sum_ij x_ij * t_ji. Note the transposed pairing: entry (i, j)
/// of the map multiplies entry (j, i) of the template.
inline double template_fitness(const Tensor& x, const Tensor& t) {
    require(x.rank() == 2 && x.same_shape(t), "template_fitness: need matching n x n maps");
    const std::size_t n = x.extent(0);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) acc += x(i, j) * t(j, i);
    return acc;
}

/// Flat row-major index of the largest activation; ties pick the smallest.
inline std::size_t activation_argmax(const Tensor& x) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (x[i] > x[best]) best = i;
    return best;
}

/// Positive component with the highest fitness; ties pick the smallest index.
inline std::size_t fitness_argmax(const Tensor& x, const TemplateBank& bank) {
    std::size_t best = 0;
    double best_fit = template_fitness(x, bank.pos[0]);
    for (std::size_t mu = 1; mu < bank.num_pos(); ++mu) {
        const double fit = template_fitness(x, bank.pos[mu]);
        if (fit > best_fit) {
            best_fit = fit;
            best = mu;
        }
    }
    return best;
}

struct MaskResult {
    Tensor masked{{1}};
    std::size_t mu_hat = 0;  // flat index of the selected positive template
};

/// Select the template under the activation peak and gate the map with it:
/// out_ij = max(x_ij * t_ij, 0). Applied to every map, no negative branch.
inline MaskResult apply_mask(const Tensor& x, const TemplateBank& bank) {
    require(x.rank() == 2 && x.extent(0) == bank.n && x.extent(1) == bank.n,
            "apply_mask: map must be n x n");
    MaskResult res;
    res.mu_hat = activation_argmax(x);
    const Tensor& t = bank.pos[res.mu_hat];
    res.masked = Tensor({bank.n, bank.n});
    for (std::size_t i = 0; i < x.size(); ++i) res.masked[i] = std::max(x[i] * t[i], 0.0);
    return res;
}

/// The selected template is treated as a constant: d out_ij / d x_ij = t_ij
/// where the product was positive, 0 elsewhere.
inline Tensor mask_backward(const Tensor& x, const TemplateBank& bank, std::size_t mu_hat,
                            const Tensor& d_out) {
    const Tensor& t = bank.pos[mu_hat];
    Tensor d_in(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        d_in[i] = x[i] * t[i] > 0.0 ? d_out[i] * t[i] : 0.0;
    return d_in;
}

}  // namespace gbx
