#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "gbx/part_templates.hpp"
#include "gbx/tensor.hpp"

namespace gbx {

inline double log_sum_exp(const std::vector<double>& v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - m);
    return m + std::log(acc);
}

/// log(e^a + e^b) without overflow.
inline double log_add_exp(double a, double b) {
    const double m = std::max(a, b);
    if (!std::isfinite(m)) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Per-filter running estimates of the partition values Z_mu and of p(x),
/// kept in the log domain, plus the filter's assigned target category.
struct FilterState {
    std::vector<double> log_z;  // one per positive template, last one for the negative
    double log_px = 0.0;
    int target_category = -1;  // -1 until assigned
    std::size_t update_count = 0;
    double decay = 0.99;

    bool assigned() const { return target_category >= 0; }
};

/// All traces tr(x . T_mu) for one map; index num_pos() is the negative template.
inline std::vector<double> all_traces(const Tensor& x, const TemplateBank& bank) {
    std::vector<double> tr(bank.num_pos() + 1);
    for (std::size_t mu = 0; mu < bank.num_pos(); ++mu) tr[mu] = template_fitness(x, bank.pos[mu]);
    tr[bank.num_pos()] = template_fitness(x, bank.neg);
    return tr;
}

/// EMA of each Z_mu estimate toward the incoming e^tr, carried in the log
/// domain so large traces cannot overflow:
///   Z_mu <- decay * Z_mu + (1 - decay) * e^{tr(x . T_mu)}
/// The p(x) estimate tracks the mixture sum_mu p(mu) e^tr / Z_mu the same way,
/// evaluated with the freshly updated Z; both are seeded by the first sample,
/// so the very first p(x) lands at exactly 1.
inline void update_state(FilterState& state, const Tensor& x, const TemplateBank& bank) {
    const std::vector<double> tr = all_traces(x, bank);
    const std::size_t m = tr.size();
    if (state.update_count == 0) state.log_z.assign(m, 0.0);
    require(state.log_z.size() == m, "update_state: state does not match bank size");
    const double ld = std::log(state.decay), lu = std::log(1.0 - state.decay);
    for (std::size_t mu = 0; mu < m; ++mu)
        state.log_z[mu] = state.update_count == 0
                              ? tr[mu]
                              : log_add_exp(ld + state.log_z[mu], lu + tr[mu]);
    std::vector<double> comps(m);
    for (std::size_t mu = 0; mu < m; ++mu)
        comps[mu] = std::log(bank.prior(mu)) + tr[mu] - state.log_z[mu];
    const double log_mix = log_sum_exp(comps);
    state.log_px = state.update_count == 0
                       ? log_mix
                       : log_add_exp(ld + state.log_px, lu + log_mix);
    ++state.update_count;
}

// ---------------------------------------------------------------------------
// Exact loss over an explicit map set X:
//   Z_mu = sum_x e^{tr(x.T_mu)},  p(x|mu) = e^{tr}/Z_mu,  p(x) = sum_mu p(mu) p(x|mu)
//   loss = -sum_mu p(mu) sum_x p(x|mu) log[p(x|mu)/p(x)]
// Everything runs in the log domain; traces grow with n^2 * tau * |x| and
// would overflow exp otherwise.
// ---------------------------------------------------------------------------

struct ExactStats {
    std::vector<std::vector<double>> traces;  // [map][component]
    std::vector<double> log_z;                // [component]
    std::vector<std::vector<double>> log_p_x_given_mu;
    std::vector<double> log_p_x;  // [map]; sums to 1 over X by construction
};

inline ExactStats exact_stats(const std::vector<Tensor>& X, const TemplateBank& bank) {
    require(!X.empty(), "exact_stats: map set must be non-empty");
    const std::size_t m = bank.num_pos() + 1;
    ExactStats s;
    s.traces.reserve(X.size());
    for (const Tensor& x : X) s.traces.push_back(all_traces(x, bank));
    s.log_z.resize(m);
    std::vector<double> col(X.size());
    for (std::size_t mu = 0; mu < m; ++mu) {
        for (std::size_t i = 0; i < X.size(); ++i) col[i] = s.traces[i][mu];
        s.log_z[mu] = log_sum_exp(col);
    }
    s.log_p_x_given_mu.assign(X.size(), std::vector<double>(m));
    s.log_p_x.resize(X.size());
    std::vector<double> comps(m);
    for (std::size_t i = 0; i < X.size(); ++i) {
        for (std::size_t mu = 0; mu < m; ++mu) {
            s.log_p_x_given_mu[i][mu] = s.traces[i][mu] - s.log_z[mu];
            comps[mu] = std::log(bank.prior(mu)) + s.log_p_x_given_mu[i][mu];
        }
        s.log_p_x[i] = log_sum_exp(comps);
    }
    return s;
}

struct FilterLossResult {
    double loss = 0.0;
    std::vector<Tensor> grads;  // one per map, same shape as the maps
};

/// Loss and the per-map gradients with Z_mu held constant. With Z frozen the
/// derivative of the total loss with respect to one map collapses to
///   d loss / d x_ij = -sum_mu p(mu) p(x|mu) [log p(x|mu) - log p(x)] t_mu,ji
/// (the terms from log p(x) inside the sum cancel; the transposed template
/// entry t_ji is d tr(x.T_mu) / d x_ij under the trace convention).
inline FilterLossResult filter_loss_exact(const std::vector<Tensor>& X, const TemplateBank& bank) {
    const ExactStats s = exact_stats(X, bank);
    const std::size_t m = bank.num_pos() + 1;
    const std::size_t n = bank.n;
    FilterLossResult res;
    res.grads.reserve(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) {
        Tensor g({n, n});
        for (std::size_t mu = 0; mu < m; ++mu) {
            const double w =
                bank.prior(mu) * std::exp(s.log_p_x_given_mu[i][mu]) *
                (s.log_p_x_given_mu[i][mu] - s.log_p_x[i]);
            res.loss -= w;
            const Tensor& t = bank.at(mu);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < n; ++c) g(r, c) -= w * t(c, r);
        }
        res.grads.push_back(std::move(g));
    }
    return res;
}

/// Single-component approximation of the exact per-map gradient, driven by the
/// running estimates instead of a full pass over X:
///   d loss / d x_ij ~= -p(mu_hat) * (e^{tr}/Z_mu_hat) *
///                      {tr - log Z_mu_hat - log p(x)} * t_mu_hat,ji
/// mu_hat is the caller's pick: the activation peak for images of the
/// filter's target category, the negative template (pass bank.num_pos())
/// otherwise. The dropped components vanish as the winning trace pulls ahead.
inline Tensor filter_loss_grad_approx(const Tensor& x, std::size_t mu_hat,
                                      const FilterState& state, const TemplateBank& bank) {
    require(state.update_count > 0, "filter_loss_grad_approx: state has absorbed no maps");
    require(mu_hat <= bank.num_pos(), "filter_loss_grad_approx: mu_hat out of range");
    const Tensor& t = bank.at(mu_hat);
    const double tr = template_fitness(x, t);
    const double log_z = state.log_z[mu_hat];
    const double braces = tr - log_z - state.log_px;
    // The modeled likelihood e^{tr}/Z is a probability; when the running Z lags
    // behind fast-growing activations the raw ratio can exceed 1 and feed back
    // into unbounded growth, so it is capped at 1.
    const double pref = -bank.prior(mu_hat) * std::exp(std::min(tr - log_z, 0.0)) * braces;
    const std::size_t n = bank.n;
    Tensor g({n, n});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) g(r, c) = pref * t(c, r);
    return g;
}

/// Target category of a filter: the category whose images light it up the
/// most, by mean total activation. Ties pick the smallest index.
inline std::size_t assign_category(const std::vector<double>& mean_activation_sums) {
    require(!mean_activation_sums.empty(), "assign_category: no recorded activations");
    std::size_t best = 0;
    for (std::size_t c = 1; c < mean_activation_sums.size(); ++c)
        if (mean_activation_sums[c] > mean_activation_sums[best]) best = c;
    return best;
}

// ---------------------------------------------------------------------------
// Entropy decomposition of the exact loss. Grouping the positive templates
// into one super-event Omega+ against mu-, the conditional entropy splits as
//   H(Omega|X=x) = H2(p(mu-|x)) + p(Omega+|x) H(ptilde(.|x))
// with ptilde(mu|x) = p(mu|x)/p(Omega+|x), giving
//   loss = -H(Omega) + H(Omega'|X) + sum_x p(Omega+,x) H(Omega+|X=x).
// ---------------------------------------------------------------------------

struct DecompositionReport {
    double neg_h_omega = 0.0;           // -H(Omega), from the prior alone
    double h_cond_binary = 0.0;         // H(Omega'|X), Omega' = {mu-, Omega+}
    double weighted_spatial_entropy = 0.0;  // sum_x p(Omega+,x) H(Omega+|X=x)
    double reconstructed_loss = 0.0;
};

inline DecompositionReport decompose_loss(const std::vector<Tensor>& X, const TemplateBank& bank) {
    const ExactStats s = exact_stats(X, bank);
    const std::size_t num_pos = bank.num_pos();
    DecompositionReport rep;
    for (std::size_t mu = 0; mu <= num_pos; ++mu) {
        const double p = bank.prior(mu);
        rep.neg_h_omega += p * std::log(p);
    }
    const auto h2 = [](double q) {
        double h = 0.0;
        if (q > 0.0) h -= q * std::log(q);
        if (q < 1.0) h -= (1.0 - q) * std::log(1.0 - q);
        return h;
    };
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double px = std::exp(s.log_p_x[i]);
        std::vector<double> log_post(num_pos + 1);
        for (std::size_t mu = 0; mu <= num_pos; ++mu)
            log_post[mu] = std::log(bank.prior(mu)) + s.log_p_x_given_mu[i][mu] - s.log_p_x[i];
        std::vector<double> log_post_pos(log_post.begin(), log_post.begin() + num_pos);
        const double log_p_pos = log_sum_exp(log_post_pos);
        const double p_neg = std::exp(log_post[num_pos]);
        rep.h_cond_binary += px * h2(std::min(p_neg, 1.0));
        double h_spatial = 0.0;
        for (std::size_t mu = 0; mu < num_pos; ++mu) {
            const double log_pt = log_post[mu] - log_p_pos;
            h_spatial -= std::exp(log_pt) * log_pt;
        }
        rep.weighted_spatial_entropy += px * std::exp(log_p_pos) * h_spatial;
    }
    rep.reconstructed_loss = rep.neg_h_omega + rep.h_cond_binary + rep.weighted_spatial_entropy;
    return rep;
}

}  // namespace gbx
