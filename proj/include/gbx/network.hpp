#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "gbx/filter_objective.hpp"
#include "gbx/ops.hpp"
#include "gbx/part_templates.hpp"
#include "gbx/rng.hpp"
#include "gbx/scene_gen.hpp"
#include "gbx/tensor.hpp"

namespace gbx {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

enum class LayerKind { conv, relu, pool, interp_conv, mask, fc };

struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    std::size_t out_channels = 0;            // conv / interp_conv
    std::size_t ksize = 0, stride = 1, pad = 0;
    std::size_t window = 0;                  // pool (stride reused)
    std::size_t out_dim = 0;                 // fc
};

struct ArchitectureSpec {
    std::size_t input_channels = 1, input_h = 32, input_w = 32;
    std::size_t num_categories = 6;
    std::vector<LayerSpec> layers;
    bool mask_enabled = true;   // false turns every mask layer into identity
    double tau = 0.0;           // 0 = default 0.5/n^2 per interpretable layer
    double alpha = 0.0;         // 0 = default n^2/(1+n^2)
    double beta = 4.0;
};

inline LayerSpec conv_spec(std::size_t out, std::size_t k, std::size_t pad, bool interp = false) {
    LayerSpec s;
    s.kind = interp ? LayerKind::interp_conv : LayerKind::conv;
    s.out_channels = out;
    s.ksize = k;
    s.stride = 1;
    s.pad = pad;
    return s;
}

inline LayerSpec relu_spec() { return LayerSpec{LayerKind::relu}; }

inline LayerSpec pool_spec(std::size_t window, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::pool;
    s.window = window;
    s.stride = stride;
    return s;
}

inline LayerSpec mask_spec() { return LayerSpec{LayerKind::mask}; }

inline LayerSpec fc_spec(std::size_t out_dim) {
    LayerSpec s;
    s.kind = LayerKind::fc;
    s.out_dim = out_dim;
    return s;
}

/// conv(8,3x3,pad1)-relu-pool2 / conv(16,3x3,pad1)-relu-pool2 /
/// interp-conv(m,3x3)-relu-mask / fc. On 32x32 input the interpretable layer
/// sees 6x6 maps.
inline ArchitectureSpec default_architecture(std::size_t categories = 6, std::size_t m = 16) {
    ArchitectureSpec a;
    a.num_categories = categories;
    a.layers = {conv_spec(8, 3, 1),  relu_spec(), pool_spec(2, 2),
                conv_spec(16, 3, 1), relu_spec(), pool_spec(2, 2),
                conv_spec(m, 3, 0, true), relu_spec(), mask_spec(),
                fc_spec(categories)};
    return a;
}

/// Same stack with the interpretable conv typed as a plain conv and no mask
/// layer; reference for ablation comparisons.
inline ArchitectureSpec plain_architecture(std::size_t categories = 6, std::size_t m = 16) {
    ArchitectureSpec a;
    a.num_categories = categories;
    a.layers = {conv_spec(8, 3, 1),  relu_spec(), pool_spec(2, 2),
                conv_spec(16, 3, 1), relu_spec(), pool_spec(2, 2),
                conv_spec(m, 3, 0), relu_spec(),
                fc_spec(categories)};
    return a;
}

/// Largest L2 norm a single map's weighted filter-loss gradient may add to
/// the backward pass.
inline constexpr double kFilterKickCap = 0.01;

struct TrainConfig {
    std::size_t epochs = 40, batch = 16;
    double lr = 0.05, momentum = 0.9;
    double lambda_k = 1.0;  // proportionality constant of the filter-loss weight
    std::uint64_t seed = 1;
    TaskLossKind loss = TaskLossKind::softmax_multiclass;
    bool filter_loss_enabled = true;
    std::size_t threads = 1;
};

// ---------------------------------------------------------------------------
// Net
// ---------------------------------------------------------------------------

struct Layer {
    LayerSpec spec;
    std::size_t in_c = 0, in_h = 0, in_w = 0;
    std::size_t out_c = 0, out_h = 0, out_w = 0;
    bool has_params = false;
    Tensor w{{1}}, b{{1}}, vw{{1}}, vb{{1}};
    int interp_index = -1;  // set on interp_conv and its mask layer
};

struct Net {
    ArchitectureSpec arch;
    std::uint64_t init_seed = 0;
    std::vector<Layer> layers;
    std::vector<TemplateBank> banks;               // one per interpretable layer
    std::vector<std::vector<FilterState>> states;  // [interp layer][filter]

    std::size_t num_interp() const { return banks.size(); }
};

inline Tensor reshape(const Tensor& t, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape));
    require(out.size() == t.size(), "reshape: size mismatch " + t.shape_string() + " -> " + out.shape_string());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i];
    return out;
}

inline Tensor channel_slice(const Tensor& t, std::size_t ch) {
    const std::size_t H = t.extent(1), W = t.extent(2);
    Tensor m({H, W});
    for (std::size_t i = 0; i < H * W; ++i) m[i] = t[ch * H * W + i];
    return m;
}

inline void set_channel(Tensor& t, std::size_t ch, const Tensor& m) {
    const std::size_t H = t.extent(1), W = t.extent(2);
    for (std::size_t i = 0; i < H * W; ++i) t[ch * H * W + i] = m[i];
}

inline Net build_net(const ArchitectureSpec& arch, std::uint64_t seed) {
    require(!arch.layers.empty() && arch.layers.back().kind == LayerKind::fc,
            "build_net: architecture must end in an fc head");
    require(arch.layers.back().out_dim == arch.num_categories,
            "build_net: fc head dimension must equal the category count");
    Net net;
    net.arch = arch;
    net.init_seed = seed;
    Rng init(mix_seed(seed, 1));

    std::size_t c = arch.input_channels, h = arch.input_h, w = arch.input_w;
    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        Layer layer;
        layer.spec = arch.layers[li];
        layer.in_c = c;
        layer.in_h = h;
        layer.in_w = w;
        switch (layer.spec.kind) {
            case LayerKind::conv:
            case LayerKind::interp_conv: {
                const std::size_t k = layer.spec.ksize, pad = layer.spec.pad, st = layer.spec.stride;
                require(k >= 1 && st >= 1 && h + 2 * pad >= k && w + 2 * pad >= k,
                        "build_net: conv does not fit at layer " + std::to_string(li));
                layer.out_c = layer.spec.out_channels;
                layer.out_h = (h + 2 * pad - k) / st + 1;
                layer.out_w = (w + 2 * pad - k) / st + 1;
                layer.w = Tensor({layer.out_c, c, k, k});
                layer.b = Tensor({layer.out_c});
                const double s = std::sqrt(6.0 / static_cast<double>(c * k * k + layer.out_c * k * k));
                for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] = uniform_in(init, -s, s);
                layer.vw = Tensor(layer.w.shape());
                layer.vb = Tensor(layer.b.shape());
                layer.has_params = true;
                if (layer.spec.kind == LayerKind::interp_conv) {
                    require(layer.out_h == layer.out_w,
                            "build_net: interpretable layer needs square maps, got " +
                                std::to_string(layer.out_h) + "x" + std::to_string(layer.out_w));
                    require(li + 2 < arch.layers.size() &&
                                arch.layers[li + 1].kind == LayerKind::relu &&
                                arch.layers[li + 2].kind == LayerKind::mask,
                            "build_net: interpretable conv must be followed by relu then mask");
                    layer.interp_index = static_cast<int>(net.banks.size());
                    const std::size_t n = layer.out_h;
                    const double tau = arch.tau > 0.0 ? arch.tau : default_tau(n);
                    const double alpha = arch.alpha > 0.0 ? arch.alpha : default_alpha(n);
                    net.banks.push_back(build_templates(n, tau, alpha, arch.beta));
                    net.states.emplace_back(layer.out_c);
                }
                break;
            }
            case LayerKind::relu:
                layer.out_c = c;
                layer.out_h = h;
                layer.out_w = w;
                break;
            case LayerKind::pool: {
                require(layer.spec.window >= 1 && layer.spec.window <= h && layer.spec.window <= w,
                        "build_net: pool window does not fit at layer " + std::to_string(li));
                layer.out_c = c;
                layer.out_h = (h - layer.spec.window) / layer.spec.stride + 1;
                layer.out_w = (w - layer.spec.window) / layer.spec.stride + 1;
                break;
            }
            case LayerKind::mask: {
                require(li >= 2 && arch.layers[li - 1].kind == LayerKind::relu &&
                            arch.layers[li - 2].kind == LayerKind::interp_conv,
                        "build_net: mask must directly follow an interpretable conv + relu");
                layer.out_c = c;
                layer.out_h = h;
                layer.out_w = w;
                layer.interp_index = static_cast<int>(net.banks.size()) - 1;
                break;
            }
            case LayerKind::fc: {
                layer.out_c = layer.spec.out_dim;
                layer.out_h = 1;
                layer.out_w = 1;
                layer.w = Tensor({layer.spec.out_dim, c * h * w});
                layer.b = Tensor({layer.spec.out_dim});
                const double s = std::sqrt(6.0 / static_cast<double>(c * h * w + layer.spec.out_dim));
                for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] = uniform_in(init, -s, s);
                layer.vw = Tensor(layer.w.shape());
                layer.vb = Tensor(layer.b.shape());
                layer.has_params = true;
                break;
            }
        }
        c = layer.out_c;
        h = layer.out_h;
        w = layer.out_w;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

struct LayerCache {
    Tensor input{{1}};
    std::vector<std::size_t> pool_argmax;
    std::vector<std::size_t> mask_sel;  // selected template per filter
};

struct ForwardResult {
    Tensor logits{{1}};
    std::vector<LayerCache> caches;                 // per layer, only when requested
    std::vector<std::vector<Tensor>> maps;          // [interp][filter] post-ReLU raw maps
    std::vector<std::vector<std::size_t>> sel;      // [interp][filter] activation argmax
};

inline ForwardResult forward(const Net& net, const Tensor& image, bool need_caches) {
    Tensor x = image.rank() == 2
                   ? reshape(image, {1, image.extent(0), image.extent(1)})
                   : image;
    require(x.rank() == 3 && x.extent(0) == net.arch.input_channels &&
                x.extent(1) == net.arch.input_h && x.extent(2) == net.arch.input_w,
            "forward: input shape " + image.shape_string() + " does not match the architecture");
    ForwardResult res;
    res.maps.resize(net.num_interp());
    res.sel.resize(net.num_interp());
    if (need_caches) res.caches.resize(net.layers.size());

    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const Layer& layer = net.layers[li];
        if (need_caches) res.caches[li].input = x;
        switch (layer.spec.kind) {
            case LayerKind::conv:
            case LayerKind::interp_conv:
                x = conv2d_forward(x, layer.w, layer.b, layer.spec.stride, layer.spec.pad);
                break;
            case LayerKind::relu: {
                x = relu(x);
                // Post-ReLU maps of an interpretable conv are what the filter
                // loss and the metrics consume.
                if (li > 0 && net.layers[li - 1].spec.kind == LayerKind::interp_conv) {
                    const int ii = net.layers[li - 1].interp_index;
                    auto& maps = res.maps[static_cast<std::size_t>(ii)];
                    auto& sel = res.sel[static_cast<std::size_t>(ii)];
                    for (std::size_t f = 0; f < x.extent(0); ++f) {
                        Tensor m = channel_slice(x, f);
                        sel.push_back(activation_argmax(m));
                        maps.push_back(std::move(m));
                    }
                }
                break;
            }
            case LayerKind::pool: {
                PoolResult pr = maxpool_forward(x, layer.spec.window, layer.spec.stride);
                if (need_caches) res.caches[li].pool_argmax = std::move(pr.argmax);
                x = std::move(pr.out);
                break;
            }
            case LayerKind::mask: {
                const auto ii = static_cast<std::size_t>(layer.interp_index);
                // The selection equals the activation argmax recorded at the
                // preceding relu; cache it for the backward pass.
                if (need_caches) res.caches[li].mask_sel = res.sel[ii];
                if (net.arch.mask_enabled) {
                    Tensor out(x.shape());
                    for (std::size_t f = 0; f < x.extent(0); ++f)
                        set_channel(out, f, apply_mask(channel_slice(x, f), net.banks[ii]).masked);
                    x = std::move(out);
                }
                break;
            }
            case LayerKind::fc:
                x = fc_forward(reshape(x, {x.size()}), layer.w, layer.b);
                break;
        }
    }
    res.logits = std::move(x);
    return res;
}

/// Forward without recording; softmax kind returns probabilities, logistic
/// kind independent per-category sigmoid scores.
inline Tensor predict(const Net& net, const Tensor& image, TaskLossKind kind) {
    Tensor logits = forward(net, image, false).logits;
    const std::size_t C = logits.extent(0);
    Tensor scores({C});
    if (kind == TaskLossKind::softmax_multiclass) {
        double mx = logits(0);
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits(c));
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(logits(c) - mx);
        for (std::size_t c = 0; c < C; ++c) scores(c) = std::exp(logits(c) - mx) / z;
    } else {
        for (std::size_t c = 0; c < C; ++c) scores(c) = 1.0 / (1.0 + std::exp(-logits(c)));
    }
    return scores;
}

inline std::size_t predicted_category(const Net& net, const Tensor& image) {
    return activation_argmax(forward(net, image, false).logits);
}

// ---------------------------------------------------------------------------
// Backward + training
// ---------------------------------------------------------------------------

struct GradSet {
    std::vector<Tensor> gw, gb;  // aligned with net.layers; rank-1 dummies elsewhere

    explicit GradSet(const Net& net) {
        gw.reserve(net.layers.size());
        gb.reserve(net.layers.size());
        for (const Layer& l : net.layers) {
            gw.emplace_back(l.has_params ? Tensor(l.w.shape()) : Tensor({1}));
            gb.emplace_back(l.has_params ? Tensor(l.b.shape()) : Tensor({1}));
        }
    }
};

struct SampleStats {
    double task_loss = 0.0;
    bool correct = false;
    double filter_loss_sum = 0.0;
    std::size_t filter_loss_count = 0;
};

/// Backward pass for one image. Task gradient enters scaled by 1/batch; each
/// interpretable map additionally receives lambda times its approximate
/// filter-loss gradient, computed against the batch-start state snapshot.
inline SampleStats backward_one(const Net& net, const ForwardResult& fwd, std::size_t label,
                                TaskLossKind loss_kind, double inv_batch,
                                const std::vector<std::vector<double>>& lambda,
                                const std::vector<std::vector<FilterState>>& frozen,
                                GradSet& grads) {
    SampleStats stats;
    Tensor d_logits({fwd.logits.extent(0)});
    stats.task_loss = task_loss(fwd.logits, label, loss_kind, d_logits);
    stats.correct = activation_argmax(fwd.logits) == label;
    scale(d_logits, inv_batch);

    Tensor d = std::move(d_logits);
    // The filter-loss gradient travels on its own path and is absorbed by the
    // interpretable conv's weights; it never reaches the shared trunk below,
    // so a runaway regulariser cannot take the whole net down with it.
    Tensor d_reg{{1}};
    bool reg_active = false;
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const Layer& layer = net.layers[li];
        const LayerCache& cache = fwd.caches[li];
        switch (layer.spec.kind) {
            case LayerKind::fc: {
                Tensor flat_in = reshape(cache.input, {cache.input.size()});
                Tensor d_x = fc_backward(flat_in, layer.w, d, grads.gw[li], grads.gb[li]);
                d = reshape(d_x, cache.input.shape());
                break;
            }
            case LayerKind::mask: {
                const auto ii = static_cast<std::size_t>(layer.interp_index);
                const TemplateBank& bank = net.banks[ii];
                Tensor d_in(cache.input.shape());
                for (std::size_t f = 0; f < cache.input.extent(0); ++f) {
                    const Tensor x_f = channel_slice(cache.input, f);
                    Tensor d_f = channel_slice(d, f);
                    if (net.arch.mask_enabled)
                        d_f = mask_backward(x_f, bank, cache.mask_sel[f], d_f);
                    const FilterState& st = frozen[ii][f];
                    // Images of the filter's own category (and during warm-up)
                    // route to the template whose fitness peaks at the
                    // activation argmax; under tr(x.T) = sum_ij x_ij t_ji that
                    // is the transposed index. Other categories route to the
                    // negative template.
                    std::size_t mu_hat = bank.num_pos();
                    if (!st.assigned() || st.target_category == static_cast<int>(label)) {
                        const std::size_t n = x_f.extent(0);
                        const std::size_t peak = fwd.sel[ii][f];
                        mu_hat = peak % n * n + peak / n;
                    }
                    if (lambda[ii][f] != 0.0) {
                        const Tensor g = filter_loss_grad_approx(x_f, mu_hat, st, bank);
                        double s = lambda[ii][f];
                        // The schedule can spike early in training; cap the
                        // per-map kick so one batch cannot wipe a filter.
                        double sq = 0.0;
                        for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
                        const double norm = std::abs(s) * std::sqrt(sq);
                        if (norm > kFilterKickCap) s *= kFilterKickCap / norm;
                        if (!reg_active) {
                            d_reg = Tensor(cache.input.shape());
                            reg_active = true;
                        }
                        const std::size_t hw = x_f.size();
                        for (std::size_t i = 0; i < hw; ++i) d_reg[f * hw + i] += s * g[i];
                    }
                    if (st.update_count > 0) {
                        const double lp = template_fitness(x_f, bank.at(mu_hat)) - st.log_z[mu_hat];
                        // Same probability cap as the approximate gradient.
                        stats.filter_loss_sum -= bank.prior(mu_hat) *
                                                 std::exp(std::min(lp, 0.0)) * (lp - st.log_px);
                        ++stats.filter_loss_count;
                    }
                    set_channel(d_in, f, d_f);
                }
                d = std::move(d_in);
                break;
            }
            case LayerKind::relu:
                d = relu_backward(cache.input, d);
                if (reg_active) d_reg = relu_backward(cache.input, d_reg);
                break;
            case LayerKind::pool:
                d = maxpool_backward({layer.in_c, layer.in_h, layer.in_w}, cache.pool_argmax, d);
                if (reg_active)
                    d_reg = maxpool_backward({layer.in_c, layer.in_h, layer.in_w}, cache.pool_argmax, d_reg);
                break;
            case LayerKind::conv:
            case LayerKind::interp_conv:
                d = conv2d_backward(cache.input, layer.w, layer.spec.stride, layer.spec.pad, d,
                                    grads.gw[li], grads.gb[li]);
                if (reg_active && layer.spec.kind == LayerKind::interp_conv) {
                    conv2d_backward(cache.input, layer.w, layer.spec.stride, layer.spec.pad, d_reg,
                                    grads.gw[li], grads.gb[li]);
                    reg_active = false;
                }
                break;
        }
    }
    return stats;
}

struct EpochAccum {
    double task_loss_sum = 0.0;
    std::size_t correct = 0, count = 0;
    double filter_loss_sum = 0.0;
    std::size_t filter_loss_count = 0;
    std::vector<std::vector<double>> max_sum;             // [interp][filter]
    std::vector<std::size_t> map_count;                   // images seen, per interp layer
    std::vector<std::vector<std::vector<double>>> act_sum;  // [interp][filter][category]
    std::vector<std::size_t> images_per_category;

    explicit EpochAccum(const Net& net) {
        max_sum.resize(net.num_interp());
        for (std::size_t ii = 0; ii < net.num_interp(); ++ii)
            max_sum[ii].assign(net.states[ii].size(), 0.0);
        map_count.assign(net.num_interp(), 0);
        act_sum.resize(net.num_interp());
        for (std::size_t ii = 0; ii < net.num_interp(); ++ii)
            act_sum[ii].assign(net.states[ii].size(),
                               std::vector<double>(net.arch.num_categories, 0.0));
        images_per_category.assign(net.arch.num_categories, 0);
    }
};

/// One batch: per-image forward/backward (optionally across threads), ordered
/// gradient reduction, one SGD step, then ordered state updates. Results are
/// identical for any thread count because reduction and state absorption walk
/// images in index order.
inline void train_batch(Net& net, const std::vector<SyntheticScene>& data,
                        const std::vector<std::size_t>& batch, const TrainConfig& cfg,
                        const std::vector<std::vector<double>>& lambda, EpochAccum& accum) {
    const std::size_t N = batch.size();
    const std::vector<std::vector<FilterState>> frozen = net.states;

    std::vector<ForwardResult> fwds(N);
    std::vector<GradSet> grads;
    grads.reserve(N);
    for (std::size_t i = 0; i < N; ++i) grads.emplace_back(net);
    std::vector<SampleStats> stats(N);

    const auto work = [&](std::size_t i) {
        const SyntheticScene& sc = data[batch[i]];
        fwds[i] = forward(net, sc.image, true);
        stats[i] = backward_one(net, fwds[i], static_cast<std::size_t>(sc.category), cfg.loss,
                                1.0 / static_cast<double>(N), lambda, frozen, grads[i]);
    };
    const std::size_t workers = std::min(std::max<std::size_t>(cfg.threads, 1), N);
    if (workers <= 1) {
        for (std::size_t i = 0; i < N; ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < N; i += workers) work(i);
            });
        for (auto& th : pool) th.join();
    }

    GradSet total(net);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t li = 0; li < net.layers.size(); ++li)
            if (net.layers[li].has_params) {
                add_scaled(total.gw[li], grads[i].gw[li], 1.0);
                add_scaled(total.gb[li], grads[i].gb[li], 1.0);
            }
    for (std::size_t li = 0; li < net.layers.size(); ++li)
        if (net.layers[li].has_params) {
            Layer& l = net.layers[li];
            const std::string tag = "layer" + std::to_string(li);
            sgd_step(l.w, l.vw, total.gw[li], cfg.lr, cfg.momentum, tag + ".w");
            sgd_step(l.b, l.vb, total.gb[li], cfg.lr, cfg.momentum, tag + ".b");
        }

    for (std::size_t i = 0; i < N; ++i) {
        const SyntheticScene& sc = data[batch[i]];
        if (!std::isfinite(stats[i].task_loss))
            throw DivergenceError("non-finite task loss on scene " + std::to_string(batch[i]));
        accum.task_loss_sum += stats[i].task_loss;
        accum.correct += stats[i].correct ? 1 : 0;
        ++accum.count;
        accum.filter_loss_sum += stats[i].filter_loss_sum;
        accum.filter_loss_count += stats[i].filter_loss_count;
        const auto cat = static_cast<std::size_t>(sc.category);
        ++accum.images_per_category[cat];
        for (std::size_t ii = 0; ii < net.num_interp(); ++ii) {
            ++accum.map_count[ii];
            for (std::size_t f = 0; f < fwds[i].maps[ii].size(); ++f) {
                const Tensor& m = fwds[i].maps[ii][f];
                double mx = 0.0, sum = 0.0;
                for (std::size_t j = 0; j < m.size(); ++j) {
                    mx = std::max(mx, m[j]);
                    sum += m[j];
                }
                accum.max_sum[ii][f] += mx;
                accum.act_sum[ii][f][cat] += sum;
                update_state(net.states[ii][f], m, net.banks[ii]);
            }
        }
    }
}

struct EpochLog {
    std::size_t epoch = 0;
    double task_loss = 0.0, filter_loss = 0.0, train_acc = 0.0, lambda = 0.0;
};

inline std::string epoch_log_line(const EpochLog& e) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%zu,\"task_loss\":%.17g,\"filter_loss\":%.17g,"
                  "\"train_acc\":%.17g,\"lambda\":%.17g}",
                  e.epoch, e.task_loss, e.filter_loss, e.train_acc, e.lambda);
    return buf;
}

/// Full training loop. Per epoch: shuffled batches, SGD, then category
/// re-assignment from that epoch's activation sums and the per-filter loss
/// weight for the next epoch, lambda_t = (k/t) * mean peak activation of that
/// filter's maps over the previous epoch (0 in epoch 1, before any maps
/// exist). Tying each filter's weight to its own activation scale makes the
/// regulariser self-limiting: a fading filter sheds its dose instead of being
/// driven to zero by its neighbours' loudness.
inline std::vector<EpochLog> train(Net& net, const std::vector<SyntheticScene>& data,
                                   const TrainConfig& cfg, std::ostream* log_out = nullptr,
                                   const std::function<void(const EpochLog&, Net&)>& on_epoch = {}) {
    require(!data.empty(), "train: dataset is empty");
    require(cfg.epochs >= 1 && cfg.batch >= 1, "train: epochs and batch must be at least 1");
    require(cfg.lr > 0.0, "train: lr must be positive");
    for (const SyntheticScene& sc : data)
        require(sc.category >= 0 && sc.category < static_cast<int>(net.arch.num_categories),
                "train: scene category out of range");

    Rng shuffle_rng(mix_seed(cfg.seed, 2));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<EpochLog> logs;
    std::vector<std::vector<double>> mean_max(net.num_interp());
    for (std::size_t ii = 0; ii < net.num_interp(); ++ii)
        mean_max[ii].assign(net.states[ii].size(), 0.0);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::vector<double>> lambda(net.num_interp());
        for (std::size_t ii = 0; ii < net.num_interp(); ++ii)
            lambda[ii].assign(net.states[ii].size(), 0.0);
        if (cfg.filter_loss_enabled && cfg.lambda_k != 0.0 && epoch >= 2) {
            for (std::size_t ii = 0; ii < net.num_interp(); ++ii) {
                for (std::size_t f = 0; f < net.states[ii].size(); ++f)
                    lambda[ii][f] =
                        cfg.lambda_k / static_cast<double>(epoch) * mean_max[ii][f];
                for (const FilterState& st : net.states[ii])
                    require(st.assigned(), "train: filter without target category after warm-up");
            }
        }

        shuffle_in_place(order, shuffle_rng);
        EpochAccum accum(net);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(start + cfg.batch, order.size());
            train_batch(net, data,
                        std::vector<std::size_t>(order.begin() + static_cast<long>(start),
                                                 order.begin() + static_cast<long>(end)),
                        cfg, lambda, accum);
        }

        for (std::size_t ii = 0; ii < net.num_interp(); ++ii) {
            for (std::size_t f = 0; f < net.states[ii].size(); ++f)
                mean_max[ii][f] =
                    accum.map_count[ii] > 0
                        ? accum.max_sum[ii][f] / static_cast<double>(accum.map_count[ii])
                        : 0.0;
            for (std::size_t f = 0; f < net.states[ii].size(); ++f) {
                std::vector<double> means(net.arch.num_categories, 0.0);
                for (std::size_t c = 0; c < means.size(); ++c)
                    if (accum.images_per_category[c] > 0)
                        means[c] = accum.act_sum[ii][f][c] /
                                   static_cast<double>(accum.images_per_category[c]);
                net.states[ii][f].target_category = static_cast<int>(assign_category(means));
            }
        }

        EpochLog e;
        e.epoch = epoch;
        e.task_loss = accum.task_loss_sum / static_cast<double>(accum.count);
        e.filter_loss = accum.filter_loss_count > 0
                            ? accum.filter_loss_sum / static_cast<double>(accum.filter_loss_count)
                            : 0.0;
        e.train_acc = static_cast<double>(accum.correct) / static_cast<double>(accum.count);
        double lam = 0.0;
        std::size_t lam_n = 0;
        for (const auto& per_filter : lambda)
            for (double l : per_filter) {
                lam += l;
                ++lam_n;
            }
        e.lambda = lam_n > 0 ? lam / static_cast<double>(lam_n) : 0.0;
        if (log_out) *log_out << epoch_log_line(e) << "\n";
        if (on_epoch) on_epoch(e, net);
        logs.push_back(e);
    }
    return logs;
}

inline double accuracy(const Net& net, const std::vector<SyntheticScene>& data) {
    require(!data.empty(), "accuracy: dataset is empty");
    std::size_t correct = 0;
    for (const SyntheticScene& sc : data)
        if (predicted_category(net, sc.image) == static_cast<std::size_t>(sc.category)) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace gbx
