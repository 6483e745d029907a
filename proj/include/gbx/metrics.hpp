#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gbx/part_templates.hpp"
#include "gbx/pnm.hpp"
#include "gbx/scene_gen.hpp"
#include "gbx/tensor.hpp"

namespace gbx {

// All per-filter metrics take the filter's raw post-ReLU maps aligned
// index-for-index with the evaluated scenes.

/// Smallest value v such that the fraction of entries strictly greater than v
/// is at most 0.005, over every position of every map.
inline double activation_threshold(const std::vector<Tensor>& maps) {
    require(!maps.empty(), "activation_threshold: no maps");
    std::vector<double> vals;
    vals.reserve(maps.size() * maps[0].size());
    for (const Tensor& m : maps)
        for (std::size_t i = 0; i < m.size(); ++i) vals.push_back(m[i]);
    std::sort(vals.begin(), vals.end());
    const std::size_t n = vals.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (i + 1 < n && vals[i + 1] == vals[i]) continue;  // jump to last duplicate
        const std::size_t greater = n - (i + 1);
        if (greater * 200 <= n) return vals[i];  // greater/n <= 0.005 in exact arithmetic
    }
    return vals.back();
}

/// Union of round receptive fields around every valid (above-threshold) cell,
/// rasterized at image resolution. Cell [i,j] of an n x n map projects to the
/// image point ((i+0.5)*H/n, (j+0.5)*W/n); pixel (p,q) is measured at its
/// center (p+0.5, q+0.5).
inline BitMask valid_region(const Tensor& map, double threshold, std::size_t h, std::size_t w,
                            double rf_radius) {
    require(map.rank() == 2, "valid_region: map must be rank 2");
    const std::size_t n = map.extent(0);
    BitMask region;
    region.h = h;
    region.w = w;
    region.bits.assign(h * w, 0);
    const double r2 = rf_radius * rf_radius;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < map.extent(1); ++j) {
            if (!(map(i, j) > threshold)) continue;
            const double cr = (static_cast<double>(i) + 0.5) * static_cast<double>(h) / static_cast<double>(n);
            const double cc = (static_cast<double>(j) + 0.5) * static_cast<double>(w) / static_cast<double>(map.extent(1));
            for (std::size_t p = 0; p < h; ++p)
                for (std::size_t q = 0; q < w; ++q) {
                    const double dr = static_cast<double>(p) + 0.5 - cr;
                    const double dc = static_cast<double>(q) + 0.5 - cc;
                    if (dr * dr + dc * dc <= r2) region.bits[p * w + q] = 1;
                }
        }
    return region;
}

inline double iou(const BitMask& a, const BitMask& b) {
    require(a.h == b.h && a.w == b.w, "iou: mask size mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
        inter += x && y ? 1 : 0;
        uni += x || y ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct PartInterpretability {
    double p_f = 0.0;
    std::map<int, double> p_fk;  // per part id with at least one image
};

/// Per part: fraction of that part's images whose valid-activation region
/// overlaps the ground-truth mask with IoU > 0.2; the filter's score is the
/// best part.
inline PartInterpretability part_interpretability(const std::vector<Tensor>& maps,
                                                  const std::vector<SyntheticScene>& scenes,
                                                  double rf_radius) {
    require(maps.size() == scenes.size(), "part_interpretability: maps and scenes misaligned");
    require(rf_radius > 0.0, "part_interpretability: rf_radius must be positive");
    const double t_f = activation_threshold(maps);
    std::map<int, std::pair<std::size_t, std::size_t>> hits;  // part -> (hits, images)
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const SyntheticScene& sc = scenes[s];
        if (sc.landmarks.empty()) continue;
        const BitMask region =
            valid_region(maps[s], t_f, sc.image.extent(0), sc.image.extent(1), rf_radius);
        for (std::size_t p = 0; p < sc.landmarks.size(); ++p) {
            auto& h = hits[sc.landmarks[p].part_id];
            ++h.second;
            if (iou(region, sc.part_masks[p]) > 0.2) ++h.first;
        }
    }
    PartInterpretability out;
    for (const auto& [part, h] : hits) {
        const double p = static_cast<double>(h.first) / static_cast<double>(h.second);
        out.p_fk[part] = p;
        out.p_f = std::max(out.p_f, p);
    }
    return out;
}

/// Peak projected to image coordinates (cell-center convention).
inline std::pair<double, double> peak_image_coords(const Tensor& map, std::size_t h, std::size_t w) {
    const std::size_t idx = activation_argmax(map);
    const std::size_t n_cols = map.extent(1);
    const double r = (static_cast<double>(idx / n_cols) + 0.5) * static_cast<double>(h) /
                     static_cast<double>(map.extent(0));
    const double c = (static_cast<double>(idx % n_cols) + 0.5) * static_cast<double>(w) /
                     static_cast<double>(n_cols);
    return {r, c};
}

struct InstabilityResult {
    std::map<int, double> per_part;  // D_{f,k}, population std of the normalized deviation
    double mean = 0.0;
    std::vector<int> skipped_parts;  // fewer than 2 usable images
    bool valid = false;
};

/// Deviation spread between the activation peak and each landmark, over the
/// top_m images ranked by the filter's peak activation (ties keep the lower
/// scene index). category -1 uses every annotated part; otherwise only parts
/// whose scenes carry that category.
inline InstabilityResult location_instability(const std::vector<Tensor>& maps,
                                              const std::vector<SyntheticScene>& scenes,
                                              int category, std::size_t top_m) {
    require(maps.size() == scenes.size(), "location_instability: maps and scenes misaligned");
    std::map<int, std::vector<std::size_t>> part_scenes;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        if (category >= 0 && scenes[s].category != category) continue;
        for (const Landmark& lm : scenes[s].landmarks) part_scenes[lm.part_id].push_back(s);
    }
    InstabilityResult out;
    double sum = 0.0;
    std::size_t used = 0;
    for (auto& [part, idxs] : part_scenes) {
        std::stable_sort(idxs.begin(), idxs.end(), [&](std::size_t a, std::size_t b) {
            double pa = 0.0, pb = 0.0;
            for (std::size_t i = 0; i < maps[a].size(); ++i) pa = std::max(pa, maps[a][i]);
            for (std::size_t i = 0; i < maps[b].size(); ++i) pb = std::max(pb, maps[b][i]);
            return pa > pb;
        });
        if (idxs.size() > top_m) idxs.resize(top_m);
        if (idxs.size() < 2) {
            out.skipped_parts.push_back(part);
            continue;
        }
        std::vector<double> d;
        d.reserve(idxs.size());
        for (std::size_t s : idxs) {
            const SyntheticScene& sc = scenes[s];
            const double h = static_cast<double>(sc.image.extent(0));
            const double w = static_cast<double>(sc.image.extent(1));
            const auto [pr, pc] = peak_image_coords(maps[s], sc.image.extent(0), sc.image.extent(1));
            const Landmark* lm = nullptr;
            for (const Landmark& l : sc.landmarks)
                if (l.part_id == part) lm = &l;
            const double dr = lm->row - pr, dc = lm->col - pc;
            d.push_back(std::sqrt(dr * dr + dc * dc) / std::sqrt(h * h + w * w));
        }
        double mean = 0.0;
        for (double v : d) mean += v;
        mean /= static_cast<double>(d.size());
        double var = 0.0;
        for (double v : d) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d.size());  // population convention
        const double dev = std::sqrt(var);
        out.per_part[part] = dev;
        sum += dev;
        ++used;
    }
    if (used > 0) {
        out.mean = sum / static_cast<double>(used);
        out.valid = true;
    }
    return out;
}

/// Ordinary-filter convention: the most favorable category, min over c of the
/// mean deviation across that category's parts.
inline InstabilityResult baseline_instability(const std::vector<Tensor>& maps,
                                              const std::vector<SyntheticScene>& scenes,
                                              std::size_t top_m) {
    std::vector<int> categories;
    for (const SyntheticScene& sc : scenes)
        if (sc.category >= 0 &&
            std::find(categories.begin(), categories.end(), sc.category) == categories.end())
            categories.push_back(sc.category);
    std::sort(categories.begin(), categories.end());
    InstabilityResult best;
    for (int c : categories) {
        InstabilityResult r = location_instability(maps, scenes, c, top_m);
        if (!r.valid) continue;
        if (!best.valid || r.mean < best.mean) best = r;
    }
    return best;
}

struct PurityMass {
    double inside = 0.0, total = 0.0;

    double value() const { return total == 0.0 ? 1.0 : inside / total; }
};

/// Positive activation mass falling inside the positive region of the
/// selected template, against all positive mass. Aggregation across filters
/// sums the masses before dividing.
inline PurityMass purity_mass(const std::vector<Tensor>& maps,
                              const std::vector<std::size_t>& selections, const TemplateBank& bank) {
    require(maps.size() == selections.size(), "purity_mass: maps and selections misaligned");
    PurityMass pm;
    for (std::size_t s = 0; s < maps.size(); ++s) {
        const Tensor& t = bank.pos[selections[s]];
        require(maps[s].same_shape(t), "purity_mass: map does not match bank");
        for (std::size_t i = 0; i < maps[s].size(); ++i) {
            const double v = std::max(0.0, maps[s][i]);
            pm.total += v;
            if (t[i] > 0.0) pm.inside += v;
        }
    }
    return pm;
}

struct ActivationStats {
    double mean_target = 0.0, mean_other = 0.0;
    std::size_t target_images = 0, other_images = 0;
};

/// Mean peak activation on images of the filter's target category versus all
/// other categories.
inline ActivationStats activation_stats(const std::vector<Tensor>& maps,
                                        const std::vector<SyntheticScene>& scenes,
                                        int target_category) {
    require(maps.size() == scenes.size(), "activation_stats: maps and scenes misaligned");
    require(target_category >= 0, "activation_stats: target category unassigned");
    ActivationStats st;
    for (std::size_t s = 0; s < maps.size(); ++s) {
        double peak = 0.0;
        for (std::size_t i = 0; i < maps[s].size(); ++i) peak = std::max(peak, maps[s][i]);
        if (scenes[s].category == target_category) {
            st.mean_target += peak;
            ++st.target_images;
        } else {
            st.mean_other += peak;
            ++st.other_images;
        }
    }
    if (st.target_images > 0) st.mean_target /= static_cast<double>(st.target_images);
    if (st.other_images > 0) st.mean_other /= static_cast<double>(st.other_images);
    return st;
}

struct ThresholdAccuracy {
    double accuracy = 0.0;
    double threshold = 0.0;
};

/// Best binary accuracy of the rule "positive iff peak > threshold", sweeping
/// thresholds over the observed peaks plus one value below the minimum; ties
/// pick the smallest threshold.
inline ThresholdAccuracy single_filter_accuracy(const std::vector<double>& peaks,
                                                const std::vector<int>& labels) {
    require(peaks.size() == labels.size() && !peaks.empty(),
            "single_filter_accuracy: peaks and labels misaligned");
    bool has_pos = false, has_neg = false;
    for (int l : labels) (l ? has_pos : has_neg) = true;
    require(has_pos && has_neg, "single_filter_accuracy: both classes required");

    std::vector<double> candidates = peaks;
    candidates.push_back(*std::min_element(peaks.begin(), peaks.end()) - 1.0);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    ThresholdAccuracy best;
    best.accuracy = -1.0;
    for (double th : candidates) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < peaks.size(); ++i)
            if ((peaks[i] > th) == (labels[i] != 0)) ++correct;
        const double acc = static_cast<double>(correct) / static_cast<double>(peaks.size());
        if (acc > best.accuracy) {
            best.accuracy = acc;
            best.threshold = th;
        }
    }
    return best;
}

}  // namespace gbx
