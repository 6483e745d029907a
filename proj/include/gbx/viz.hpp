#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "gbx/archive.hpp"
#include "gbx/part_templates.hpp"
#include "gbx/pnm.hpp"
#include "gbx/tensor.hpp"

namespace gbx {

inline Tensor upsample_nearest(const Tensor& map, std::size_t h, std::size_t w) {
    require(map.rank() == 2, "upsample_nearest: map must be rank 2");
    Tensor out({h, w});
    for (std::size_t p = 0; p < h; ++p)
        for (std::size_t q = 0; q < w; ++q)
            out(p, q) = map(p * map.extent(0) / h, q * map.extent(1) / w);
    return out;
}

/// Upsamples to h x w and writes a PGM scaled by norm_max (values clamp to
/// [0,1] after division; a non-positive norm renders black). The divisor is
/// recorded in the file's comment line.
inline void write_map_pgm(const std::string& path, const Tensor& map, std::size_t h, std::size_t w,
                          double norm_max) {
    const Tensor up = upsample_nearest(map, h, w);
    Tensor scaled({h, w});
    const double div = norm_max > 0.0 ? norm_max : 1.0;
    for (std::size_t i = 0; i < up.size(); ++i) scaled[i] = std::max(0.0, up[i]) / div;
    write_pgm(path, to_gray(scaled), "max " + format_double(norm_max));
}

inline double map_max(const Tensor& map) {
    double m = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i) m = std::max(m, map[i]);
    return m;
}

/// Raw map, selected template, and masked map for one scene/filter. Raw and
/// masked share the raw map's max so the masked rendering stays elementwise
/// below the raw one; the template uses its own positive max.
inline void write_filter_viz(const std::string& dir, const std::string& prefix, const Tensor& raw,
                             const TemplateBank& bank, std::size_t mu_hat, const Tensor& masked,
                             std::size_t h, std::size_t w) {
    const double raw_norm = map_max(raw);
    write_map_pgm(dir + "/" + prefix + "_raw.pgm", raw, h, w, raw_norm);
    write_map_pgm(dir + "/" + prefix + "_masked.pgm", masked, h, w, raw_norm);
    const Tensor& tpl = bank.at(mu_hat);
    write_map_pgm(dir + "/" + prefix + "_template.pgm", tpl, h, w, map_max(tpl));
}

/// Count of template selections per spatial cell; the negative template (index
/// n*n) is dropped. Heatmaps accumulate these over an archive.
inline Tensor selection_counts(const std::vector<std::size_t>& selections, std::size_t n) {
    Tensor counts({n, n}, 0.0);
    for (std::size_t s : selections) {
        require(s <= n * n, "selection_counts: selection out of range");
        if (s < n * n) counts[s] += 1.0;
    }
    return counts;
}

inline void write_heatmap(const std::string& path, const Tensor& counts, std::size_t h,
                          std::size_t w) {
    write_map_pgm(path, counts, h, w, map_max(counts));
}

}  // namespace gbx
