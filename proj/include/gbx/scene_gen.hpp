#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gbx/pnm.hpp"
#include "gbx/rng.hpp"
#include "gbx/tensor.hpp"

namespace gbx {

// ---------------------------------------------------------------------------
// Synthetic scenes: one object per image, built from a per-category layout of
// small geometric part glyphs at known positions, over faint noise and a few
// clutter speckles. The palette is four shape families (disk, triangle, bar,
// ring) in twelve variants; every variant appears in at most two categories,
// so a part is identified by its look and its place in the arrangement, never
// by global texture.
// ---------------------------------------------------------------------------

enum class Glyph {
    disk_small,
    disk_large,
    tri_up,
    tri_down,
    tri_left,
    tri_right,
    bar_h,
    bar_v,
    bar_diag_down,  // top-left to bottom-right
    bar_diag_up,    // bottom-left to top-right
    ring_thin,
    ring_thick,
};

struct Landmark {
    int part_id = 0;
    double row = 0.0, col = 0.0;  // continuous image coordinates, pixel p centered at p+0.5
};

struct SyntheticScene {
    Tensor image{{1, 1}};  // [H, W], values in [0, 1]
    int category = -1;     // -1 marks a negative (clutter-only) scene
    std::vector<Landmark> landmarks;
    std::vector<BitMask> part_masks;               // aligned with landmarks
    std::array<long long, 4> object_box{0, 0, 0, 0};  // r0, c0, r1, c1 inclusive
};

struct GeneratorConfig {
    std::uint64_t seed = 1;
    std::size_t num_categories = 6;
    std::size_t image_h = 32, image_w = 32;
    long long jitter = 3;      // max |translation| of the whole object, pixels
    std::size_t clutter = 4;   // distractor speckle count
    double noise = 0.08;       // background noise amplitude
    std::size_t negatives = 0; // extra clutter-only scenes appended by the CLI
};

namespace detail {

struct PartSlot {
    Glyph glyph;
    long long dr, dc;  // offset of the glyph center from the object center
};

/// Fixed per-category part layouts. Slot-0 positions are pairwise at least
/// 6 px apart across categories, which keeps layouts distinguishable under
/// any common translation.
inline const std::vector<std::vector<PartSlot>>& archetypes() {
    static const std::vector<std::vector<PartSlot>> a = {
        {{Glyph::tri_up, -7, -7}, {Glyph::bar_h, 7, 0}, {Glyph::disk_small, 0, 7}},
        {{Glyph::tri_down, -7, 7}, {Glyph::bar_v, 7, -7}, {Glyph::ring_thin, 0, -7}},
        {{Glyph::tri_left, 7, 7}, {Glyph::bar_h, -7, 0}, {Glyph::disk_large, 0, -7}},
        {{Glyph::tri_right, 7, -7}, {Glyph::bar_v, -7, 0}, {Glyph::ring_thick, 0, 7}},
        {{Glyph::tri_up, 7, 0}, {Glyph::tri_left, -7, -7}, {Glyph::bar_diag_down, -7, 7}},
        {{Glyph::tri_down, -7, 0}, {Glyph::tri_right, 7, 7}, {Glyph::bar_diag_up, 7, -7}},
    };
    return a;
}

/// True if integer offset (dr, dc) from the glyph center is a drawn pixel.
inline bool glyph_drawn(Glyph g, long long dr, long long dc) {
    const double r2 = static_cast<double>(dr * dr + dc * dc);
    const double fdr = static_cast<double>(dr), fdc = static_cast<double>(dc);
    switch (g) {
        case Glyph::disk_small:
            return r2 <= 2.0 * 2.0;
        case Glyph::disk_large:
            return r2 <= 2.9 * 2.9;
        case Glyph::tri_up:
            return dr >= -2 && dr <= 2 && std::abs(fdc) <= (fdr + 2.5) * 0.72;
        case Glyph::tri_down:
            return dr >= -2 && dr <= 2 && std::abs(fdc) <= (2.5 - fdr) * 0.72;
        case Glyph::tri_left:
            return dc >= -2 && dc <= 2 && std::abs(fdr) <= (fdc + 2.5) * 0.72;
        case Glyph::tri_right:
            return dc >= -2 && dc <= 2 && std::abs(fdr) <= (2.5 - fdc) * 0.72;
        case Glyph::bar_h:
            return dr >= -1 && dr <= 1 && dc >= -3 && dc <= 3;
        case Glyph::bar_v:
            return dr >= -3 && dr <= 3 && dc >= -1 && dc <= 1;
        case Glyph::bar_diag_down:
            return std::abs(dr - dc) <= 1 && dr >= -3 && dr <= 3 && dc >= -3 && dc <= 3;
        case Glyph::bar_diag_up:
            return std::abs(dr + dc) <= 1 && dr >= -3 && dr <= 3 && dc >= -3 && dc <= 3;
        case Glyph::ring_thin:
            return r2 >= 1.3 * 1.3 && r2 <= 2.9 * 2.9;
        case Glyph::ring_thick:
            return r2 >= 1.8 * 1.8 && r2 <= 3.2 * 3.2;
    }
    return false;
}

/// Part-mask predicate. A ring's mask is its filled extent (hole included)
/// so the landmark at the center always lies inside the mask.
inline bool glyph_mask(Glyph g, long long dr, long long dc) {
    const double r2 = static_cast<double>(dr * dr + dc * dc);
    if (g == Glyph::ring_thin) return r2 <= 2.9 * 2.9;
    if (g == Glyph::ring_thick) return r2 <= 3.2 * 3.2;
    return glyph_drawn(g, dr, dc);
}

inline long long glyph_reach(Glyph g) {
    switch (g) {
        case Glyph::disk_small: return 2;
        case Glyph::disk_large: return 2;
        case Glyph::ring_thin: return 2;
        default: return 3;
    }
}

inline void draw_glyph(Tensor& img, Glyph g, long long cr, long long cc, double intensity) {
    const long long reach = glyph_reach(g);
    for (long long dr = -reach; dr <= reach; ++dr)
        for (long long dc = -reach; dc <= reach; ++dc)
            if (glyph_drawn(g, dr, dc)) {
                const std::size_t r = static_cast<std::size_t>(cr + dr);
                const std::size_t c = static_cast<std::size_t>(cc + dc);
                img(r, c) = std::max(img(r, c), intensity);
            }
}

inline BitMask rasterize_mask(Glyph g, long long cr, long long cc, std::size_t h, std::size_t w) {
    BitMask m;
    m.h = h;
    m.w = w;
    m.bits.assign(h * w, 0);
    const long long reach = glyph_reach(g);
    for (long long dr = -reach; dr <= reach; ++dr)
        for (long long dc = -reach; dc <= reach; ++dc)
            if (glyph_mask(g, dr, dc))
                m.bits[static_cast<std::size_t>(cr + dr) * w + static_cast<std::size_t>(cc + dc)] = 1;
    return m;
}

inline void add_noise(Tensor& img, Rng& g, double amp) {
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = uniform_in(g, 0.0, amp);
}

inline void add_clutter(Tensor& img, Rng& g, std::size_t count,
                        const std::array<long long, 4>& avoid_box) {
    const long long H = static_cast<long long>(img.extent(0));
    const long long W = static_cast<long long>(img.extent(1));
    for (std::size_t k = 0; k < count; ++k) {
        long long r = 0, c = 0;
        for (int tries = 0; tries < 64; ++tries) {
            r = uniform_int_in(g, 0, H - 2);
            c = uniform_int_in(g, 0, W - 2);
            const bool inside = r + 1 >= avoid_box[0] - 2 && r <= avoid_box[2] + 2 &&
                                c + 1 >= avoid_box[1] - 2 && c <= avoid_box[3] + 2;
            if (!inside) break;
        }
        const double v = uniform_in(g, 0.35, 0.6);
        for (long long dr = 0; dr < 2; ++dr)
            for (long long dc = 0; dc < 2; ++dc) {
                auto& px = img(static_cast<std::size_t>(r + dr), static_cast<std::size_t>(c + dc));
                px = std::max(px, v);
            }
    }
}

inline void check_config(const GeneratorConfig& cfg) {
    require(cfg.num_categories >= 1 && cfg.num_categories <= archetypes().size(),
            "generator: num_categories must be in [1, " + std::to_string(archetypes().size()) + "]");
    require(cfg.image_h >= 32 && cfg.image_w >= 32, "generator: image must be at least 32x32");
    require(cfg.jitter >= 0, "generator: jitter must be non-negative");
    // Object reach is 10 px from the center (offset 7 + glyph reach 3); the
    // jitter bound keeps every glyph pixel inside the frame.
    const long long slack = static_cast<long long>(std::min(cfg.image_h, cfg.image_w)) / 2 - 1 - 10;
    require(cfg.jitter <= slack, "generator: jitter too large for the frame");
    require(cfg.noise >= 0.0 && cfg.noise < 0.5, "generator: noise amplitude out of range");
}

}  // namespace detail

/// Balanced categorized scenes: scene s has category s mod num_categories.
/// Each scene draws from its own seed stream, so the output is independent of
/// generation order and stable when count changes.
inline std::vector<SyntheticScene> generate(const GeneratorConfig& cfg, std::size_t count) {
    detail::check_config(cfg);
    require(count >= 1, "generate: count must be at least 1");
    std::vector<SyntheticScene> scenes;
    scenes.reserve(count);
    const auto& types = detail::archetypes();
    for (std::size_t s = 0; s < count; ++s) {
        Rng g(mix_seed(cfg.seed, s));
        SyntheticScene scene;
        scene.category = static_cast<int>(s % cfg.num_categories);
        scene.image = Tensor({cfg.image_h, cfg.image_w});
        detail::add_noise(scene.image, g, cfg.noise);

        const long long base_r = static_cast<long long>(cfg.image_h) / 2;
        const long long base_c = static_cast<long long>(cfg.image_w) / 2;
        const long long cr = base_r + (cfg.jitter > 0 ? uniform_int_in(g, -cfg.jitter, cfg.jitter) : 0);
        const long long cc = base_c + (cfg.jitter > 0 ? uniform_int_in(g, -cfg.jitter, cfg.jitter) : 0);

        const auto& slots = types[static_cast<std::size_t>(scene.category)];
        scene.object_box = {static_cast<long long>(cfg.image_h), static_cast<long long>(cfg.image_w), 0, 0};
        for (std::size_t slot = 0; slot < slots.size(); ++slot) {
            const auto& p = slots[slot];
            const long long gr = cr + p.dr, gc = cc + p.dc;
            const double intensity = uniform_in(g, 0.75, 1.0);
            detail::draw_glyph(scene.image, p.glyph, gr, gc, intensity);
            Landmark lm;
            lm.part_id = scene.category * 4 + static_cast<int>(slot);
            lm.row = static_cast<double>(gr) + 0.5;
            lm.col = static_cast<double>(gc) + 0.5;
            scene.landmarks.push_back(lm);
            BitMask m = detail::rasterize_mask(p.glyph, gr, gc, cfg.image_h, cfg.image_w);
            for (std::size_t r = 0; r < m.h; ++r)
                for (std::size_t c = 0; c < m.w; ++c)
                    if (m.bits[r * m.w + c]) {
                        scene.object_box[0] = std::min(scene.object_box[0], static_cast<long long>(r));
                        scene.object_box[1] = std::min(scene.object_box[1], static_cast<long long>(c));
                        scene.object_box[2] = std::max(scene.object_box[2], static_cast<long long>(r));
                        scene.object_box[3] = std::max(scene.object_box[3], static_cast<long long>(c));
                    }
            scene.part_masks.push_back(std::move(m));
        }
        detail::add_clutter(scene.image, g, cfg.clutter, scene.object_box);
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

/// Clutter-only scenes: distractor glyphs at random spots, never forming a
/// category layout. The combination {disk_small, disk_large, ring_thin} is one
/// no category uses, so no translation of an archetype can match.
inline std::vector<SyntheticScene> generate_negatives(const GeneratorConfig& cfg, std::size_t count) {
    detail::check_config(cfg);
    std::vector<SyntheticScene> scenes;
    scenes.reserve(count);
    const Glyph distractors[3] = {Glyph::disk_small, Glyph::disk_large, Glyph::ring_thin};
    for (std::size_t s = 0; s < count; ++s) {
        Rng g(mix_seed(cfg.seed, (1ULL << 32) + s));
        SyntheticScene scene;
        scene.category = -1;
        scene.image = Tensor({cfg.image_h, cfg.image_w});
        detail::add_noise(scene.image, g, cfg.noise);
        std::vector<std::pair<long long, long long>> placed;
        for (Glyph glyph : distractors) {
            long long r = 0, c = 0;
            for (int tries = 0; tries < 256; ++tries) {
                r = uniform_int_in(g, 6, static_cast<long long>(cfg.image_h) - 7);
                c = uniform_int_in(g, 6, static_cast<long long>(cfg.image_w) - 7);
                bool ok = true;
                for (const auto& q : placed)
                    if ((q.first - r) * (q.first - r) + (q.second - c) * (q.second - c) < 64) ok = false;
                if (ok) break;
            }
            placed.emplace_back(r, c);
            detail::draw_glyph(scene.image, glyph, r, c, uniform_in(g, 0.75, 1.0));
        }
        detail::add_clutter(scene.image, g, cfg.clutter, {-100, -100, -100, -100});
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

}  // namespace gbx
