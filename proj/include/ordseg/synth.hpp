#pragma once

// Synthetic ordinal scenes: nested class layers whose 4-neighbour label
// differences never exceed 1, rendered as per-class intensity plus Gaussian
// noise.
//
// Randomness: std::mt19937_64 (its output sequence is fixed by the C++
// standard). Uniforms take the top 53 bits of one draw; normals use the
// Box-Muller transform on two uniforms. No std::*_distribution is used, so
// scenes are identical across standard libraries.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ordseg/core.hpp"
#include "ordseg/error.hpp"

namespace ordseg {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
};

enum class Geometry { concentric_rings, horizontal_bands, blob_layers };

inline std::string to_string(Geometry g) {
    switch (g) {
        case Geometry::concentric_rings: return "concentric_rings";
        case Geometry::horizontal_bands: return "horizontal_bands";
        case Geometry::blob_layers: return "blob_layers";
    }
    return "";
}

inline Geometry parse_geometry(const std::string& name) {
    if (name == "concentric_rings" || name == "rings") return Geometry::concentric_rings;
    if (name == "horizontal_bands" || name == "bands") return Geometry::horizontal_bands;
    if (name == "blob_layers" || name == "blobs") return Geometry::blob_layers;
    throw ConfigError("unknown geometry '" + name + "'");
}

struct SceneSpec {
    int height = 16;
    int width = 16;
    int k_classes = 4;
    Geometry geometry = Geometry::concentric_rings;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (height <= 0 || width <= 0) throw ConfigError("scene dimensions must be positive");
        ClassConfig{k_classes};
        if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    }
};

struct Scene {
    Image image;
    LabelMap labels;
};

namespace detail {

inline constexpr double kMinLayerGap = 1.5;
inline constexpr int kMaxGeometryDraws = 200;

inline bool has_all_classes(const Grid<int>& labels, int k) {
    std::vector<bool> seen(static_cast<std::size_t>(k) + 1, false);
    for (int v : labels.data()) seen[static_cast<std::size_t>(v)] = true;
    return std::all_of(seen.begin() + 1, seen.end(), [](bool b) { return b; });
}

// Labels = 1 + #{m : level(x) < threshold_m}; thresholds are descending with
// gaps of at least kMinLayerGap, and level is 1-Lipschitz, so neighbours
// differ by at most one class.
template <typename Level>
Grid<int> layer_labels(int h, int w, const std::vector<double>& thresholds, Level level) {
    Grid<int> out(h, w, 1, 1);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const double f = level(i, j);
            int label = 1;
            for (double t : thresholds) label += f < t ? 1 : 0;
            out(i, j) = label;
        }
    }
    return out;
}

/// Descending thresholds: innermost at `inner`, each outer one >= kMinLayerGap further.
inline std::vector<double> draw_thresholds(Rng& rng, int layers, double inner, double outer_max) {
    const double required = inner + kMinLayerGap * (layers - 1);
    if (outer_max < required) throw GeometryError("grid too small for the requested number of layers");
    const double outer = rng.uniform(required, outer_max);
    std::vector<double> weights(static_cast<std::size_t>(layers));
    double total = 0.0;
    for (double& wgt : weights) total += (wgt = rng.uniform(0.2, 1.0));
    const double slack = outer - required;
    std::vector<double> thresholds(static_cast<std::size_t>(layers));
    double r = inner + slack * weights[0] / total;
    thresholds.back() = r;
    for (int m = 1; m < layers; ++m) {
        r += kMinLayerGap + slack * weights[static_cast<std::size_t>(m)] / total;
        thresholds[static_cast<std::size_t>(layers - 1 - m)] = r;
    }
    return thresholds;
}

inline Grid<int> bands(const SceneSpec& spec, Rng& rng) {
    const int k = spec.k_classes;
    if (spec.height < k) throw GeometryError("horizontal_bands needs height >= k_classes");
    // K-1 distinct cut rows from 1..H-1.
    std::vector<int> rows(static_cast<std::size_t>(spec.height - 1));
    for (int r = 0; r < spec.height - 1; ++r) rows[static_cast<std::size_t>(r)] = r + 1;
    for (int n = 0; n < k - 1; ++n) {
        const auto pick = n + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.height - 1 - n)));
        std::swap(rows[static_cast<std::size_t>(n)], rows[static_cast<std::size_t>(pick)]);
    }
    std::vector<int> cuts(rows.begin(), rows.begin() + (k - 1));
    std::sort(cuts.begin(), cuts.end());
    Grid<int> out(spec.height, spec.width, 1, 1);
    for (int i = 0; i < spec.height; ++i) {
        const int label = 1 + static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), i) - cuts.begin());
        for (int j = 0; j < spec.width; ++j) out(i, j) = label;
    }
    return out;
}

inline Grid<int> rings(const SceneSpec& spec, Rng& rng) {
    const int h = spec.height, w = spec.width;
    for (int attempt = 0; attempt < kMaxGeometryDraws; ++attempt) {
        const double ci = rng.uniform(0.35, 0.65) * (h - 1);
        const double cj = rng.uniform(0.35, 0.65) * (w - 1);
        const double reach = 0.5 * std::min(h, w) + 0.5;
        const auto thresholds = draw_thresholds(rng, spec.k_classes - 1, 1.0, std::max(reach, 1.0 + kMinLayerGap * (spec.k_classes - 2)));
        Grid<int> out = layer_labels(h, w, thresholds, [&](int i, int j) { return std::hypot(i - ci, j - cj); });
        if (has_all_classes(out, spec.k_classes)) return out;
    }
    throw GeometryError("grid too small for concentric rings with " + std::to_string(spec.k_classes) + " classes");
}

inline Grid<int> blobs(const SceneSpec& spec, Rng& rng) {
    const int h = spec.height, w = spec.width;
    for (int attempt = 0; attempt < kMaxGeometryDraws; ++attempt) {
        const double ci = rng.uniform(0.3, 0.7) * (h - 1);
        const double cj = rng.uniform(0.3, 0.7) * (w - 1);
        const double angle = rng.uniform(0.0, std::numbers::pi);
        const double squash = rng.uniform(0.6, 1.0);
        const double wave_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double ca = std::cos(angle), sa = std::sin(angle);
        // 0.75 * (contraction) + 0.25 * (2 sin(u.x / 2)) is 1-Lipschitz.
        auto level = [&](int i, int j) {
            const double di = i - ci, dj = j - cj;
            const double u = ca * di + sa * dj;
            const double v = squash * (-sa * di + ca * dj);
            const double wave = 2.0 * std::sin(0.5 * (std::cos(wave_angle) * di + std::sin(wave_angle) * dj) + phase);
            return 0.75 * std::hypot(u, v) + 0.25 * wave;
        };
        double lo = level(0, 0), hi = lo;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                lo = std::min(lo, level(i, j));
                hi = std::max(hi, level(i, j));
            }
        }
        const double outer_max = std::max(lo + 0.75 * (0.5 * std::min(h, w)), lo + 1.0 + kMinLayerGap * (spec.k_classes - 2));
        const auto thresholds = draw_thresholds(rng, spec.k_classes - 1, lo + 1.0, outer_max);
        if (thresholds.front() >= hi) continue;
        Grid<int> out = layer_labels(h, w, thresholds, level);
        if (has_all_classes(out, spec.k_classes)) return out;
    }
    throw GeometryError("grid too small for blob layers with " + std::to_string(spec.k_classes) + " classes");
}

}  // namespace detail

inline Scene generate(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Grid<int> labels;
    switch (spec.geometry) {
        case Geometry::horizontal_bands: labels = detail::bands(spec, rng); break;
        case Geometry::concentric_rings: labels = detail::rings(spec, rng); break;
        case Geometry::blob_layers: labels = detail::blobs(spec, rng); break;
    }
    const double step = 1.0 / (spec.k_classes - 1);
    Image image(spec.height, spec.width, 1);
    for (int i = 0; i < spec.height; ++i) {
        for (int j = 0; j < spec.width; ++j) {
            image(i, j) = (labels(i, j) - 1) * step;
            if (spec.noise_sigma > 0.0) image(i, j) += spec.noise_sigma * rng.normal();
        }
    }
    return {std::move(image), LabelMap(std::move(labels))};
}

/// `count` scenes seeded spec.seed + n.
inline Batch make_dataset(const SceneSpec& spec, std::size_t count) {
    if (count == 0) throw ConfigError("dataset needs at least one scene");
    std::vector<Image> images;
    std::vector<LabelMap> labels;
    for (std::size_t n = 0; n < count; ++n) {
        SceneSpec s = spec;
        s.seed = spec.seed + n;
        Scene scene = generate(s);
        images.push_back(std::move(scene.image));
        labels.push_back(std::move(scene.labels));
    }
    return Batch(std::move(images), std::move(labels), ClassConfig(spec.k_classes));
}

}  // namespace ordseg
