#pragma once

// Exact Euclidean distance transforms (separable lower-envelope method) and
// signed distance functions on the unit-pitch pixel grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "ordseg/core.hpp"
#include "ordseg/error.hpp"

namespace ordseg {

class BinaryMask {
public:
    BinaryMask(int height, int width, bool fill = false) : values_(height, width, 1, fill ? 1 : 0) {}
    explicit BinaryMask(Grid<std::uint8_t> values) : values_(std::move(values)) {
        if (values_.channels() != 1) throw ValidationError("mask must have a single channel");
    }

    int height() const noexcept { return values_.height(); }
    int width() const noexcept { return values_.width(); }
    bool operator()(int i, int j) const noexcept { return values_(i, j) != 0; }
    void set(int i, int j, bool v) noexcept { values_(i, j) = v ? 1 : 0; }

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count_if(values_.data().begin(), values_.data().end(),
                                                       [](std::uint8_t v) { return v != 0; }));
    }
    bool empty() const noexcept { return count() == 0; }
    bool full() const noexcept { return count() == values_.pixels(); }

    BinaryMask complement() const {
        BinaryMask out(height(), width());
        for (int i = 0; i < height(); ++i) {
            for (int j = 0; j < width(); ++j) out.set(i, j, !(*this)(i, j));
        }
        return out;
    }

    friend bool operator==(const BinaryMask& a, const BinaryMask& b) { return a.values_ == b.values_; }

private:
    Grid<std::uint8_t> values_;
};

/// Nonnegative per-pixel distances, optionally saturated at `cap`.
class DistField {
public:
    DistField(Grid<double> values, std::optional<double> cap) : values_(std::move(values)), cap_(cap) {}

    int height() const noexcept { return values_.height(); }
    int width() const noexcept { return values_.width(); }
    double operator()(int i, int j) const noexcept { return values_(i, j); }
    const Grid<double>& grid() const noexcept { return values_; }
    std::optional<double> cap() const noexcept { return cap_; }

private:
    Grid<double> values_;
    std::optional<double> cap_;
};

/// Positive inside the region, negative outside. Degenerate regions (empty or
/// full) hold infinities until clamped; reading them unclamped throws.
class SignedDistField {
public:
    SignedDistField(Grid<double> values, std::optional<double> clamp) : values_(std::move(values)), clamp_(clamp) {}

    int height() const noexcept { return values_.height(); }
    int width() const noexcept { return values_.width(); }
    std::optional<double> clamp() const noexcept { return clamp_; }

    bool bounded() const noexcept {
        return std::all_of(values_.data().begin(), values_.data().end(), [](double v) { return std::isfinite(v); });
    }
    double operator()(int i, int j) const {
        const double v = values_(i, j);
        if (!std::isfinite(v)) throw UnboundedFieldError("signed distance field of a degenerate region is unbounded; clamp it first");
        return v;
    }
    const Grid<double>& grid() const {
        if (!bounded()) throw UnboundedFieldError("signed distance field of a degenerate region is unbounded; clamp it first");
        return values_;
    }
    const Grid<double>& raw() const noexcept { return values_; }

private:
    Grid<double> values_;
    std::optional<double> clamp_;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of sampled function f (lower envelope of
// parabolas). Infinite samples contribute no parabola.
inline void sq_edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    int first = 0;
    while (first < n && !std::isfinite(f[static_cast<std::size_t>(first)])) ++first;
    if (first == n) {
        std::fill(d.begin(), d.end(), kInf);
        return;
    }
    auto intersect = [&](int q, int p) {
        return ((f[static_cast<std::size_t>(q)] + static_cast<double>(q) * q) -
                (f[static_cast<std::size_t>(p)] + static_cast<double>(p) * p)) /
               (2.0 * q - 2.0 * p);
    };
    int k = 0;
    v[0] = first;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = first + 1; q < n; ++q) {
        if (!std::isfinite(f[static_cast<std::size_t>(q)])) continue;
        double s = intersect(q, v[static_cast<std::size_t>(k)]);
        while (s <= z[static_cast<std::size_t>(k)]) {
            --k;
            s = intersect(q, v[static_cast<std::size_t>(k)]);
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k) + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
        const int site = v[static_cast<std::size_t>(k)];
        const double dq = q - site;
        d[static_cast<std::size_t>(q)] = dq * dq + f[static_cast<std::size_t>(site)];
    }
}

/// Squared EDT to the true pixels; +inf everywhere for an empty mask.
inline Grid<double> squared_edt(const BinaryMask& mask) {
    const int h = mask.height();
    const int w = mask.width();
    const std::size_t n = static_cast<std::size_t>(std::max(h, w));
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    Grid<double> out(h, w, 1);
    f.resize(static_cast<std::size_t>(h));
    d.resize(static_cast<std::size_t>(h));
    for (int j = 0; j < w; ++j) {
        for (int i = 0; i < h; ++i) f[static_cast<std::size_t>(i)] = mask(i, j) ? 0.0 : kInf;
        sq_edt_1d(f, d, v, z);
        for (int i = 0; i < h; ++i) out(i, j) = d[static_cast<std::size_t>(i)];
    }
    f.resize(static_cast<std::size_t>(w));
    d.resize(static_cast<std::size_t>(w));
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) f[static_cast<std::size_t>(j)] = out(i, j);
        sq_edt_1d(f, d, v, z);
        for (int j = 0; j < w; ++j) out(i, j) = d[static_cast<std::size_t>(j)];
    }
    return out;
}

}  // namespace detail

/// Exact Euclidean distance from every pixel to the nearest true pixel.
inline DistField euclidean_dt(const BinaryMask& mask) {
    if (mask.empty()) throw EmptyRegionError("distance transform of an empty mask");
    Grid<double> sq = detail::squared_edt(mask);
    for (double& v : sq.data()) v = std::sqrt(v);
    return DistField(std::move(sq), std::nullopt);
}

/// Pixels where class k (1-based) has probability >= delta_conf.
inline BinaryMask threshold_mask(const ProbMap& probs, int k, double delta_conf) {
    if (!(delta_conf > 0.0 && delta_conf < 1.0)) {
        throw ConfigError("confidence threshold must lie in (0,1), got " + std::to_string(delta_conf));
    }
    if (k < 1 || k > probs.classes()) throw ValidationError("class " + std::to_string(k) + " out of range");
    BinaryMask mask(probs.height(), probs.width());
    for (int i = 0; i < probs.height(); ++i) {
        for (int j = 0; j < probs.width(); ++j) mask.set(i, j, probs.prob(i, j, k) >= delta_conf);
    }
    return mask;
}

/// Indicator of label == k.
inline BinaryMask class_mask(const LabelMap& labels, int k) {
    BinaryMask mask(labels.height(), labels.width());
    for (int i = 0; i < labels.height(); ++i) {
        for (int j = 0; j < labels.width(); ++j) mask.set(i, j, labels(i, j) == k);
    }
    return mask;
}

inline DistField clamp_dt(const DistField& field, double gamma) {
    if (!(gamma > 0.0)) throw ConfigError("distance cap must be positive");
    Grid<double> out = field.grid();
    for (double& v : out.data()) v = std::min(v, gamma);
    const double cap = field.cap() ? std::min(*field.cap(), gamma) : gamma;
    return DistField(std::move(out), cap);
}

/// min(DT, gamma); the constant gamma field when the mask is empty.
inline DistField saturated_dt(const BinaryMask& mask, double gamma) {
    if (!(gamma > 0.0)) throw ConfigError("distance cap must be positive");
    if (mask.empty()) return DistField(Grid<double>(mask.height(), mask.width(), 1, gamma), gamma);
    return clamp_dt(euclidean_dt(mask), gamma);
}

/// Inside: distance to the nearest outside pixel (>= 1). Outside: minus the
/// distance to the nearest inside pixel. Full/empty regions give +/-inf.
inline SignedDistField signed_df(const BinaryMask& region) {
    const int h = region.height();
    const int w = region.width();
    if (region.full()) return SignedDistField(Grid<double>(h, w, 1, detail::kInf), std::nullopt);
    if (region.empty()) return SignedDistField(Grid<double>(h, w, 1, -detail::kInf), std::nullopt);
    const Grid<double> to_inside = detail::squared_edt(region);
    const Grid<double> to_outside = detail::squared_edt(region.complement());
    Grid<double> out(h, w, 1);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) out(i, j) = region(i, j) ? std::sqrt(to_outside(i, j)) : -std::sqrt(to_inside(i, j));
    }
    return SignedDistField(std::move(out), std::nullopt);
}

/// sign(v) * min(|v|, gamma_hat).
inline SignedDistField clamp_sdf(const SignedDistField& field, double gamma_hat) {
    if (!(gamma_hat > 0.0)) throw ConfigError("signed distance clamp must be positive");
    Grid<double> out = field.raw();
    for (double& v : out.data()) v = std::copysign(std::min(std::abs(v), gamma_hat), v);
    const double clamp = field.clamp() ? std::min(*field.clamp(), gamma_hat) : gamma_hat;
    return SignedDistField(std::move(out), clamp);
}

}  // namespace ordseg
