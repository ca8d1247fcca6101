#pragma once

// Per-pixel losses: cross-entropy, QUL, EXP_MSE and O2, plus the combined
// objective CE + lambda * ordinal. Every loss exists as a graph builder over
// an [H, W, K] probability node; the value functions run the same builder on
// constants, so training and evaluation share one code path.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ordseg/autodiff.hpp"
#include "ordseg/core.hpp"
#include "ordseg/error.hpp"

namespace ordseg {

struct LossConfig {
    double lambda_combine = 1.0;
    double qul_delta = 0.05;
    double qul_lambda = 1.0;
    double expmse_lambda = 1.0;
    double o2_delta = 0.05;

    // Margins may be 0 (no slack); weights must be positive.
    void validate() const {
        if (!(lambda_combine >= 0.0)) throw ConfigError("lambda_combine must be >= 0");
        if (!(qul_delta >= 0.0)) throw ConfigError("qul_delta must be >= 0");
        if (!(qul_lambda > 0.0)) throw ConfigError("qul_lambda must be > 0");
        if (!(expmse_lambda > 0.0)) throw ConfigError("expmse_lambda must be > 0");
        if (!(o2_delta >= 0.0)) throw ConfigError("o2_delta must be >= 0");
    }
};

struct LossValue {
    double total = 0.0;
    std::optional<Grid<double>> per_pixel;
};

namespace detail {

inline void check_pair(const Grid<double>& probs, const LabelMap& labels) {
    if (!probs.same_plane(labels.grid())) {
        throw ValidationError("probability map is " + std::to_string(probs.height()) + "x" +
                              std::to_string(probs.width()) + " but labels are " + std::to_string(labels.height()) +
                              "x" + std::to_string(labels.width()));
    }
    labels.validate(ClassConfig(probs.channels()));
}

inline void check_prob_var(const ad::Var& probs, const LabelMap& labels) {
    const auto& s = probs.shape();
    if (s.size() != 3 || s[0] != static_cast<std::size_t>(labels.height()) ||
        s[1] != static_cast<std::size_t>(labels.width())) {
        throw ValidationError("probability node shape " + ad::shape_string(s) + " does not match labels " +
                              std::to_string(labels.height()) + "x" + std::to_string(labels.width()));
    }
    labels.validate(ClassConfig(static_cast<int>(s[2])));
}

/// mask * relu(delta + p[dominated] - p[dominator]); index -1 disables a pixel.
inline ad::Var masked_hinge(ad::Var probs, const std::vector<int>& dominated, const std::vector<int>& dominator,
                            double delta) {
    ad::Graph& g = probs.graph();
    ad::Shape plane{probs.shape()[0], probs.shape()[1]};
    ad::Tensor mask(plane);
    for (std::size_t p = 0; p < dominated.size(); ++p) mask[p] = (dominated[p] >= 0 && dominator[p] >= 0) ? 1.0 : 0.0;
    ad::Var diff = ad::gather_last(probs, dominated) - ad::gather_last(probs, dominator);
    return ad::relu(ad::add_scalar(diff, delta)) * g.constant(std::move(mask));
}

inline LossValue run_pixel_loss(const Grid<double>& probs, const LabelMap& labels,
                                ad::Var (*build)(ad::Var, const LabelMap&, const LossConfig&), const LossConfig& cfg) {
    check_pair(probs, labels);
    ad::Graph g;
    ad::Var per_pixel = build(g.constant(ad::Tensor::from_grid(probs)), labels, cfg);
    ad::Var total = ad::mean(per_pixel);
    return {total.item(), per_pixel.value().to_grid()};
}

}  // namespace detail

// --- graph builders: return the [H, W] per-pixel loss -----------------------

inline ad::Var ce_pixels(ad::Var probs, const LabelMap& labels, const LossConfig& = {}) {
    detail::check_prob_var(probs, labels);
    std::vector<int> idx(labels.pixels());
    for (std::size_t p = 0; p < idx.size(); ++p) idx[p] = labels.grid().data()[p] - 1;
    return ad::scale(ad::log_clamped(ad::gather_last(probs, std::move(idx))), -1.0);
}

inline ad::Var qul_pixels(ad::Var probs, const LabelMap& labels, const LossConfig& cfg) {
    detail::check_prob_var(probs, labels);
    const int k = static_cast<int>(probs.shape()[2]);
    const std::size_t n = labels.pixels();
    const auto& lab = labels.grid().data();
    std::vector<int> dominated(n), dominator(n);
    auto fill = [&](auto select) {
        for (std::size_t p = 0; p < n; ++p) {
            auto [a, b] = select(lab[p] - 1);
            const bool ok = a >= 0 && a < k && b >= 0 && b < k;
            dominated[p] = ok ? a : -1;
            dominator[p] = ok ? b : -1;
        }
    };
    // Immediate neighbours of the mode must stay below it.
    fill([](int c) { return std::pair{c - 1, c}; });
    ad::Var loss = detail::masked_hinge(probs, dominated, dominator, cfg.qul_delta);
    fill([](int c) { return std::pair{c + 1, c}; });
    loss = loss + detail::masked_hinge(probs, dominated, dominator, cfg.qul_delta);
    // Each neighbour dominates everything further out on its side.
    for (int d = 2; d <= k - 1; ++d) {
        fill([d](int c) { return std::pair{c - d, c - 1}; });
        loss = loss + ad::scale(detail::masked_hinge(probs, dominated, dominator, cfg.qul_delta), cfg.qul_lambda);
        fill([d](int c) { return std::pair{c + d, c + 1}; });
        loss = loss + ad::scale(detail::masked_hinge(probs, dominated, dominator, cfg.qul_delta), cfg.qul_lambda);
    }
    return loss;
}

inline ad::Var expmse_pixels(ad::Var probs, const LabelMap& labels, const LossConfig& cfg) {
    detail::check_prob_var(probs, labels);
    ad::Graph& g = probs.graph();
    const int k = static_cast<int>(probs.shape()[2]);
    std::vector<double> ranks(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) ranks[static_cast<std::size_t>(c)] = c + 1;
    ad::Var expectation = ad::dot_last(probs, ranks);
    ad::Var neg_e = ad::scale(expectation, -1.0);
    ad::Var variance = ad::slice_last(probs, 0) * ad::square(ad::add_scalar(neg_e, 1.0));
    for (int c = 1; c < k; ++c) {
        variance = variance + ad::slice_last(probs, static_cast<std::size_t>(c)) *
                                  ad::square(ad::add_scalar(neg_e, static_cast<double>(c + 1)));
    }
    ad::Tensor target(expectation.shape());
    for (std::size_t p = 0; p < target.size(); ++p) target[p] = labels.grid().data()[p];
    ad::Var bias = ad::square(expectation - g.constant(std::move(target)));
    return bias + ad::scale(variance, cfg.expmse_lambda);
}

inline ad::Var o2_pixels(ad::Var probs, const LabelMap& labels, const LossConfig& cfg) {
    detail::check_prob_var(probs, labels);
    const int k = static_cast<int>(probs.shape()[2]);
    const std::size_t n = labels.pixels();
    const auto& lab = labels.grid().data();
    std::vector<int> dominated(n), dominator(n);
    auto fill = [&](auto select) {
        for (std::size_t p = 0; p < n; ++p) {
            auto [a, b] = select(lab[p] - 1);
            const bool ok = a >= 0 && a < k && b >= 0 && b < k;
            dominated[p] = ok ? a : -1;
            dominator[p] = ok ? b : -1;
        }
    };
    ad::Var loss;
    bool first = true;
    auto accumulate = [&](ad::Var term) {
        loss = first ? term : loss + term;
        first = false;
    };
    for (int d = 0; d <= k - 2; ++d) {
        // Rising towards the mode: p[m-1] <= p[m] for m <= mode.
        fill([d](int c) { return std::pair{c - d - 1, c - d}; });
        accumulate(detail::masked_hinge(probs, dominated, dominator, cfg.o2_delta));
        // Falling after the mode: p[m+1] <= p[m] for m >= mode.
        fill([d](int c) { return std::pair{c + d + 1, c + d}; });
        accumulate(detail::masked_hinge(probs, dominated, dominator, cfg.o2_delta));
    }
    return loss;
}

// --- value functions ---------------------------------------------------------

inline LossValue ce_loss(const ProbMap& probs, const LabelMap& labels) {
    return detail::run_pixel_loss(probs.grid(), labels, &ce_pixels, LossConfig{});
}

inline LossValue qul_loss(const ProbMap& probs, const LabelMap& labels, const LossConfig& cfg) {
    cfg.validate();
    return detail::run_pixel_loss(probs.grid(), labels, &qul_pixels, cfg);
}

inline LossValue expmse_loss(const ProbMap& probs, const LabelMap& labels, const LossConfig& cfg) {
    cfg.validate();
    return detail::run_pixel_loss(probs.grid(), labels, &expmse_pixels, cfg);
}

inline LossValue o2_loss(const ProbMap& probs, const LabelMap& labels, const LossConfig& cfg) {
    cfg.validate();
    return detail::run_pixel_loss(probs.grid(), labels, &o2_pixels, cfg);
}

inline LossValue combined_loss(const LossValue& ce, const LossValue& ordinal, double lambda_combine) {
    if (!(lambda_combine >= 0.0)) throw ConfigError("lambda_combine must be >= 0");
    return {ce.total + lambda_combine * ordinal.total, std::nullopt};
}

/// (dominated, dominator) pairs of the quasi-unimodal constraint around mode k*.
struct QulSets {
    std::vector<std::pair<int, int>> ascending;
    std::vector<std::pair<int, int>> descending;
};

inline QulSets qul_sets(int k_star, const ClassConfig& config) {
    if (!config.contains(k_star)) throw ValidationError("mode class " + std::to_string(k_star) + " out of range");
    QulSets sets;
    for (int k = 1; k <= k_star - 2; ++k) sets.ascending.emplace_back(k, k_star - 1);
    for (int k = k_star + 2; k <= config.k(); ++k) sets.descending.emplace_back(k, k_star + 1);
    return sets;
}

/// Sum_k k * p_k with 1-based k.
inline double ordinal_expectation(std::span<const double> p) {
    double e = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) e += static_cast<double>(k + 1) * p[k];
    return e;
}

inline double ordinal_variance(std::span<const double> p) {
    const double e = ordinal_expectation(p);
    double v = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double d = static_cast<double>(k + 1) - e;
        v += p[k] * d * d;
    }
    return v;
}

}  // namespace ordseg
