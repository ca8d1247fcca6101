#pragma once

// Structural losses over the pixel grid: CSNP (bilinear cost between
// 4-neighbours), CSDT (probability mass near distant-class regions) and CSSDF
// (boundary-weighted signed-distance disagreement).
//
// Geometry (thresholded masks, distance transforms, signed distance fields)
// is recomputed from the probability values on every call and held constant
// inside the graph. CSSDF additionally routes its gradient through
// alpha_k = exp(-gamma * (|sdf_k| + sdf_k * (p_k - p_k_ref))), which equals
// the exact weight at p_k = p_k_ref.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ordseg/autodiff.hpp"
#include "ordseg/core.hpp"
#include "ordseg/distance.hpp"
#include "ordseg/error.hpp"
#include "ordseg/losses_pointwise.hpp"

namespace ordseg {

struct SpatialLossConfig {
    double delta_conf = 0.05;
    double gamma_clamp = 3.0;
    double gamma_decay = 0.5;
    std::optional<double> gamma_hat;  // image diagonal when unset
    int p_exponent = 1;

    void validate() const {
        if (!(delta_conf > 0.0 && delta_conf < 1.0)) throw ConfigError("delta_conf must lie in (0,1)");
        if (!(gamma_clamp > 0.0)) throw ConfigError("gamma_clamp must be > 0");
        if (!(gamma_decay > 0.0)) throw ConfigError("gamma_decay must be > 0");
        if (gamma_hat && !(*gamma_hat > 0.0)) throw ConfigError("gamma_hat must be > 0");
        if (p_exponent != 1 && p_exponent != 2) throw ConfigError("p_exponent must be 1 or 2");
    }

    double gamma_hat_for(int height, int width) const {
        return gamma_hat ? *gamma_hat : std::sqrt(static_cast<double>(height) * height + static_cast<double>(width) * width);
    }
};

/// 4-connected pixel pairs, each unordered pair once.
struct NeighborSystem {
    struct Pair {
        int i0, j0, i1, j1;
    };
    std::vector<Pair> pairs;

    NeighborSystem(int height, int width) {
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                if (j + 1 < width) pairs.push_back({i, j, i, j + 1});
                if (i + 1 < height) pairs.push_back({i, j, i + 1, j});
            }
        }
    }
    std::size_t size() const noexcept { return pairs.size(); }
};

namespace detail {

inline void check_cost(const ad::Var& probs, const CostMatrix& cost) {
    const auto& s = probs.shape();
    if (s.size() != 3) throw ValidationError("probability node must be [H,W,K], got " + ad::shape_string(s));
    if (static_cast<int>(s[2]) != cost.k()) {
        throw ValidationError("cost matrix is for K=" + std::to_string(cost.k()) + " but probabilities have K=" +
                              std::to_string(s[2]));
    }
}

inline BinaryMask threshold_tensor(const ad::Tensor& probs, int k, double delta_conf) {
    const int h = static_cast<int>(probs.dim(0));
    const int w = static_cast<int>(probs.dim(1));
    const std::size_t kk = probs.dim(2);
    BinaryMask mask(h, w);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            mask.set(i, j, probs[(static_cast<std::size_t>(i) * w + j) * kk + static_cast<std::size_t>(k - 1)] >= delta_conf);
        }
    }
    return mask;
}

inline ad::Tensor plane_tensor(const Grid<double>& g) {
    return ad::Tensor(ad::Shape{static_cast<std::size_t>(g.height()), static_cast<std::size_t>(g.width())}, g.data());
}

}  // namespace detail

inline ad::Var csnp(ad::Var probs, const CostMatrix& cost) {
    detail::check_cost(probs, cost);
    const std::size_t h = probs.shape()[0], w = probs.shape()[1];
    ad::Graph& g = probs.graph();
    const double pairs = static_cast<double>(h * (w - 1) + (h - 1) * w);
    if (pairs == 0.0) return g.constant(0.0);
    const std::vector<double> c(cost.entries().begin(), cost.entries().end());
    ad::Var weighted = ad::matmul_last(probs, c, static_cast<std::size_t>(cost.k()));
    ad::Var total = g.constant(0.0);
    if (w > 1) total = total + ad::sum(ad::crop(weighted, 0, h, 0, w - 1) * ad::crop(probs, 0, h, 1, w));
    if (h > 1) total = total + ad::sum(ad::crop(weighted, 0, h - 1, 0, w) * ad::crop(probs, 1, h, 0, w));
    return ad::scale(total, 1.0 / pairs);
}

/// CSDT with distance transforms taken from `reference` probabilities.
inline ad::Var csdt(ad::Var probs, const CostMatrix& cost, const SpatialLossConfig& cfg, const ad::Tensor& reference) {
    detail::check_cost(probs, cost);
    cfg.validate();
    ad::Graph& g = probs.graph();
    const ClassConfig classes(cost.k());
    const auto pairs = nonadjacent_pairs(classes);
    const double area = static_cast<double>(probs.shape()[0] * probs.shape()[1]);
    if (pairs.empty()) return g.constant(0.0);

    std::vector<std::optional<ad::Var>> dt(static_cast<std::size_t>(cost.k()) + 1);
    auto dt_of = [&](int k) {
        auto& slot = dt[static_cast<std::size_t>(k)];
        if (!slot) {
            slot = g.constant(detail::plane_tensor(
                saturated_dt(detail::threshold_tensor(reference, k, cfg.delta_conf), cfg.gamma_clamp).grid()));
        }
        return *slot;
    };
    ad::Var total = g.constant(0.0);
    for (auto [k1, k2] : pairs) {
        ad::Var term = ad::sum(ad::slice_last(probs, static_cast<std::size_t>(k1 - 1)) * dt_of(k2)) +
                       ad::sum(ad::slice_last(probs, static_cast<std::size_t>(k2 - 1)) * dt_of(k1));
        total = total + ad::scale(term, cost(k1, k2));
    }
    return ad::scale(total, -1.0 / area);
}

inline ad::Var csdt(ad::Var probs, const CostMatrix& cost, const SpatialLossConfig& cfg) {
    const ad::Tensor reference = probs.value();
    return csdt(probs, cost, cfg, reference);
}

/// CSSDF with predicted geometry frozen at `reference` probabilities.
inline ad::Var cssdf(ad::Var probs, const LabelMap& gt, const CostMatrix& cost, const SpatialLossConfig& cfg,
                     const ad::Tensor& reference) {
    detail::check_cost(probs, cost);
    detail::check_prob_var(probs, gt);
    cfg.validate();
    ad::Graph& g = probs.graph();
    const int h = gt.height();
    const int w = gt.width();
    const auto pairs = nonadjacent_pairs(ClassConfig(cost.k()));
    if (pairs.empty()) return g.constant(0.0);
    const double gamma_hat = cfg.gamma_hat_for(h, w);

    struct ClassTerms {
        ad::Var alpha;  // [H, W] weight carrying the gradient
        ad::Var gap;    // [H, W] constant |phi - phi_hat|^p
    };
    std::vector<std::optional<ClassTerms>> terms(static_cast<std::size_t>(cost.k()) + 1);
    auto terms_of = [&](int k) -> const ClassTerms& {
        auto& slot = terms[static_cast<std::size_t>(k)];
        if (slot) return *slot;
        const SignedDistField pred = signed_df(detail::threshold_tensor(reference, k, cfg.delta_conf));
        const SignedDistField pred_clamped = clamp_sdf(pred, gamma_hat);
        const SignedDistField truth = clamp_sdf(signed_df(class_mask(gt, k)), gamma_hat);
        const ad::Shape plane{static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
        ad::Tensor magnitude(plane), slope(plane), finite(plane), ref(plane), gap(plane);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                const std::size_t p = static_cast<std::size_t>(i) * w + j;
                const double phi_hat = pred.raw()(i, j);
                const bool bounded = std::isfinite(phi_hat);
                magnitude[p] = bounded ? std::abs(phi_hat) : 0.0;
                slope[p] = bounded ? phi_hat : 0.0;
                finite[p] = bounded ? 1.0 : 0.0;
                ref[p] = reference[p * static_cast<std::size_t>(cost.k()) + static_cast<std::size_t>(k - 1)];
                const double diff = std::abs(truth.raw()(i, j) - pred_clamped.raw()(i, j));
                gap[p] = cfg.p_exponent == 1 ? diff : diff * diff;
            }
        }
        ad::Var shift = ad::slice_last(probs, static_cast<std::size_t>(k - 1)) - g.constant(std::move(ref));
        ad::Var arg = g.constant(std::move(magnitude)) + shift * g.constant(std::move(slope));
        ad::Var alpha = ad::exp(ad::scale(arg, -cfg.gamma_decay)) * g.constant(std::move(finite));
        slot = ClassTerms{alpha, g.constant(std::move(gap))};
        return *slot;
    };

    ad::Var total = g.constant(0.0);
    for (auto [k1, k2] : pairs) {
        const ClassTerms& a = terms_of(k1);
        const ClassTerms& b = terms_of(k2);
        ad::Var term = ad::sum(a.alpha * b.gap) + ad::sum(b.alpha * a.gap);
        total = total + ad::scale(term, cost(k1, k2));
    }
    return ad::scale(total, 1.0 / (static_cast<double>(h) * w));
}

inline ad::Var cssdf(ad::Var probs, const LabelMap& gt, const CostMatrix& cost, const SpatialLossConfig& cfg) {
    const ad::Tensor reference = probs.value();
    return cssdf(probs, gt, cost, cfg, reference);
}

// --- value functions ---------------------------------------------------------

inline LossValue csnp_loss(const ProbMap& probs, const CostMatrix& cost) {
    ad::Graph g;
    return {csnp(g.constant(ad::Tensor::from_grid(probs.grid())), cost).item(), std::nullopt};
}

inline LossValue csdt_loss(const ProbMap& probs, const CostMatrix& cost, const SpatialLossConfig& cfg) {
    ad::Graph g;
    return {csdt(g.constant(ad::Tensor::from_grid(probs.grid())), cost, cfg).item(), std::nullopt};
}

inline LossValue cssdf_loss(const ProbMap& probs, const LabelMap& gt_labels, const CostMatrix& cost,
                            const SpatialLossConfig& cfg) {
    ad::Graph g;
    return {cssdf(g.constant(ad::Tensor::from_grid(probs.grid())), gt_labels, cost, cfg).item(), std::nullopt};
}

/// exp(-gamma_decay * |sdf|) pointwise.
inline Grid<double> alpha_weight(const SignedDistField& sdf, double gamma_decay) {
    if (!(gamma_decay > 0.0)) throw ConfigError("gamma_decay must be > 0");
    Grid<double> out = sdf.grid();
    for (double& v : out.data()) v = std::exp(-gamma_decay * std::abs(v));
    return out;
}

}  // namespace ordseg
