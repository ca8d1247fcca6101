#pragma once

// Randomized finite-difference checks of loss gradients. Inputs are logits
// passed through softmax; draws whose probabilities sit within `margin` of a
// hinge or threshold kink are rejected and redrawn.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "ordseg/autodiff.hpp"
#include "ordseg/core.hpp"
#include "ordseg/objective.hpp"
#include "ordseg/synth.hpp"

namespace ordseg {

struct GradCheckSpec {
    LossSelection loss;      // kind none checks CE alone
    bool with_ce = false;    // check CE + lambda * loss instead of the loss alone
    int height = 6;
    int width = 6;
    int k_classes = 3;
    int draws = 50;
    std::uint64_t seed = 0;
    double step = 1e-5;
    double tol_rel = 1e-4;
    double margin = 1e-3;
    double logit_scale = 2.0;
};

struct GradCheckSummary {
    int draws = 0;
    int passed = 0;
    int rejected = 0;  // draws redrawn for sitting near a kink
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool ok() const noexcept { return passed == draws; }
};

/// Distance of `probs` from every hinge kink (delta + p_a - p_b = 0 for the
/// margins in use) and threshold kink (p = delta_conf).
inline double kink_distance(const ad::Tensor& probs, const LossSelection& sel) {
    const std::size_t k = probs.shape()[2];
    const double deltas[] = {sel.pointwise.qul_delta, sel.pointwise.o2_delta};
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t base = 0; base < probs.size(); base += k) {
        for (std::size_t a = 0; a < k; ++a) {
            best = std::min(best, std::abs(probs[base + a] - sel.spatial.delta_conf));
            for (std::size_t b = 0; b < k; ++b) {
                if (a == b) continue;
                for (double d : deltas) best = std::min(best, std::abs(d + probs[base + a] - probs[base + b]));
            }
        }
    }
    return best;
}

inline GradCheckSummary random_gradcheck(const GradCheckSpec& spec) {
    spec.loss.validate();
    ClassConfig config(spec.k_classes);
    Rng rng(spec.seed);
    GradCheckSummary summary;
    const ad::Shape shape{static_cast<std::size_t>(spec.height), static_cast<std::size_t>(spec.width),
                          static_cast<std::size_t>(spec.k_classes)};
    while (summary.draws < spec.draws) {
        ad::Tensor logits(shape);
        for (double& v : logits.data()) v = spec.logit_scale * rng.normal();
        std::vector<int> labels(static_cast<std::size_t>(spec.height) * spec.width);
        for (int& l : labels) l = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.k_classes)));
        const LabelMap gt(spec.height, spec.width, std::move(labels));

        ad::Graph base;
        const ad::Tensor probs = ad::softmax_last(base.constant(logits)).value();
        if (kink_distance(probs, spec.loss) <= spec.margin) {
            if (++summary.rejected > 1000 * spec.draws) throw OracleError("could not draw inputs away from kinks");
            continue;
        }
        // Spatial geometry stays frozen at the base point.
        const ad::GraphFn fn = [&](ad::Graph&, ad::Var x) {
            ad::Var p = ad::softmax_last(x);
            ad::Var term = ordinal_term(p, gt, spec.loss, &probs);
            if (!spec.with_ce) return term;
            return ad::mean(ce_pixels(p, gt)) + ad::scale(term, spec.loss.lambda);
        };
        const ad::GradCheckReport report = ad::finite_diff_check(fn, logits, spec.step, spec.tol_rel);
        ++summary.draws;
        summary.passed += report.passed ? 1 : 0;
        summary.max_rel_error = std::max(summary.max_rel_error, report.max_rel_error);
        summary.max_abs_error = std::max(summary.max_abs_error, report.max_abs_error);
    }
    return summary;
}

}  // namespace ordseg
