#pragma once

// Loss selection shared by training, gradient checks and the CLI.

#include <cstdio>
#include <string>

#include "ordseg/autodiff.hpp"
#include "ordseg/core.hpp"
#include "ordseg/error.hpp"
#include "ordseg/losses_pointwise.hpp"
#include "ordseg/losses_spatial.hpp"

namespace ordseg {

enum class OrdinalLoss { none, qul, expmse, o2, csnp, csdt, cssdf };

inline std::string to_string(OrdinalLoss l) {
    switch (l) {
        case OrdinalLoss::none: return "ce";
        case OrdinalLoss::qul: return "qul";
        case OrdinalLoss::expmse: return "expmse";
        case OrdinalLoss::o2: return "o2";
        case OrdinalLoss::csnp: return "csnp";
        case OrdinalLoss::csdt: return "csdt";
        case OrdinalLoss::cssdf: return "cssdf";
    }
    return "";
}

inline OrdinalLoss parse_ordinal_loss(const std::string& name) {
    for (auto l : {OrdinalLoss::none, OrdinalLoss::qul, OrdinalLoss::expmse, OrdinalLoss::o2, OrdinalLoss::csnp,
                   OrdinalLoss::csdt, OrdinalLoss::cssdf}) {
        if (to_string(l) == name) return l;
    }
    throw ConfigError("unknown loss '" + name + "'");
}

/// Which ordinal term joins cross-entropy, and its hyperparameters.
struct LossSelection {
    OrdinalLoss kind = OrdinalLoss::none;
    double lambda = 0.0;  // weight of the ordinal term
    LossConfig pointwise;
    SpatialLossConfig spatial;

    void validate() const {
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
        pointwise.validate();
        spatial.validate();
    }

    /// Stable key: loss, lambda, delta, gamma, p.
    std::string key() const {
        auto num = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%g", v);
            return std::string(buf);
        };
        std::string k = to_string(kind);
        if (kind == OrdinalLoss::none) return k;
        k += " lambda=" + num(lambda);
        switch (kind) {
            case OrdinalLoss::qul: k += " delta=" + num(pointwise.qul_delta) + " inner_lambda=" + num(pointwise.qul_lambda); break;
            case OrdinalLoss::expmse: k += " var_lambda=" + num(pointwise.expmse_lambda); break;
            case OrdinalLoss::o2: k += " delta=" + num(pointwise.o2_delta); break;
            case OrdinalLoss::csdt: k += " delta=" + num(spatial.delta_conf) + " gamma=" + num(spatial.gamma_clamp); break;
            case OrdinalLoss::cssdf:
                k += " delta=" + num(spatial.delta_conf) + " gamma=" + num(spatial.gamma_decay) +
                     " p=" + std::to_string(spatial.p_exponent);
                break;
            default: break;
        }
        return k;
    }
};

/// Scalar loss term on `probs` (pixel mean for pointwise losses; `none` is CE).
/// Spatial geometry is taken from `reference` when given, else from `probs`.
inline ad::Var ordinal_term(ad::Var probs, const LabelMap& labels, const LossSelection& sel,
                            const ad::Tensor* reference = nullptr) {
    const CostMatrix cost(ClassConfig(static_cast<int>(probs.shape()[2])));
    const ad::Tensor& ref = reference ? *reference : probs.value();
    switch (sel.kind) {
        case OrdinalLoss::none: return ad::mean(ce_pixels(probs, labels));
        case OrdinalLoss::qul: return ad::mean(qul_pixels(probs, labels, sel.pointwise));
        case OrdinalLoss::expmse: return ad::mean(expmse_pixels(probs, labels, sel.pointwise));
        case OrdinalLoss::o2: return ad::mean(o2_pixels(probs, labels, sel.pointwise));
        case OrdinalLoss::csnp: return csnp(probs, cost);
        case OrdinalLoss::csdt: return csdt(probs, cost, sel.spatial, ref);
        case OrdinalLoss::cssdf: return cssdf(probs, labels, cost, sel.spatial, ref);
    }
    throw ConfigError("unknown loss kind");
}

/// Per-image objective CE + lambda * ordinal on softmax(logits).
inline ad::Var objective(ad::Var logits, const LabelMap& labels, const LossSelection& sel) {
    ad::Var probs = ad::softmax_last(logits);
    ad::Var total = ad::mean(ce_pixels(probs, labels));
    if (sel.kind == OrdinalLoss::none || sel.lambda == 0.0) return total;
    return total + ad::scale(ordinal_term(probs, labels, sel), sel.lambda);
}

}  // namespace ordseg
