#pragma once

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ordseg/core.hpp"
#include "ordseg/error.hpp"

namespace ordseg {

struct MetricReport {
    double dice_percent = 0.0;
    double cs_percent = 0.0;
    std::optional<double> up_percent;  // needs probabilities
    std::vector<double> per_class_dice;
};

/// Non-decreasing up to the first maximum and non-increasing after it.
/// Plateaus are allowed.
inline bool is_unimodal(std::span<const double> p) {
    if (p.empty()) return true;
    const std::size_t mode = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    for (std::size_t k = 1; k <= mode; ++k) {
        if (p[k] < p[k - 1]) return false;
    }
    for (std::size_t k = mode + 1; k < p.size(); ++k) {
        if (p[k] > p[k - 1]) return false;
    }
    return true;
}

/// Fraction of pixels with a unimodal distribution.
inline double up_metric(const ProbMap& probs) {
    std::size_t unimodal = 0;
    for (int i = 0; i < probs.height(); ++i) {
        for (int j = 0; j < probs.width(); ++j) unimodal += is_unimodal(probs.pixel(i, j)) ? 1 : 0;
    }
    return static_cast<double>(unimodal) / static_cast<double>(probs.pixels());
}

inline constexpr double kDefaultCsEpsilon = 1e-8;

/// Contact surface: share of horizontal and vertical class transitions that
/// jump two or more classes, averaged over the two directions.
inline double cs_metric(const LabelMap& labels, double epsilon = kDefaultCsEpsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("cs epsilon must be > 0");
    std::size_t h_invalid = 0, h_any = 0, v_invalid = 0, v_any = 0;
    for (int i = 0; i < labels.height(); ++i) {
        for (int j = 0; j < labels.width(); ++j) {
            if (j + 1 < labels.width()) {
                const int d = std::abs(labels(i, j) - labels(i, j + 1));
                h_any += d >= 1;
                h_invalid += d >= 2;
            }
            if (i + 1 < labels.height()) {
                const int d = std::abs(labels(i, j) - labels(i + 1, j));
                v_any += d >= 1;
                v_invalid += d >= 2;
            }
        }
    }
    return 0.5 * (static_cast<double>(h_invalid) / (static_cast<double>(h_any) + epsilon) +
                  static_cast<double>(v_invalid) / (static_cast<double>(v_any) + epsilon));
}

struct DiceResult {
    double macro = 0.0;
    std::vector<double> per_class;  // 1.0 for classes absent from both maps
};

/// Per-class Dice; the macro mean skips classes absent from both maps.
inline DiceResult dice(const LabelMap& pred, const LabelMap& gt, const ClassConfig& config) {
    if (!pred.grid().same_plane(gt.grid())) throw ValidationError("dice: prediction and ground truth shapes differ");
    pred.validate(config);
    gt.validate(config);
    const auto k = static_cast<std::size_t>(config.k());
    std::vector<std::size_t> inter(k, 0), p_count(k, 0), g_count(k, 0);
    const auto& pv = pred.grid().data();
    const auto& gv = gt.grid().data();
    for (std::size_t n = 0; n < pv.size(); ++n) {
        const auto a = static_cast<std::size_t>(pv[n] - 1);
        const auto b = static_cast<std::size_t>(gv[n] - 1);
        ++p_count[a];
        ++g_count[b];
        if (a == b) ++inter[a];
    }
    DiceResult out;
    out.per_class.resize(k);
    std::size_t present = 0;
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        if (p_count[c] + g_count[c] == 0) {
            out.per_class[c] = 1.0;
            continue;
        }
        out.per_class[c] = 2.0 * static_cast<double>(inter[c]) / static_cast<double>(p_count[c] + g_count[c]);
        acc += out.per_class[c];
        ++present;
    }
    out.macro = acc / static_cast<double>(present);
    return out;
}

inline MetricReport evaluate_labels(const LabelMap& pred, const LabelMap& gt, const ClassConfig& config,
                                    double epsilon = kDefaultCsEpsilon) {
    const DiceResult d = dice(pred, gt, config);
    MetricReport report;
    report.dice_percent = 100.0 * d.macro;
    report.cs_percent = 100.0 * cs_metric(pred, epsilon);
    for (double v : d.per_class) report.per_class_dice.push_back(100.0 * v);
    return report;
}

inline MetricReport evaluate_probs(const ProbMap& probs, const LabelMap& gt, double epsilon = kDefaultCsEpsilon) {
    MetricReport report = evaluate_labels(decode_argmax(probs), gt, ClassConfig(probs.classes()), epsilon);
    report.up_percent = 100.0 * up_metric(probs);
    return report;
}

}  // namespace ordseg
