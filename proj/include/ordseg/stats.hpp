#pragma once

// Mean +/- standard deviation summaries of cross-validation runs and the
// pairwise interval criterion deciding which of two summaries is inferior.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ordseg/error.hpp"

namespace ordseg {

struct Interval {
    double mu = 0.0;
    double sigma = 0.0;
    int n_folds = 0;

    double lower() const noexcept { return mu - sigma; }
    double upper() const noexcept { return mu + sigma; }
};

enum class SdDivisor { population, sample };

/// Mean and standard deviation (divisor n by default, n - 1 with `sample`).
inline Interval fold_interval(std::span<const double> scores, SdDivisor divisor = SdDivisor::population) {
    if (scores.size() < 2) {
        throw InsufficientDataError("need at least 2 fold scores, got " + std::to_string(scores.size()));
    }
    const double n = static_cast<double>(scores.size());
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= n;
    double ss = 0.0;
    for (double s : scores) ss += (s - mean) * (s - mean);
    const double denom = divisor == SdDivisor::population ? n : n - 1.0;
    return {mean, std::sqrt(ss / denom), static_cast<int>(scores.size())};
}

enum class Relation { first_inferior, second_inferior, indeterminate };

inline const char* to_string(Relation r) {
    switch (r) {
        case Relation::first_inferior: return "first_inferior";
        case Relation::second_inferior: return "second_inferior";
        case Relation::indeterminate: return "indeterminate";
    }
    return "indeterminate";
}

struct ComparisonVerdict {
    Relation relation = Relation::indeterminate;
    std::string conditions;        // triggered subset of "abcde", in order
    std::optional<double> rho;     // computed for the lower-mean interval
    bool rho_skipped = false;      // lower-mean interval has zero sigma
    double rho_threshold = 0.5;

    bool triggered(char c) const { return conditions.find(c) != std::string::npos; }
};

inline constexpr double kDefaultRhoThreshold = 0.5;

/// Higher scores are better. The interval with the lower mean is inferior
/// when at least one of the conditions (a)-(e) holds.
inline ComparisonVerdict compare_intervals(const Interval& i1, const Interval& i2,
                                           double rho_threshold = kDefaultRhoThreshold) {
    if (!(rho_threshold > 0.0)) throw ConfigError("rho threshold must be > 0");
    if (i1.sigma < 0.0 || i2.sigma < 0.0) throw ValidationError("interval sigma must be >= 0");
    ComparisonVerdict verdict;
    verdict.rho_threshold = rho_threshold;
    if (!(i1.mu < i2.mu) && !(i2.mu < i1.mu)) return verdict;

    const bool first_lower = i1.mu < i2.mu;
    const Interval& worse = first_lower ? i1 : i2;
    const Interval& better = first_lower ? i2 : i1;

    if (worse.upper() < better.lower()) verdict.conditions += 'a';
    if (better.lower() <= worse.lower() && worse.upper() <= better.upper()) verdict.conditions += 'b';
    if (worse.upper() < better.mu) verdict.conditions += 'c';
    if (worse.upper() < better.upper()) verdict.conditions += 'd';
    if (worse.sigma > 0.0) {
        verdict.rho = std::abs(worse.upper() - better.lower()) / (2.0 * worse.sigma);
        if (*verdict.rho < rho_threshold) verdict.conditions += 'e';
    } else {
        verdict.rho_skipped = true;
    }
    if (!verdict.conditions.empty()) {
        verdict.relation = first_lower ? Relation::first_inferior : Relation::second_inferior;
    }
    return verdict;
}

/// "first_inferior via a,c,d" or "indeterminate".
inline std::string describe(const ComparisonVerdict& v) {
    std::string out = to_string(v.relation);
    if (v.relation == Relation::indeterminate) return out;
    out += " via ";
    for (std::size_t n = 0; n < v.conditions.size(); ++n) {
        if (n) out += ',';
        out += v.conditions[n];
    }
    return out;
}

}  // namespace ordseg
