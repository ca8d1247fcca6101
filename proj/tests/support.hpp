#pragma once

#include <vector>

#include "oracles.hpp"
#include "ordseg/ordseg.hpp"

namespace testing_support {

inline ordseg::ProbMap probs_of(const oracle::Instance& in) {
    return ordseg::ProbMap(ordseg::Grid<double>(in.h, in.w, in.k, in.probs));
}

inline ordseg::LabelMap labels_of(const oracle::Instance& in) { return ordseg::LabelMap(in.h, in.w, in.labels); }

inline ordseg::ProbMap probs(int h, int w, int k, std::vector<double> values) {
    return ordseg::ProbMap(ordseg::Grid<double>(h, w, k, std::move(values)));
}

inline ordseg::BinaryMask mask_of(const oracle::Mask& m, int h, int w) {
    ordseg::BinaryMask out(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) out.set(i, j, m[static_cast<std::size_t>(i) * w + j]);
    return out;
}

}  // namespace testing_support
