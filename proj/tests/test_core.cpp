#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace ordseg;
using testing_support::probs;

TEST(Softmax, ZeroLogitsGiveUniform) {
    const ProbMap p = softmax(LogitMap(Grid<double>(1, 1, 3, {0.0, 0.0, 0.0})));
    for (int k = 1; k <= 3; ++k) EXPECT_NEAR(p.prob(0, 0, k), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantArgmax) {
    for (double t : {-50.0, 0.0, 3.5, 700.0}) {
        const ProbMap p = softmax(LogitMap(Grid<double>(1, 1, 3, {t, t + 0.7, t})));
        EXPECT_EQ(decode_argmax(p)(0, 0), 2);
    }
}

TEST(Softmax, LogThreeGivesQuarter) {
    const ProbMap p = softmax(LogitMap(Grid<double>(1, 1, 2, {0.0, std::log(3.0)})));
    EXPECT_NEAR(p.prob(0, 0, 1), 0.25, 1e-15);
    EXPECT_NEAR(p.prob(0, 0, 2), 0.75, 1e-15);
}

TEST(LogitMap, RejectsNonFinite) {
    EXPECT_THROW(LogitMap(Grid<double>(1, 2, 2, {0.0, 1.0, NAN, 0.0})), ValidationError);
}

TEST(ProbMap, RejectsBadSums) {
    EXPECT_THROW(probs(1, 1, 2, {0.5, 0.6}), ValidationError);
    EXPECT_THROW(probs(1, 1, 2, {-0.1, 1.1}), ValidationError);
    EXPECT_NO_THROW(probs(1, 1, 2, {0.5, 0.5 + 5e-7}));
}

TEST(ClassConfig, RejectsFewerThanTwo) {
    EXPECT_THROW(ClassConfig(1), ConfigError);
    EXPECT_NO_THROW(ClassConfig(2));
}

TEST(CostMatrix, Entries) {
    const CostMatrix c4(ClassConfig(4));
    EXPECT_EQ(c4(1, 4), 2.0);
    EXPECT_EQ(c4(4, 1), 2.0);
    EXPECT_EQ(c4(2, 3), 0.0);
    const CostMatrix c2(ClassConfig(2));
    for (double v : c2.entries()) EXPECT_EQ(v, 0.0);
}

TEST(OneHot, Encodes) {
    const ProbMap a = one_hot(LabelMap(1, 1, {2}), ClassConfig(3));
    EXPECT_EQ(a.grid().data(), (std::vector<double>{0, 1, 0}));
    const ProbMap b = one_hot(LabelMap(2, 1, {1, 3}), ClassConfig(3));
    EXPECT_EQ(b.grid().data(), (std::vector<double>{1, 0, 0, 0, 0, 1}));
    EXPECT_THROW(one_hot(LabelMap(1, 1, {4}), ClassConfig(3)), ValidationError);
}

TEST(NonadjacentPairs, Enumerates) {
    EXPECT_EQ(nonadjacent_pairs(ClassConfig(3)), (std::vector<std::pair<int, int>>{{1, 3}}));
    EXPECT_TRUE(nonadjacent_pairs(ClassConfig(2)).empty());
    EXPECT_EQ(nonadjacent_pairs(ClassConfig(5)),
              (std::vector<std::pair<int, int>>{{1, 3}, {1, 4}, {1, 5}, {2, 4}, {2, 5}, {3, 5}}));
}

TEST(DecodeArgmax, PicksLowestOnTies) {
    EXPECT_EQ(decode_argmax(probs(1, 1, 3, {0.2, 0.5, 0.3}))(0, 0), 2);
    EXPECT_EQ(decode_argmax(probs(1, 1, 2, {0.5, 0.5}))(0, 0), 1);
    const LabelMap labels(2, 2, {1, 3, 2, 2});
    EXPECT_EQ(decode_argmax(one_hot(labels, ClassConfig(3))), labels);
}

TEST(LabelMap, RejectsNonPositive) { EXPECT_THROW(LabelMap(1, 2, {1, 0}), ValidationError); }

TEST(Batch, ValidatesShapes) {
    std::vector<Image> imgs{Image(2, 2, 1), Image(2, 3, 1)};
    std::vector<LabelMap> labs{LabelMap(2, 2, {1, 1, 2, 2}), LabelMap(2, 3, {1, 1, 2, 2, 1, 1})};
    EXPECT_THROW(Batch(imgs, labs, ClassConfig(2)), ValidationError);
    std::vector<Image> one{Image(2, 2, 1)};
    std::vector<LabelMap> bad{LabelMap(2, 2, {1, 1, 3, 2})};
    EXPECT_THROW(Batch(one, bad, ClassConfig(2)), ValidationError);
}
