#include <gtest/gtest.h>

#include "maefuse/metrics.hpp"
#include "maefuse/rng.hpp"

using namespace maefuse;

namespace {

MaskImage mask_from_bits(uint32_t bits, long rows, long cols) {
    MaskImage m(rows, cols, 0);
    for (long i = 0; i < rows * cols; ++i) m.v[static_cast<size_t>(i)] = (bits >> i) & 1u;
    return m;
}

} // namespace

TEST(DiceIou, KnownPairs) {
    // P = {(0,0),(0,1)}, G = {(0,1),(1,1)}
    MaskImage p(2, 2, 0), g(2, 2, 0);
    p.at(0, 0) = 1;
    p.at(0, 1) = 1;
    g.at(0, 1) = 1;
    g.at(1, 1) = 1;
    EXPECT_DOUBLE_EQ(dice_score(p, g), 0.5);
    EXPECT_NEAR(iou_score(p, g), 1.0 / 3.0, 1e-12);

    EXPECT_DOUBLE_EQ(dice_score(g, g), 1.0);
    EXPECT_DOUBLE_EQ(iou_score(g, g), 1.0);

    MaskImage empty(2, 2, 0);
    EXPECT_DOUBLE_EQ(dice_score(empty, g), 0.0);
    EXPECT_DOUBLE_EQ(iou_score(empty, g), 0.0);
    EXPECT_DOUBLE_EQ(dice_score(empty, empty), 1.0); // both-empty convention
    EXPECT_DOUBLE_EQ(iou_score(empty, empty), 1.0);
}

TEST(DiceIou, NonBinaryRejected) {
    MaskImage p(2, 2, 0), g(2, 2, 0);
    p.v[0] = 3;
    EXPECT_THROW(dice_score(p, g), ContractError);
    EXPECT_THROW(iou_score(g, p), ContractError);
}

// Exhaustive oracle over every pair of binary 3x3 masks (2^9 x 2^9).
TEST(DiceIou, ExhaustiveSetEnumeration3x3) {
    for (uint32_t pb = 0; pb < 512; ++pb) {
        for (uint32_t gb = 0; gb < 512; ++gb) {
            auto p = mask_from_bits(pb, 3, 3);
            auto g = mask_from_bits(gb, 3, 3);
            // independent enumeration straight from the bit sets
            const int inter = __builtin_popcount(pb & gb);
            const int pc = __builtin_popcount(pb);
            const int gc = __builtin_popcount(gb);
            const int uni = __builtin_popcount(pb | gb);
            const double dice = dice_score(p, g);
            const double iou = iou_score(p, g);
            if (pc + gc == 0) {
                ASSERT_EQ(dice, 1.0);
                ASSERT_EQ(iou, 1.0);
            } else {
                ASSERT_EQ(dice, 2.0 * inter / static_cast<double>(pc + gc));
                ASSERT_EQ(iou, static_cast<double>(inter) / uni);
            }
            // IoU = Dice / (2 - Dice) on every pair
            ASSERT_NEAR(iou, dice / (2.0 - dice), 1e-12);
        }
    }
}

TEST(DiceIou, Symmetry) {
    Rng r(1);
    for (int i = 0; i < 50; ++i) {
        auto p = mask_from_bits(static_cast<uint32_t>(r.uniform_int(1 << 16)), 4, 4);
        auto g = mask_from_bits(static_cast<uint32_t>(r.uniform_int(1 << 16)), 4, 4);
        EXPECT_DOUBLE_EQ(dice_score(p, g), dice_score(g, p));
        EXPECT_DOUBLE_EQ(iou_score(p, g), iou_score(g, p));
    }
}

TEST(DiceIou, AddingCorrectPixelNeverHurts) {
    Rng r(2);
    for (int i = 0; i < 50; ++i) {
        auto g = mask_from_bits(static_cast<uint32_t>(r.uniform_int(1 << 16)) | 1u, 4, 4);
        auto p = mask_from_bits(static_cast<uint32_t>(r.uniform_int(1 << 16)), 4, 4);
        // find a ground-truth pixel missing from p
        for (long j = 0; j < 16; ++j) {
            if (g.v[static_cast<size_t>(j)] == 1 && p.v[static_cast<size_t>(j)] == 0) {
                const double d0 = dice_score(p, g), i0 = iou_score(p, g);
                auto p2 = p;
                p2.v[static_cast<size_t>(j)] = 1;
                EXPECT_GE(dice_score(p2, g), d0);
                EXPECT_GE(iou_score(p2, g), i0);
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Multi-class reports
// ---------------------------------------------------------------------------

TEST(MulticlassReport, PerfectPrediction) {
    MaskImage labels(4, 4, 0);
    labels.at(0, 0) = 1;
    labels.at(1, 1) = 2;
    labels.at(2, 2) = 2;
    auto rows = multiclass_report({labels}, {labels}, {"bg", "left", "right"});
    ASSERT_EQ(rows.size(), 3u); // two regions + mean
    for (const auto& r : rows) {
        EXPECT_DOUBLE_EQ(r.iou, 1.0);
        EXPECT_DOUBLE_EQ(r.dice, 1.0);
    }
    EXPECT_EQ(rows[0].region, "left");
    EXPECT_EQ(rows[1].region, "right");
    EXPECT_EQ(rows[2].region, "mean");
    EXPECT_EQ(rows[0].support, 1);
}

TEST(MulticlassReport, AbsentClassFlaggedEmpty) {
    MaskImage pred(3, 3, 0), gt(3, 3, 0);
    pred.at(0, 0) = 1;
    gt.at(0, 0) = 1;
    auto rows = multiclass_report({pred}, {gt}, {"bg", "present", "ghost"});
    EXPECT_FALSE(rows[0].empty);
    EXPECT_TRUE(rows[1].empty);
    EXPECT_DOUBLE_EQ(rows[1].dice, 1.0);
}

TEST(MulticlassReport, ThirteenRegionLayout) {
    const std::vector<std::string> nacc = {
        "Background",
        "Cerebral White Matter", "Cerebral Cortex", "Cerebellum White Matter", "Cerebellum Cortex",
        "Thalamus", "Caudate", "Putamen", "Pallidum", "Brainstem", "Hippocampus", "Amygdala",
        "CSF", "WM-hypointensities"};
    MaskImage labels(8, 8, 0);
    for (long i = 0; i < 64; ++i) labels.v[static_cast<size_t>(i)] = static_cast<int32_t>(i % 14);
    auto rows = multiclass_report({labels}, {labels}, nacc);
    EXPECT_EQ(rows.size(), 14u); // 13 regions + mean
    EXPECT_EQ(rows.back().region, "mean");
}

// ---------------------------------------------------------------------------
// Stability summaries
// ---------------------------------------------------------------------------

TEST(Stability, ConstantScoresZeroStd) {
    auto s = stability_summary({{4, 80.0}, {5, 80.0}, {6, 80.0}});
    EXPECT_DOUBLE_EQ(s.mean, 80.0);
    EXPECT_DOUBLE_EQ(s.stddev, 0.0);
}

TEST(Stability, StrideTableRow) {
    // seven stride IoUs; mean 95.19, population std 0.045
    std::vector<std::pair<double, double>> pts = {{4, 95.16}, {5, 95.24}, {6, 95.23}, {7, 95.25},
                                                  {8, 95.18}, {9, 95.16}, {10, 95.12}};
    auto s = stability_summary(pts, "stride");
    EXPECT_NEAR(s.mean, 95.19, 0.005);
    EXPECT_NEAR(s.stddev, 0.045, 0.0005);
}

TEST(Stability, TwoPointFormulas) {
    auto s = stability_summary({{1, 3.0}, {2, 8.0}});
    EXPECT_DOUBLE_EQ(s.mean, 5.5);
    EXPECT_DOUBLE_EQ(s.stddev, 2.5); // |a-b|/2
}

TEST(Stability, NeedsAtLeastTwoPoints) {
    EXPECT_THROW(stability_summary({{1, 2.0}}), ContractError);
}

// overlap accumulation across slices scores per volume
TEST(OverlapCounts, AccumulateAcrossSlices) {
    MaskImage p1(2, 2, 0), g1(2, 2, 0), p2(2, 2, 0), g2(2, 2, 0);
    p1.at(0, 0) = 1;
    g1.at(0, 1) = 1;
    p2.at(1, 1) = 1;
    g2.at(1, 1) = 1;
    OverlapCounts c;
    c.add(p1, g1);
    c.add(p2, g2);
    EXPECT_DOUBLE_EQ(c.dice(), 2.0 * 1.0 / 4.0);
    EXPECT_DOUBLE_EQ(c.iou(), 1.0 / 3.0);
}
