#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "cmdm/mask.hpp"

using namespace cmdm;

namespace {

const MaskPattern kPatterns[] = {MaskPattern::Poisson, MaskPattern::Random2D, MaskPattern::Uniform1D,
                                 MaskPattern::Equispaced1D, MaskPattern::Cartesian1D};

bool is_line_pattern(MaskPattern p) { return p != MaskPattern::Poisson && p != MaskPattern::Random2D; }

} // namespace

TEST(Mask, UnitAccelerationSamplesEverything) {
    for (auto p : kPatterns) {
        const auto m = make_mask(p, 32, 32, 1.0, 8, 1);
        EXPECT_EQ(m.count(), 32u * 32u) << to_string(p);
    }
}

TEST(Mask, EquispacedLinesPlusCalibration) {
    const auto m = make_mask(MaskPattern::Equispaced1D, 64, 64, 4.0, 8, 3);
    std::vector<std::size_t> lines;
    for (std::size_t r = 0; r < 64; ++r) {
        const bool on = m.omega(r, 0);
        for (std::size_t c = 0; c < 64; ++c) ASSERT_EQ(bool(m.omega(r, c)), on);
        if (on && (r < 28 || r >= 36)) lines.push_back(r);
    }
    for (std::size_t r = 28; r < 36; ++r) EXPECT_TRUE(m.omega(r, 0));
    ASSERT_GE(lines.size(), 2u);
    const std::size_t step = lines[1] - lines[0];
    for (std::size_t i = 1; i < lines.size(); ++i) EXPECT_EQ((lines[i] - lines[0]) % step, 0u);
    EXPECT_GE(m.fraction(), 0.25);
    EXPECT_LE(m.fraction(), 0.35);
}

TEST(Mask, DeterministicForFixedSeed) {
    for (auto p : kPatterns) {
        EXPECT_EQ(make_mask(p, 48, 40, 4.0, 6, 9).omega, make_mask(p, 48, 40, 4.0, 6, 9).omega) << to_string(p);
    }
    EXPECT_NE(make_mask(MaskPattern::Random2D, 48, 40, 4.0, 6, 9).omega, make_mask(MaskPattern::Random2D, 48, 40, 4.0, 6, 10).omega);
}

TEST(Mask, CalibrationBlockAlwaysSampled) {
    for (auto p : kPatterns)
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto m = make_mask(p, 64, 64, 6.0, 10, seed);
            for (std::size_t r = 27; r < 37; ++r)
                for (std::size_t c = 27; c < 37; ++c) EXPECT_TRUE(m.omega(r, c)) << to_string(p);
        }
}

TEST(Mask, FractionNearInverseAcceleration) {
    for (auto p : kPatterns)
        for (double R : {2.0, 4.0, 8.0}) {
            double mean = 0.0;
            const int seeds = p == MaskPattern::Poisson ? 20 : 100;
            for (int s = 0; s < seeds; ++s) {
                const auto m = make_mask(p, 64, 64, R, 6, std::uint64_t(s));
                // Random2D draws each sample independently: allow four binomial SDs.
                const double sd = std::sqrt((1.0 / R) * (1.0 - 1.0 / R) / (64.0 * 64.0));
                const double tol = p == MaskPattern::Random2D ? std::max(0.1 / R, 4.0 * sd) : 0.1 / R;
                EXPECT_NEAR(m.fraction(), 1.0 / R, tol) << to_string(p) << " R=" << R << " seed " << s;
                mean += m.fraction();
            }
            // Integer spacing cannot absorb the calibration overlap exactly.
            const double tol = p == MaskPattern::Equispaced1D ? 0.1 / R : 0.03 / R;
            EXPECT_NEAR(mean / seeds, 1.0 / R, tol) << to_string(p) << " R=" << R;
        }
}

TEST(Mask, MetadataRecorded) {
    const auto m = make_mask(MaskPattern::Poisson, 32, 32, 3.0, 4, 77);
    EXPECT_EQ(m.pattern, MaskPattern::Poisson);
    EXPECT_EQ(m.accel, 3.0);
    EXPECT_EQ(m.calib, 4u);
    EXPECT_EQ(m.seed, 77u);
}

TEST(Mask, InfeasibleCalibrationIsReported) {
    EXPECT_THROW(make_mask(MaskPattern::Random2D, 64, 64, 8.0, 32, 1), UsageError);
    EXPECT_THROW(make_mask(MaskPattern::Equispaced1D, 64, 64, 8.0, 12, 1), UsageError);
    EXPECT_THROW(make_mask(MaskPattern::Random2D, 16, 16, 2.0, 20, 1), UsageError);
    EXPECT_THROW(make_mask(MaskPattern::Random2D, 16, 16, 0.5, 2, 1), UsageError);
}

TEST(Mask, LinePatternsAreFullLines) {
    for (auto p : kPatterns) {
        if (!is_line_pattern(p)) continue;
        const auto m = make_mask(p, 40, 24, 3.0, 4, 5);
        for (std::size_t r = 0; r < 40; ++r)
            for (std::size_t c = 1; c < 24; ++c) EXPECT_EQ(m.omega(r, c), m.omega(r, 0));
    }
}

TEST(Mask, PatternNamesRoundTrip) {
    for (auto p : kPatterns) EXPECT_EQ(mask_pattern_from_string(to_string(p)), p);
    EXPECT_THROW(mask_pattern_from_string("radial"), UsageError);
}
