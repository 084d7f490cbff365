#include <gtest/gtest.h>

#include <limits>

#include "cmdm/metrics.hpp"
#include "cmdm/phantom.hpp"
#include "support.hpp"

using namespace cmdm;
using cmdm::test::random_real;
using cmdm::test::rel_diff;

namespace {

double brute_mse(const RealGrid& a, const RealGrid& b) {
    long double s = 0;
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) s += (long double)(a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
    return double(s / (long double)(a.rows() * a.cols()));
}

double brute_psnr(const RealGrid& a, const RealGrid& b) {
    double peak = -std::numeric_limits<double>::infinity();
    for (double v : a) peak = v > peak ? v : peak;
    return 20.0 * std::log10(peak) - 10.0 * std::log10(brute_mse(a, b));
}

// Two-pass local statistics: means first, then centred second moments.
double brute_ssim(const RealGrid& x, const RealGrid& y, double L) {
    const int n = 7, h = 3;
    double w[7][7], ws = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) ws += (w[i][j] = std::exp(-double((i - h) * (i - h) + (j - h) * (j - h)) / 4.5));
    const double C1 = 0.0001 * L * L, C2 = 0.0009 * L * L;
    double total = 0;
    int count = 0;
    for (int r = h; r + h < int(x.rows()); ++r)
        for (int c = h; c + h < int(x.cols()); ++c) {
            double mx = 0, my = 0;
            for (int i = -h; i <= h; ++i)
                for (int j = -h; j <= h; ++j) {
                    mx += w[i + h][j + h] / ws * x(r + i, c + j);
                    my += w[i + h][j + h] / ws * y(r + i, c + j);
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = -h; i <= h; ++i)
                for (int j = -h; j <= h; ++j) {
                    const double wt = w[i + h][j + h] / ws, dx = x(r + i, c + j) - mx, dy = y(r + i, c + j) - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            const double lum = (2 * mx * my + C1) / (mx * mx + my * my + C1);
            const double cs = (2 * cxy + C2) / (vx + vy + C2);
            total += lum * cs;
            ++count;
        }
    return total / count;
}

} // namespace

TEST(Metrics, AgreeWithBruteForceOnRandomPairs) {
    for (std::uint64_t i = 0; i < 100; ++i) {
        const std::size_t h = 8 + i % 25, w = 9 + (i * 7) % 23;
        const RealGrid a = random_real(h, w, 2 * i + 1), b = random_real(h, w, 2 * i + 2, -0.2, 1.3);
        EXPECT_LT(rel_diff(mse(a, b), brute_mse(a, b)), 1e-9);
        EXPECT_LT(rel_diff(psnr(a, b), brute_psnr(a, b)), 1e-9);
        EXPECT_LT(rel_diff(ssim(a, b), brute_ssim(a, b, max_value(a))), 1e-9);
    }
}

TEST(Psnr, FortyDecibels) {
    RealGrid ref(10, 10, 0.5), test(10, 10, 0.5);
    ref[0] = 1.0;
    test[0] = 1.0;
    for (std::size_t i = 1; i < 100; ++i) test[i] += (i % 2 ? 0.01 : -0.01);
    // 99 of 100 entries off by 0.01: MSE = 0.99e-4
    EXPECT_NEAR(psnr(ref, test), 10.0 * std::log10(1.0 / 0.99e-4), 1e-10);
    RealGrid t2 = ref;
    for (auto& v : t2) v += 0.01;
    EXPECT_NEAR(psnr(ref, t2), 40.0, 1e-9);
}

TEST(Psnr, IdenticalImagesGiveInfinity) {
    const RealGrid a = random_real(8, 8, 1);
    EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
    EXPECT_THROW(psnr(RealGrid(4, 4), RealGrid(4, 4)), UsageError);
}

TEST(Mse, Examples) {
    const RealGrid a = random_real(8, 8, 1);
    EXPECT_EQ(mse(a, a), 0.0);
    EXPECT_EQ(mse(RealGrid(5, 5, 0.0), RealGrid(5, 5, 1.0)), 1.0);
    EXPECT_THROW(mse(RealGrid(5, 5), RealGrid(5, 4)), UsageError);
}

TEST(Ssim, IdealOnlyForIdenticalImages) {
    const RealGrid a = random_real(16, 16, 3);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-15);
    RealGrid b = a;
    b[40] += 0.1;
    EXPECT_LT(ssim(a, b), 1.0);
    EXPECT_GT(mse(a, b), 0.0);
    EXPECT_LT(psnr(a, b), std::numeric_limits<double>::infinity());
}

TEST(Ssim, InvertedContrastScoresLow) {
    const RealGrid ref = magnitude(make_phantom({}, 64, 64, 3)[0]);
    RealGrid inv = ref;
    for (auto& v : inv) v = 1.0 - v;
    EXPECT_LT(ssim(ref, inv), 0.5);
}

TEST(Ssim, SymmetricWithFixedRange) {
    const RealGrid a = random_real(12, 12, 4), b = random_real(12, 12, 5);
    SsimOptions o;
    o.data_range = 1.0;
    EXPECT_NEAR(ssim(a, b, o), ssim(b, a, o), 1e-14);
}

TEST(Ssim, RejectsDegenerateInput) {
    EXPECT_THROW(ssim(RealGrid(8, 8, 0.0), RealGrid(8, 8, 0.0)), UsageError);
    EXPECT_THROW(ssim(RealGrid(4, 4, 1.0), RealGrid(4, 4, 1.0)), UsageError);
}
