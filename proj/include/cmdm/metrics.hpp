#pragma once

// Image-quality metrics on real (SOS magnitude) images.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "cmdm/error.hpp"
#include "cmdm/grid.hpp"

namespace cmdm {

inline double mse(const RealGrid& ref, const RealGrid& test) {
    require_same_shape(ref, test, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = ref[i] - test[i];
        s += d * d;
    }
    return s / double(ref.size());
}

/// 10 log10(max(ref)^2 / MSE); +infinity when the images are identical.
inline double psnr(const RealGrid& ref, const RealGrid& test) {
    const double peak = max_value(ref);
    require(peak > 0.0, "psnr needs max(ref) > 0");
    const double e = mse(ref, test);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / e);
}

struct SsimOptions {
    std::size_t window = 7;
    double gaussian_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    std::optional<double> data_range;  ///< defaults to max(ref)
};

/// Mean local SSIM over all fully-contained Gaussian-weighted windows.
inline double ssim(const RealGrid& ref, const RealGrid& test, const SsimOptions& opt = {}) {
    require_same_shape(ref, test, "ssim");
    const std::size_t n = opt.window;
    require(n % 2 == 1 && n <= ref.rows() && n <= ref.cols(), "ssim window must be odd and fit the image");
    const double L = opt.data_range.value_or(max_value(ref));
    if (!(L > 0.0)) throw UsageError("ssim undefined for zero dynamic range");
    const double c1 = (opt.k1 * L) * (opt.k1 * L), c2 = (opt.k2 * L) * (opt.k2 * L);

    std::vector<double> w(n * n);
    double wsum = 0.0;
    const double h = double(n / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double di = double(i) - h, dj = double(j) - h;
            w[i * n + j] = std::exp(-(di * di + dj * dj) / (2.0 * opt.gaussian_sigma * opt.gaussian_sigma));
            wsum += w[i * n + j];
        }
    for (auto& v : w) v /= wsum;

    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r + n <= ref.rows(); ++r)
        for (std::size_t c = 0; c + n <= ref.cols(); ++c) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double wt = w[i * n + j], x = ref(r + i, c + j), y = test(r + i, c + j);
                    mx += wt * x;
                    my += wt * y;
                    sxx += wt * x * x;
                    syy += wt * y * y;
                    sxy += wt * x * y;
                }
            sxx -= mx * mx;
            syy -= my * my;
            sxy -= mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            ++count;
        }
    return total / double(count);
}

} // namespace cmdm
