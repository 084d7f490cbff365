#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>

#include "cmdm/grid.hpp"
#include "cmdm/random.hpp"

namespace cmdm::test {

inline ComplexGrid random_grid(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    return complex_normal(rows, cols, rng);
}

inline RealGrid random_real(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    RealGrid g(rows, cols);
    for (auto& v : g) v = u(rng);
    return g;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Centered DFT evaluated term by term.
inline ComplexGrid naive_fft2c(const ComplexGrid& g, bool inverse = false) {
    const std::size_t H = g.rows(), W = g.cols();
    const double sign = inverse ? 1.0 : -1.0;
    ComplexGrid out(H, W);
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            cplx acc{};
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = 0; c < W; ++c) {
                    const double ph = 2.0 * M_PI *
                                      (double((long(u) - long(H / 2)) * (long(r) - long(H / 2))) / double(H) +
                                       double((long(v) - long(W / 2)) * (long(c) - long(W / 2))) / double(W));
                    acc += g(r, c) * std::polar(1.0, sign * ph);
                }
            out(u, v) = acc / std::sqrt(double(H * W));
        }
    return out;
}

} // namespace cmdm::test
