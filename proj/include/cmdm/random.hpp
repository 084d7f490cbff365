#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "cmdm/grid.hpp"

namespace cmdm {

using Rng = std::mt19937_64;

/// Deterministic generator for a named substream of a run seed. Each
/// (seed, stream, index) triple yields an independent, reproducible sequence.
inline Rng make_stream(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char ch : stream) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(h), std::uint32_t(h >> 32),
                      std::uint32_t(index), std::uint32_t(index >> 32)};
    return Rng(seq);
}

/// Complex Gaussian grid whose real and imaginary parts are independent N(0, 1).
inline ComplexGrid complex_normal(std::size_t rows, std::size_t cols, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    ComplexGrid g(rows, cols);
    for (auto& v : g) {
        const double re = n01(rng);
        const double im = n01(rng);
        v = {re, im};
    }
    return g;
}

} // namespace cmdm
