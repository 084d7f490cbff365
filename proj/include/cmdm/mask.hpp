#pragma once

// Under-sampling patterns. 1D patterns sample whole rows (phase-encode lines);
// 2D patterns sample individual k-space points. Every pattern forces a centered
// calibration region (calib x calib block in 2D, calib central lines in 1D)
// and targets round(total / R) samples including that region.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cmdm/error.hpp"
#include "cmdm/grid.hpp"
#include "cmdm/random.hpp"

namespace cmdm {

enum class MaskPattern { Poisson, Random2D, Uniform1D, Equispaced1D, Cartesian1D };

inline const char* to_string(MaskPattern p) {
    switch (p) {
    case MaskPattern::Poisson: return "poisson";
    case MaskPattern::Random2D: return "random2d";
    case MaskPattern::Uniform1D: return "uniform1d";
    case MaskPattern::Equispaced1D: return "equispaced1d";
    case MaskPattern::Cartesian1D: return "cartesian1d";
    }
    return "?";
}

inline MaskPattern mask_pattern_from_string(const std::string& s) {
    for (auto p : {MaskPattern::Poisson, MaskPattern::Random2D, MaskPattern::Uniform1D, MaskPattern::Equispaced1D,
                   MaskPattern::Cartesian1D})
        if (s == to_string(p)) return p;
    throw UsageError("unknown sampling pattern '" + s + "'");
}

struct SamplingMask {
    BoolGrid omega;
    MaskPattern pattern = MaskPattern::Random2D;
    double accel = 1.0;
    std::size_t calib = 0;
    std::uint64_t seed = 0;

    std::size_t rows() const { return omega.rows(); }
    std::size_t cols() const { return omega.cols(); }
    bool sampled(std::size_t i) const { return omega[i] != 0; }
    std::size_t count() const { return std::size_t(std::count(omega.begin(), omega.end(), std::uint8_t{1})); }
    double fraction() const { return double(count()) / double(omega.size()); }
};

inline SamplingMask full_mask(std::size_t rows, std::size_t cols) {
    return {BoolGrid(rows, cols, 1), MaskPattern::Random2D, 1.0, 0, 0};
}

namespace detail {

inline void mark_calibration_block(BoolGrid& m, std::size_t calib) {
    const std::size_t r0 = m.rows() / 2 - calib / 2, c0 = m.cols() / 2 - calib / 2;
    for (std::size_t r = r0; r < r0 + calib; ++r)
        for (std::size_t c = c0; c < c0 + calib; ++c) m(r, c) = 1;
}

inline std::vector<std::uint8_t> calibration_lines(std::size_t lines, std::size_t calib) {
    std::vector<std::uint8_t> sel(lines, 0);
    const std::size_t l0 = lines / 2 - calib / 2;
    for (std::size_t l = l0; l < l0 + calib; ++l) sel[l] = 1;
    return sel;
}

inline BoolGrid expand_lines(const std::vector<std::uint8_t>& sel, std::size_t cols) {
    BoolGrid m(sel.size(), cols, 0);
    for (std::size_t r = 0; r < sel.size(); ++r)
        if (sel[r])
            for (std::size_t c = 0; c < cols; ++c) m(r, c) = 1;
    return m;
}

// Variable-density Poisson disc by dart throwing over a shuffled candidate
// list; a candidate at normalized radius d is rejected when an accepted point
// lies closer than scale * max(d, 0.05) pixels.
inline BoolGrid poisson_pass(std::size_t rows, std::size_t cols, std::size_t calib, double scale,
                             const std::vector<std::size_t>& order) {
    BoolGrid m(rows, cols, 0);
    mark_calibration_block(m, calib);
    const double hr = double(rows) / 2.0, hc = double(cols) / 2.0;
    for (std::size_t idx : order) {
        const std::size_t r = idx / cols, c = idx % cols;
        if (m(r, c)) continue;
        const double dr = (double(r) - double(rows / 2)) / hr, dc = (double(c) - double(cols / 2)) / hc;
        const double radius = scale * std::max(std::sqrt(dr * dr + dc * dc), 0.05);
        const long reach = long(std::ceil(radius));
        bool free = true;
        for (long rr = std::max(0L, long(r) - reach); free && rr <= std::min(long(rows) - 1, long(r) + reach); ++rr)
            for (long cc = std::max(0L, long(c) - reach); cc <= std::min(long(cols) - 1, long(c) + reach); ++cc) {
                if (!m(std::size_t(rr), std::size_t(cc))) continue;
                const double er = double(rr) - double(r), ec = double(cc) - double(c);
                if (er * er + ec * ec < radius * radius) {
                    free = false;
                    break;
                }
            }
        if (free) m(r, c) = 1;
    }
    return m;
}

inline std::size_t count_set(const BoolGrid& m) { return std::size_t(std::count(m.begin(), m.end(), std::uint8_t{1})); }

} // namespace detail

inline SamplingMask make_mask(MaskPattern pattern, std::size_t rows, std::size_t cols, double accel, std::size_t calib,
                              std::uint64_t seed) {
    require(rows > 0 && cols > 0, "mask shape must be positive");
    require(accel >= 1.0 && std::isfinite(accel), "acceleration factor must be >= 1");
    const bool one_d = pattern == MaskPattern::Uniform1D || pattern == MaskPattern::Equispaced1D ||
                       pattern == MaskPattern::Cartesian1D;
    require(calib <= (one_d ? rows : std::min(rows, cols)), "calibration region exceeds the grid");

    SamplingMask out{BoolGrid(rows, cols, 0), pattern, accel, calib, seed};
    if (accel == 1.0) {
        out.omega = BoolGrid(rows, cols, 1);
        return out;
    }
    Rng rng = make_stream(seed, "mask");

    if (one_d) {
        const std::size_t target = std::size_t(std::lround(double(rows) / accel));
        if (calib > target)
            throw UsageError("calibration lines (" + std::to_string(calib) + ") exceed the line budget " +
                             std::to_string(target) + " for R=" + std::to_string(accel));
        std::vector<std::uint8_t> sel = detail::calibration_lines(rows, calib);
        if (pattern == MaskPattern::Cartesian1D) {
            std::vector<std::size_t> free;
            for (std::size_t l = 0; l < rows; ++l)
                if (!sel[l]) free.push_back(l);
            std::shuffle(free.begin(), free.end(), rng);
            for (std::size_t i = 0; i < target - calib && i < free.size(); ++i) sel[free[i]] = 1;
        } else if (pattern == MaskPattern::Equispaced1D) {
            // Integer spacing enlarged to account for the calibration lines so
            // the total stays near rows / R.
            double spacing = double(rows) / double(std::max<std::size_t>(1, target));
            if (calib > 0 && calib < target)
                spacing = accel * (double(calib) - double(rows)) / (double(calib) * accel - double(rows));
            const std::size_t step = std::max<std::size_t>(1, std::size_t(std::lround(spacing)));
            std::uniform_int_distribution<std::size_t> off(0, step - 1);
            for (std::size_t l = off(rng); l < rows; l += step) sel[l] = 1;
        } else {
            // Uniform1D: real-valued spacing chosen by bisection so the union
            // with the calibration lines hits the budget.
            auto build = [&](double spacing) {
                std::vector<std::uint8_t> s = detail::calibration_lines(rows, calib);
                for (double x = spacing / 2.0; x < double(rows); x += spacing) s[std::min(rows - 1, std::size_t(x))] = 1;
                return s;
            };
            auto count = [](const std::vector<std::uint8_t>& s) { return std::size_t(std::count(s.begin(), s.end(), 1)); };
            double lo = 1.0, hi = double(rows);
            std::vector<std::uint8_t> best = build(hi);
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                auto s = build(mid);
                const auto c = count(s);
                if (std::abs(long(c) - long(target)) < std::abs(long(count(best)) - long(target))) best = s;
                if (c > target) lo = mid; else hi = mid;
            }
            sel = best;
        }
        out.omega = detail::expand_lines(sel, cols);
        return out;
    }

    const std::size_t total = rows * cols;
    const std::size_t target = std::size_t(std::lround(double(total) / accel));
    const std::size_t calib_count = calib * calib;
    if (calib_count > target)
        throw UsageError("calibration block (" + std::to_string(calib_count) + " samples) exceeds the budget " +
                         std::to_string(target) + " for R=" + std::to_string(accel));

    if (pattern == MaskPattern::Random2D) {
        detail::mark_calibration_block(out.omega, calib);
        const double p = double(target - calib_count) / double(total - calib_count);
        std::bernoulli_distribution keep(p);
        for (auto& v : out.omega)
            if (keep(rng)) v = 1;
        return out;
    }

    // Poisson: bisection on the radius scale to meet the budget.
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double lo = 0.0, hi = 4.0 * std::sqrt(accel) * std::max(rows, cols) / 16.0 + 4.0;
    BoolGrid best = detail::poisson_pass(rows, cols, calib, hi, order);
    auto gap = [&](const BoolGrid& m) { return std::abs(long(detail::count_set(m)) - long(target)); };
    for (int it = 0; it < 40 && gap(best) > 0; ++it) {
        const double mid = 0.5 * (lo + hi);
        BoolGrid m = detail::poisson_pass(rows, cols, calib, mid, order);
        const auto c = detail::count_set(m);
        if (gap(m) < gap(best)) best = m;
        if (c > target) lo = mid; else hi = mid;
    }
    out.omega = std::move(best);
    return out;
}

} // namespace cmdm
