#pragma once

// Synthetic piecewise-smooth ellipse phantoms with optional smooth phase and
// simulated coil sensitivities.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cmdm/error.hpp"
#include "cmdm/grid.hpp"
#include "cmdm/kspace.hpp"
#include "cmdm/random.hpp"

namespace cmdm {

enum class PhantomKind { Ellipses, SheppLogan };

inline PhantomKind phantom_kind_from_string(const std::string& s) {
    if (s == "ellipses") return PhantomKind::Ellipses;
    if (s == "shepp-logan") return PhantomKind::SheppLogan;
    throw UsageError("unknown phantom kind '" + s + "'");
}

struct Ellipse {
    double value;        ///< additive intensity
    double a, b;         ///< semi-axes (normalized units, image spans [-1, 1])
    double x0, y0;       ///< center
    double theta;        ///< rotation in radians
    double ramp = 0.0;   ///< linear intensity ramp along the major axis (smooth part)
};

struct PhantomOptions {
    PhantomKind kind = PhantomKind::Ellipses;
    std::size_t coils = 1;
    bool complex_phase = false;
};

namespace detail {

inline std::vector<Ellipse> shepp_logan_ellipses() {
    constexpr double d = M_PI / 180.0;
    return {
        {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},          {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
        {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0 * d},  {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0 * d},
        {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},         {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
        {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},       {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
        {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},     {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
    };
}

inline std::vector<Ellipse> random_ellipses(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    std::vector<Ellipse> e;
    const double a = range(0.62, 0.80), b = range(0.78, 0.92);
    const double x0 = range(-0.04, 0.04), y0 = range(-0.04, 0.04), th = range(-0.2, 0.2);
    const double skull = range(0.06, 0.10);
    e.push_back({1.0, a, b, x0, y0, th});
    e.push_back({-range(0.45, 0.65), a - skull, b - skull, x0, y0, th, range(-0.08, 0.08)});
    const int inner = 4 + int(u(rng) * 5.0);
    for (int i = 0; i < inner; ++i) {
        const double r = range(0.0, 0.55), phi = range(0.0, 2.0 * M_PI);
        const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
        e.push_back({sign * range(0.08, 0.3), range(0.04, 0.22), range(0.04, 0.28), x0 + r * std::cos(phi) * (a - skull) * 0.8,
                     y0 + r * std::sin(phi) * (b - skull) * 0.8, range(0.0, M_PI), range(-0.05, 0.05)});
    }
    return e;
}

inline bool inside(const Ellipse& e, double x, double y, double& along) {
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    const double dx = x - e.x0, dy = y - e.y0;
    const double u = (c * dx + s * dy) / e.a, v = (-s * dx + c * dy) / e.b;
    along = v;
    return u * u + v * v <= 1.0;
}

} // namespace detail

/// Magnitude image in [0, 1]; zero outside the outermost ellipse.
inline RealGrid render_ellipses(const std::vector<Ellipse>& ellipses, std::size_t rows, std::size_t cols) {
    RealGrid img(rows, cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            // x runs left->right across columns, y top->bottom across rows.
            const double x = (double(c) - double(cols / 2)) / (double(cols) / 2.0);
            const double y = (double(r) - double(rows / 2)) / (double(rows) / 2.0);
            double along = 0.0;
            if (!detail::inside(ellipses.front(), x, y, along)) continue;
            double v = 0.0;
            for (const auto& e : ellipses)
                if (detail::inside(e, x, y, along)) v += e.value + e.ramp * along;
            img(r, c) = std::clamp(v, 0.0, 1.0);
        }
    return img;
}

/// Gaussian-lobe sensitivities placed around the field of view and normalised
/// so that sum_c |S_c|^2 = 1 at every pixel.
inline std::vector<ComplexGrid> coil_sensitivities(std::size_t coils, std::size_t rows, std::size_t cols) {
    require(coils > 0, "need at least one coil");
    std::vector<ComplexGrid> s(coils, ComplexGrid(rows, cols));
    if (coils == 1) {
        std::fill(s[0].begin(), s[0].end(), cplx{1.0, 0.0});
        return s;
    }
    const double width = 0.9;
    for (std::size_t k = 0; k < coils; ++k) {
        const double ang = 2.0 * M_PI * double(k) / double(coils);
        const double cx = 1.1 * std::cos(ang), cy = 1.1 * std::sin(ang);
        const cplx phase = std::polar(1.0, ang);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const double x = (double(c) - double(cols / 2)) / (double(cols) / 2.0);
                const double y = (double(r) - double(rows / 2)) / (double(rows) / 2.0);
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                s[k](r, c) = std::exp(-d2 / (2.0 * width * width)) * phase;
            }
    }
    for (std::size_t i = 0; i < rows * cols; ++i) {
        double norm = 0.0;
        for (const auto& g : s) norm += std::norm(g[i]);
        norm = std::sqrt(norm);
        for (auto& g : s) g[i] /= norm;
    }
    return s;
}

inline CoilStack make_phantom(const PhantomOptions& opt, std::size_t rows, std::size_t cols, std::uint64_t seed) {
    require(rows >= 32 && cols >= 32, "phantom shape must be at least 32x32");
    Rng rng = make_stream(seed, "phantom");
    const auto ellipses = opt.kind == PhantomKind::SheppLogan ? detail::shepp_logan_ellipses() : detail::random_ellipses(rng);
    const RealGrid mag = render_ellipses(ellipses, rows, cols);

    ComplexGrid img = to_complex(mag);
    if (opt.complex_phase) {
        std::uniform_real_distribution<double> u(-M_PI / 2.0, M_PI / 2.0);
        const double a = u(rng), b = u(rng), c = 0.5 * u(rng);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t col = 0; col < cols; ++col) {
                const double x = (double(col) - double(cols / 2)) / (double(cols) / 2.0);
                const double y = (double(r) - double(rows / 2)) / (double(rows) / 2.0);
                img(r, col) *= std::polar(1.0, a * x + b * y + c * x * y);
            }
    }
    const auto sens = coil_sensitivities(opt.coils, rows, cols);
    std::vector<ComplexGrid> out;
    out.reserve(opt.coils);
    for (const auto& s : sens) {
        ComplexGrid g = img;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s[i];
        out.push_back(std::move(g));
    }
    return {std::move(out), Domain::Image};
}

} // namespace cmdm
