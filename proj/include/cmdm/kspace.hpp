#pragma once

// Multi-coil containers and the centered unitary 2D Fourier transform.
//
// The DC bin of a transformed grid sits at (rows / 2, cols / 2) (integer
// division) for both odd and even sizes. Normalisation is 1 / sqrt(rows * cols)
// in both directions, so fft2c is unitary and Parseval holds exactly.

#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "cmdm/error.hpp"
#include "cmdm/grid.hpp"

namespace cmdm {

enum class Domain { Image, KSpace };

inline const char* to_string(Domain d) { return d == Domain::Image ? "image" : "kspace"; }

inline Domain domain_from_string(const std::string& s) {
    if (s == "image") return Domain::Image;
    if (s == "kspace") return Domain::KSpace;
    throw DataError("unknown domain '" + s + "'");
}

/// One or more equally-shaped coil grids tagged with the domain they live in.
class CoilStack {
public:
    CoilStack(std::vector<ComplexGrid> coils, Domain domain) : coils_(std::move(coils)), domain_(domain) {
        require(!coils_.empty(), "coil stack needs at least one coil");
        for (const auto& c : coils_) require_same_shape(c, coils_.front(), "coil stack");
    }

    std::size_t coils() const noexcept { return coils_.size(); }
    std::size_t rows() const noexcept { return coils_.front().rows(); }
    std::size_t cols() const noexcept { return coils_.front().cols(); }
    Domain domain() const noexcept { return domain_; }

    const ComplexGrid& operator[](std::size_t c) const { return coils_.at(c); }
    const std::vector<ComplexGrid>& grids() const noexcept { return coils_; }

    bool operator==(const CoilStack&) const = default;

private:
    std::vector<ComplexGrid> coils_;
    Domain domain_;
};

namespace detail {

enum class Direction { Forward, Inverse };

// Centered 1D DFT applied along every row (axis 1) or column (axis 0).
inline void centered_transform_axis(ComplexGrid& g, int axis, Direction dir) {
    const std::size_t n = axis == 1 ? g.cols() : g.rows();
    const std::size_t lines = axis == 1 ? g.rows() : g.cols();
    if (n == 1) return;
    const std::size_t half = n / 2;
    const double scale = dir == Direction::Forward ? 1.0 / std::sqrt(double(n)) : std::sqrt(double(n));

    Eigen::FFT<double> fft;
    std::vector<cplx> in(n), out(n);
    for (std::size_t l = 0; l < lines; ++l) {
        auto at = [&](std::size_t i) -> cplx& { return axis == 1 ? g(l, i) : g(i, l); };
        for (std::size_t i = 0; i < n; ++i) in[i] = at((i + half) % n);
        if (dir == Direction::Forward)
            fft.fwd(out, in);
        else
            fft.inv(out, in);
        for (std::size_t i = 0; i < n; ++i) at((i + half) % n) = out[i] * scale;
    }
}

} // namespace detail

inline ComplexGrid fft2c(ComplexGrid g) {
    detail::centered_transform_axis(g, 1, detail::Direction::Forward);
    detail::centered_transform_axis(g, 0, detail::Direction::Forward);
    return g;
}

inline ComplexGrid ifft2c(ComplexGrid g) {
    detail::centered_transform_axis(g, 1, detail::Direction::Inverse);
    detail::centered_transform_axis(g, 0, detail::Direction::Inverse);
    return g;
}

inline CoilStack fft2c(const CoilStack& s) {
    if (s.domain() != Domain::Image) throw UsageError("fft2c expects an image-domain coil stack");
    std::vector<ComplexGrid> out;
    out.reserve(s.coils());
    for (const auto& c : s.grids()) out.push_back(fft2c(c));
    return {std::move(out), Domain::KSpace};
}

inline CoilStack ifft2c(const CoilStack& s) {
    if (s.domain() != Domain::KSpace) throw UsageError("ifft2c expects a k-space coil stack");
    std::vector<ComplexGrid> out;
    out.reserve(s.coils());
    for (const auto& c : s.grids()) out.push_back(ifft2c(c));
    return {std::move(out), Domain::Image};
}

/// Root sum of squares over coils. Only meaningful on image-domain data.
inline RealGrid sos_combine(const CoilStack& s) {
    if (s.domain() != Domain::Image) throw UsageError("sos_combine expects an image-domain coil stack");
    RealGrid out(s.rows(), s.cols());
    for (const auto& c : s.grids())
        for (std::size_t i = 0; i < c.size(); ++i) out[i] += std::norm(c[i]);
    for (auto& v : out) v = std::sqrt(v);
    return out;
}

/// Integer offsets from the DC bin: (r - rows/2, c - cols/2).
struct IndexOffset {
    long row;
    long col;
};

inline IndexOffset center_offset(std::size_t rows, std::size_t cols, std::size_t r, std::size_t c) {
    return {long(r) - long(rows / 2), long(c) - long(cols / 2)};
}

/// Offsets scaled by (rows/2, cols/2), so the most negative frequency maps to -1.
inline std::pair<double, double> normalized_coordinate(std::size_t rows, std::size_t cols, std::size_t r,
                                                       std::size_t c) {
    const auto off = center_offset(rows, cols, r, c);
    return {double(off.row) / (double(rows) / 2.0), double(off.col) / (double(cols) / 2.0)};
}

} // namespace cmdm
