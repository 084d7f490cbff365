#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmdm/error.hpp"

namespace cmdm {

using cplx = std::complex<double>;

/// Dense row-major 2D array. Element (r, c) lives at r * cols + c.
template <class T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        require(rows > 0 && cols > 0, "grid dimensions must be positive");
    }
    Grid(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        require(rows > 0 && cols > 0, "grid dimensions must be positive");
        require(data_.size() == rows * cols, "grid data length must equal rows * cols");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    template <class U>
    bool same_shape(const Grid<U>& o) const noexcept {
        return rows_ == o.rows() && cols_ == o.cols();
    }

    bool operator==(const Grid&) const = default;

    Grid& operator+=(const Grid& o) {
        check_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Grid& operator-=(const Grid& o) {
        check_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    template <class S>
    Grid& operator*=(S s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    friend Grid operator+(Grid a, const Grid& b) { return a += b; }
    friend Grid operator-(Grid a, const Grid& b) { return a -= b; }
    template <class S>
    friend Grid operator*(S s, Grid a) { return a *= s; }

private:
    void check_shape(const Grid& o) const {
        if (!same_shape(o)) throw UsageError("grid shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using ComplexGrid = Grid<cplx>;
using RealGrid = Grid<double>;
using BoolGrid = Grid<std::uint8_t>;

template <class T, class U>
void require_same_shape(const Grid<T>& a, const Grid<U>& b, const char* what) {
    if (!a.same_shape(b))
        throw UsageError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
}

inline bool all_finite(const ComplexGrid& g) {
    return std::all_of(g.begin(), g.end(),
                       [](const cplx& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); });
}

inline bool all_finite(const RealGrid& g) {
    return std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); });
}

inline RealGrid magnitude(const ComplexGrid& g) {
    RealGrid out(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = std::abs(g[i]);
    return out;
}

inline ComplexGrid to_complex(const RealGrid& g) {
    ComplexGrid out(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i];
    return out;
}

/// Sum of squared magnitudes.
inline double energy(const ComplexGrid& g) {
    double s = 0.0;
    for (const auto& v : g) s += std::norm(v);
    return s;
}

/// Real inner product treating each complex entry as a 2-vector (re, im).
inline double real_dot(const ComplexGrid& a, const ComplexGrid& b) {
    require_same_shape(a, b, "real_dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
    return s;
}

/// Hermitian inner product sum(conj(a) * b).
inline cplx inner(const ComplexGrid& a, const ComplexGrid& b) {
    require_same_shape(a, b, "inner");
    cplx s{};
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s;
}

inline double max_abs_diff(const ComplexGrid& a, const ComplexGrid& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_value(const RealGrid& g) { return *std::max_element(g.begin(), g.end()); }

} // namespace cmdm
