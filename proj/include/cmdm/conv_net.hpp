#pragma once

// Plain convolutional network over multi-channel 2D planes: zero-padded
// dilated k x k convolutions with bias, optional per-channel affine
// modulation and ReLU between layers, linear output. Parameters live in an
// external double buffer; activations are single precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cmdm/error.hpp"

namespace cmdm {

class ConvNet {
public:
    /// channels x (rows * cols), pixel index r * cols + c
    using Planes = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    ConvNet() = default;
    ConvNet(std::size_t rows, std::size_t cols, std::vector<std::size_t> widths, std::size_t kernel,
            std::vector<std::size_t> dilations = {})
        : rows_(rows), cols_(cols), kernel_(kernel), widths_(std::move(widths)), dilations_(std::move(dilations)) {
        require(widths_.size() >= 2, "network needs at least one layer");
        require(kernel_ % 2 == 1, "network kernel must be odd");
        if (dilations_.empty()) dilations_.assign(widths_.size() - 1, 1);
        require(dilations_.size() + 1 == widths_.size(), "one dilation per layer");
        for (std::size_t d : dilations_) require(d > 0, "dilations must be positive");
        for (std::size_t w : widths_) require(w > 0, "layer widths must be positive");
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            offsets_.push_back(off);
            off += widths_[l + 1] * widths_[l] * taps() + widths_[l + 1];
        }
        count_ = off;
    }

    std::size_t param_count() const noexcept { return count_; }
    std::size_t layers() const noexcept { return offsets_.size(); }
    std::size_t taps() const noexcept { return kernel_ * kernel_; }
    const std::vector<std::size_t>& widths() const noexcept { return widths_; }

    /// Offset of weight (co, ci, tap) of layer l, tap = dr * k + dc; the
    /// layer's biases follow its weights.
    std::size_t weight_index(std::size_t l, std::size_t co, std::size_t ci, std::size_t t) const {
        return offsets_[l] + (co * widths_[l] + ci) * taps() + t;
    }
    std::size_t bias_index(std::size_t l, std::size_t co) const {
        return offsets_[l] + widths_[l + 1] * widths_[l] * taps() + co;
    }

    /// He-normal hidden layers, zero output layer (the network starts at 0).
    template <class Rng>
    void initialize(std::span<double> p, Rng& rng) const {
        require(p.size() == count_, "parameter buffer has the wrong size");
        std::fill(p.begin(), p.end(), 0.0);
        for (std::size_t l = 0; l + 1 < layers(); ++l) {
            std::normal_distribution<double> n(0.0, std::sqrt(2.0 / double(widths_[l] * taps())));
            for (std::size_t i = weight_index(l, 0, 0, 0); i < bias_index(l, 0); ++i) p[i] = n(rng);
        }
    }

    struct Cache {
        std::vector<Planes> input;  ///< input of every layer
        std::vector<Planes> conv;   ///< convolution output of every hidden layer, before modulation
        std::vector<Planes> pre;    ///< pre-activation of every hidden layer
    };

    /// Per-channel affine modulation of every hidden layer's convolution
    /// output: z <- gamma * z + beta. Pointers to widths[l+1] values.
    struct Modulation {
        std::vector<const double*> gamma, beta;
    };
    struct ModulationGrad {
        std::vector<double*> gamma, beta;
    };

    Planes forward(std::span<const double> p, const Planes& input, const Modulation* mod = nullptr,
                   Cache* cache = nullptr) const {
        require(std::size_t(input.rows()) == widths_.front() && std::size_t(input.cols()) == rows_ * cols_,
                "network input has the wrong shape");
        if (mod) require(mod->gamma.size() + 1 == layers() && mod->beta.size() + 1 == layers(), "one modulation per hidden layer");
        if (cache) {
            cache->input.assign(layers(), {});
            cache->conv.assign(layers(), {});
            cache->pre.assign(layers(), {});
        }
        Planes a = input;
        for (std::size_t l = 0; l < layers(); ++l) {
            Planes z(Eigen::Index(widths_[l + 1]), Eigen::Index(rows_ * cols_));
            for (std::size_t co = 0; co < widths_[l + 1]; ++co) z.row(Eigen::Index(co)).setConstant(float(p[bias_index(l, co)]));
            convolve(p, l, a, z);
            if (cache) cache->input[l] = std::move(a);
            if (l + 1 < layers()) {
                if (mod) {
                    if (cache) cache->conv[l] = z;
                    for (Eigen::Index c = 0; c < z.rows(); ++c)
                        z.row(c) = z.row(c).array() * float(mod->gamma[l][c]) + float(mod->beta[l][c]);
                }
                if (cache) cache->pre[l] = z;
                a = z.cwiseMax(0.0f);
            } else {
                a = std::move(z);
            }
        }
        return a;
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
    void backward(std::span<const double> p, const Cache& cache, const Planes& d_out, std::span<double> grad,
                  const Modulation* mod = nullptr, const ModulationGrad* mod_grad = nullptr) const {
        Planes d = d_out;
        for (std::size_t l = layers(); l-- > 0;) {
            if (l + 1 < layers()) {
                d = d.cwiseProduct((cache.pre[l].array() > 0.0f).cast<float>().matrix());
                if (mod) {
                    for (Eigen::Index c = 0; c < d.rows(); ++c) {
                        if (mod_grad) {
                            mod_grad->gamma[l][c] += double(d.row(c).dot(cache.conv[l].row(c)));
                            mod_grad->beta[l][c] += double(d.row(c).sum());
                        }
                        d.row(c) *= float(mod->gamma[l][c]);
                    }
                }
            }
            for (std::size_t co = 0; co < widths_[l + 1]; ++co) grad[bias_index(l, co)] += double(d.row(Eigen::Index(co)).sum());
            Planes d_in;
            if (l > 0) d_in = Planes::Zero(Eigen::Index(widths_[l]), Eigen::Index(rows_ * cols_));
            convolve_backward(p, l, cache.input[l], d, grad, l > 0 ? &d_in : nullptr);
            if (l > 0) d = std::move(d_in);
        }
    }

private:
    using Vec = Eigen::Map<Eigen::VectorXf>;
    using CVec = Eigen::Map<const Eigen::VectorXf>;

    struct Shift {
        long dr, dc;
    };

    Shift shift(std::size_t l, std::size_t t) const {
        const long h = long(kernel_ / 2), dil = long(dilations_[l]);
        return {(long(t / kernel_) - h) * dil, (long(t % kernel_) - h) * dil};
    }

    // Calls f(out_offset, in_offset, length) for every output row segment
    // whose shifted input lies inside the grid.
    template <class F>
    void for_rows(Shift s, F&& f) const {
        const long H = long(rows_), W = long(cols_);
        const long c0 = std::max(0L, -s.dc), c1 = std::min(W, W - s.dc);
        if (c1 <= c0) return;
        for (long r = std::max(0L, -s.dr); r < std::min(H, H - s.dr); ++r)
            f(std::size_t(r * W + c0), std::size_t((r + s.dr) * W + c0 + s.dc), Eigen::Index(c1 - c0));
    }

    void convolve(std::span<const double> p, std::size_t l, const Planes& in, Planes& out) const {
        for (std::size_t co = 0; co < widths_[l + 1]; ++co) {
            float* o = out.row(Eigen::Index(co)).data();
            for (std::size_t ci = 0; ci < widths_[l]; ++ci) {
                const float* x = in.row(Eigen::Index(ci)).data();
                for (std::size_t t = 0; t < taps(); ++t) {
                    const float w = float(p[weight_index(l, co, ci, t)]);
                    for_rows(shift(l, t), [&](std::size_t oi, std::size_t ii, Eigen::Index n) {
                        Vec(o + oi, n) += w * CVec(x + ii, n);
                    });
                }
            }
        }
    }

    void convolve_backward(std::span<const double> p, std::size_t l, const Planes& in, const Planes& d,
                           std::span<double> grad, Planes* d_in) const {
        for (std::size_t co = 0; co < widths_[l + 1]; ++co) {
            const float* g = d.row(Eigen::Index(co)).data();
            for (std::size_t ci = 0; ci < widths_[l]; ++ci) {
                const float* x = in.row(Eigen::Index(ci)).data();
                float* dx = d_in ? d_in->row(Eigen::Index(ci)).data() : nullptr;
                for (std::size_t t = 0; t < taps(); ++t) {
                    const float w = float(p[weight_index(l, co, ci, t)]);
                    double acc = 0.0;
                    for_rows(shift(l, t), [&](std::size_t oi, std::size_t ii, Eigen::Index n) {
                        acc += double(CVec(g + oi, n).dot(CVec(x + ii, n)));
                        if (dx) Vec(dx + ii, n) += w * CVec(g + oi, n);
                    });
                    grad[weight_index(l, co, ci, t)] += acc;
                }
            }
        }
    }

    std::size_t rows_ = 0, cols_ = 0, kernel_ = 3;
    std::vector<std::size_t> widths_;
    std::vector<std::size_t> dilations_;
    std::vector<std::size_t> offsets_;
    std::size_t count_ = 0;
};

} // namespace cmdm
