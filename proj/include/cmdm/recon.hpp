#pragma once

// Multi-frequency reconstruction: two operator-domain samplers (weight and
// mask extractors) advanced level by level, combined serially or in parallel,
// then data consistency and a Hankel low-rank projection each level.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cmdm/error.hpp"
#include "cmdm/freq_ops.hpp"
#include "cmdm/grid.hpp"
#include "cmdm/hankel.hpp"
#include "cmdm/kspace.hpp"
#include "cmdm/mask.hpp"
#include "cmdm/random.hpp"
#include "cmdm/sampler.hpp"
#include "cmdm/score.hpp"

namespace cmdm {

enum class CombineMode { Serial, Parallel };

/// How the serial combination feeds the mask branch.
enum class SerialReading {
    SamplerConditioned,  ///< high-pass of the weight output runs through the mask-branch correctors
    PureOperator,        ///< high-pass of the weight output is used directly
};

/// Which priors drive the reconstruction. Single-branch values are ablations.
enum class Branches { Both, WeightOnly, MaskOnly, FullKSpace };

inline const char* to_string(Branches b) {
    switch (b) {
    case Branches::Both: return "combined";
    case Branches::WeightOnly: return "weight";
    case Branches::MaskOnly: return "mask";
    case Branches::FullKSpace: return "full";
    }
    return "?";
}

struct ReconConfig {
    CombineMode mode = CombineMode::Serial;
    double mu1 = 1.0, mu2 = 1.0;
    double lambda1 = 0.5, lambda2 = 0.5;
    double dc_lambda = std::numeric_limits<double>::infinity();
    HankelWindow hankel_window{6, 6};
    std::size_t hankel_rank = 30;
    bool hankel = true;
    bool interleave = true;  ///< combine + DC + Hankel every level; false applies them after the last level only
    SerialReading serial_reading = SerialReading::SamplerConditioned;
    Branches branches = Branches::Both;

    void validate() const {
        require(dc_lambda > 0.0, "dc_lambda must be positive (or infinity)");
        require(hankel_rank >= 1, "Hankel rank must be at least 1");
        if (mode == CombineMode::Parallel && branches == Branches::Both)
            require(std::abs(lambda1 + lambda2 - 1.0) <= 1e-12, "parallel weights must satisfy lambda1 + lambda2 = 1");
    }
};

/// Window and rank defaults for a grid: (6, 6) and 30 at 64 rows, window
/// growing with sqrt(rows / 64) and rank with the window area.
inline std::pair<HankelWindow, std::size_t> default_hankel(std::size_t rows) {
    const auto w = std::max<std::size_t>(3, std::size_t(std::lround(6.0 * std::sqrt(double(rows) / 64.0))));
    const auto rank = std::max<std::size_t>(1, std::size_t(std::lround(30.0 * double(w * w) / 36.0)));
    return {{w, w}, rank};
}

struct Measurement {
    CoilStack f;  ///< acquired k-space, zero off the mask
    SamplingMask mask;

    void validate() const {
        if (f.domain() != Domain::KSpace) throw DataError("measurement must be k-space data");
        if (f.rows() != mask.rows() || f.cols() != mask.cols()) throw DataError("measurement and mask shapes differ");
        for (const auto& g : f.grids())
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!mask.sampled(i) && g[i] != cplx{})
                    throw DataError("measurement has nonzero values outside the sampling mask");
    }
};

/// Applies the mask to fully-sampled k-space.
inline Measurement acquire(const CoilStack& kspace, const SamplingMask& mask) {
    if (kspace.domain() != Domain::KSpace) throw UsageError("acquire expects k-space data");
    std::vector<ComplexGrid> f;
    for (const auto& g : kspace.grids()) {
        require_same_shape(g, mask.omega, "acquire");
        ComplexGrid m = g;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (!mask.sampled(i)) m[i] = cplx{};
        f.push_back(std::move(m));
    }
    return {CoilStack(std::move(f), Domain::KSpace), mask};
}

// ---------------------------------------------------------------------------

/// Serial: mu2 * highpass(km) + m .* (mu1 * kw), where km is the mask-branch
/// output started from highpass(mu1 * kw). Parallel: lambda1 * kw + lambda2 * km.
inline ComplexGrid combine(const ComplexGrid& kw, const ComplexGrid& km, const ReconConfig& cfg, const CenterMask& cm) {
    require_same_shape(kw, km, "combine");
    ComplexGrid out(kw.rows(), kw.cols());
    if (cfg.mode == CombineMode::Parallel) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = cfg.lambda1 * kw[i] + cfg.lambda2 * km[i];
        return out;
    }
    require_same_shape(kw, cm.block(), "combine");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = cm.in_block(i) ? cfg.mu1 * kw[i] : cfg.mu2 * km[i];
    return out;
}

/// Off-mask entries are untouched; on-mask entries become
/// (k + lambda f) / (1 + lambda), or exactly f when lambda is infinite.
inline ComplexGrid data_consistency(const ComplexGrid& k, const ComplexGrid& f, const SamplingMask& mask, double dc_lambda) {
    require(dc_lambda > 0.0, "dc_lambda must be positive (or infinity)");
    require_same_shape(k, f, "data_consistency");
    require_same_shape(k, mask.omega, "data_consistency");
    ComplexGrid out = k;
    const bool exact = std::isinf(dc_lambda);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!mask.sampled(i)) continue;
        out[i] = exact ? f[i] : (k[i] + dc_lambda * f[i]) / (1.0 + dc_lambda);
    }
    return out;
}

// ---------------------------------------------------------------------------

/// A score model paired with the extractor whose domain it lives in.
struct Prior {
    const ScoreModel* score = nullptr;
    FreqOperator op;
};

inline Prior prior_of(const TrainableScore& m) { return {&m, m.op()}; }

struct ReconResult {
    CoilStack images;
    RealGrid sos;
};

/// Called after every level with the current (unnormalised) k-space estimate.
using LevelObserver = std::function<void(std::size_t level, std::size_t coil, const ComplexGrid& kspace)>;

inline ReconResult zero_filled(const Measurement& meas) {
    CoilStack img = ifft2c(meas.f);
    RealGrid sos = sos_combine(img);
    return {std::move(img), std::move(sos)};
}

namespace detail {

// Divides by w, taking bins where w sits at its floor (the DC bin) from `fallback`.
inline ComplexGrid unweight_fill(const ComplexGrid& kw, const WeightMatrix& wm, const ComplexGrid& fallback) {
    ComplexGrid out = unapply_weight(kw, wm);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (wm.values()[i] <= wm.params().floor) out[i] = fallback[i];
    return out;
}

class CoilReconstructor {
public:
    CoilReconstructor(const ComplexGrid& f, const SamplingMask& mask, std::optional<Prior> weight, std::optional<Prior> maskp,
                      std::optional<Prior> full, const ReconConfig& cfg, const SamplerConfig& scfg, std::size_t coil)
        : f_(f), mask_(mask), weight_(weight), maskp_(maskp), full_(full), cfg_(cfg), scfg_(scfg), coil_(coil) {
        const double peak = max_value(magnitude(ifft2c(f)));
        scale_ = peak > 0.0 ? peak : 1.0;
        fn_ = (1.0 / scale_) * f;
        if (weight_) wm_.emplace(f.rows(), f.cols(), weight_->op.weight);
        if (maskp_) cm_.emplace(f.rows(), f.cols(), maskp_->op.window);
    }

    ComplexGrid run(const LevelObserver& observer) {
        const std::size_t H = f_.rows(), W = f_.cols();
        const double smax = scfg_.schedule.sigma_max();
        ComplexGrid k = fn_;
        auto init = [&](const char* name) {
            Rng r = make_stream(scfg_.seed, std::string("init-") + name, coil_);
            return smax * complex_normal(H, W, r);
        };
        Rng rng_w = make_stream(scfg_.seed, "noise-weight", coil_);
        Rng rng_m = make_stream(scfg_.seed, "noise-mask", coil_);
        Rng rng_f = make_stream(scfg_.seed, "noise-full", coil_);
        ComplexGrid sw, sm, sf;
        if (weight_) sw = init("weight");
        if (maskp_) sm = init("mask");
        if (full_) sf = init("full");

        const std::size_t levels = scfg_.schedule.size();
        for (std::size_t level = 0; level < levels; ++level) {
            ComplexGrid K;
            if (weight_ && maskp_) {
                sw = advance_level(std::move(sw), *weight_->score, scfg_, level, rng_w);
                const ComplexGrid kw = unweight_fill(sw, *wm_, k);
                if (cfg_.mode == CombineMode::Parallel) {
                    sm = advance_level(std::move(sm), *maskp_->score, scfg_, level, rng_m);
                    K = combine(kw, fill_center(apply_highpass(sm, *cm_), k, *cm_), cfg_, *cm_);
                } else {
                    sm = apply_highpass(cfg_.mu1 * kw, *cm_);
                    if (cfg_.serial_reading == SerialReading::SamplerConditioned)
                        sm = correct(std::move(sm), *maskp_->score, scfg_, level, rng_m);
                    K = combine(kw, sm, cfg_, *cm_);
                }
            } else if (weight_) {
                sw = advance_level(std::move(sw), *weight_->score, scfg_, level, rng_w);
                K = unweight_fill(sw, *wm_, k);
            } else if (maskp_) {
                sm = advance_level(std::move(sm), *maskp_->score, scfg_, level, rng_m);
                K = fill_center(apply_highpass(sm, *cm_), k, *cm_);
            } else {
                sf = advance_level(std::move(sf), *full_->score, scfg_, level, rng_f);
                K = sf;
            }

            if (cfg_.interleave || level + 1 == levels) {
                k = project(K);
                if (weight_) sw = apply_weight(k, *wm_);
                if (maskp_) sm = apply_highpass(k, *cm_);
                if (full_) sf = k;
            } else {
                k = std::move(K);
            }
            if (!all_finite(k))
                throw NumericalError("reconstruction state became non-finite at level " + std::to_string(level));
            if (observer) observer(level, coil_, scale_ * k);
        }
        return data_consistency(scale_ * k, f_, mask_, cfg_.dc_lambda);
    }

private:
    ComplexGrid project(const ComplexGrid& K) const {
        ComplexGrid k = data_consistency(K, fn_, mask_, cfg_.dc_lambda);
        if (cfg_.hankel) k = data_consistency(hankel_project(k, cfg_.hankel_window, cfg_.hankel_rank), fn_, mask_, cfg_.dc_lambda);
        return k;
    }

    const ComplexGrid& f_;
    const SamplingMask& mask_;
    std::optional<Prior> weight_, maskp_, full_;
    const ReconConfig& cfg_;
    const SamplerConfig& scfg_;
    std::size_t coil_;
    double scale_ = 1.0;
    ComplexGrid fn_;
    std::optional<WeightMatrix> wm_;
    std::optional<CenterMask> cm_;
};

inline ReconResult run_reconstruction(const Measurement& meas, std::optional<Prior> weight, std::optional<Prior> maskp,
                                      std::optional<Prior> full, const ReconConfig& cfg, const SamplerConfig& scfg,
                                      const LevelObserver& observer) {
    meas.validate();
    cfg.validate();
    scfg.validate();
    if (weight) {
        require(weight->score && weight->op.kind == OperatorKind::Weight, "weight branch needs a weight-operator prior");
        check_operator_pairing(*weight->score, weight->op);
    }
    if (maskp) {
        require(maskp->score && maskp->op.kind == OperatorKind::Mask, "mask branch needs a mask-operator prior");
        check_operator_pairing(*maskp->score, maskp->op);
    }
    if (full) {
        require(full->score && full->op.kind == OperatorKind::Identity, "full k-space branch needs an identity-operator prior");
        check_operator_pairing(*full->score, full->op);
    }
    const std::size_t lifted_rows = cfg.hankel_window.rows * cfg.hankel_window.cols;
    if (cfg.hankel) {
        check_window(meas.f[0], cfg.hankel_window);
        const std::size_t positions =
            (meas.f.rows() - cfg.hankel_window.rows + 1) * (meas.f.cols() - cfg.hankel_window.cols + 1);
        require(cfg.hankel_rank <= std::min(lifted_rows, positions), "Hankel rank exceeds the lifted matrix dimensions");
    }

    std::vector<ComplexGrid> out;
    for (std::size_t c = 0; c < meas.f.coils(); ++c) {
        CoilReconstructor rec(meas.f[c], meas.mask, weight, maskp, full, cfg, scfg, c);
        out.push_back(ifft2c(rec.run(observer)));
    }
    CoilStack images(std::move(out), Domain::Image);
    RealGrid sos = sos_combine(images);
    return {std::move(images), std::move(sos)};
}

} // namespace detail

/// Reconstruction driven by the weight and mask priors per `cfg.branches`.
inline ReconResult reconstruct(const Measurement& meas, const Prior& weight, const Prior& mask, const ReconConfig& cfg,
                               const SamplerConfig& scfg, const LevelObserver& observer = {}) {
    switch (cfg.branches) {
    case Branches::Both: return detail::run_reconstruction(meas, weight, mask, std::nullopt, cfg, scfg, observer);
    case Branches::WeightOnly: return detail::run_reconstruction(meas, weight, std::nullopt, std::nullopt, cfg, scfg, observer);
    case Branches::MaskOnly: return detail::run_reconstruction(meas, std::nullopt, mask, std::nullopt, cfg, scfg, observer);
    case Branches::FullKSpace: break;
    }
    throw UsageError("full k-space reconstruction needs reconstruct_full");
}

/// Single-branch reconstruction with a prior over unprocessed k-space.
inline ReconResult reconstruct_full(const Measurement& meas, const Prior& full, const ReconConfig& cfg,
                                    const SamplerConfig& scfg, const LevelObserver& observer = {}) {
    return detail::run_reconstruction(meas, std::nullopt, std::nullopt, full, cfg, scfg, observer);
}

} // namespace cmdm
