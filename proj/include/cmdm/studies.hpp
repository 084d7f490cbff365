#pragma once

// Convergence and correlation studies shared by the CLI and the acceptance
// checks.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cmdm/freq_ops.hpp"
#include "cmdm/metrics.hpp"
#include "cmdm/recon.hpp"

namespace cmdm {

struct ConvergenceCurve {
    std::string chain;
    std::vector<double> psnr;  ///< per level
    std::vector<double> ssim;
};

/// First iteration (1-based) whose PSNR reaches `fraction` of the final value.
inline std::size_t iterations_to_fraction(const std::vector<double>& psnr, double fraction = 0.95) {
    require(!psnr.empty(), "empty PSNR curve");
    const double target = fraction * psnr.back();
    for (std::size_t i = 0; i < psnr.size(); ++i)
        if (psnr[i] >= target) return i + 1;
    return psnr.size();
}

/// Trailing moving average; the first window-1 entries average what is available.
inline std::vector<double> moving_average(const std::vector<double>& x, std::size_t window) {
    require(window > 0, "smoothing window must be positive");
    std::vector<double> out(x.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc += x[i];
        if (i >= window) acc -= x[i - window];
        out[i] = acc / double(std::min(i + 1, window));
    }
    return out;
}

/// Nondecreasing check on the fully-populated part of a smoothed curve.
inline bool nondecreasing_after_smoothing(const std::vector<double>& x, std::size_t window) {
    const auto s = moving_average(x, window);
    for (std::size_t i = window; i < s.size(); ++i)
        if (s[i] < s[i - 1]) return false;
    return true;
}

/// Runs one chain and records PSNR and SSIM of the SOS image after each level.
inline ConvergenceCurve trace_convergence(const std::string& name, const RealGrid& reference,
                                          const std::function<ReconResult(const LevelObserver&)>& run,
                                          std::size_t coils, std::size_t levels) {
    std::vector<std::vector<ComplexGrid>> states(levels, std::vector<ComplexGrid>(coils));
    run([&](std::size_t level, std::size_t coil, const ComplexGrid& k) { states[level][coil] = ifft2c(k); });
    ConvergenceCurve c{name, {}, {}};
    for (auto& lv : states) {
        const RealGrid sos = sos_combine(CoilStack(std::move(lv), Domain::Image));
        c.psnr.push_back(psnr(reference, sos));
        c.ssim.push_back(ssim(reference, sos));
    }
    return c;
}

/// Full k-space, weight-only, mask-only and combined chains on one measurement.
inline std::vector<ConvergenceCurve> convergence_study(const Measurement& meas, const RealGrid& reference,
                                                       const Prior& weight, const Prior& mask, const Prior& full,
                                                       const ReconConfig& cfg, const SamplerConfig& scfg) {
    const std::size_t coils = meas.f.coils(), levels = scfg.schedule.size();
    std::vector<ConvergenceCurve> out;
    out.push_back(trace_convergence(
        "full", reference, [&](const LevelObserver& o) { return reconstruct_full(meas, full, cfg, scfg, o); }, coils, levels));
    for (auto b : {Branches::WeightOnly, Branches::MaskOnly, Branches::Both}) {
        ReconConfig c = cfg;
        c.branches = b;
        out.push_back(trace_convergence(
            to_string(b), reference, [&](const LevelObserver& o) { return reconstruct(meas, weight, mask, c, scfg, o); },
            coils, levels));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct CorrelationRow {
    std::size_t image = 0;
    std::size_t window = 0;     ///< at 256 scale
    std::size_t window_px = 0;  ///< on the data grid
    double rho = 0.0;
};

struct CorrelationSummary {
    std::vector<CorrelationRow> rows;
    std::map<std::size_t, double> mean;  ///< by window at 256 scale
    std::size_t maximizer = 0;
};

/// Correlation between the weight-operator feature map and the mask-operator
/// feature map of every window, per image (k-space of the coil-0 image).
inline CorrelationSummary correlation_study(const std::vector<ComplexGrid>& kspaces, const std::vector<std::size_t>& windows,
                                            const WeightParams& weight = {}) {
    require(!kspaces.empty() && !windows.empty(), "correlation study needs data and windows");
    CorrelationSummary s;
    for (std::size_t i = 0; i < kspaces.size(); ++i) {
        const auto& k = kspaces[i];
        const RealGrid wmap = feature_map(k, FreqOperator::make_weight(weight));
        for (std::size_t w : windows) {
            const std::size_t px = scaled_window(w, k.rows());
            const double rho = correlation(wmap, feature_map(k, FreqOperator::make_mask(px)));
            s.rows.push_back({i, w, px, rho});
            s.mean[w] += rho / double(kspaces.size());
        }
    }
    s.maximizer = std::max_element(s.mean.begin(), s.mean.end(), [](const auto& a, const auto& b) {
                      return a.second < b.second;
                  })->first;
    return s;
}

} // namespace cmdm
