#pragma once

// Annealed Langevin predictor-corrector sampling in k-space, plus two
// diagnostics: the image/k-space chain equivalence under a unitary transform
// and the Monte-Carlo decomposition of the one-step deviation from a target.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmdm/error.hpp"
#include "cmdm/freq_ops.hpp"
#include "cmdm/grid.hpp"
#include "cmdm/kspace.hpp"
#include "cmdm/random.hpp"
#include "cmdm/score.hpp"

namespace cmdm {

struct SamplerConfig {
    NoiseSchedule schedule = make_schedule(1.0, 0.01, 1000);
    double step_ratio = 0.075;
    /// Multiplies step_ratio * (sigma_i / sigma_N)^2. Unset means sigma_N^2,
    /// i.e. eps_i = step_ratio * sigma_i^2.
    std::optional<double> base_step;
    std::size_t corrector_steps = 1;
    std::uint64_t seed = 0;
    bool use_predictor = true;   ///< false: pure annealed Langevin
    bool final_denoise = false;  ///< add sigma_N^2 * score after the last level
    std::size_t thin = 50;       ///< keep every thin-th level state in a Trajectory

    double step_size(std::size_t level) const {
        const double sn = schedule.sigma_min();
        const double base = base_step.value_or(sn * sn);
        const double ratio = schedule[level] / sn;
        return step_ratio * ratio * ratio * base;
    }

    void validate() const {
        require(step_ratio > 0.0, "step_ratio must be positive");
        require(!base_step || *base_step > 0.0, "base_step must be positive");
        require(thin > 0, "trajectory thinning must be positive");
    }
};

struct Trajectory {
    std::vector<ComplexGrid> states;  ///< initial state, then every thin-th level
    std::vector<ComplexGrid> noise;   ///< every noise draw, when recorded
    bool record_noise = false;
};

namespace detail {
inline void require_finite_score(const ComplexGrid& s, double sigma) {
    if (!all_finite(s)) throw NumericalError("score model returned non-finite values at sigma=" + std::to_string(sigma));
}
} // namespace detail

/// k + (eps / 2) * score(k, sigma) + sqrt(eps) * z
inline ComplexGrid langevin_step(const ComplexGrid& k, const ScoreModel& score, double sigma, double eps,
                                 const ComplexGrid& z) {
    require_same_shape(k, z, "langevin_step");
    require(eps >= 0.0, "step size must be nonnegative");
    if (eps == 0.0) return k;
    const ComplexGrid s = score.evaluate(k, sigma);
    detail::require_finite_score(s, sigma);
    const double a = 0.5 * eps, b = std::sqrt(eps);
    ComplexGrid out = k;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * s[i] + b * z[i];
    return out;
}

/// Variance-exploding reverse-diffusion step from sigma_from down to sigma_to.
inline ComplexGrid predictor_step(const ComplexGrid& k, const ScoreModel& score, double sigma_from, double sigma_to,
                                  const ComplexGrid& z) {
    require(sigma_from > sigma_to, "predictor must move to a smaller sigma");
    const double dv = sigma_from * sigma_from - sigma_to * sigma_to;
    const ComplexGrid s = score.evaluate(k, sigma_from);
    detail::require_finite_score(s, sigma_from);
    const double b = std::sqrt(dv);
    ComplexGrid out = k;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += dv * s[i] + b * z[i];
    return out;
}

/// M Langevin corrector steps at one level.
inline ComplexGrid correct(ComplexGrid k, const ScoreModel& score, const SamplerConfig& cfg, std::size_t level,
                           Rng& rng, Trajectory* traj = nullptr) {
    const double sigma = cfg.schedule[level], eps = cfg.step_size(level);
    for (std::size_t m = 0; m < cfg.corrector_steps; ++m) {
        ComplexGrid z = complex_normal(k.rows(), k.cols(), rng);
        k = langevin_step(k, score, sigma, eps, z);
        if (traj && traj->record_noise) traj->noise.push_back(std::move(z));
    }
    return k;
}

/// One predictor-corrector cycle: predictor into `level` (skipped for the first
/// level, where the state is already at sigma_max), then the correctors.
inline ComplexGrid advance_level(ComplexGrid k, const ScoreModel& score, const SamplerConfig& cfg, std::size_t level,
                                 Rng& rng, Trajectory* traj = nullptr) {
    if (level > 0 && cfg.use_predictor) {
        ComplexGrid z = complex_normal(k.rows(), k.cols(), rng);
        k = predictor_step(k, score, cfg.schedule[level - 1], cfg.schedule[level], z);
        if (traj && traj->record_noise) traj->noise.push_back(std::move(z));
    }
    k = correct(std::move(k), score, cfg, level, rng, traj);
    if (cfg.final_denoise && level + 1 == cfg.schedule.size()) {
        const double sn = cfg.schedule.sigma_min();
        const ComplexGrid s = score.evaluate(k, sn);
        detail::require_finite_score(s, sn);
        for (std::size_t i = 0; i < k.size(); ++i) k[i] += sn * sn * s[i];
    }
    return k;
}

inline void check_operator_pairing(const ScoreModel& score, const FreqOperator& op) {
    const auto tag = score.operator_tag();
    if (tag && !(*tag == op))
        throw UsageError(std::string("score model trained under operator '") + to_string(tag->kind) +
                         "' cannot drive the '" + to_string(op.kind) + "' branch");
}

/// Anneals sigma from sigma_1 to sigma_N starting from `init` in the operator
/// domain and returns the final operator-domain grid. `chain` selects an
/// independent noise stream for Monte-Carlo replicas.
inline ComplexGrid sample(const ComplexGrid& init, const ScoreModel& score, const SamplerConfig& cfg,
                          const FreqOperator& op, std::uint64_t chain = 0, Trajectory* traj = nullptr) {
    cfg.validate();
    check_operator_pairing(score, op);
    Rng rng = make_stream(cfg.seed, "noise", chain);
    ComplexGrid k = init;
    if (traj) traj->states.push_back(k);
    for (std::size_t level = 0; level < cfg.schedule.size(); ++level) {
        k = advance_level(std::move(k), score, cfg, level, rng, traj);
        if (!all_finite(k)) throw NumericalError("sampler state became non-finite at level " + std::to_string(level));
        if (traj && ((level + 1) % cfg.thin == 0 || level + 1 == cfg.schedule.size())) traj->states.push_back(k);
    }
    return k;
}

// ---------------------------------------------------------------------------

struct EquivalenceConfig {
    std::size_t steps = 100;
    double sigma = 0.5;
    double eps = 0.01;
    std::uint64_t seed = 0;
};

/// Runs the image-domain chain x <- x + eps/2 grad log p_x(x) + sqrt(eps) z and
/// the k-space chain k <- k + eps/2 grad log p_k(k) + sqrt(eps) F[z] on shared
/// noise, where p_k is the law of F x. Returns max_t ||F x^t - k^t||_inf.
inline double verify_orthogonal_equivalence(const GaussianScoreOracle& image_score, const EquivalenceConfig& cfg) {
    const ComplexGrid& mu = image_score.mean();
    const GaussianScoreOracle kspace_score(fft2c(mu), image_score.variance());
    Rng rng = make_stream(cfg.seed, "equivalence");
    ComplexGrid x = complex_normal(mu.rows(), mu.cols(), rng);
    ComplexGrid k = fft2c(x);
    double dev = max_abs_diff(fft2c(x), k);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        const ComplexGrid z = complex_normal(mu.rows(), mu.cols(), rng);
        x = langevin_step(x, image_score, cfg.sigma, cfg.eps, z);
        k = langevin_step(k, kspace_score, cfg.sigma, cfg.eps, fft2c(z));
        dev = std::max(dev, max_abs_diff(fft2c(x), k));
    }
    return dev;
}

// ---------------------------------------------------------------------------

/// One Monte-Carlo draw of (target K*, noise z).
struct DeviationDraw {
    ComplexGrid target;
    ComplexGrid noise;
};

/// Terms of E||K* - K'||^2 = C1 + eps E||z||^2 - 2 sqrt(eps) E[K* . z] with
/// K' = K + eps/2 s(K) + sqrt(eps) z, each estimated from the same draws.
struct DeviationTerms {
    double lhs = 0.0;
    double c1 = 0.0;
    double noise_term = 0.0;
    double corr_term = 0.0;   ///< 2 sqrt(eps) E[K* . z]
    double corr_se = 0.0;     ///< standard error of corr_term
    double lhs_se = 0.0;
    std::size_t draws = 0;

    double rhs() const { return c1 + noise_term - corr_term; }
};

inline DeviationTerms deviation_decomposition(std::span<const DeviationDraw> draws, const ComplexGrid& state,
                                              const ScoreModel& score, double sigma, double eps) {
    if (draws.empty()) throw UsageError("deviation_decomposition needs at least one noise draw");
    require(eps > 0.0, "step size must be positive");
    const ComplexGrid s = score.evaluate(state, sigma);
    detail::require_finite_score(s, sigma);
    ComplexGrid drift = state;  // K + eps/2 s(K)
    for (std::size_t i = 0; i < drift.size(); ++i) drift[i] += 0.5 * eps * s[i];

    const double n = double(draws.size()), root = std::sqrt(eps);
    double lhs = 0, lhs2 = 0, c1 = 0, zz = 0, corr = 0, corr2 = 0;
    for (const auto& d : draws) {
        require_same_shape(d.target, state, "deviation_decomposition");
        require_same_shape(d.noise, state, "deviation_decomposition");
        double dev = 0, base = 0, znorm = 0, dot = 0;
        for (std::size_t i = 0; i < state.size(); ++i) {
            const cplx a = d.target[i] - drift[i];
            dev += std::norm(a - root * d.noise[i]);
            base += std::norm(a);
            znorm += std::norm(d.noise[i]);
            dot += d.target[i].real() * d.noise[i].real() + d.target[i].imag() * d.noise[i].imag();
        }
        lhs += dev;
        lhs2 += dev * dev;
        c1 += base;
        zz += znorm;
        const double ct = 2.0 * root * dot;
        corr += ct;
        corr2 += ct * ct;
    }
    DeviationTerms t;
    t.draws = draws.size();
    t.lhs = lhs / n;
    t.c1 = c1 / n;
    t.noise_term = eps * zz / n;
    t.corr_term = corr / n;
    const double var_corr = std::max(0.0, corr2 / n - t.corr_term * t.corr_term);
    const double var_lhs = std::max(0.0, lhs2 / n - t.lhs * t.lhs);
    t.corr_se = std::sqrt(var_corr / n);
    t.lhs_se = std::sqrt(var_lhs / n);
    return t;
}

/// Draws K* ~ N(mean, variance I) and z = alpha * (K* - mean) / sqrt(variance)
/// + sqrt(1 - alpha^2) * xi. Each z is standard normal (E||z||^2 fixed) and
/// E[K* . z] = alpha * sqrt(variance) * dim, so alpha controls only the
/// correlation between the noise and the target.
inline std::vector<DeviationDraw> make_correlated_draws(const ComplexGrid& mean, double variance, double alpha,
                                                        std::size_t count, std::uint64_t seed) {
    require(variance > 0.0, "target variance must be positive");
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    Rng rng = make_stream(seed, "deviation");
    const double sv = std::sqrt(variance), rest = std::sqrt(1.0 - alpha * alpha);
    std::vector<DeviationDraw> draws;
    draws.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        const ComplexGrid xi1 = complex_normal(mean.rows(), mean.cols(), rng);
        const ComplexGrid xi2 = complex_normal(mean.rows(), mean.cols(), rng);
        DeviationDraw d{mean, ComplexGrid(mean.rows(), mean.cols())};
        for (std::size_t i = 0; i < mean.size(); ++i) {
            d.target[i] += sv * xi1[i];
            d.noise[i] = alpha * xi1[i] + rest * xi2[i];
        }
        draws.push_back(std::move(d));
    }
    return draws;
}

struct Theorem1Row {
    double alpha;
    DeviationTerms terms;
};

struct Theorem1Config {
    std::size_t rows = 4, cols = 4;
    double target_variance = 0.04;
    double sigma = 0.1;
    double eps = 0.01;
    std::size_t draws = 100000;
    std::uint64_t seed = 0;
    std::vector<double> alphas{0.0, 0.3, 0.6};
};

/// Deviation study over noise/target correlation levels. The target mean and
/// the current state are fixed grids drawn from the seed; the score is the
/// exact score of the target law.
inline std::vector<Theorem1Row> run_theorem1_study(const Theorem1Config& cfg) {
    Rng rng = make_stream(cfg.seed, "theorem1-setup");
    const ComplexGrid mean = complex_normal(cfg.rows, cfg.cols, rng);
    ComplexGrid state = complex_normal(cfg.rows, cfg.cols, rng);
    state = mean + 0.5 * state;
    const GaussianScoreOracle oracle(mean, cfg.target_variance);
    std::vector<Theorem1Row> rows;
    for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
        const auto draws = make_correlated_draws(mean, cfg.target_variance, cfg.alphas[a], cfg.draws, cfg.seed + a);
        rows.push_back({cfg.alphas[a], deviation_decomposition(draws, state, oracle, cfg.sigma, cfg.eps)});
    }
    return rows;
}

} // namespace cmdm
