#include <gtest/gtest.h>

#include <limits>

#include "cmdm/sampler.hpp"
#include "support.hpp"

using namespace cmdm;
using cmdm::test::random_grid;

namespace {

class ZeroScore final : public ScoreModel {
public:
    ComplexGrid evaluate(const ComplexGrid& k, double) const override { return ComplexGrid(k.rows(), k.cols()); }
};

class NanScore final : public ScoreModel {
public:
    ComplexGrid evaluate(const ComplexGrid& k, double) const override {
        return ComplexGrid(k.rows(), k.cols(), cplx{std::numeric_limits<double>::quiet_NaN(), 0.0});
    }
};

} // namespace

TEST(LangevinStep, ZeroStepIsIdentity) {
    const GaussianScoreOracle oracle(random_grid(4, 4, 1), 0.1);
    const ComplexGrid k = random_grid(4, 4, 2);
    EXPECT_EQ(langevin_step(k, oracle, 0.5, 0.0, random_grid(4, 4, 3)), k);
}

TEST(LangevinStep, ZeroScoreZeroNoiseIsIdentity) {
    const ComplexGrid k = random_grid(4, 4, 2);
    EXPECT_EQ(langevin_step(k, ZeroScore{}, 0.5, 0.3, ComplexGrid(4, 4)), k);
}

TEST(LangevinStep, AffineInNoise) {
    const GaussianScoreOracle oracle(random_grid(5, 5, 1), 0.1);
    const ComplexGrid k = random_grid(5, 5, 2), za = random_grid(5, 5, 3), zb = random_grid(5, 5, 4);
    const double eps = 0.02, sigma = 0.3;
    const ComplexGrid lhs = langevin_step(k, oracle, sigma, eps, za + zb);
    const ComplexGrid rhs =
        langevin_step(k, oracle, sigma, eps, za) + langevin_step(k, oracle, sigma, eps, zb) - langevin_step(k, oracle, sigma, eps, ComplexGrid(5, 5));
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
    // and affine in the score output: the drift term is exactly eps / 2 * score
    const ComplexGrid d = langevin_step(k, oracle, sigma, eps, ComplexGrid(5, 5)) - k;
    const ComplexGrid s = oracle.evaluate(k, sigma);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(std::abs(d[i] - 0.5 * eps * s[i]), 0.0, 1e-15);
}

TEST(LangevinStep, NonFiniteScoreAborts) {
    EXPECT_THROW(langevin_step(ComplexGrid(2, 2), NanScore{}, 0.1, 0.1, ComplexGrid(2, 2)), NumericalError);
}

TEST(LangevinStep, StationaryVarianceOfDiscreteChain) {
    // x' = x + eps/2 (mu - x) / V + sqrt(eps) z is AR(1) with coefficient a = 1 - eps / (2V)
    // and per-component stationary variance V / (1 - eps / (4V)).
    const double v = 0.3, sigma = 0.2, eps = 0.05, V = v + sigma * sigma;
    const ComplexGrid mu(1, 2, cplx{0.5, -0.25});
    const GaussianScoreOracle oracle(mu, v);
    double acc = 0.0, count = 0.0;
    for (std::uint64_t chain = 0; chain < 16; ++chain) {
        Rng rng = make_stream(5, "stationary", chain);
        ComplexGrid x = mu;
        for (int t = 0; t < 10000; ++t) {
            x = langevin_step(x, oracle, sigma, eps, complex_normal(1, 2, rng));
            if (t < 500) continue;
            for (std::size_t i = 0; i < 2; ++i) acc += std::norm(x[i] - mu[i]);
            count += 4.0;
        }
    }
    const double expect = V / (1.0 - eps / (4.0 * V));
    EXPECT_NEAR(acc / count, expect, 0.05 * expect);
}

TEST(SamplerConfig, StepSizesPositiveAndNonincreasing) {
    SamplerConfig cfg;
    cfg.schedule = make_schedule(1.0, 0.01, 50);
    for (std::size_t i = 0; i < 50; ++i) {
        EXPECT_GT(cfg.step_size(i), 0.0);
        if (i > 0) EXPECT_LE(cfg.step_size(i), cfg.step_size(i - 1));
    }
    EXPECT_DOUBLE_EQ(cfg.step_size(0), 0.075);
    EXPECT_DOUBLE_EQ(cfg.step_size(49), 0.075 * 1e-4);
    cfg.base_step = 2.0;
    EXPECT_DOUBLE_EQ(cfg.step_size(49), 0.15);
}

TEST(Sample, SingleLevelWithoutCorrectorsReturnsInit) {
    SamplerConfig cfg;
    cfg.schedule = NoiseSchedule({0.5});
    cfg.corrector_steps = 0;
    const ComplexGrid init = random_grid(4, 4, 1);
    const GaussianScoreOracle oracle(ComplexGrid(4, 4), 0.1);
    EXPECT_EQ(sample(init, oracle, cfg, FreqOperator::identity()), init);
}

TEST(Sample, FixedSeedIsBitwiseReproducible) {
    SamplerConfig cfg;
    cfg.schedule = make_schedule(1.0, 0.01, 30);
    cfg.seed = 4;
    const GaussianScoreOracle oracle(random_grid(6, 6, 1), 0.05);
    const ComplexGrid init = random_grid(6, 6, 2);
    const auto a = sample(init, oracle, cfg, FreqOperator::identity(), 3);
    EXPECT_EQ(a, sample(init, oracle, cfg, FreqOperator::identity(), 3));
    EXPECT_NE(a, sample(init, oracle, cfg, FreqOperator::identity(), 4));
}

TEST(Sample, GaussianTargetMean) {
    const double v = 0.04;
    const ComplexGrid mu = random_grid(3, 3, 8);
    const GaussianScoreOracle oracle(mu, v);
    SamplerConfig cfg;
    cfg.schedule = make_schedule(1.0, 0.01, 100);
    cfg.seed = 12;
    const std::size_t R = 200;
    ComplexGrid sum(3, 3), sum2(3, 3);
    for (std::size_t r = 0; r < R; ++r) {
        Rng init_rng = make_stream(cfg.seed, "init", r);
        const ComplexGrid x = sample(complex_normal(3, 3, init_rng), oracle, cfg, FreqOperator::identity(), r);
        for (std::size_t i = 0; i < x.size(); ++i) {
            sum[i] += x[i];
            sum2[i] += cplx{x[i].real() * x[i].real(), x[i].imag() * x[i].imag()};
        }
    }
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const cplx m = sum[i] / double(R);
        const double vr = sum2[i].real() / double(R) - m.real() * m.real();
        const double vi = sum2[i].imag() / double(R) - m.imag() * m.imag();
        EXPECT_LE(std::abs(m.real() - mu[i].real()), 3.0 * std::sqrt(vr / double(R)));
        EXPECT_LE(std::abs(m.imag() - mu[i].imag()), 3.0 * std::sqrt(vi / double(R)));
        EXPECT_NEAR(vr, v + 1e-4, 0.5 * v);
    }
}

TEST(Sample, TrajectoryThinningAndNoiseRecord) {
    SamplerConfig cfg;
    cfg.schedule = make_schedule(1.0, 0.01, 120);
    cfg.corrector_steps = 2;
    cfg.thin = 50;
    const GaussianScoreOracle oracle(ComplexGrid(2, 2), 0.1);
    Trajectory traj;
    traj.record_noise = true;
    sample(ComplexGrid(2, 2), oracle, cfg, FreqOperator::identity(), 0, &traj);
    EXPECT_EQ(traj.states.size(), 4u);  // initial, 50, 100, 120
    EXPECT_EQ(traj.noise.size(), 120u * 2u + 119u);
    cfg.use_predictor = false;
    Trajectory t2;
    t2.record_noise = true;
    sample(ComplexGrid(2, 2), oracle, cfg, FreqOperator::identity(), 0, &t2);
    EXPECT_EQ(t2.noise.size(), 240u);
}

TEST(Sample, RejectsMismatchedOperatorTag) {
    const GaussianScoreOracle tagged(ComplexGrid(4, 4), 0.1, FreqOperator::make_mask(2));
    SamplerConfig cfg;
    cfg.schedule = make_schedule(1.0, 0.1, 3);
    EXPECT_THROW(sample(ComplexGrid(4, 4), tagged, cfg, FreqOperator::make_weight({})), UsageError);
    EXPECT_THROW(sample(ComplexGrid(4, 4), tagged, cfg, FreqOperator::make_mask(3)), UsageError);
    EXPECT_NO_THROW(sample(ComplexGrid(4, 4), tagged, cfg, FreqOperator::make_mask(2)));
}

TEST(Sample, FinalDenoiseAddsTweedieStep) {
    const ComplexGrid mu = random_grid(3, 3, 1);
    const GaussianScoreOracle oracle(mu, 0.04);
    SamplerConfig cfg;
    cfg.schedule = make_schedule(1.0, 0.01, 20);
    cfg.seed = 2;
    const ComplexGrid plain = sample(random_grid(3, 3, 2), oracle, cfg, FreqOperator::identity());
    cfg.final_denoise = true;
    const ComplexGrid den = sample(random_grid(3, 3, 2), oracle, cfg, FreqOperator::identity());
    const ComplexGrid s = oracle.evaluate(plain, 0.01);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(std::abs(den[i] - (plain[i] + 1e-4 * s[i])), 0.0, 1e-14);
}

TEST(Equivalence, ChainsAgreeToRoundingOver100Steps) {
    const GaussianScoreOracle img(random_grid(8, 8, 3), 0.2);
    EquivalenceConfig cfg;
    cfg.steps = 100;
    EXPECT_LT(verify_orthogonal_equivalence(img, cfg), 1e-10);
}

TEST(Equivalence, ZeroStepsGiveZeroDeviation) {
    const GaussianScoreOracle img(random_grid(8, 8, 3), 0.2);
    EquivalenceConfig cfg;
    cfg.steps = 0;
    EXPECT_EQ(verify_orthogonal_equivalence(img, cfg), 0.0);
}

TEST(Equivalence, IndependentOfMeanTranslation) {
    const ComplexGrid mu = random_grid(8, 8, 3);
    EquivalenceConfig cfg;
    const double a = verify_orthogonal_equivalence(GaussianScoreOracle(mu, 0.2), cfg);
    const double b = verify_orthogonal_equivalence(GaussianScoreOracle(mu + ComplexGrid(8, 8, cplx{3.0, -2.0}), 0.2), cfg);
    EXPECT_LT(a, 1e-10);
    EXPECT_LT(b, 1e-10);
}

TEST(Equivalence, DeviationGrowsAtMostLinearly) {
    const GaussianScoreOracle img(random_grid(8, 8, 4), 0.2);
    EquivalenceConfig cfg;
    cfg.steps = 50;
    const double d50 = verify_orthogonal_equivalence(img, cfg);
    cfg.steps = 400;
    const double d400 = verify_orthogonal_equivalence(img, cfg);
    EXPECT_LE(d400, 8.0 * std::max(d50, 1e-15) + 1e-13);
}

TEST(Deviation, EmptyBatchIsAnError) {
    const GaussianScoreOracle o(ComplexGrid(2, 2), 0.1);
    EXPECT_THROW(deviation_decomposition({}, ComplexGrid(2, 2), o, 0.1, 0.01), UsageError);
}

// Per draw the expansion leaves 2 sqrt(eps) Re<drift, z>, which has zero mean.
TEST(Deviation, IdentityHoldsDrawByDrawUpToDriftCrossTerm) {
    const ComplexGrid mean = random_grid(4, 4, 1);
    const ComplexGrid state = random_grid(4, 4, 2);
    const GaussianScoreOracle o(mean, 0.04);
    const double sigma = 0.1, eps = 0.02;
    const ComplexGrid s = o.evaluate(state, sigma);
    const auto draws = make_correlated_draws(mean, 0.04, 0.4, 50, 3);
    for (const auto& d : draws) {
        const auto t = deviation_decomposition(std::span(&d, 1), state, o, sigma, eps);
        double cross = 0;
        for (std::size_t i = 0; i < state.size(); ++i) {
            const cplx drift = state[i] + 0.5 * eps * s[i];
            cross += drift.real() * d.noise[i].real() + drift.imag() * d.noise[i].imag();
        }
        EXPECT_NEAR(t.lhs - t.rhs(), 2.0 * std::sqrt(eps) * cross, 1e-12 * t.lhs);
    }
}

TEST(Deviation, StudyOrderingOverAlpha) {
    Theorem1Config cfg;
    cfg.draws = 20000;
    const auto rows = run_theorem1_study(cfg);
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) EXPECT_LT(std::abs(r.terms.lhs - r.terms.rhs()) / r.terms.lhs, 0.01);
    EXPECT_LE(std::abs(rows[0].terms.corr_term), 3.0 * rows[0].terms.corr_se);
    EXPECT_GT(rows[1].terms.corr_term, 0.0);
    EXPECT_GT(rows[0].terms.lhs, rows[1].terms.lhs);
    EXPECT_GT(rows[1].terms.lhs, rows[2].terms.lhs);
    EXPECT_NEAR(rows[0].terms.noise_term, rows[2].terms.noise_term, 0.05 * rows[0].terms.noise_term);
}

TEST(Deviation, CorrelatedDrawsHaveUnitNoisePower) {
    const ComplexGrid mean(3, 3);
    const auto d = make_correlated_draws(mean, 0.5, 0.6, 5000, 1);
    double zz = 0.0, dot = 0.0;
    for (const auto& x : d) {
        zz += energy(x.noise);
        dot += real_dot(x.target, x.noise);
    }
    EXPECT_NEAR(zz / 5000.0, 18.0, 0.5);
    EXPECT_NEAR(dot / 5000.0, 0.6 * std::sqrt(0.5) * 18.0, 0.4);
    EXPECT_THROW(make_correlated_draws(mean, 0.5, 1.5, 1, 1), UsageError);
}
