#pragma once

// Noise schedule, the score-model interface used by the samplers, an exact
// Gaussian score, and a small trainable noise-conditional denoiser.
//
// Complex grids are treated as two real channels (re, im). A score is the
// gradient of log p with respect to those real coordinates, packed back into a
// complex grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmdm/conv_net.hpp"
#include "cmdm/error.hpp"
#include "cmdm/freq_ops.hpp"
#include "cmdm/grid.hpp"
#include "cmdm/kspace.hpp"
#include "cmdm/random.hpp"

namespace cmdm {

/// Geometric sigma ladder, sigma_max first.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    explicit NoiseSchedule(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
        require(!sigmas_.empty(), "noise schedule needs at least one level");
        for (std::size_t i = 0; i < sigmas_.size(); ++i) {
            require(sigmas_[i] > 0.0 && std::isfinite(sigmas_[i]), "noise levels must be positive");
            if (i > 0) require(sigmas_[i] < sigmas_[i - 1], "noise levels must be strictly decreasing");
        }
    }

    std::size_t size() const noexcept { return sigmas_.size(); }
    double operator[](std::size_t i) const { return sigmas_.at(i); }
    double sigma_max() const { return sigmas_.front(); }
    double sigma_min() const { return sigmas_.back(); }
    const std::vector<double>& sigmas() const noexcept { return sigmas_; }

    /// Index of the level closest to `sigma` in log space.
    std::size_t nearest(double sigma) const {
        std::size_t best = 0;
        double best_d = std::abs(std::log(sigma / sigmas_[0]));
        for (std::size_t i = 1; i < sigmas_.size(); ++i) {
            const double d = std::abs(std::log(sigma / sigmas_[i]));
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }

private:
    std::vector<double> sigmas_;
};

inline NoiseSchedule make_schedule(double sigma_max, double sigma_min, std::size_t levels) {
    require(sigma_min > 0.0 && sigma_max > sigma_min, "schedule needs sigma_max > sigma_min > 0");
    require(levels >= 2, "schedule needs at least two levels");
    std::vector<double> s(levels);
    const double ratio = sigma_min / sigma_max;
    for (std::size_t i = 0; i < levels; ++i) s[i] = sigma_max * std::pow(ratio, double(i) / double(levels - 1));
    s.front() = sigma_max;
    s.back() = sigma_min;
    return NoiseSchedule(std::move(s));
}

// ---------------------------------------------------------------------------

class ScoreModel {
public:
    virtual ~ScoreModel() = default;
    /// Approximates grad log p_sigma at k. Output has the shape of k.
    virtual ComplexGrid evaluate(const ComplexGrid& k, double sigma) const = 0;
    /// Extractor the model was trained under, when known.
    virtual std::optional<FreqOperator> operator_tag() const { return std::nullopt; }
};

/// Score of N(mean, (variance + sigma^2) I) in real coordinates.
class GaussianScoreOracle final : public ScoreModel {
public:
    GaussianScoreOracle(ComplexGrid mean, double variance, std::optional<FreqOperator> tag = std::nullopt)
        : mean_(std::move(mean)), variance_(variance), tag_(std::move(tag)) {
        require(variance > 0.0, "oracle variance must be positive");
    }

    ComplexGrid evaluate(const ComplexGrid& k, double sigma) const override {
        require_same_shape(k, mean_, "GaussianScoreOracle");
        const double inv = 1.0 / (variance_ + sigma * sigma);
        ComplexGrid out(k.rows(), k.cols());
        for (std::size_t i = 0; i < k.size(); ++i) out[i] = (mean_[i] - k[i]) * inv;
        return out;
    }

    std::optional<FreqOperator> operator_tag() const override { return tag_; }

    /// log density including the normalising constant (2 * size real dims).
    double log_density(const ComplexGrid& k, double sigma) const {
        const double var = variance_ + sigma * sigma;
        const double d = 2.0 * double(k.size());
        double q = 0.0;
        for (std::size_t i = 0; i < k.size(); ++i) q += std::norm(k[i] - mean_[i]);
        return -0.5 * q / var - 0.5 * d * std::log(2.0 * M_PI * var);
    }

    const ComplexGrid& mean() const noexcept { return mean_; }
    double variance() const noexcept { return variance_; }

private:
    ComplexGrid mean_;
    double variance_;
    std::optional<FreqOperator> tag_;
};

// ---------------------------------------------------------------------------

/// Shape and noise conditioning of TrainableScore.
struct ScoreArchitecture {
    std::size_t rows = 64;
    std::size_t cols = 64;
    std::vector<double> level_sigmas;  ///< per-level gains and modulation, nearest-level lookup
    std::size_t channels = 12;         ///< hidden width of the image-domain network
    std::size_t depth = 5;             ///< number of convolution layers
    std::size_t kernel = 3;
    double data_sigma = 0.5;  ///< typical per-component magnitude of clean grids

    std::size_t levels() const { return level_sigmas.size(); }
    std::size_t pixels() const { return rows * cols; }
    std::size_t gain_count() const { return levels() * 2 * pixels(); }
    /// gamma and beta for every hidden channel of every hidden layer, per level
    std::size_t modulation_per_level() const { return (depth - 1) * 2 * channels; }
    std::size_t modulation_count() const { return levels() * modulation_per_level(); }
    std::vector<std::size_t> widths() const {
        std::vector<std::size_t> w{3};
        for (std::size_t l = 0; l + 1 < depth; ++l) w.push_back(channels);
        w.push_back(2);
        return w;
    }
    /// 1, 2, 4, ... up to the middle layer and back down to 1.
    std::vector<std::size_t> dilations() const {
        std::vector<std::size_t> d;
        for (std::size_t l = 0; l < depth; ++l) d.push_back(std::size_t{1} << std::min(l, depth - 1 - l));
        return d;
    }
    std::size_t net_count() const { return ConvNet(rows, cols, widths(), kernel, dilations()).param_count(); }
    std::size_t param_count() const { return gain_count() + modulation_count() + net_count(); }

    bool operator==(const ScoreArchitecture&) const = default;
};

/// Noise-conditional denoiser in an operator domain: a per-level gain on each
/// real channel of every frequency plus a convolutional network acting on the
/// grid's image-domain view,
///
///     D(y, sigma) = g_j .* y + c_out * fft2c(N_j(c_in * [Re x, Im x], log(sigma) / 4))
///     x = ifft2c(y),    score(y, sigma) = (D(y, sigma) - y) / sigma^2
///
/// where j is the level nearest sigma, N_j shares its convolutions across
/// levels and scales/shifts its hidden channels per level, c_in = 1 /
/// sqrt(sigma^2 + s^2) and c_out = sigma * s * c_in for the data scale s.
/// Initial parameters (g = 1, zero output layer) give the zero score.
class TrainableScore final : public ScoreModel {
public:
    TrainableScore(ScoreArchitecture arch, FreqOperator tag, std::uint64_t seed = 0)
        : arch_(std::move(arch)), tag_(tag), seed_(seed) {
        require(arch_.rows > 0 && arch_.cols > 0, "model grid must be nonempty");
        require(arch_.depth >= 1 && arch_.channels >= 1, "network needs at least one layer");
        require(arch_.data_sigma > 0.0, "data scale must be positive");
        require(!arch_.level_sigmas.empty(), "model needs at least one noise level");
        require(arch_.kernel % 2 == 1 && arch_.kernel <= std::min(arch_.rows, arch_.cols), "kernel must be odd and fit the grid");
        levels_ = NoiseSchedule(arch_.level_sigmas);
        net_ = ConvNet(arch_.rows, arch_.cols, arch_.widths(), arch_.kernel, arch_.dilations());
        params_.assign(arch_.param_count(), 0.0);
        std::fill(params_.begin(), params_.begin() + std::ptrdiff_t(arch_.gain_count()), 1.0);
        const std::size_t C = arch_.channels;
        for (std::size_t j = 0; j < arch_.levels(); ++j)
            for (std::size_t l = 0; l + 1 < arch_.depth; ++l) {
                double* gamma = params_.data() + modulation_offset(j, l);
                std::fill(gamma, gamma + C, 1.0);
            }
        Rng rng = make_stream(seed_, "model-init");
        net_.initialize(net_params(), rng);
    }

    const ScoreArchitecture& architecture() const noexcept { return arch_; }
    std::optional<FreqOperator> operator_tag() const override { return tag_; }
    const FreqOperator& op() const noexcept { return tag_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::vector<double>& parameters() noexcept { return params_; }
    const std::vector<double>& parameters() const noexcept { return params_; }
    std::size_t level_for(double sigma) const { return levels_.nearest(sigma); }

    ComplexGrid evaluate(const ComplexGrid& k, double sigma) const override {
        require(sigma > 0.0, "sigma must be positive");
        ComplexGrid out = denoise(k, sigma);
        const double inv = 1.0 / (sigma * sigma);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - k[i]) * inv;
        return out;
    }

    ComplexGrid denoise(const ComplexGrid& y, double sigma) const { return run(y, sigma, nullptr); }

    /// Per-dimension DSM loss ||(D(x + sigma z) - x) / sigma||^2 / d and its
    /// gradient, accumulated into `grad` (full parameter layout).
    double accumulate_gradient(const ComplexGrid& clean, const ComplexGrid& z, double sigma, std::vector<double>& grad) const {
        require(grad.size() == params_.size(), "gradient buffer has the wrong size");
        const std::size_t P = arch_.pixels();
        ComplexGrid noisy = clean;
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += sigma * z[i];
        Pass pass;
        const ComplexGrid d = run(noisy, sigma, &pass);
        const double dim = 2.0 * double(P);
        double loss = 0.0;
        ComplexGrid dl(arch_.rows, arch_.cols);  // d loss / d D
        for (std::size_t i = 0; i < P; ++i) {
            const cplx r = (d[i] - clean[i]) / sigma;
            loss += std::norm(r);
            dl[i] = r * (2.0 / (sigma * dim));
        }
        const std::size_t base = pass.level * 2 * P;
        for (std::size_t i = 0; i < P; ++i) {
            grad[base + i] += dl[i].real() * noisy[i].real();
            grad[base + P + i] += dl[i].imag() * noisy[i].imag();
        }
        // fft2c is unitary, so its adjoint is ifft2c.
        const ComplexGrid back = ifft2c(dl);
        ConvNet::Planes d_out(2, Eigen::Index(P));
        for (std::size_t i = 0; i < P; ++i) {
            d_out(0, Eigen::Index(i)) = float(pass.c_out * back[i].real());
            d_out(1, Eigen::Index(i)) = float(pass.c_out * back[i].imag());
        }
        ConvNet::ModulationGrad mg;
        for (std::size_t l = 0; l + 1 < arch_.depth; ++l) {
            mg.gamma.push_back(grad.data() + modulation_offset(pass.level, l));
            mg.beta.push_back(grad.data() + modulation_offset(pass.level, l) + arch_.channels);
        }
        const auto mod = modulation(pass.level);
        net_.backward(net_params(), pass.cache, d_out, std::span<double>(grad).subspan(net_offset()), &mod, &mg);
        return loss / dim;
    }

    double data_scale = 1.0;  ///< normalisation applied to training images (image-domain max -> 1)

private:
    struct Pass {
        std::size_t level = 0;
        double c_out = 0.0;
        ConvNet::Cache cache;
    };

    std::size_t modulation_offset(std::size_t level, std::size_t layer) const {
        return arch_.gain_count() + level * arch_.modulation_per_level() + layer * 2 * arch_.channels;
    }
    std::size_t net_offset() const { return arch_.gain_count() + arch_.modulation_count(); }

    ConvNet::Modulation modulation(std::size_t level) const {
        ConvNet::Modulation m;
        for (std::size_t l = 0; l + 1 < arch_.depth; ++l) {
            m.gamma.push_back(params_.data() + modulation_offset(level, l));
            m.beta.push_back(params_.data() + modulation_offset(level, l) + arch_.channels);
        }
        return m;
    }

    ComplexGrid run(const ComplexGrid& y, double sigma, Pass* pass) const {
        require(y.rows() == arch_.rows && y.cols() == arch_.cols, "TrainableScore: input shape differs from architecture");
        const std::size_t P = arch_.pixels(), j = level_for(sigma);
        const double* g = params_.data() + j * 2 * P;
        const ComplexGrid x = ifft2c(y);
        const double c_in = 1.0 / std::sqrt(sigma * sigma + arch_.data_sigma * arch_.data_sigma);
        const double c_out = sigma * arch_.data_sigma * c_in, c_noise = 0.25 * std::log(sigma);
        ConvNet::Planes in(3, Eigen::Index(P));
        for (std::size_t i = 0; i < P; ++i) {
            in(0, Eigen::Index(i)) = float(c_in * x[i].real());
            in(1, Eigen::Index(i)) = float(c_in * x[i].imag());
            in(2, Eigen::Index(i)) = float(c_noise);
        }
        const auto mod = modulation(j);
        const ConvNet::Planes out = net_.forward(net_params(), in, &mod, pass ? &pass->cache : nullptr);
        ComplexGrid r(arch_.rows, arch_.cols);
        for (std::size_t i = 0; i < P; ++i) r[i] = c_out * cplx{double(out(0, Eigen::Index(i))), double(out(1, Eigen::Index(i)))};
        ComplexGrid d = fft2c(std::move(r));
        for (std::size_t i = 0; i < P; ++i) d[i] += cplx{g[i] * y[i].real(), g[P + i] * y[i].imag()};
        if (pass) {
            pass->level = j;
            pass->c_out = c_out;
        }
        return d;
    }

    std::span<const double> net_params() const { return std::span<const double>(params_).subspan(net_offset()); }
    std::span<double> net_params() { return std::span<double>(params_).subspan(net_offset()); }

    ScoreArchitecture arch_;
    FreqOperator tag_;
    std::uint64_t seed_;
    NoiseSchedule levels_;
    ConvNet net_;
    std::vector<double> params_;
};

// ---------------------------------------------------------------------------

/// Mean over the batch of ||sigma * s(x + sigma z, sigma) + z||^2 summed over
/// all real dimensions. A zero score gives E||z||^2 = 2 * pixels.
inline double dsm_loss(const ScoreModel& model, std::span<const ComplexGrid> batch, double sigma,
                       std::span<const ComplexGrid> noise) {
    require(!batch.empty(), "dsm_loss needs a nonempty batch");
    require(batch.size() == noise.size(), "dsm_loss needs one noise draw per batch item");
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        require_same_shape(batch[b], noise[b], "dsm_loss");
        ComplexGrid noisy = batch[b];
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += sigma * noise[b][i];
        const ComplexGrid s = model.evaluate(noisy, sigma);
        double l = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) l += std::norm(sigma * s[i] + noise[b][i]);
        total += l;
    }
    return total / double(batch.size());
}

inline double dsm_loss(const ScoreModel& model, std::span<const ComplexGrid> batch, double sigma, Rng& rng) {
    std::vector<ComplexGrid> noise;
    noise.reserve(batch.size());
    for (const auto& x : batch) noise.push_back(complex_normal(x.rows(), x.cols(), rng));
    return dsm_loss(model, batch, sigma, noise);
}

/// Per-dimension DSM loss averaged over the model's levels, with noise drawn
/// from a fixed stream so repeated calls are comparable.
inline double validation_loss(const TrainableScore& model, std::span<const ComplexGrid> data, std::uint64_t seed) {
    require(!data.empty(), "validation set is empty");
    const auto& sig = model.architecture().level_sigmas;
    const double dim = 2.0 * double(model.architecture().pixels());
    double acc = 0.0;
    for (std::size_t j = 0; j < sig.size(); ++j) {
        Rng rng = make_stream(seed, "validation", j);
        acc += dsm_loss(model, data, sig[j], rng) / dim;
    }
    return acc / double(sig.size());
}

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 8;
    double learning_rate = 0.005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double final_lr_fraction = 0.01;  ///< cosine decay from learning_rate to this fraction of it
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;
};

struct TrainReport {
    double initial_validation_loss = 0.0;
    double final_validation_loss = 0.0;
    std::vector<double> epoch_train_loss;
    std::size_t train_items = 0;
    std::size_t validation_items = 0;
};

/// Adam over the DSM objective. Each item in a minibatch draws sigma
/// log-uniformly between the extreme levels and one noise grid; the tail `validation_fraction` of the dataset
/// is held out.
inline TrainReport train(TrainableScore& model, std::span<const ComplexGrid> dataset, const TrainConfig& cfg) {
    require(!dataset.empty(), "training dataset is empty");
    require(cfg.batch_size > 0, "batch size must be positive");
    require(cfg.learning_rate > 0.0 && cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0, "invalid learning-rate schedule");
    const auto& arch = model.architecture();
    for (const auto& g : dataset)
        if (g.rows() != arch.rows || g.cols() != arch.cols)
            throw DataError("training grid shape differs from model architecture");

    std::size_t n_val = std::size_t(std::floor(double(dataset.size()) * cfg.validation_fraction));
    if (dataset.size() > 1) n_val = std::max<std::size_t>(n_val, 1);
    if (n_val >= dataset.size()) n_val = 0;
    const std::size_t n_train = dataset.size() - n_val;
    const auto train_set = dataset.first(n_train);
    const auto val_set = n_val > 0 ? dataset.subspan(n_train) : dataset.first(n_train);

    TrainReport rep;
    rep.train_items = n_train;
    rep.validation_items = n_val;
    rep.initial_validation_loss = validation_loss(model, val_set, cfg.seed);
    if (cfg.epochs == 0) {
        rep.final_validation_loss = rep.initial_validation_loss;
        return rep;
    }

    auto& theta = model.parameters();
    std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0), grad(theta.size());
    Rng rng = make_stream(cfg.seed, "training");
    const double log_hi = std::log(arch.level_sigmas.front()), log_lo = std::log(arch.level_sigmas.back());
    std::uniform_real_distribution<double> pick_log_sigma(0.0, 1.0);
    std::vector<std::size_t> order(n_train);
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double decay = 0.5 * (1.0 + std::cos(M_PI * double(epoch) / double(cfg.epochs)));
        const double lr = cfg.learning_rate * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * decay);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
            const std::size_t stop = std::min(n_train, start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t b = start; b < stop; ++b) {
                const double sigma = std::exp(log_lo + (log_hi - log_lo) * pick_log_sigma(rng));
                const ComplexGrid z = complex_normal(arch.rows, arch.cols, rng);
                batch_loss += model.accumulate_gradient(train_set[order[b]], z, sigma, grad);
            }
            const double inv_b = 1.0 / double(stop - start);
            ++step;
            const double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double gi = grad[i] * inv_b;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
            }
            epoch_loss += batch_loss;
        }
        epoch_loss /= double(n_train);
        if (!std::isfinite(epoch_loss))
            throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " (loss is not finite)");
        rep.epoch_train_loss.push_back(epoch_loss);
    }
    rep.final_validation_loss = validation_loss(model, val_set, cfg.seed);
    return rep;
}

// ---------------------------------------------------------------------------

/// Root-mean-square magnitude per real component over a set of grids.
inline double data_sigma_of(std::span<const ComplexGrid> grids) {
    require(!grids.empty(), "data scale of an empty set");
    double acc = 0.0, n = 0.0;
    for (const auto& g : grids) {
        acc += energy(g);
        n += 2.0 * double(g.size());
    }
    return std::sqrt(acc / n);
}

/// Scale that maps an image-domain coil stack to unit peak magnitude.
inline double image_peak(const CoilStack& images) {
    double peak = 0.0;
    for (const auto& c : images.grids())
        for (const auto& v : c) peak = std::max(peak, std::abs(v));
    return peak;
}

/// Training grids for one extractor: each coil image is scaled to unit peak,
/// as reconstruction scales each coil, transformed to k-space and passed
/// through the operator.
inline std::vector<ComplexGrid> operator_domain_dataset(std::span<const CoilStack> images, const FreqOperator& op) {
    std::vector<ComplexGrid> out;
    for (const auto& stack : images) {
        if (stack.domain() != Domain::Image) throw DataError("training data must be image-domain stacks");
        for (const auto& c : stack.grids()) {
            const double peak = image_peak(CoilStack({c}, Domain::Image));
            if (!(peak > 0.0)) throw DataError("training image is identically zero");
            out.push_back(op.apply(fft2c((1.0 / peak) * c)));
        }
    }
    return out;
}

} // namespace cmdm
