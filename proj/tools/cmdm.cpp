// cmdm: command-line front end for phantom generation, sampling masks, score
// model training, reconstruction and the verification studies.
//
// Every command that writes files also writes a run manifest next to them
// (<out>.manifest.json, or <out>/manifest.json for directory outputs).
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "cmdm/cmdm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cmdm;

namespace {

constexpr const char* kToolVersion = "1.0.0";
constexpr int kManifestVersion = 1;

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw DataError("sha256 digest failed");
    std::ostringstream ss;
    for (unsigned i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return ss.str();
}

std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

/// A single file, or the sorted .c64 files of a directory.
std::vector<fs::path> array_files(const fs::path& p) {
    if (!fs::exists(p)) throw DataError("no such file or directory: " + p.string());
    if (!fs::is_directory(p)) return {p};
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".c64") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw DataError("no .c64 files in " + p.string());
    return out;
}

std::vector<CoilStack> read_stacks(const fs::path& p, std::optional<Domain> domain = std::nullopt) {
    std::vector<CoilStack> out;
    for (const auto& f : array_files(p)) {
        out.push_back(read_array(f));
        if (domain && out.back().domain() != *domain)
            throw DataError(f.string() + ": expected " + (*domain == Domain::Image ? "image" : "k-space") + " data");
        if (out.back().rows() != out.front().rows() || out.back().cols() != out.front().cols())
            throw DataError(f.string() + ": shape differs from the rest of the dataset");
    }
    return out;
}

std::pair<std::size_t, std::size_t> parse_shape(const std::string& s) {
    const auto sep = s.find_first_of("x,");
    auto num = [&](const std::string& t) {
        std::size_t used = 0;
        long v = -1;
        try {
            v = std::stol(t, &used);
        } catch (const std::exception&) {
        }
        if (v <= 0 || used != t.size()) throw UsageError("bad --shape '" + s + "'");
        return std::size_t(v);
    };
    if (sep == std::string::npos) {
        const auto n = num(s);
        return {n, n};
    }
    return {num(s.substr(0, sep)), num(s.substr(sep + 1))};
}

std::vector<double> parse_doubles(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != tok.size()) throw UsageError("bad " + what + " entry '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("empty " + what);
    return out;
}

double parse_lambda(const std::string& s) {
    if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    const auto v = parse_doubles(s, "--dc-lambda");
    if (v.size() != 1) throw UsageError("bad --dc-lambda '" + s + "'");
    return v[0];
}

std::string index_name(const std::string& prefix, std::size_t i, const std::string& ext) {
    std::ostringstream ss;
    ss << prefix << '_' << std::setw(4) << std::setfill('0') << i << ext;
    return ss.str();
}

FreqOperator make_operator(const std::string& name, const WeightParams& wp, std::size_t window, std::size_t rows) {
    if (name == "weight") return FreqOperator::make_weight(wp);
    if (name == "mask") return FreqOperator::make_mask(window ? window : scaled_window(50, rows));
    if (name == "identity") return FreqOperator::identity();
    throw UsageError("unknown operator '" + name + "' (weight, mask, identity)");
}

// ---------------------------------------------------------------------------
// Run bookkeeping

struct Session {
    std::string command;
    const CLI::App* app = nullptr;
    std::vector<std::string> input_options;
    fs::path out;  ///< empty: nothing written
    bool out_is_dir = false;
    std::vector<fs::path> written;
    json result = json::object();

    void wrote(const fs::path& p) { written.push_back(p); }

    fs::path manifest_path() const {
        if (out_is_dir) return out / "manifest.json";
        fs::path m = out;
        m += ".manifest.json";
        return m;
    }

    /// Output path with the out prefix replaced by "<out>".
    std::string output_key(const fs::path& p) const {
        const std::string s = p.string(), o = out.string();
        return s.rfind(o, 0) == 0 ? "<out>" + s.substr(o.size()) : s;
    }
};

/// Value of every long option of a subcommand, given or defaulted.
json resolved_options(const CLI::App* app) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string name = opt->get_lnames().front();
        if (name == "help") continue;
        std::string v;
        if (opt->count() > 0) {
            const auto& r = opt->results();
            for (std::size_t i = 0; i < r.size(); ++i) v += (i ? "," : "") + r[i];
        } else {
            v = opt->get_default_str();
        }
        j[name] = v;
    }
    return j;
}

json build_manifest(const Session& s) {
    const json config = resolved_options(s.app);
    json inputs = json::object();
    for (const auto& name : s.input_options) {
        const std::string v = config.value(name, "");
        if (v.empty()) continue;
        json files = json::object();
        for (const auto& f : array_files(v)) files[f.lexically_relative(fs::is_directory(v) ? fs::path(v) : f.parent_path()).string()] = sha256_file(f);
        inputs[name] = {{"path", v}, {"sha256", files}};
    }
    json seeds = json::object();
    for (auto it = config.begin(); it != config.end(); ++it)
        if (it.key().find("seed") != std::string::npos) seeds[it.key()] = it.value();
    json outputs = json::object();
    for (const auto& p : s.written) outputs[s.output_key(p)] = sha256_file(p);
    json m{{"manifest_version", kManifestVersion},
           {"tool", "cmdm"},
           {"tool_version", kToolVersion},
           {"command", s.command},
           {"config", config},
           {"seeds", seeds},
           {"inputs", inputs},
           {"outputs", outputs}};
    if (!s.result.empty()) m["result"] = s.result;
    return m;
}

void finish(Session& s) {
    if (s.out.empty()) return;
    atomic_write(s.manifest_path(), build_manifest(s).dump(2) + "\n");
}

void emit_text(Session& s, const fs::path& p, const std::string& text) {
    atomic_write(p, text);
    s.wrote(p);
}

void emit_array(Session& s, const fs::path& p, const CoilStack& a) {
    write_array(p, a);
    s.wrote(p);
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(12) << v;
    return ss.str();
}

// ---------------------------------------------------------------------------
// Options

struct PhantomArgs {
    std::string shape = "64";
    std::size_t coils = 1, count = 1;
    std::uint64_t seed = 0;
    std::string kind = "ellipses";
    bool complex_phase = false;
    std::string out;
};

struct MaskArgs {
    std::string pattern = "random2d", shape = "64";
    double accel = 4.0;
    std::size_t calib = 8;
    std::uint64_t seed = 0;
    std::string out;
};

struct AcquireArgs {
    std::string data, mask, out;
};

struct WeightArgs {
    double r_cut = 1.0, p = 0.5, floor = 1e-6;
    std::string coords = "normalized";

    WeightParams params() const {
        if (coords != "normalized" && coords != "raw") throw UsageError("--coords must be normalized or raw");
        return {r_cut, p, floor, coords == "raw" ? CoordinateScale::Raw : CoordinateScale::Normalized};
    }
};

struct TrainArgs {
    std::string data, op = "weight";
    WeightArgs weight;
    std::size_t window = 0;
    double sigma_max = 1.0, sigma_min = 0.01;
    std::size_t levels = 10, epochs = 50, batch = 8, channels = 12, depth = 5;
    double lr = 0.005;
    std::uint64_t seed = 0;
    std::string out;
};

struct SamplingArgs {
    std::size_t iters = 100, correctors = 1;
    double step_ratio = 0.075;
    bool final_denoise = true;
    std::uint64_t seed = 0;
};

struct ReconArgs {
    std::string meas, mask, model_w, model_m, model_full;
    std::string branches = "combined", mode = "serial";
    double mu1 = 1.0, mu2 = 1.0, l1 = 0.5, l2 = 0.5;
    std::string dc_lambda = "inf";
    bool hankel = true;
    std::string hankel_window;
    std::size_t hankel_rank = 0;
    bool interleave = true;
    std::string serial_reading = "sampler";
    SamplingArgs sampling;
    std::string ref, image_id, out;
};

struct Theorem1Args {
    std::size_t draws = 100000, grid = 4;
    std::string alphas = "0,0.3,0.6";
    double variance = 0.04, sigma = 0.1, eps = 0.01;
    std::uint64_t seed = 0;
    std::string out;
};

struct AppendixArgs {
    std::size_t grid = 8, steps = 100;
    double variance = 0.5, sigma = 0.5, eps = 0.01, tol = 1e-10;
    std::uint64_t seed = 0;
    std::string out;
};

struct ConvergenceArgs {
    std::string model_w, model_m, model_full, pattern = "random2d";
    std::uint64_t phantom_seed = 0, mask_seed = 0;
    std::size_t coils = 1, calib = 8, hankel_rank = 0;
    double accel = 8.0;
    std::size_t window = 10;
    SamplingArgs sampling;
    std::string out;
};

struct CorrelateArgs {
    std::string data, windows = "30,50,70";
    WeightArgs weight;
    std::string out;
};

struct ReplayArgs {
    std::string manifest, out;
    bool check = true;
};

void add_weight_options(CLI::App* c, WeightArgs& w) {
    c->add_option("--r-cut", w.r_cut, "weight scale r");
    c->add_option("--p", w.p, "weight exponent");
    c->add_option("--floor", w.floor, "weight floor");
    c->add_option("--coords", w.coords, "normalized or raw coordinates");
}

void add_sampling_options(CLI::App* c, SamplingArgs& s) {
    c->add_option("--iters", s.iters, "noise levels N");
    c->add_option("--correctors", s.correctors, "corrector steps per level");
    c->add_option("--step-ratio", s.step_ratio, "Langevin step ratio");
    c->add_option("--final-denoise", s.final_denoise, "denoising step after the last level");
    c->add_option("--seed", s.seed, "sampler seed");
}

SamplerConfig sampler_config(const SamplingArgs& a, const ScoreArchitecture& arch) {
    if (a.iters == 0) throw UsageError("--iters must be positive");
    SamplerConfig c;
    c.schedule = make_schedule(arch.level_sigmas.front(), arch.level_sigmas.back(), a.iters);
    c.step_ratio = a.step_ratio;
    c.corrector_steps = a.correctors;
    c.final_denoise = a.final_denoise;
    c.seed = a.seed;
    c.validate();
    return c;
}

TrainableScore load_model(const std::string& path, const char* what) {
    if (path.empty()) throw UsageError(std::string(what) + " is required");
    return load_checkpoint(path);
}

// ---------------------------------------------------------------------------
// Commands

void run_phantom(Session& s, const PhantomArgs& a) {
    if (a.out.empty()) throw UsageError("--out is required");
    if (a.count == 0 || a.coils == 0) throw UsageError("--count and --coils must be positive");
    const auto [rows, cols] = parse_shape(a.shape);
    PhantomOptions opt{phantom_kind_from_string(a.kind), a.coils, a.complex_phase};
    s.out = a.out;
    s.out_is_dir = true;
    fs::create_directories(s.out);
    for (std::size_t i = 0; i < a.count; ++i) {
        Rng r = make_stream(a.seed, "phantom-item", i);
        emit_array(s, s.out / index_name("phantom", i, ".c64"), make_phantom(opt, rows, cols, r()));
    }
    std::cout << "wrote " << a.count << " phantoms to " << a.out << "\n";
}

void run_mask(Session& s, const MaskArgs& a) {
    if (a.out.empty()) throw UsageError("--out is required");
    const auto [rows, cols] = parse_shape(a.shape);
    const SamplingMask m = make_mask(mask_pattern_from_string(a.pattern), rows, cols, a.accel, a.calib, a.seed);
    s.out = a.out;
    write_mask(s.out, m);
    s.wrote(s.out);
    s.result = {{"sampled", m.count()}, {"fraction", m.fraction()}};
    std::cout << "sampled " << m.count() << " of " << m.omega.size() << " (" << fmt(m.fraction()) << ")\n";
}

void run_acquire(Session& s, const AcquireArgs& a) {
    if (a.data.empty() || a.mask.empty() || a.out.empty()) throw UsageError("--data, --mask and --out are required");
    const CoilStack img = read_array(a.data);
    if (img.domain() != Domain::Image) throw DataError(a.data + ": expected image data");
    const SamplingMask m = read_mask(a.mask);
    if (m.rows() != img.rows() || m.cols() != img.cols()) throw DataError("mask and image shapes differ");
    s.out = a.out;
    emit_array(s, s.out, acquire(fft2c(img), m).f);
}

void run_train(Session& s, const TrainArgs& a) {
    if (a.data.empty() || a.out.empty()) throw UsageError("--data and --out are required");
    if (a.levels == 0) throw UsageError("--levels must be positive");
    const auto images = read_stacks(a.data, Domain::Image);
    const std::size_t rows = images.front().rows(), cols = images.front().cols();
    const FreqOperator op = make_operator(a.op, a.weight.params(), a.window, rows);
    const auto dataset = operator_domain_dataset(images, op);

    ScoreArchitecture arch;
    arch.rows = rows;
    arch.cols = cols;
    arch.level_sigmas = make_schedule(a.sigma_max, a.sigma_min, a.levels).sigmas();
    arch.channels = a.channels;
    arch.depth = a.depth;
    arch.data_sigma = data_sigma_of(dataset);
    TrainableScore model(arch, op, a.seed);

    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch;
    tc.learning_rate = a.lr;
    tc.seed = a.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainReport rep = train(model, dataset, tc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    s.out = a.out;
    save_checkpoint(s.out, model);
    s.wrote(s.out);
    s.result = {{"train_items", rep.train_items},
                {"validation_items", rep.validation_items},
                {"initial_validation_loss", rep.initial_validation_loss},
                {"final_validation_loss", rep.final_validation_loss},
                {"epoch_train_loss", rep.epoch_train_loss}};
    std::cout << "operator " << a.op << ", " << rep.train_items << " training grids, " << rep.validation_items
              << " validation grids\n"
              << "validation loss " << fmt(rep.initial_validation_loss) << " -> " << fmt(rep.final_validation_loss)
              << " (" << std::fixed << std::setprecision(1) << secs << " s)\n";
}

struct Priors {
    std::optional<TrainableScore> w, m, full;
};

ReconConfig recon_config(const ReconArgs& a, std::size_t rows) {
    ReconConfig c;
    if (a.mode == "serial") c.mode = CombineMode::Serial;
    else if (a.mode == "parallel") c.mode = CombineMode::Parallel;
    else throw UsageError("--mode must be serial or parallel");
    if (a.branches == "combined") c.branches = Branches::Both;
    else if (a.branches == "weight") c.branches = Branches::WeightOnly;
    else if (a.branches == "mask") c.branches = Branches::MaskOnly;
    else if (a.branches == "full") c.branches = Branches::FullKSpace;
    else throw UsageError("--branches must be combined, weight, mask or full");
    if (a.serial_reading == "sampler") c.serial_reading = SerialReading::SamplerConditioned;
    else if (a.serial_reading == "operator") c.serial_reading = SerialReading::PureOperator;
    else throw UsageError("--serial-reading must be sampler or operator");
    c.mu1 = a.mu1;
    c.mu2 = a.mu2;
    c.lambda1 = a.l1;
    c.lambda2 = a.l2;
    c.dc_lambda = parse_lambda(a.dc_lambda);
    c.hankel = a.hankel;
    c.interleave = a.interleave;
    auto [window, rank] = default_hankel(rows);
    if (!a.hankel_window.empty()) {
        const auto v = parse_doubles(a.hankel_window, "--hankel-window");
        if (v.size() != 2 || v[0] < 1 || v[1] < 1) throw UsageError("--hankel-window expects 'rows,cols'");
        window = {std::size_t(v[0]), std::size_t(v[1])};
    }
    c.hankel_window = window;
    c.hankel_rank = a.hankel_rank ? a.hankel_rank : rank;
    c.validate();
    return c;
}

void run_reconstruct(Session& s, const ReconArgs& a) {
    if (a.meas.empty() || a.mask.empty() || a.out.empty()) throw UsageError("--meas, --mask and --out are required");
    const CoilStack k = read_array(a.meas);
    if (k.domain() != Domain::KSpace) throw DataError(a.meas + ": expected k-space data");
    const SamplingMask mask = read_mask(a.mask);
    if (mask.rows() != k.rows() || mask.cols() != k.cols()) throw DataError("mask and measurement shapes differ");
    const Measurement meas = acquire(k, mask);
    const ReconConfig cfg = recon_config(a, k.rows());

    ReconResult res = [&] {
        if (cfg.branches == Branches::FullKSpace) {
            const TrainableScore full = load_model(a.model_full, "--model-full");
            return reconstruct_full(meas, prior_of(full), cfg, sampler_config(a.sampling, full.architecture()));
        }
        const TrainableScore w = load_model(a.model_w, "--model-w");
        const TrainableScore m = load_model(a.model_m, "--model-m");
        return reconstruct(meas, prior_of(w), prior_of(m), cfg, sampler_config(a.sampling, w.architecture()));
    }();

    s.out = a.out;
    emit_array(s, s.out, res.images);
    fs::path pgm = s.out;
    pgm += ".pgm";
    write_pgm(pgm, res.sos);
    s.wrote(pgm);

    if (!a.ref.empty()) {
        const CoilStack ref_img = read_array(a.ref);
        if (ref_img.domain() != Domain::Image) throw DataError(a.ref + ": expected image data");
        if (ref_img.rows() != k.rows() || ref_img.cols() != k.cols()) throw DataError("reference and measurement shapes differ");
        const RealGrid ref = sos_combine(ref_img);
        const std::string id = a.image_id.empty() ? fs::path(a.ref).stem().string() : a.image_id;
        const std::string method = cfg.branches == Branches::Both ? a.mode : to_string(cfg.branches);
        auto row = [&](const std::string& name, const RealGrid& img) {
            return MetricRow{id, to_string(mask.pattern), mask.accel, name, psnr(ref, img), ssim(ref, img), mse(ref, img)};
        };
        const MetricRow r = row(method, res.sos), z = row("zero-filled", zero_filled(meas).sos);
        fs::path csv = s.out;
        csv += ".csv";
        emit_text(s, csv, std::string(metric_csv_header()) + "\n" + format_metric_row(r) + "\n" + format_metric_row(z) + "\n");
        s.result = {{"psnr_db", r.psnr_db}, {"ssim", r.ssim}, {"zero_filled_psnr_db", z.psnr_db}};
        std::cout << method << " psnr " << fmt(r.psnr_db) << " dB, ssim " << fmt(r.ssim) << " (zero-filled "
                  << fmt(z.psnr_db) << " dB)\n";
    }
}

void run_theorem1(Session& s, const Theorem1Args& a) {
    Theorem1Config c;
    c.rows = c.cols = a.grid;
    c.target_variance = a.variance;
    c.sigma = a.sigma;
    c.eps = a.eps;
    c.draws = a.draws;
    c.seed = a.seed;
    c.alphas = parse_doubles(a.alphas, "--alphas");
    const auto rows = run_theorem1_study(c);
    std::ostringstream csv;
    csv << "alpha,lhs,rhs_sum,corr_term,corr_se,lhs_se,c1,noise_term\n";
    for (const auto& r : rows)
        csv << fmt(r.alpha) << ',' << fmt(r.terms.lhs) << ',' << fmt(r.terms.rhs()) << ',' << fmt(r.terms.corr_term) << ','
            << fmt(r.terms.corr_se) << ',' << fmt(r.terms.lhs_se) << ',' << fmt(r.terms.c1) << ',' << fmt(r.terms.noise_term)
            << '\n';
    std::cout << csv.str();
    if (!a.out.empty()) {
        s.out = a.out;
        emit_text(s, s.out, csv.str());
    }
}

void run_appendix(Session& s, const AppendixArgs& a) {
    if (a.grid == 0 || a.variance <= 0.0) throw UsageError("--grid and --variance must be positive");
    Rng rng = make_stream(a.seed, "appendix-mean");
    const GaussianScoreOracle image_score(complex_normal(a.grid, a.grid, rng), a.variance);
    const double dev = verify_orthogonal_equivalence(image_score, {a.steps, a.sigma, a.eps, a.seed});
    std::cout << "max_deviation " << std::setprecision(6) << std::scientific << dev << "\n";
    s.result = {{"max_deviation", dev}};
    if (!a.out.empty()) {
        s.out = a.out;
        emit_text(s, s.out, "max_deviation\n" + fmt(dev) + "\n");
    }
    if (!(dev < a.tol)) throw NumericalError("deviation " + fmt(dev) + " exceeds tolerance " + fmt(a.tol));
}

void run_convergence(Session& s, const ConvergenceArgs& a) {
    if (a.out.empty()) throw UsageError("--out is required");
    const TrainableScore w = load_model(a.model_w, "--model-w");
    const TrainableScore m = load_model(a.model_m, "--model-m");
    const TrainableScore full = load_model(a.model_full, "--model-full");
    const std::size_t rows = w.architecture().rows, cols = w.architecture().cols;
    const CoilStack img = make_phantom({PhantomKind::Ellipses, a.coils, false}, rows, cols, a.phantom_seed);
    const SamplingMask mask = make_mask(mask_pattern_from_string(a.pattern), rows, cols, a.accel, a.calib, a.mask_seed);
    const Measurement meas = acquire(fft2c(img), mask);
    ReconConfig cfg;
    std::tie(cfg.hankel_window, cfg.hankel_rank) = default_hankel(rows);
    if (a.hankel_rank) cfg.hankel_rank = a.hankel_rank;
    const auto curves =
        convergence_study(meas, sos_combine(img), prior_of(w), prior_of(m), prior_of(full), cfg, sampler_config(a.sampling, w.architecture()));

    std::ostringstream csv;
    csv << "iteration,chain,psnr,ssim\n";
    for (const auto& c : curves)
        for (std::size_t i = 0; i < c.psnr.size(); ++i) csv << i + 1 << ',' << c.chain << ',' << fmt(c.psnr[i]) << ',' << fmt(c.ssim[i]) << '\n';
    s.out = a.out;
    emit_text(s, s.out, csv.str());
    json summary = json::object();
    for (const auto& c : curves) {
        const std::size_t it95 = iterations_to_fraction(c.psnr, 0.95);
        const bool mono = nondecreasing_after_smoothing(c.psnr, a.window);
        summary[c.chain] = {{"final_psnr", c.psnr.back()}, {"iterations_to_95", it95}, {"nondecreasing", mono}};
        std::cout << c.chain << ": final " << fmt(c.psnr.back()) << " dB, 95% at iteration " << it95
                  << (mono ? ", nondecreasing" : ", not monotone") << " after smoothing\n";
    }
    s.result = summary;
}

void run_correlate(Session& s, const CorrelateArgs& a) {
    if (a.data.empty() || a.out.empty()) throw UsageError("--data and --out are required");
    const auto windows = parse_window_list(a.windows);
    const auto files = array_files(a.data);
    std::vector<ComplexGrid> kspaces;
    for (const auto& f : files) {
        const CoilStack st = read_array(f);
        kspaces.push_back(st.domain() == Domain::Image ? fft2c(st[0]) : st[0]);
        if (!kspaces.back().same_shape(kspaces.front())) throw DataError(f.string() + ": shape differs from the rest");
    }
    const auto summary = correlation_study(kspaces, windows, a.weight.params());
    std::ostringstream csv;
    csv << "image_id,window,window_px,rho\n";
    for (const auto& r : summary.rows)
        csv << files[r.image].stem().string() << ',' << r.window << ',' << r.window_px << ',' << fmt(r.rho) << '\n';
    s.out = a.out;
    emit_text(s, s.out, csv.str());
    json means = json::object();
    for (const auto& [w, rho] : summary.mean) {
        means[std::to_string(w)] = rho;
        std::cout << "window " << w << ": mean rho " << fmt(rho) << "\n";
    }
    const std::size_t middle = windows[windows.size() / 2];
    std::cout << "maximizer " << summary.maximizer << (summary.maximizer == middle ? " (middle window)" : " (not the middle window)")
              << "\n";
    s.result = {{"mean_rho", means}, {"maximizer", summary.maximizer}};
}

// ---------------------------------------------------------------------------
// Argument plumbing

std::string json_value_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_array()) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + json_value_string(v[i]);
        return out;
    }
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    if (v.is_number_float()) return fmt(v.get<double>());
    throw UsageError("config values must be strings, numbers, booleans or arrays");
}

bool has_flag(const std::vector<std::string>& args, const std::string& key) {
    const std::string flag = "--" + key;
    return std::any_of(args.begin(), args.end(), [&](const std::string& t) { return t == flag || t.rfind(flag + "=", 0) == 0; });
}

/// Removes --config from the arguments and appends every config entry that
/// the command line does not already set.
std::vector<std::string> merge_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a file");
            path = args[i + 1];
            args.erase(args.begin() + std::ptrdiff_t(i), args.begin() + std::ptrdiff_t(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + std::ptrdiff_t(i));
            break;
        }
    }
    if (path.empty()) return args;
    json cfg;
    try {
        cfg = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError(path + ": " + e.what());
    }
    if (!cfg.is_object()) throw DataError(path + ": config must be a JSON object");
    std::vector<std::string> extra;
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        std::string key = it.key();
        while (!key.empty() && key.front() == '-') key.erase(key.begin());
        std::replace(key.begin(), key.end(), '_', '-');
        if (has_flag(args, key)) continue;
        extra.push_back("--" + key);
        extra.push_back(json_value_string(it.value()));
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

int run(std::vector<std::string> args);

int run_replay(const ReplayArgs& a) {
    if (a.manifest.empty()) throw UsageError("--manifest is required");
    json m;
    try {
        m = json::parse(read_file(a.manifest));
    } catch (const json::parse_error& e) {
        throw DataError(a.manifest + ": " + e.what());
    }
    if (!m.contains("command") || !m.contains("config") || m.value("tool", "") != "cmdm")
        throw DataError(a.manifest + ": not a cmdm run manifest");
    if (m.value("tool_version", "") != kToolVersion)
        std::cerr << "warning: manifest written by cmdm " << m.value("tool_version", "?") << "\n";
    const json inputs = m.value("inputs", json::object());
    for (auto in = inputs.begin(); in != inputs.end(); ++in) {
        const fs::path base = in->at("path").get<std::string>();
        const json& hashes = in->at("sha256");
        for (auto h = hashes.begin(); h != hashes.end(); ++h) {
            const fs::path f = fs::is_directory(base) ? base / h.key() : base;
            if (sha256_file(f) != h->get<std::string>()) throw DataError(f.string() + " changed since the recorded run");
        }
    }
    std::vector<std::string> args;
    std::istringstream cmd(m["command"].get<std::string>());
    for (std::string t; cmd >> t;) args.push_back(t);
    const json& config = m["config"];
    for (auto it = config.begin(); it != config.end(); ++it) {
        std::string v = it->get<std::string>();
        if (it.key() == "out" && !a.out.empty()) v = a.out;
        if (v.empty()) continue;
        args.push_back("--" + it.key());
        args.push_back(v);
    }
    const int rc = run(args);
    if (rc != 0 || !a.check || !m.contains("outputs")) return rc;

    fs::path out = a.out.empty() ? fs::path(m["config"].value("out", "")) : fs::path(a.out);
    fs::path mp = out / "manifest.json";
    if (!fs::is_directory(out)) {
        mp = out;
        mp += ".manifest.json";
    }
    const json now = json::parse(read_file(mp));
    if (now.value("outputs", json::object()) != m["outputs"]) {
        std::cerr << "error: replayed outputs differ from the recorded run\n";
        return 3;
    }
    std::cout << "replay reproduced " << m["outputs"].size() << " output file(s)\n";
    return 0;
}

int run(std::vector<std::string> args) {
    CLI::App app{"Correlated multi-frequency diffusion reconstruction", "cmdm"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.footer("Any command accepts --config FILE.json whose keys are option names; command-line options win.");
    app.set_version_flag("--version", kToolVersion);

    PhantomArgs ph;
    auto* c_ph = app.add_subcommand("phantom", "synthetic multi-coil phantoms");
    c_ph->add_option("--shape", ph.shape, "N or RxC");
    c_ph->add_option("--coils", ph.coils, "coil count");
    c_ph->add_option("--count", ph.count, "number of phantoms");
    c_ph->add_option("--seed", ph.seed, "seed");
    c_ph->add_option("--kind", ph.kind, "ellipses or shepp-logan");
    c_ph->add_option("--complex-phase", ph.complex_phase, "smooth phase on the object");
    c_ph->add_option("--out", ph.out, "output directory");

    MaskArgs mk;
    auto* c_mk = app.add_subcommand("mask", "undersampling mask");
    c_mk->add_option("--pattern", mk.pattern, "poisson, random2d, uniform1d, equispaced1d, cartesian1d");
    c_mk->add_option("--shape", mk.shape, "N or RxC");
    c_mk->add_option("--accel", mk.accel, "acceleration R");
    c_mk->add_option("--calib", mk.calib, "fully sampled calibration width");
    c_mk->add_option("--seed", mk.seed, "seed");
    c_mk->add_option("--out", mk.out, "output mask file");

    AcquireArgs aq;
    auto* c_aq = app.add_subcommand("acquire", "undersampled k-space of an image");
    c_aq->add_option("--data", aq.data, "image array file");
    c_aq->add_option("--mask", aq.mask, "mask file");
    c_aq->add_option("--out", aq.out, "output k-space file");

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "train a score model in one operator domain");
    c_tr->add_option("--data", tr.data, "image array file or directory of .c64 files");
    c_tr->add_option("--operator", tr.op, "weight, mask or identity");
    add_weight_options(c_tr, tr.weight);
    c_tr->add_option("--window", tr.window, "mask block size in pixels (0: 50/256 of the grid)");
    c_tr->add_option("--sigma-max", tr.sigma_max, "largest noise level");
    c_tr->add_option("--sigma-min", tr.sigma_min, "smallest noise level");
    c_tr->add_option("--levels", tr.levels, "noise levels the model is conditioned on");
    c_tr->add_option("--epochs", tr.epochs, "training epochs");
    c_tr->add_option("--batch", tr.batch, "batch size");
    c_tr->add_option("--lr", tr.lr, "peak learning rate");
    c_tr->add_option("--channels", tr.channels, "hidden channels");
    c_tr->add_option("--depth", tr.depth, "convolution layers");
    c_tr->add_option("--seed", tr.seed, "initialisation and training seed");
    c_tr->add_option("--out", tr.out, "output checkpoint");

    ReconArgs rc;
    auto* c_rc = app.add_subcommand("reconstruct", "reconstruct from undersampled k-space");
    c_rc->add_option("--meas", rc.meas, "k-space array file");
    c_rc->add_option("--mask", rc.mask, "mask file");
    c_rc->add_option("--model-w", rc.model_w, "weight-domain checkpoint");
    c_rc->add_option("--model-m", rc.model_m, "mask-domain checkpoint");
    c_rc->add_option("--model-full", rc.model_full, "full k-space checkpoint (--branches full)");
    c_rc->add_option("--branches", rc.branches, "combined, weight, mask or full");
    c_rc->add_option("--mode", rc.mode, "serial or parallel");
    c_rc->add_option("--mu1", rc.mu1, "serial scale of the weight branch");
    c_rc->add_option("--mu2", rc.mu2, "serial scale of the mask branch");
    c_rc->add_option("--l1", rc.l1, "parallel weight of the weight branch");
    c_rc->add_option("--l2", rc.l2, "parallel weight of the mask branch");
    c_rc->add_option("--dc-lambda", rc.dc_lambda, "data-consistency weight (inf: replace)");
    c_rc->add_option("--hankel", rc.hankel, "low-rank Hankel projection");
    c_rc->add_option("--hankel-window", rc.hankel_window, "rows,cols (empty: grid default)");
    c_rc->add_option("--hankel-rank", rc.hankel_rank, "rank (0: grid default)");
    c_rc->add_option("--interleave", rc.interleave, "combine every level");
    c_rc->add_option("--serial-reading", rc.serial_reading, "sampler or operator");
    add_sampling_options(c_rc, rc.sampling);
    c_rc->add_option("--ref", rc.ref, "reference image for metrics");
    c_rc->add_option("--image-id", rc.image_id, "image id in the metrics row");
    c_rc->add_option("--out", rc.out, "output image file");

    auto* c_vf = app.add_subcommand("verify", "numerical verification studies");
    c_vf->require_subcommand(1);
    Theorem1Args t1;
    auto* c_t1 = c_vf->add_subcommand("theorem1", "deviation decomposition under noise/target correlation");
    c_t1->add_option("--draws", t1.draws, "Monte Carlo draws per alpha");
    c_t1->add_option("--grid", t1.grid, "grid size");
    c_t1->add_option("--alphas", t1.alphas, "comma-separated correlations");
    c_t1->add_option("--variance", t1.variance, "target variance");
    c_t1->add_option("--sigma", t1.sigma, "noise level");
    c_t1->add_option("--eps", t1.eps, "step size");
    c_t1->add_option("--seed", t1.seed, "seed");
    c_t1->add_option("--out", t1.out, "output CSV");
    AppendixArgs ap;
    auto* c_ap = c_vf->add_subcommand("appendixA", "image and k-space Langevin chains agree");
    c_ap->add_option("--grid", ap.grid, "grid size");
    c_ap->add_option("--steps", ap.steps, "Langevin steps");
    c_ap->add_option("--variance", ap.variance, "target variance");
    c_ap->add_option("--sigma", ap.sigma, "noise level");
    c_ap->add_option("--eps", ap.eps, "step size");
    c_ap->add_option("--tol", ap.tol, "failure threshold");
    c_ap->add_option("--seed", ap.seed, "seed");
    c_ap->add_option("--out", ap.out, "output file");
    ConvergenceArgs cv;
    auto* c_cv = c_vf->add_subcommand("convergence", "PSNR/SSIM per level for each chain");
    c_cv->add_option("--model-w", cv.model_w, "weight-domain checkpoint");
    c_cv->add_option("--model-m", cv.model_m, "mask-domain checkpoint");
    c_cv->add_option("--model-full", cv.model_full, "full k-space checkpoint");
    c_cv->add_option("--phantom-seed", cv.phantom_seed, "phantom seed");
    c_cv->add_option("--coils", cv.coils, "coil count");
    c_cv->add_option("--pattern", cv.pattern, "mask pattern");
    c_cv->add_option("--accel", cv.accel, "acceleration R");
    c_cv->add_option("--calib", cv.calib, "calibration width");
    c_cv->add_option("--mask-seed", cv.mask_seed, "mask seed");
    c_cv->add_option("--hankel-rank", cv.hankel_rank, "rank (0: grid default)");
    c_cv->add_option("--window", cv.window, "smoothing window of the monotonicity check");
    add_sampling_options(c_cv, cv.sampling);
    c_cv->add_option("--out", cv.out, "output CSV");

    CorrelateArgs co;
    auto* c_co = app.add_subcommand("correlate", "weight-map vs mask-map correlation per window");
    c_co->add_option("--data", co.data, "array file or directory");
    c_co->add_option("--window-list", co.windows, "windows at 256 scale");
    add_weight_options(c_co, co.weight);
    c_co->add_option("--out", co.out, "output CSV");

    ReplayArgs rp;
    auto* c_rp = app.add_subcommand("replay", "rerun a recorded command");
    c_rp->add_option("--manifest", rp.manifest, "run manifest");
    c_rp->add_option("--out", rp.out, "write outputs here instead of the recorded path");
    c_rp->add_option("--check", rp.check, "compare output hashes with the manifest");

    try {
        args = merge_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    Session s;
    auto session = [&](const std::string& name, const CLI::App* sub, std::vector<std::string> inputs = {}) {
        s.command = name;
        s.app = sub;
        s.input_options = std::move(inputs);
    };
    if (c_ph->parsed()) {
        session("phantom", c_ph);
        run_phantom(s, ph);
    } else if (c_mk->parsed()) {
        session("mask", c_mk);
        run_mask(s, mk);
    } else if (c_aq->parsed()) {
        session("acquire", c_aq, {"data", "mask"});
        run_acquire(s, aq);
    } else if (c_tr->parsed()) {
        session("train", c_tr, {"data"});
        run_train(s, tr);
    } else if (c_rc->parsed()) {
        session("reconstruct", c_rc, {"meas", "mask", "model-w", "model-m", "model-full", "ref"});
        run_reconstruct(s, rc);
    } else if (c_t1->parsed()) {
        session("verify theorem1", c_t1);
        run_theorem1(s, t1);
    } else if (c_ap->parsed()) {
        session("verify appendixA", c_ap);
        try {
            run_appendix(s, ap);
        } catch (const NumericalError&) {
            finish(s);
            throw;
        }
    } else if (c_cv->parsed()) {
        session("verify convergence", c_cv, {"model-w", "model-m", "model-full"});
        run_convergence(s, cv);
    } else if (c_co->parsed()) {
        session("correlate", c_co, {"data"});
        run_correlate(s, co);
    } else if (c_rp->parsed()) {
        return run_replay(rp);
    }
    finish(s);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(std::vector<std::string>(argv + 1, argv + argc));
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
