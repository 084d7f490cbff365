#pragma once

// Model checkpoint: one JSON header line + little-endian float32 parameters.
// The operator tag is mandatory so a model is always paired with the
// extractor it was trained under.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmdm/array_io.hpp"
#include "cmdm/error.hpp"
#include "cmdm/freq_ops.hpp"
#include "cmdm/score.hpp"

namespace cmdm {

inline constexpr const char* kCheckpointFormat = "cmdm-score-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline std::string encode_checkpoint(const TrainableScore& model) {
    const auto& a = model.architecture();
    nlohmann::json h{
        {"format", kCheckpointFormat},
        {"version", kCheckpointVersion},
        {"architecture",
         {{"kind", "freq-gain-cnn"},
          {"rows", a.rows},
          {"cols", a.cols},
          {"channels", a.channels},
          {"depth", a.depth},
          {"kernel", a.kernel},
          {"data_sigma", a.data_sigma},
          {"level_sigmas", a.level_sigmas}}},
        {"schedule", {{"sigma_max", a.level_sigmas.front()}, {"sigma_min", a.level_sigmas.back()}, {"levels", a.level_sigmas.size()}}},
        {"operator", model.op().to_json()},
        {"seed", model.seed()},
        {"normalization", "image_peak"},
        {"data_scale", model.data_scale},
        {"param_count", a.param_count()},
        {"dtype", "f32"},
        {"endianness", "little"},
    };
    std::string out = h.dump();
    out.push_back('\n');
    for (double p : model.parameters()) detail::put_f32_le(out, float(p));
    return out;
}

inline TrainableScore decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
    auto [h, payload] = split_framed(bytes, what);
    try {
        if (h.at("format").get<std::string>() != kCheckpointFormat) throw DataError(what + ": not a score checkpoint");
        if (h.at("version").get<int>() != kCheckpointVersion) throw DataError(what + ": unsupported checkpoint version");
        if (h.at("endianness").get<std::string>() != "little") throw DataError(what + ": only little-endian checkpoints");
        if (h.at("dtype").get<std::string>() != "f32") throw DataError(what + ": parameter dtype must be f32");
        if (!h.contains("operator")) throw DataError(what + ": operator tag is missing");
        const auto& ja = h.at("architecture");
        if (ja.at("kind").get<std::string>() != "freq-gain-cnn") throw DataError(what + ": unknown architecture");
        ScoreArchitecture arch{ja.at("rows").get<std::size_t>(),     ja.at("cols").get<std::size_t>(),
                               ja.at("level_sigmas").get<std::vector<double>>(), ja.at("channels").get<std::size_t>(),
                               ja.at("depth").get<std::size_t>(),    ja.at("kernel").get<std::size_t>(),
                               ja.at("data_sigma").get<double>()};
        TrainableScore model(arch, FreqOperator::from_json(h.at("operator")), h.at("seed").get<std::uint64_t>());
        model.data_scale = h.value("data_scale", 1.0);
        auto& p = model.parameters();
        if (h.at("param_count").get<std::size_t>() != p.size() || payload.size() != p.size() * 4)
            throw DataError(what + ": parameter blob size does not match the architecture");
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = double(detail::get_f32_le(payload.data() + 4 * i));
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(what + ": malformed header: " + e.what());
    } catch (const UsageError& e) {
        throw DataError(what + ": " + e.what());
    }
}

inline void save_checkpoint(const fs::path& path, const TrainableScore& model) { atomic_write(path, encode_checkpoint(model)); }

inline TrainableScore load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

/// Rounds parameters to float32 in place, matching a save/load round trip.
inline void quantize_parameters(TrainableScore& model) {
    for (auto& p : model.parameters()) p = double(float(p));
}

} // namespace cmdm
