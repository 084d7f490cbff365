#pragma once

// On-disk formats.
//
// Array file: one line of JSON
//     {"dims":[coils,H,W],"domain":"kspace"|"image","dtype":"c64","endianness":"little"}
// terminated by '\n', followed by coils*H*W interleaved little-endian float32
// (re, im) pairs, row-major within a coil, coils in order.
//
// Writes go to a temporary sibling and are renamed into place.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmdm/error.hpp"
#include "cmdm/grid.hpp"
#include "cmdm/kspace.hpp"
#include "cmdm/mask.hpp"

namespace cmdm {

namespace fs = std::filesystem;

inline void atomic_write(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path() && !fs::exists(path.parent_path())) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace detail {

inline void put_f32_le(std::string& out, float v) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(char((bits >> (8 * b)) & 0xFFu));
}

inline float get_f32_le(const char* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t(static_cast<unsigned char>(p[b])) << (8 * b);
    return std::bit_cast<float>(bits);
}

} // namespace detail

/// Splits "<json>\n<payload>" into its parts.
inline std::pair<nlohmann::json, std::string_view> split_framed(const std::string& bytes, const std::string& what) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos) throw DataError(what + ": missing header terminator");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, nl));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(what + ": malformed header: " + e.what());
    }
    if (!header.is_object()) throw DataError(what + ": header is not a JSON object");
    return {header, std::string_view(bytes).substr(nl + 1)};
}

inline std::string encode_array(const CoilStack& s) {
    nlohmann::json header{{"dims", {s.coils(), s.rows(), s.cols()}},
                          {"domain", to_string(s.domain())},
                          {"dtype", "c64"},
                          {"endianness", "little"}};
    std::string out = header.dump();
    out.push_back('\n');
    out.reserve(out.size() + s.coils() * s.rows() * s.cols() * 8);
    for (const auto& g : s.grids())
        for (const auto& v : g) {
            detail::put_f32_le(out, float(v.real()));
            detail::put_f32_le(out, float(v.imag()));
        }
    return out;
}

inline CoilStack decode_array(const std::string& bytes, const std::string& what = "array file") {
    auto [h, payload] = split_framed(bytes, what);
    try {
        if (h.at("endianness").get<std::string>() != "little")
            throw DataError(what + ": only little-endian payloads are supported (got '" +
                            h.at("endianness").get<std::string>() + "')");
        if (h.at("dtype").get<std::string>() != "c64")
            throw DataError(what + ": dtype '" + h.at("dtype").get<std::string>() + "' is not c64");
        const auto dims = h.at("dims").get<std::vector<long long>>();
        if (dims.size() != 3 || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
            throw DataError(what + ": dims must be three positive integers [coils, H, W]");
        const Domain domain = domain_from_string(h.at("domain").get<std::string>());
        const std::size_t coils = std::size_t(dims[0]), rows = std::size_t(dims[1]), cols = std::size_t(dims[2]);
        const std::size_t expect = coils * rows * cols * 8;
        if (payload.size() != expect)
            throw DataError(what + ": payload is " + std::to_string(payload.size()) + " bytes, header implies " +
                            std::to_string(expect));
        std::vector<ComplexGrid> grids;
        const char* p = payload.data();
        for (std::size_t c = 0; c < coils; ++c) {
            ComplexGrid g(rows, cols);
            for (auto& v : g) {
                v = {double(detail::get_f32_le(p)), double(detail::get_f32_le(p + 4))};
                p += 8;
            }
            grids.push_back(std::move(g));
        }
        return {std::move(grids), domain};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(what + ": malformed header: " + e.what());
    }
}

inline void write_array(const fs::path& path, const CoilStack& s) { atomic_write(path, encode_array(s)); }

inline CoilStack read_array(const fs::path& path) { return decode_array(read_file(path), path.string()); }

/// Rounds every entry to float32, i.e. what a write/read round trip yields.
inline CoilStack quantize_f32(const CoilStack& s) { return decode_array(encode_array(s)); }

// Masks are stored as array files with 1+0i at sampled positions plus the
// generator metadata under "mask" in the header.

inline void write_mask(const fs::path& path, const SamplingMask& m) {
    ComplexGrid g(m.rows(), m.cols());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = m.omega[i] ? 1.0 : 0.0;
    std::string body = encode_array(CoilStack({g}, Domain::KSpace));
    auto [h, payload] = split_framed(body, "mask");
    h["mask"] = {{"pattern", to_string(m.pattern)}, {"accel", m.accel}, {"calib", m.calib}, {"seed", m.seed}};
    std::string out = h.dump();
    out.push_back('\n');
    out.append(payload);
    atomic_write(path, out);
}

inline SamplingMask read_mask(const fs::path& path) {
    const std::string bytes = read_file(path);
    const CoilStack s = decode_array(bytes, path.string());
    if (s.coils() != 1) throw DataError(path.string() + ": mask file must hold one grid");
    SamplingMask m{BoolGrid(s.rows(), s.cols(), 0)};
    for (std::size_t i = 0; i < m.omega.size(); ++i) {
        const cplx v = s[0][i];
        if (v == cplx{1.0, 0.0}) m.omega[i] = 1;
        else if (v != cplx{}) throw DataError(path.string() + ": mask entries must be 0 or 1");
    }
    auto [h, payload] = split_framed(bytes, path.string());
    if (h.contains("mask")) {
        const auto& j = h["mask"];
        m.pattern = mask_pattern_from_string(j.value("pattern", std::string("random2d")));
        m.accel = j.value("accel", 1.0);
        m.calib = j.value("calib", std::size_t{0});
        m.seed = j.value("seed", std::uint64_t{0});
    }
    return m;
}

/// 8-bit binary PGM, min-max normalised.
inline void write_pgm(const fs::path& path, const RealGrid& img) {
    double lo = img[0], hi = img[0];
    for (double v : img) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n255\n";
    for (double v : img) out.push_back(char(static_cast<unsigned char>(std::lround(255.0 * (v - lo) / span))));
    atomic_write(path, out);
}

struct MetricRow {
    std::string image_id;
    std::string pattern;
    double accel;
    std::string method;
    double psnr_db;
    double ssim;
    double mse;
};

inline const char* metric_csv_header() { return "image_id,pattern,R,method,psnr_db,ssim,mse"; }

inline std::string format_metric_row(const MetricRow& r) {
    std::ostringstream ss;
    ss << r.image_id << ',' << r.pattern << ',' << r.accel << ',' << r.method << ',' << std::setprecision(10) << r.psnr_db
       << ',' << r.ssim << ',' << r.mse;
    return ss.str();
}

} // namespace cmdm
