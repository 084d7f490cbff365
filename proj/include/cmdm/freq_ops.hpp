#pragma once

// High-frequency prior extractors.
//
//   weight:  K_w(k) = w .* k,        w = max(floor, (r_cut*cx^2 + r_cut*cy^2)^p)
//   mask:    K_m(k) = (1 - m) .* k,  m = 1 on the centered n x n block
//   identity: passes k through (the full k-space prior used as a baseline)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmdm/error.hpp"
#include "cmdm/grid.hpp"
#include "cmdm/kspace.hpp"

namespace cmdm {

enum class CoordinateScale {
    Normalized,  ///< offsets divided by (rows/2, cols/2), range [-1, 1)
    Raw,         ///< integer offsets from the DC bin
};

struct WeightParams {
    double r_cut = 1.0;
    double p = 0.5;
    double floor = 1e-6;
    CoordinateScale coords = CoordinateScale::Normalized;

    bool operator==(const WeightParams&) const = default;
};

class WeightMatrix {
public:
    WeightMatrix(std::size_t rows, std::size_t cols, WeightParams params = {}) : params_(params), w_(rows, cols) {
        require(params.r_cut > 0.0, "weight r_cut must be positive");
        require(params.floor >= 0.0, "weight floor must be nonnegative");
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                double cx, cy;
                if (params.coords == CoordinateScale::Normalized) {
                    std::tie(cx, cy) = normalized_coordinate(rows, cols, r, c);
                } else {
                    const auto off = center_offset(rows, cols, r, c);
                    cx = double(off.row);
                    cy = double(off.col);
                }
                const double base = params.r_cut * cx * cx + params.r_cut * cy * cy;
                // pow(0, 0) == 1, so p = 0 yields an all-ones matrix.
                w_(r, c) = std::max(params.floor, std::pow(base, params.p));
            }
    }

    const WeightParams& params() const noexcept { return params_; }
    const RealGrid& values() const noexcept { return w_; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return w_(r, c); }
    std::size_t rows() const noexcept { return w_.rows(); }
    std::size_t cols() const noexcept { return w_.cols(); }

private:
    WeightParams params_;
    RealGrid w_;
};

inline ComplexGrid apply_weight(const ComplexGrid& k, const WeightMatrix& wm) {
    require_same_shape(k, wm.values(), "apply_weight");
    ComplexGrid out = k;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= wm.values()[i];
    return out;
}

inline ComplexGrid unapply_weight(const ComplexGrid& kw, const WeightMatrix& wm) {
    require_same_shape(kw, wm.values(), "unapply_weight");
    if (!(wm.params().floor > 0.0)) throw UsageError("unapply_weight needs floor > 0 (w vanishes at DC)");
    ComplexGrid out = kw;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= wm.values()[i];
    return out;
}

/// Centered n x n low-frequency block. For any n the block starts at
/// center - n/2 (integer division) and spans n entries per axis.
class CenterMask {
public:
    CenterMask(std::size_t rows, std::size_t cols, std::size_t window) : window_(window), m_(rows, cols, 0) {
        require(window > 0, "mask window must be positive");
        if (window > std::min(rows, cols))
            throw UsageError("mask window " + std::to_string(window) + " exceeds grid " + std::to_string(rows) +
                             "x" + std::to_string(cols));
        const std::size_t r0 = rows / 2 - window / 2;
        const std::size_t c0 = cols / 2 - window / 2;
        for (std::size_t r = r0; r < r0 + window; ++r)
            for (std::size_t c = c0; c < c0 + window; ++c) m_(r, c) = 1;
    }

    std::size_t window() const noexcept { return window_; }
    const BoolGrid& block() const noexcept { return m_; }
    bool in_block(std::size_t i) const noexcept { return m_[i] != 0; }
    BoolGrid complement() const {
        BoolGrid c = m_;
        for (auto& v : c) v = v ? 0 : 1;
        return c;
    }

private:
    std::size_t window_;
    BoolGrid m_;
};

inline ComplexGrid apply_highpass(const ComplexGrid& k, const CenterMask& cm) {
    require_same_shape(k, cm.block(), "apply_highpass");
    ComplexGrid out = k;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (cm.in_block(i)) out[i] = cplx{};
    return out;
}

/// Inverse of the low-frequency removal given a source for the block: keeps the
/// high frequencies of `high` and takes the centered block from `low`.
inline ComplexGrid fill_center(const ComplexGrid& high, const ComplexGrid& low, const CenterMask& cm) {
    require_same_shape(high, low, "fill_center");
    require_same_shape(high, cm.block(), "fill_center");
    ComplexGrid out = high;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (cm.in_block(i)) out[i] = low[i];
    return out;
}

/// Scale a window defined for 256-wide k-space to a grid of `rows`.
inline std::size_t scaled_window(std::size_t window_at_256, std::size_t rows) {
    return std::max<std::size_t>(1, std::size_t(std::lround(double(window_at_256) * double(rows) / 256.0)));
}

// ---------------------------------------------------------------------------

enum class OperatorKind { Identity, Weight, Mask };

inline const char* to_string(OperatorKind k) {
    switch (k) {
    case OperatorKind::Identity: return "identity";
    case OperatorKind::Weight: return "weight";
    case OperatorKind::Mask: return "mask";
    }
    return "?";
}

inline OperatorKind operator_kind_from_string(const std::string& s) {
    if (s == "identity") return OperatorKind::Identity;
    if (s == "weight") return OperatorKind::Weight;
    if (s == "mask") return OperatorKind::Mask;
    throw UsageError("unknown operator '" + s + "' (expected weight, mask or identity)");
}

/// Shape-independent description of an extractor. Paired with each trained
/// model so reconstruction can verify it drives the matching branch.
struct FreqOperator {
    OperatorKind kind = OperatorKind::Identity;
    WeightParams weight{};
    std::size_t window = 0;  ///< mask window in pixels of the target grid

    static FreqOperator identity() { return {}; }
    static FreqOperator make_weight(WeightParams p = {}) { return {OperatorKind::Weight, p, 0}; }
    static FreqOperator make_mask(std::size_t window) { return {OperatorKind::Mask, {}, window}; }

    bool operator==(const FreqOperator&) const = default;

    ComplexGrid apply(const ComplexGrid& k) const {
        switch (kind) {
        case OperatorKind::Weight: return apply_weight(k, WeightMatrix(k.rows(), k.cols(), weight));
        case OperatorKind::Mask: return apply_highpass(k, CenterMask(k.rows(), k.cols(), window));
        case OperatorKind::Identity: break;
        }
        return k;
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"kind", to_string(kind)}};
        if (kind == OperatorKind::Weight) {
            j["r_cut"] = weight.r_cut;
            j["p"] = weight.p;
            j["floor"] = weight.floor;
            j["coords"] = weight.coords == CoordinateScale::Normalized ? "normalized" : "raw";
        } else if (kind == OperatorKind::Mask) {
            j["window"] = window;
        }
        return j;
    }

    static FreqOperator from_json(const nlohmann::json& j) {
        FreqOperator op;
        op.kind = operator_kind_from_string(j.at("kind").get<std::string>());
        if (op.kind == OperatorKind::Weight) {
            op.weight.r_cut = j.at("r_cut").get<double>();
            op.weight.p = j.at("p").get<double>();
            op.weight.floor = j.at("floor").get<double>();
            op.weight.coords =
                j.value("coords", std::string("normalized")) == "raw" ? CoordinateScale::Raw : CoordinateScale::Normalized;
        } else if (op.kind == OperatorKind::Mask) {
            op.window = j.at("window").get<std::size_t>();
        }
        return op;
    }
};

// ---------------------------------------------------------------------------

/// Pearson correlation over the flattened entries.
inline double correlation(const RealGrid& x, const RealGrid& y) {
    require_same_shape(x, y, "correlation");
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw UsageError("correlation undefined for constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Image-domain magnitude of the extracted k-space.
inline RealGrid feature_map(const ComplexGrid& k, const FreqOperator& op) {
    return magnitude(ifft2c(op.apply(k)));
}

/// Parses "30,50,70,50" into a sorted, duplicate-free list.
inline std::vector<std::size_t> parse_window_list(const std::string& s) {
    std::set<std::size_t> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto comma = s.find(',', pos);
        const auto tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) {
            std::size_t used = 0;
            long v = 0;
            try {
                v = std::stol(tok, &used);
            } catch (const std::exception&) {
                throw UsageError("bad window list entry '" + tok + "'");
            }
            if (used != tok.size() || v <= 0) throw UsageError("bad window list entry '" + tok + "'");
            out.insert(std::size_t(v));
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) throw UsageError("empty window list");
    return {out.begin(), out.end()};
}

} // namespace cmdm
