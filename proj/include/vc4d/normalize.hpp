#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vc4d/asset_io.hpp"
#include "vc4d/bytes.hpp"
#include "vc4d/errors.hpp"

namespace vc4d {

enum class NormKind : std::uint8_t { mean_subtract = 0, zscore = 1, minmax = 2 };

inline const char* norm_kind_name(NormKind kind) {
    switch (kind) {
        case NormKind::mean_subtract: return "mean_subtract";
        case NormKind::zscore: return "zscore";
        case NormKind::minmax: return "minmax";
    }
    return "?";
}

// Per-feature statistics fitted on the training split, applied to every tensor
// entering a model and inverted on everything coming back out. All math is in
// double so apply/invert round-trips hold to 1e-6 absolute even on [0, 255]
// texture features.
struct NormalizationSpec {
    NormKind kind = NormKind::minmax;
    double target_lo = -1.0;                // minmax output range (a, b)
    double target_hi = 1.0;
    std::vector<double> mean;               // mean_subtract, zscore
    std::vector<double> stddev;             // zscore (population)
    std::vector<double> data_min;           // minmax
    std::vector<double> data_max;           // minmax

    std::size_t feature_count() const {
        switch (kind) {
            case NormKind::mean_subtract:
            case NormKind::zscore: return mean.size();
            case NormKind::minmax: return data_min.size();
        }
        return 0;
    }
};

// Fits per-feature statistics over `samples` rows of `features` columns,
// row-major. Population standard deviation (divide by n).
inline NormalizationSpec fit_normalization(NormKind kind, const double* data,
                                           std::size_t samples, std::size_t features,
                                           double target_lo = -1.0, double target_hi = 1.0) {
    if (samples < 2) throw ConfigError("normalization fit needs at least 2 samples");
    if (features == 0) throw ConfigError("normalization fit needs at least 1 feature");
    if (target_hi <= target_lo)
        throw ConfigError("normalization target range must have hi > lo");
    for (std::size_t i = 0; i < samples * features; ++i)
        if (!std::isfinite(data[i]))
            throw ConfigError("normalization fit input contains non-finite values");

    NormalizationSpec spec;
    spec.kind = kind;
    spec.target_lo = target_lo;
    spec.target_hi = target_hi;

    if (kind == NormKind::mean_subtract || kind == NormKind::zscore) {
        spec.mean.assign(features, 0.0);
        for (std::size_t s = 0; s < samples; ++s)
            for (std::size_t f = 0; f < features; ++f) spec.mean[f] += data[s * features + f];
        for (double& m : spec.mean) m /= static_cast<double>(samples);
        if (kind == NormKind::zscore) {
            spec.stddev.assign(features, 0.0);
            for (std::size_t s = 0; s < samples; ++s)
                for (std::size_t f = 0; f < features; ++f) {
                    const double d = data[s * features + f] - spec.mean[f];
                    spec.stddev[f] += d * d;
                }
            for (std::size_t f = 0; f < features; ++f) {
                spec.stddev[f] = std::sqrt(spec.stddev[f] / static_cast<double>(samples));
                if (spec.stddev[f] <= 0.0)
                    throw DegenerateFeatureError("feature " + std::to_string(f) +
                                                 " is constant, zscore is undefined");
            }
        }
    } else {
        spec.data_min.assign(features, data[0]);
        spec.data_max.assign(features, data[0]);
        for (std::size_t f = 0; f < features; ++f)
            spec.data_min[f] = spec.data_max[f] = data[f];
        for (std::size_t s = 1; s < samples; ++s)
            for (std::size_t f = 0; f < features; ++f) {
                const double v = data[s * features + f];
                spec.data_min[f] = std::min(spec.data_min[f], v);
                spec.data_max[f] = std::max(spec.data_max[f], v);
            }
        for (std::size_t f = 0; f < features; ++f)
            if (spec.data_max[f] <= spec.data_min[f])
                throw DegenerateFeatureError("feature " + std::to_string(f) +
                                             " is constant, minmax is undefined");
    }
    return spec;
}

inline NormalizationSpec fit_normalization(NormKind kind, const std::vector<double>& data,
                                           std::size_t samples, std::size_t features,
                                           double target_lo = -1.0, double target_hi = 1.0) {
    if (data.size() != samples * features)
        throw ShapeError("normalization fit: data length does not match samples x features");
    return fit_normalization(kind, data.data(), samples, features, target_lo, target_hi);
}

namespace detail {
inline void require_features(const NormalizationSpec& spec, std::size_t n) {
    if (spec.feature_count() != n)
        throw ShapeError("normalization: vector has " + std::to_string(n) +
                         " features, spec has " + std::to_string(spec.feature_count()));
}
}  // namespace detail

// Out-of-range values extrapolate linearly; nothing is clamped.
inline void apply_normalization(const NormalizationSpec& spec, const double* x, double* out,
                                std::size_t n) {
    detail::require_features(spec, n);
    switch (spec.kind) {
        case NormKind::mean_subtract:
            for (std::size_t f = 0; f < n; ++f) out[f] = x[f] - spec.mean[f];
            break;
        case NormKind::zscore:
            for (std::size_t f = 0; f < n; ++f) out[f] = (x[f] - spec.mean[f]) / spec.stddev[f];
            break;
        case NormKind::minmax: {
            const double span = spec.target_hi - spec.target_lo;
            for (std::size_t f = 0; f < n; ++f)
                out[f] = spec.target_lo + span * (x[f] - spec.data_min[f]) /
                                              (spec.data_max[f] - spec.data_min[f]);
            break;
        }
    }
}

inline void invert_normalization(const NormalizationSpec& spec, const double* y, double* out,
                                 std::size_t n) {
    detail::require_features(spec, n);
    switch (spec.kind) {
        case NormKind::mean_subtract:
            for (std::size_t f = 0; f < n; ++f) out[f] = y[f] + spec.mean[f];
            break;
        case NormKind::zscore:
            for (std::size_t f = 0; f < n; ++f) out[f] = y[f] * spec.stddev[f] + spec.mean[f];
            break;
        case NormKind::minmax: {
            const double span = spec.target_hi - spec.target_lo;
            for (std::size_t f = 0; f < n; ++f)
                out[f] = spec.data_min[f] + (y[f] - spec.target_lo) / span *
                                                (spec.data_max[f] - spec.data_min[f]);
            break;
        }
    }
}

inline std::vector<double> apply_normalization(const NormalizationSpec& spec,
                                               const std::vector<double>& x) {
    std::vector<double> out(x.size());
    apply_normalization(spec, x.data(), out.data(), x.size());
    return out;
}

inline std::vector<double> invert_normalization(const NormalizationSpec& spec,
                                                const std::vector<double>& y) {
    std::vector<double> out(y.size());
    invert_normalization(spec, y.data(), out.data(), y.size());
    return out;
}

// Mesh feature layout: [x0, y0, z0, x1, y1, z1, ...], length 3N.
inline std::vector<float> flatten_mesh(const MeshFrame& frame) {
    return frame.vertices;
}

inline MeshFrame unflatten_mesh(std::vector<float> features, std::vector<std::uint32_t> faces,
                                int frame_index = 0) {
    if (features.size() % 3 != 0)
        throw ShapeError("mesh feature vector length must be a multiple of 3");
    MeshFrame frame;
    frame.vertices = std::move(features);
    frame.faces = std::move(faces);
    frame.frame_index = frame_index;
    return frame;
}

inline void serialize_spec(ByteWriter& w, const NormalizationSpec& spec) {
    w.u8(static_cast<std::uint8_t>(spec.kind));
    w.f64(spec.target_lo);
    w.f64(spec.target_hi);
    auto write_array = [&](const std::vector<double>& a) {
        w.u32(static_cast<std::uint32_t>(a.size()));
        w.f64_array(a.data(), a.size());
    };
    write_array(spec.mean);
    write_array(spec.stddev);
    write_array(spec.data_min);
    write_array(spec.data_max);
}

template <typename E>
inline NormalizationSpec deserialize_spec(ByteReader<E>& r) {
    NormalizationSpec spec;
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw E("unknown normalization kind " + std::to_string(kind));
    spec.kind = static_cast<NormKind>(kind);
    spec.target_lo = r.f64();
    spec.target_hi = r.f64();
    auto read_array = [&](std::vector<double>& a) {
        const std::uint32_t n = r.u32();
        a.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) a[i] = r.f64();
    };
    read_array(spec.mean);
    read_array(spec.stddev);
    read_array(spec.data_min);
    read_array(spec.data_max);
    return spec;
}

}  // namespace vc4d
