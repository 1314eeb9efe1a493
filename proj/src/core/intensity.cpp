#include "mass/core/intensity.hpp"

#include "mass/core/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace mass {

float window_map(float x, double center, double width) {
    if (!(width > 0.0)) throw InvalidParameter("window width must be positive, got " + std::to_string(width));
    double const lo = center - width / 2.0;
    double const t = std::clamp((static_cast<double>(x) - lo) / width, 0.0, 1.0);
    return static_cast<float>(255.0 * t);
}

std::vector<float> window_map(std::span<float const> values, double center, double width) {
    if (!(width > 0.0)) throw InvalidParameter("window width must be positive, got " + std::to_string(width));
    std::vector<float> out(values.size());
    std::transform(values.begin(), values.end(), out.begin(),
                   [&](float x) { return window_map(x, center, width); });
    return out;
}

Array3D<float> window_map(Array3D<float> const& v, double center, double width) {
    return Array3D<float>(v.shape(), window_map(v.values(), center, width));
}

double percentile(std::span<float const> values, double pct) {
    if (values.empty()) throw InvalidParameter("percentile of empty range");
    if (pct < 0.0 || pct > 100.0) throw InvalidParameter("percentile outside [0, 100]");
    std::vector<float> v(values.begin(), values.end());
    double const pos = pct / 100.0 * static_cast<double>(v.size() - 1);
    auto const lo = static_cast<size_t>(std::floor(pos));
    size_t const hi = std::min(lo + 1, v.size() - 1);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    double const a = v[lo];
    double b = a;
    if (hi != lo) b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + (pos - static_cast<double>(lo)) * (b - a);
}

QuantileMapResult quantile_map(std::span<float const> values, double lo_pct, double hi_pct) {
    if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0)) {
        throw InvalidParameter("quantile range requires 0 <= lo < hi <= 100");
    }
    QuantileMapResult r;
    r.values.assign(values.size(), 0.0f);
    if (values.empty()) return r;
    r.lo_value = percentile(values, lo_pct);
    r.hi_value = percentile(values, hi_pct);
    if (!(r.hi_value > r.lo_value)) {
        r.degenerate = true;
        spdlog::warn("quantile_map: degenerate input (lo quantile == hi quantile == {}), returning zeros", r.lo_value);
        return r;
    }
    double const span = r.hi_value - r.lo_value;
    for (size_t i = 0; i < values.size(); ++i) {
        double const t = std::clamp((static_cast<double>(values[i]) - r.lo_value) / span, 0.0, 1.0);
        r.values[i] = static_cast<float>(255.0 * t);
    }
    return r;
}

QuantileMapResult quantile_map(Volume const& v, double lo_pct, double hi_pct) {
    return quantile_map(v.voxels.values(), lo_pct, hi_pct);
}

Array3D<float> normalize_intensity(Volume const& v) {
    Array3D<float> out(v.shape());
    if (v.modality == Modality::CT) {
        double const span = kCtNormHi - kCtNormLo;
        for (int64_t i = 0; i < out.size(); ++i) {
            out[i] = static_cast<float>(std::clamp((v.voxels[i] - kCtNormLo) / span, 0.0, 1.0));
        }
        return out;
    }
    auto q = quantile_map(v, 1.0, 99.0);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = q.values[static_cast<size_t>(i)] / 255.0f;
    return out;
}

} // namespace mass
