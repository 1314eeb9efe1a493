#pragma once

#include "mass/core/array3d.hpp"
#include "mass/core/volume.hpp"

#include <span>
#include <vector>

namespace mass {

/// Linear clamp window: 255 * clamp((x - (center - width/2)) / width, 0, 1).
/// Throws InvalidParameter for width <= 0.
float window_map(float x, double center, double width);
std::vector<float> window_map(std::span<float const> values, double center, double width);
Array3D<float> window_map(Array3D<float> const& v, double center, double width);

/// Linear-interpolated percentile (numpy "linear" convention). pct in [0, 100].
double percentile(std::span<float const> values, double pct);

struct QuantileMapResult {
    std::vector<float> values;
    double lo_value = 0.0;
    double hi_value = 0.0;
    bool degenerate = false; ///< lo and hi quantiles coincide; values are all zero.
};

/// Maps values at/below the lo quantile to 0, at/above the hi quantile to 255.
QuantileMapResult quantile_map(std::span<float const> values, double lo_pct, double hi_pct);
QuantileMapResult quantile_map(Volume const& v, double lo_pct, double hi_pct);

/// Fixed CT range used before augmentation and by the network.
inline constexpr double kCtNormLo = -400.0;
inline constexpr double kCtNormHi = 1500.0;

/// Network-facing intensity normalization to roughly [0, 1]: CT by the fixed
/// range above, other modalities by their (1, 99) percentiles.
Array3D<float> normalize_intensity(Volume const& v);

} // namespace mass
