#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mass::maskgen {

enum class Backend { BUILTIN, EXTERNAL };

/// Quantize-and-merge region proposer and slice-to-slice propagator.
struct BuiltinParams {
    int levels = 6;                 ///< luminance quantization levels over [0, 255]
    double merge_threshold = 40.0;  ///< max mean-luminance gap for hierarchical merging
    int median_radius = 1;          ///< per-channel median pre-filter (0 disables)
    int tiny_leaf_area = 4;         ///< leaves below this are absorbed before merging
    int64_t min_area = 16;          ///< minimum proposal area (pixels)
    double pred_iou_thresh = 0.35;  ///< boundary-contrast quality floor
    double stability_thresh = 0.6;  ///< IoU floor under a half-level quantization shift
    double stop_iou = 0.5;          ///< propagation stops below this slice-to-slice IoU
    int dilation_radius = 3;        ///< propagation search footprint
};

struct ExternalParams {
    std::filesystem::path exchange_dir; ///< empty: $MASS_CACHE_DIR/<volume id>
    double timeout_s = 600.0;
    double poll_interval_s = 0.2;
    int points_per_side = 32; ///< forwarded to the external segmenter
};

struct MaskGenConfig {
    double d_mm = 15.0;
    std::vector<std::pair<double, double>> ct_windows{{60, 350}, {15, 250}, {150, 1200}};
    std::vector<std::pair<double, double>> mr_quantiles{{5, 95}, {15, 85}, {1, 99}};
    int max_masks_per_slice = 70;
    int64_t min_volume_voxels = 64;
    double dedup_iou = 0.9;
    Backend backend = Backend::BUILTIN;
    BuiltinParams builtin;
    ExternalParams external;
    bool multi_axis = false;

    /// Throws ConfigError on violated invariants.
    void validate() const;
};

void to_json(nlohmann::json& j, MaskGenConfig const& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(nlohmann::json const& j, MaskGenConfig& c);

} // namespace mass::maskgen
