#include "mass/maskgen/config.hpp"

#include "mass/core/error.hpp"

#include <cmath>
#include <set>

namespace mass::maskgen {

using nlohmann::json;

namespace {

void check_pairs(std::vector<std::pair<double, double>> const& pairs, char const* name) {
    if (pairs.size() != 3) throw ConfigError(std::string(name) + " must list exactly three pairs");
    for (auto const& [a, b] : pairs) {
        if (!std::isfinite(a) || !std::isfinite(b)) throw ConfigError(std::string(name) + " values must be finite");
    }
}

json pairs_json(std::vector<std::pair<double, double>> const& pairs) {
    json out = json::array();
    for (auto const& [a, b] : pairs) out.push_back({a, b});
    return out;
}

std::vector<std::pair<double, double>> parse_pairs(json const& j, char const* name) {
    if (!j.is_array()) throw ConfigError(std::string(name) + " must be an array of pairs");
    std::vector<std::pair<double, double>> out;
    for (auto const& p : j) {
        if (!p.is_array() || p.size() != 2) throw ConfigError(std::string(name) + " entries must be [a, b] pairs");
        out.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    return out;
}

template <typename T> void read_opt(json const& j, char const* key, T& dst) {
    if (auto it = j.find(key); it != j.end()) {
        try {
            dst = it->get<T>();
        } catch (json::exception const& e) {
            throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

void reject_unknown(json const& j, std::set<std::string> const& known, char const* where) {
    for (auto const& [k, _] : j.items()) {
        if (!known.contains(k)) throw ConfigError(std::string("unknown key '") + k + "' in " + where);
    }
}

} // namespace

void MaskGenConfig::validate() const {
    if (!(d_mm > 0)) throw ConfigError("d_mm must be > 0");
    if (!(dedup_iou > 0 && dedup_iou <= 1)) throw ConfigError("dedup_iou must be in (0, 1]");
    if (max_masks_per_slice < 1) throw ConfigError("max_masks_per_slice must be >= 1");
    if (min_volume_voxels < 1) throw ConfigError("min_volume_voxels must be >= 1");
    check_pairs(ct_windows, "ct_windows");
    for (auto const& [c, w] : ct_windows) {
        if (!(w > 0)) throw ConfigError("ct_windows widths must be > 0");
    }
    check_pairs(mr_quantiles, "mr_quantiles");
    for (auto const& [lo, hi] : mr_quantiles) {
        if (!(lo >= 0 && lo < hi && hi <= 100)) throw ConfigError("mr_quantiles need 0 <= lo < hi <= 100");
    }
    auto const& b = builtin;
    if (b.levels < 2) throw ConfigError("backend_params.levels must be >= 2");
    if (!(b.merge_threshold >= 0)) throw ConfigError("backend_params.merge_threshold must be >= 0");
    if (b.median_radius < 0) throw ConfigError("backend_params.median_radius must be >= 0");
    if (b.min_area < 1) throw ConfigError("backend_params.min_area must be >= 1");
    if (!(b.stop_iou > 0 && b.stop_iou <= 1)) throw ConfigError("backend_params.stop_iou must be in (0, 1]");
    if (b.dilation_radius < 0) throw ConfigError("backend_params.dilation_radius must be >= 0");
    if (!(external.timeout_s > 0)) throw ConfigError("backend_params.timeout_s must be > 0");
    if (!(external.poll_interval_s > 0)) throw ConfigError("backend_params.poll_interval_s must be > 0");
}

void to_json(json& j, MaskGenConfig const& c) {
    j = json{
        {"d_mm", c.d_mm},
        {"ct_windows", pairs_json(c.ct_windows)},
        {"mr_quantiles", pairs_json(c.mr_quantiles)},
        {"max_masks_per_slice", c.max_masks_per_slice},
        {"min_volume_voxels", c.min_volume_voxels},
        {"dedup_iou", c.dedup_iou},
        {"backend", c.backend == Backend::BUILTIN ? "BUILTIN" : "EXTERNAL"},
        {"multi_axis", c.multi_axis},
        {"backend_params",
         {{"levels", c.builtin.levels},
          {"merge_threshold", c.builtin.merge_threshold},
          {"median_radius", c.builtin.median_radius},
          {"tiny_leaf_area", c.builtin.tiny_leaf_area},
          {"min_area", c.builtin.min_area},
          {"pred_iou_thresh", c.builtin.pred_iou_thresh},
          {"stability_thresh", c.builtin.stability_thresh},
          {"stop_iou", c.builtin.stop_iou},
          {"dilation_radius", c.builtin.dilation_radius},
          {"exchange_dir", c.external.exchange_dir.string()},
          {"timeout_s", c.external.timeout_s},
          {"poll_interval_s", c.external.poll_interval_s},
          {"points_per_side", c.external.points_per_side}}},
    };
}

void from_json(json const& j, MaskGenConfig& c) {
    if (!j.is_object()) throw ConfigError("mask generation config must be a JSON object");
    reject_unknown(j,
                   {"d_mm", "ct_windows", "mr_quantiles", "max_masks_per_slice", "min_volume_voxels", "dedup_iou",
                    "backend", "backend_params", "multi_axis"},
                   "mask generation config");
    read_opt(j, "d_mm", c.d_mm);
    if (j.contains("ct_windows")) c.ct_windows = parse_pairs(j["ct_windows"], "ct_windows");
    if (j.contains("mr_quantiles")) c.mr_quantiles = parse_pairs(j["mr_quantiles"], "mr_quantiles");
    read_opt(j, "max_masks_per_slice", c.max_masks_per_slice);
    read_opt(j, "min_volume_voxels", c.min_volume_voxels);
    read_opt(j, "dedup_iou", c.dedup_iou);
    read_opt(j, "multi_axis", c.multi_axis);
    if (j.contains("backend")) {
        std::string const b = j["backend"].get<std::string>();
        if (b == "BUILTIN") c.backend = Backend::BUILTIN;
        else if (b == "EXTERNAL") c.backend = Backend::EXTERNAL;
        else throw ConfigError("backend must be BUILTIN or EXTERNAL, got '" + b + "'");
    }
    if (j.contains("backend_params")) {
        json const& p = j["backend_params"];
        if (!p.is_object()) throw ConfigError("backend_params must be an object");
        reject_unknown(p,
                       {"levels", "merge_threshold", "median_radius", "tiny_leaf_area", "min_area", "pred_iou_thresh",
                        "stability_thresh", "stop_iou", "dilation_radius", "exchange_dir", "timeout_s",
                        "poll_interval_s", "points_per_side"},
                       "backend_params");
        read_opt(p, "levels", c.builtin.levels);
        read_opt(p, "merge_threshold", c.builtin.merge_threshold);
        read_opt(p, "median_radius", c.builtin.median_radius);
        read_opt(p, "tiny_leaf_area", c.builtin.tiny_leaf_area);
        read_opt(p, "min_area", c.builtin.min_area);
        read_opt(p, "pred_iou_thresh", c.builtin.pred_iou_thresh);
        read_opt(p, "stability_thresh", c.builtin.stability_thresh);
        read_opt(p, "stop_iou", c.builtin.stop_iou);
        read_opt(p, "dilation_radius", c.builtin.dilation_radius);
        std::string dir = c.external.exchange_dir.string();
        read_opt(p, "exchange_dir", dir);
        c.external.exchange_dir = dir;
        read_opt(p, "timeout_s", c.external.timeout_s);
        read_opt(p, "poll_interval_s", c.external.poll_interval_s);
        read_opt(p, "points_per_side", c.external.points_per_side);
    }
    c.validate();
}

} // namespace mass::maskgen
