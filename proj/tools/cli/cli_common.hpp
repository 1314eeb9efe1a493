#pragma once

#include "mass/core/volume.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mass::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kData = 3 };

/// Runs `fn`, mapping library errors onto exit codes and printing them.
int guarded(std::function<void()> const& fn);

/// Git blob hash: SHA-1 over "blob <size>\0" followed by the file bytes.
std::string git_blob_hash(fs::path const& file);

struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    uint64_t seed = 0;
    nlohmann::json config = nlohmann::json::object();
    std::vector<fs::path> inputs; ///< files or directories (hashed recursively)
};

/// Writes `dir/run-manifest.json`; refuses when one already exists unless
/// the directory is being resumed.
void write_run_manifest(fs::path const& dir, RunManifest const& m, bool overwrite = false);

void write_json(fs::path const& path, nlohmann::json const& j);
nlohmann::json read_json(fs::path const& path);

/// Case directory layout: image.{nii.gz,nii,json}, optional labels.nii.gz,
/// gt/ and bank/ mask banks.
fs::path find_image(fs::path const& case_dir);
std::vector<fs::path> list_cases(fs::path const& dir);
Volume load_image(fs::path const& path);

/// Binary mask from a NIfTI file: voxels equal to `label`, or nonzero when label < 0.
BinaryArray load_mask(fs::path const& path, int label);
/// mask.nii.gz, else labels.nii.gz selected by `label`.
BinaryArray load_case_mask(fs::path const& case_dir, int label);

/// Mid-slice PNGs of one (gray) or three (RGB) channels scaled by [lo, hi].
void write_mid_slices(fs::path const& dir, std::string const& prefix, std::vector<Array3D<float> const*> const& ch,
                      float lo, float hi);

Shape3 parse_shape(std::string const& s);

} // namespace mass::cli
