#pragma once

#include "mass/core/volume.hpp"

#include <filesystem>
#include <optional>

namespace mass {

/// Reads `.nii`, `.nii.gz` (NIfTI-1) or `.json` (raw header + float32-le blob).
/// NIfTI axes (x, y, z) map onto volume axes (0, 1, 2).
Volume read_volume(std::filesystem::path const& path, std::optional<Modality> modality = std::nullopt);
void write_volume(Volume const& v, std::filesystem::path const& path);

/// Label maps / binary masks as uint8 NIfTI.
Array3D<uint8_t> read_label_map(std::filesystem::path const& path);
void write_label_map(Array3D<uint8_t> const& labels, Spacing3 const& spacing, std::filesystem::path const& path);

/// Raw fallback: `<stem>.json` header with shape/spacing/modality/dtype and a
/// sibling `<stem>.raw` blob.
Volume read_raw_volume(std::filesystem::path const& header);
void write_raw_volume(Volume const& v, std::filesystem::path const& header);

} // namespace mass
