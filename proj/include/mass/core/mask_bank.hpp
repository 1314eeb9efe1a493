#pragma once

#include "mass/core/volume.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mass {

inline constexpr int kMaskBankSchemaVersion = 1;

struct MaskMeta {
    uint32_t index = 0;
    int64_t voxel_count = 0;
    BBox bbox;
    int seed_axis = 0;
    int64_t seed_slice = -1;
    MaskSource source = MaskSource::GT;
    uint32_t crc32 = 0;
};

/// Masks of one volume, all with the same shape and volume id.
struct MaskBank {
    std::string volume_id;
    Shape3 shape{0, 0, 0};
    std::vector<Mask3D> masks;

    size_t size() const { return masks.size(); }
    bool empty() const { return masks.empty(); }

    /// Throws ShapeError / PreconditionError when masks disagree on shape or id.
    void validate() const;
    std::vector<MaskMeta> manifest() const;
};

/// Writes `dir/manifest.json` and `dir/masks.rle`.
void save_mask_bank(MaskBank const& bank, std::filesystem::path const& dir);
/// Verifies schema version and per-mask CRC32 (ChecksumError names the mask).
MaskBank load_mask_bank(std::filesystem::path const& dir);

} // namespace mass
