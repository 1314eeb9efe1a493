#pragma once

#include "mass/core/array3d.hpp"
#include "mass/core/types.hpp"

#include <cstdint>
#include <string>

namespace mass {

/// Smallest extent a volume may have along any axis.
inline constexpr int64_t kMinVolumeExtent = 8;

struct Volume {
    Array3D<float> voxels;
    Spacing3 spacing{1.0, 1.0, 1.0};
    Modality modality = Modality::CT;
    std::string id;

    Shape3 const& shape() const { return voxels.shape(); }

    /// Positive spacing, finite voxels, extents >= kMinVolumeExtent.
    void validate() const;
};

using BinaryArray = Array3D<uint8_t>;

struct Mask3D {
    BinaryArray voxels;
    int seed_axis = 0;
    int64_t seed_slice = -1; ///< -1 when the mask has no seed slice (GT, phantom).
    MaskSource source = MaskSource::GT;
    std::string volume_id;

    Shape3 const& shape() const { return voxels.shape(); }
    int64_t count() const;
    bool is_binary() const;
    BBox bbox() const;
};

int64_t count_foreground(BinaryArray const& m);
bool is_binary(BinaryArray const& m);
BBox bounding_box(BinaryArray const& m);

} // namespace mass
