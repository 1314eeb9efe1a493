#pragma once

#include "mass/core/array3d.hpp"
#include "mass/core/volume.hpp"

#include <cstdint>
#include <vector>

namespace mass {

struct ComponentLabels3D {
    Array3D<int32_t> labels; ///< 0 = background, components numbered from 1.
    std::vector<int64_t> sizes; ///< sizes[label - 1]
};

/// 26-connected components of the foreground.
ComponentLabels3D label_components(BinaryArray const& m);

bool is_connected(BinaryArray const& m);

/// Largest 26-connected component of `m` that touches `anchor`. Empty when no
/// component touches it.
BinaryArray largest_component_touching(BinaryArray const& m, BinaryArray const& anchor);

struct ComponentLabels2D {
    Image2D<int32_t> labels; ///< components numbered from 0
    int32_t count = 0;
};

/// 4-connected components of pixels sharing one integer value.
ComponentLabels2D label_regions_2d(Image2D<int32_t> const& values);

/// 4-connected components of a binary image (background excluded, labels from 1).
ComponentLabels2D label_foreground_2d(Image2D<uint8_t> const& m);

/// Binary dilation by a disk of the given radius (Euclidean).
Image2D<uint8_t> dilate_disk(Image2D<uint8_t> const& m, int radius);

} // namespace mass
