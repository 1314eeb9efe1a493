#pragma once

#include "mass/core/volume.hpp"

namespace mass {

enum class Interp { Linear, Nearest };

/// round(shape_i * spacing_i / target_i), at least 1. Throws ShapeError if two
/// or more axes would collapse to a single voxel.
Shape3 resampled_shape(Shape3 const& shape, Spacing3 const& spacing, Spacing3 const& target);

Volume resample(Volume const& v, Spacing3 const& target, Interp mode = Interp::Linear);

/// Nearest-neighbour resampling; binary in, binary out.
Mask3D resample(Mask3D const& m, Spacing3 const& spacing, Spacing3 const& target);

/// Resample a raw array to an explicit output shape (cell-centred mapping).
Array3D<float> resample_array(Array3D<float> const& a, Shape3 const& out_shape, Interp mode);
BinaryArray resample_array(BinaryArray const& a, Shape3 const& out_shape);

} // namespace mass
