#pragma once

#include "mass/core/volume.hpp"

namespace mass {

/// 2|a∩b| / (|a|+|b|), 1.0 when both are empty. Throws ShapeError on mismatch.
double dice_score(BinaryArray const& a, BinaryArray const& b);
double dice_score(Mask3D const& a, Mask3D const& b);

/// |a∩b| / |a∪b|, 1.0 when both are empty.
double iou(BinaryArray const& a, BinaryArray const& b);

int64_t intersection_count(BinaryArray const& a, BinaryArray const& b);

} // namespace mass
