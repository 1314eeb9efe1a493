#include "mass/core/metrics.hpp"

#include "mass/core/error.hpp"

namespace mass {

int64_t intersection_count(BinaryArray const& a, BinaryArray const& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mask shape mismatch: " + format_shape(a.shape()) + " vs " + format_shape(b.shape()));
    }
    int64_t n = 0;
    for (int64_t i = 0; i < a.size(); ++i) n += (a[i] != 0) & (b[i] != 0);
    return n;
}

double dice_score(BinaryArray const& a, BinaryArray const& b) {
    int64_t const inter = intersection_count(a, b);
    int64_t const total = count_foreground(a) + count_foreground(b);
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double dice_score(Mask3D const& a, Mask3D const& b) { return dice_score(a.voxels, b.voxels); }

double iou(BinaryArray const& a, BinaryArray const& b) {
    int64_t const inter = intersection_count(a, b);
    int64_t const uni = count_foreground(a) + count_foreground(b) - inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace mass
