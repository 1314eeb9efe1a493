#include "mass/core/volume.hpp"

#include <cmath>

namespace mass {

void Volume::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (!(spacing[static_cast<size_t>(a)] > 0.0) || !std::isfinite(spacing[static_cast<size_t>(a)])) {
            throw InvalidParameter("volume '" + id + "': spacing must be positive along every axis");
        }
        if (voxels.extent(a) < kMinVolumeExtent) {
            throw ShapeError("volume '" + id + "': shape " + format_shape(shape()) + " below minimum extent " +
                             std::to_string(kMinVolumeExtent));
        }
    }
    for (float const v : voxels) {
        if (!std::isfinite(v)) throw InvalidParameter("volume '" + id + "' contains NaN/Inf voxels");
    }
}

int64_t count_foreground(BinaryArray const& m) {
    int64_t n = 0;
    for (uint8_t const v : m) n += v != 0;
    return n;
}

bool is_binary(BinaryArray const& m) {
    for (uint8_t const v : m) {
        if (v > 1) return false;
    }
    return true;
}

BBox bounding_box(BinaryArray const& m) {
    auto const& s = m.shape();
    BBox b{{s[0], s[1], s[2]}, {0, 0, 0}};
    bool any = false;
    for (int64_t i = 0; i < s[0]; ++i) {
        for (int64_t j = 0; j < s[1]; ++j) {
            for (int64_t k = 0; k < s[2]; ++k) {
                if (!m(i, j, k)) continue;
                any = true;
                Index3 const p{i, j, k};
                for (size_t a = 0; a < 3; ++a) {
                    b.lo[a] = std::min(b.lo[a], p[a]);
                    b.hi[a] = std::max(b.hi[a], p[a] + 1);
                }
            }
        }
    }
    if (!any) return BBox{};
    return b;
}

int64_t Mask3D::count() const { return count_foreground(voxels); }
bool Mask3D::is_binary() const { return mass::is_binary(voxels); }
BBox Mask3D::bbox() const { return bounding_box(voxels); }

} // namespace mass
