#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace mass {

using Shape3 = std::array<int64_t, 3>;
using Index3 = std::array<int64_t, 3>;
using Spacing3 = std::array<double, 3>;

enum class Modality { CT, MR, PET, SYNTH };

enum class MaskSource { BUILTIN, EXTERNAL, GT, PHANTOM };

std::string_view to_string(Modality m);
std::string_view to_string(MaskSource s);

/// Throws InvalidParameter listing the supported names.
Modality parse_modality(std::string_view name);
MaskSource parse_mask_source(std::string_view name);

inline int64_t voxel_count(Shape3 const& s) { return s[0] * s[1] * s[2]; }

std::string format_shape(Shape3 const& s);

/// Inclusive-exclusive box [lo, hi).
struct BBox {
    Index3 lo{0, 0, 0};
    Index3 hi{0, 0, 0};

    bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
    bool intersects(BBox const& o) const {
        for (int a = 0; a < 3; ++a) {
            if (hi[a] <= o.lo[a] || o.hi[a] <= lo[a]) return false;
        }
        return true;
    }
};

} // namespace mass
