#pragma once

#include "mass/core/volume.hpp"

#include <cstdint>
#include <vector>

namespace mass::phantom {

enum class Style { CT_LIKE, MR_LIKE };

inline constexpr int kMaxStructures = 16;
inline constexpr int64_t kMinPhantomExtent = 32;
inline constexpr int kPlacementAttempts = 1000;

/// CT_LIKE intensities (HU). MR_LIKE volumes are an affine image of these.
inline constexpr double kBackgroundHu = -100.0;
inline constexpr double kDynamicRangeHu = 400.0;

struct PhantomSpec {
    uint64_t seed = 0;
    Shape3 shape{64, 64, 64};
    int n_structures = 4;
    Style modality_style = Style::CT_LIKE;
    double noise_std = 0.02; ///< fraction of the dynamic range
    Spacing3 spacing{1.5, 1.5, 1.5};
    /// Template ids to place; empty means 0 .. n_structures-1.
    std::vector<int> templates;

    void validate() const;
};

enum class ShapeKind { Ellipsoid, Box, Tube };

/// A structure "identity": stable slot, intensity and shape family shared by
/// every phantom, so structure k plays the same role across seeds.
struct StructureTemplate {
    ShapeKind kind;
    double intensity_hu;
    std::array<double, 3> center; ///< fraction of extent
    std::array<double, 3> size;   ///< radii / half-sides as fraction of the smallest extent
};

StructureTemplate const& structure_template(int id);

struct PhantomResult {
    Volume volume;
    std::vector<Mask3D> gt; ///< one binary, 26-connected mask per structure
    std::vector<int> template_ids;
    std::vector<double> intensities_hu;

    /// Label map: structure index + 1, later structures drawn on top.
    Array3D<uint8_t> label_map() const;
};

/// Deterministic in `spec`; throws PlacementError when the overlap/size
/// bounds cannot be met within kPlacementAttempts tries for some structure.
PhantomResult generate_phantom(PhantomSpec const& spec);

} // namespace mass::phantom
