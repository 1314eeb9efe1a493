#pragma once

#include "mass/core/rng.hpp"
#include "mass/core/volume.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <string>
#include <utility>

namespace mass::augment {

using Range = std::pair<double, double>;

struct AugmentConfig {
    double p_spatial = 0.8;
    double scale = 0.3;   ///< isotropic zoom factor drawn from [1 - scale, 1 + scale]
    double rot_deg = 30;  ///< per-axis rotation range (degrees)
    double shear = 0.1;   ///< off-diagonal shear range
    double p_appearance = 0.2; ///< per appearance sub-transform
    Range brightness_mult{0.8, 1.3};
    double brightness_add_std = 0.15;
    Range gamma{0.8, 1.3};
    Range contrast{0.8, 1.3};
    Range blur_sigma{0.7, 1.5};
    double noise_std = 0.04;
    Shape3 crop{32, 32, 32};
    int64_t min_fg_voxels = 16;
    /// Floor for the query view; -1 means min_fg_voxels. 0 admits target-free queries.
    int64_t query_min_fg_voxels = -1;
    double fg_crop_prob = 0.8;
    bool independent_crops = false;

    int64_t resolved_query_min_fg() const { return query_min_fg_voxels < 0 ? min_fg_voxels : query_min_fg_voxels; }

    /// Augmentation switched off; crops stay shared.
    static AugmentConfig identity(Shape3 crop);
    void validate() const;
};

void to_json(nlohmann::json& j, AugmentConfig const& c);
void from_json(nlohmann::json const& j, AugmentConfig& c);

/// Maps output offsets to source coordinates: src = start + o + (M - I)(o - half),
/// half = (out - 1) / 2. Identity M samples lattice points exactly.
struct Affine {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
    bool is_identity() const;
};

struct AffineParams {
    double scale = 1.0;
    std::array<double, 3> rot_rad{0, 0, 0};
    std::array<double, 3> shear{0, 0, 0}; ///< (0,1), (0,2), (1,2) entries
};

Affine compose_affine(AffineParams const& p);
/// Draws parameters from `cfg` with probability p_spatial, otherwise identity.
AffineParams draw_affine(Rng& rng, AugmentConfig const& cfg);

/// Resamples `img` (linear, `pad` outside) and `mask` (nearest, 0 outside)
/// into an `out`-shaped window at `start`.
Array3D<float> warp_image(Array3D<float> const& img, Affine const& a, Index3 const& start, Shape3 const& out, float pad);
BinaryArray warp_mask(BinaryArray const& mask, Affine const& a, Index3 const& start, Shape3 const& out);

/// One affine draw applied to both arrays over their full extent.
std::pair<Array3D<float>, BinaryArray> spatial_augment(Array3D<float> const& img, BinaryArray const& mask, Rng& rng,
                                                        AugmentConfig const& cfg);

/// Brightness (mult, add), gamma, contrast, blur, noise; each with p_appearance.
/// Output clamped to [kClampLo, kClampHi] whenever any sub-transform fires.
Array3D<float> appearance_augment(Array3D<float> const& img, Rng& rng, AugmentConfig const& cfg);

inline constexpr float kClampLo = -1.0f;
inline constexpr float kClampHi = 2.0f;
inline constexpr int kEpisodeResamples = 10;

/// Network-normalized image plus its padding value (1st percentile).
struct PreparedVolume {
    Array3D<float> image;
    float pad = 0.0f;
    std::string id;
};

PreparedVolume prepare_volume(Volume const& v);

struct ViewProvenance {
    Index3 start{0, 0, 0};
    AffineParams params;
};

struct EpisodeProvenance {
    std::string volume_id;
    int64_t mask_index = -1;
    int attempts = 0;
    ViewProvenance s, q;
};

struct Episode {
    Array3D<float> x_s, x_q;
    BinaryArray y_s, y_q;
    EpisodeProvenance provenance;
};

/// Reference and query views of one (image, mask). Throws EpisodeRejected when
/// either view keeps falling below min_fg_voxels after kEpisodeResamples redraws.
Episode make_episode(PreparedVolume const& v, BinaryArray const& mask, Rng& rng, AugmentConfig const& cfg,
                     int64_t mask_index = -1);
Episode make_episode(Volume const& v, Mask3D const& m, Rng& rng, AugmentConfig const& cfg);

} // namespace mass::augment
