#pragma once

#include "mass/core/mask_bank.hpp"
#include "mass/core/volume.hpp"
#include "mass/maskgen/config.hpp"
#include "mass/maskgen/hierarchy.hpp"

#include <filesystem>
#include <memory>
#include <vector>

namespace mass::maskgen {

/// Axis whose two in-plane spacings have the smallest mean; axis 0 when the
/// volume is near-isotropic (max/min spacing <= 1.3).
int select_axis(Spacing3 const& spacing);

inline constexpr double kIsotropyRatio = 1.3;

/// {0, k, 2k, ...} below the extent, k = max(1, floor(d_mm / spacing[axis])).
std::vector<int64_t> sample_seed_slices(Volume const& v, int axis, double d_mm);
int64_t slice_interval(double d_mm, double axis_spacing);

/// Per-volume three-channel [0, 255] representation.
struct ThreeChannelVolume {
    std::array<Array3D<float>, 3> channels;
    bool degenerate = false; ///< a quantile mapping collapsed (constant input)

    Slice3 slice(int axis, int64_t index) const;
};

/// CT: three windows. MR/PET: three quantile ranges over the volume.
/// Throws InvalidParameter for modalities without a defined mapping.
ThreeChannelVolume make_3channel(Volume const& v, MaskGenConfig const& cfg);

struct SeedProposal2D {
    int64_t slice_index = 0;
    int axis = 0;
    Image2D<uint8_t> mask2d;
    int64_t area = 0;
    double quality = 1.0;   ///< boundary-contrast score (BUILTIN)
    double stability = 1.0; ///< IoU under quantization shift (BUILTIN)
};

/// BUILTIN 2D proposer. `rng_seed` drives the size-stratified cap.
std::vector<SeedProposal2D> propose_2d(Slice3 const& slice, MaskGenConfig const& cfg, uint64_t rng_seed,
                                       int axis = 0, int64_t slice_index = 0);

/// File-exchange backend for an out-of-process promptable segmenter.
class ExternalExchange {
  public:
    ExternalExchange(std::filesystem::path dir, ExternalParams params);

    /// Writes slice PNGs and request.json, then waits for the `done` sentinel.
    void request(std::string const& volume_id, int axis, std::vector<int64_t> const& indices,
                 std::vector<Slice3> const& slices, MaskGenConfig const& cfg);
    /// Reads `proposals_<idx>.rle`; throws BackendError naming the file.
    std::vector<SeedProposal2D> read(int axis, int64_t index, int64_t rows, int64_t cols, int64_t min_area) const;

    std::filesystem::path const& dir() const { return dir_; }

  private:
    std::filesystem::path dir_;
    ExternalParams params_;
};

/// Slice-to-slice propagator over precomputed per-slice hierarchies. Read-only
/// after construction, so concurrent propagate() calls are safe.
class Propagator {
  public:
    Propagator(ThreeChannelVolume const& tc, int axis, BuiltinParams const& p);

    Mask3D propagate(SeedProposal2D const& seed, std::string const& volume_id) const;
    int axis() const { return axis_; }
    RegionHierarchy const& hierarchy(int64_t slice) const { return slices_[static_cast<size_t>(slice)]; }

  private:
    int axis_;
    Shape3 shape_;
    BuiltinParams params_;
    std::vector<RegionHierarchy> slices_;
};

/// Bidirectional propagation from the seed slice (convenience wrapper that
/// builds a Propagator for this one seed).
Mask3D propagate_3d(Volume const& v, SeedProposal2D const& seed, MaskGenConfig const& cfg);

/// Largest seed-touching component, minimum volume, then seeded dedup.
MaskBank postprocess_bank(std::vector<Mask3D> const& raw, MaskGenConfig const& cfg, uint64_t rng_seed);

struct PipelineStats {
    int axis = 0;
    size_t seed_slices = 0;
    size_t proposals = 0;
    size_t raw_masks = 0;
    size_t final_masks = 0;
};

/// Full annotation-free pipeline for one volume. Deterministic in
/// (volume, cfg, rng_seed).
MaskBank generate_mask_bank(Volume const& v, MaskGenConfig const& cfg, uint64_t rng_seed,
                            PipelineStats* stats = nullptr);

struct StructureQuality {
    double best = 0;       ///< percent
    double avg = 0;        ///< percent, over bank masks touching the GT
    double pct_gt40 = 0;   ///< percent of touching masks with Dice > 0.40
    int64_t n_overlapping = 0;
};

struct QualityReport {
    std::vector<StructureQuality> per_structure;
    StructureQuality aggregate; ///< means over structures
    bool empty_bank = false;
};

QualityReport mask_quality_stats(MaskBank const& bank, std::vector<Mask3D> const& gt);

} // namespace mass::maskgen
