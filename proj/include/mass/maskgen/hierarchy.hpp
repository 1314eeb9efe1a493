#pragma once

#include "mass/core/array3d.hpp"
#include "mass/maskgen/config.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace mass::maskgen {

/// Three [0, 255] channels of one slice.
struct Slice3 {
    std::array<Image2D<float>, 3> ch;
    int64_t rows() const { return ch[0].rows; }
    int64_t cols() const { return ch[0].cols; }
};

struct RegionNode {
    int32_t parent = -1;
    int32_t left = -1; ///< children; -1 for leaves
    int32_t right = -1;
    int64_t area = 0;
    double sum = 0;
    double sum_sq = 0;
    double mean() const { return area ? sum / static_cast<double>(area) : 0.0; }
};

/// Binary partition tree over one slice: leaves are 4-connected pieces of a
/// quantized luminance image, internal nodes are greedy merges of adjacent
/// regions by smallest mean-luminance gap.
class RegionHierarchy {
  public:
    /// `level_offset` shifts quantization boundaries by that fraction of a level.
    RegionHierarchy(Image2D<float> const& luminance, BuiltinParams const& p, double level_offset = 0.0);

    int64_t rows() const { return leaf_of_.rows; }
    int64_t cols() const { return leaf_of_.cols; }
    int32_t leaf_count() const { return n_leaves_; }
    std::vector<RegionNode> const& nodes() const { return nodes_; }
    Image2D<int32_t> const& leaf_map() const { return leaf_of_; }

    Image2D<uint8_t> node_mask(int32_t node) const;
    /// Leaves under `node` as a flag per leaf id.
    std::vector<uint8_t> leaves_under(int32_t node) const;

    /// Best IoU between `mask` and any node.
    double best_iou(Image2D<uint8_t> const& mask) const;

  private:
    Image2D<int32_t> leaf_of_;
    int32_t n_leaves_ = 0;
    std::vector<RegionNode> nodes_;
};

/// Mean of the three channels after the per-channel median pre-filter.
Image2D<float> luminance(Slice3 const& s, int median_radius);

} // namespace mass::maskgen
