#pragma once

#include "mass/core/volume.hpp"

#include <torch/torch.h>

namespace mass::downstream::detail {

inline torch::Tensor to_tensor(Array3D<float> const& a, torch::Dtype dtype) {
    auto const& s = a.shape();
    return torch::from_blob(const_cast<float*>(a.storage().data()), {1, 1, s[0], s[1], s[2]}, torch::kFloat)
        .to(dtype)
        .clone();
}

inline torch::Tensor to_tensor(BinaryArray const& a, torch::Dtype dtype) {
    auto const& s = a.shape();
    return torch::from_blob(const_cast<uint8_t*>(a.storage().data()), {1, 1, s[0], s[1], s[2]}, torch::kUInt8)
        .to(dtype)
        .clone();
}

inline torch::Dtype param_dtype(torch::nn::Module const& m) {
    auto const ps = m.parameters();
    return ps.empty() ? torch::kFloat : ps.front().scalar_type();
}

template <typename T>
Array3D<T> crop_array(Array3D<T> const& a, Index3 const& start, Shape3 const& size) {
    Array3D<T> out(size);
    for (int64_t i = 0; i < size[0]; ++i)
        for (int64_t j = 0; j < size[1]; ++j)
            for (int64_t k = 0; k < size[2]; ++k) out(i, j, k) = a(start[0] + i, start[1] + j, start[2] + k);
    return out;
}

void check_fits(Shape3 const& shape, Shape3 const& crop, char const* what);

} // namespace mass::downstream::detail
