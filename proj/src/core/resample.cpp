#include "mass/core/resample.hpp"

#include "mass/core/error.hpp"

#include <algorithm>
#include <cmath>

namespace mass {

Shape3 resampled_shape(Shape3 const& shape, Spacing3 const& spacing, Spacing3 const& target) {
    Shape3 out{};
    int collapsed = 0;
    for (size_t a = 0; a < 3; ++a) {
        if (!(target[a] > 0.0)) throw InvalidParameter("target spacing must be positive");
        if (!(spacing[a] > 0.0)) throw InvalidParameter("source spacing must be positive");
        auto const n = static_cast<int64_t>(std::llround(static_cast<double>(shape[a]) * spacing[a] / target[a]));
        out[a] = std::max<int64_t>(1, n);
        collapsed += out[a] == 1;
    }
    if (collapsed >= 2) {
        throw ShapeError("target spacing too coarse: output shape " + format_shape(out) +
                         " collapses two or more axes to one voxel");
    }
    return out;
}

namespace {

// Cell-centred source coordinate of output index i.
inline double source_coord(int64_t i, int64_t n_in, int64_t n_out) {
    return (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
}

struct AxisTaps {
    std::vector<int64_t> i0, i1;
    std::vector<double> w1;
};

AxisTaps linear_taps(int64_t n_in, int64_t n_out) {
    AxisTaps t;
    t.i0.resize(static_cast<size_t>(n_out));
    t.i1.resize(static_cast<size_t>(n_out));
    t.w1.resize(static_cast<size_t>(n_out));
    for (int64_t i = 0; i < n_out; ++i) {
        double const x = std::clamp(source_coord(i, n_in, n_out), 0.0, static_cast<double>(n_in - 1));
        auto const lo = static_cast<int64_t>(std::floor(x));
        int64_t const hi = std::min(lo + 1, n_in - 1);
        t.i0[static_cast<size_t>(i)] = lo;
        t.i1[static_cast<size_t>(i)] = hi;
        t.w1[static_cast<size_t>(i)] = x - static_cast<double>(lo);
    }
    return t;
}

std::vector<int64_t> nearest_taps(int64_t n_in, int64_t n_out) {
    std::vector<int64_t> t(static_cast<size_t>(n_out));
    for (int64_t i = 0; i < n_out; ++i) {
        double const x = source_coord(i, n_in, n_out);
        t[static_cast<size_t>(i)] = std::clamp<int64_t>(static_cast<int64_t>(std::floor(x + 0.5)), 0, n_in - 1);
    }
    return t;
}

template <typename T> Array3D<T> resample_nearest(Array3D<T> const& a, Shape3 const& out_shape) {
    auto const& s = a.shape();
    auto const t0 = nearest_taps(s[0], out_shape[0]);
    auto const t1 = nearest_taps(s[1], out_shape[1]);
    auto const t2 = nearest_taps(s[2], out_shape[2]);
    Array3D<T> out(out_shape);
    for (int64_t i = 0; i < out_shape[0]; ++i) {
        for (int64_t j = 0; j < out_shape[1]; ++j) {
            for (int64_t k = 0; k < out_shape[2]; ++k) {
                out(i, j, k) = a(t0[static_cast<size_t>(i)], t1[static_cast<size_t>(j)], t2[static_cast<size_t>(k)]);
            }
        }
    }
    return out;
}

} // namespace

Array3D<float> resample_array(Array3D<float> const& a, Shape3 const& out_shape, Interp mode) {
    if (mode == Interp::Nearest) return resample_nearest(a, out_shape);
    auto const& s = a.shape();
    auto const t0 = linear_taps(s[0], out_shape[0]);
    auto const t1 = linear_taps(s[1], out_shape[1]);
    auto const t2 = linear_taps(s[2], out_shape[2]);
    Array3D<float> out(out_shape);
    for (int64_t i = 0; i < out_shape[0]; ++i) {
        auto const ui = static_cast<size_t>(i);
        for (int64_t j = 0; j < out_shape[1]; ++j) {
            auto const uj = static_cast<size_t>(j);
            for (int64_t k = 0; k < out_shape[2]; ++k) {
                auto const uk = static_cast<size_t>(k);
                double const wi = t0.w1[ui], wj = t1.w1[uj], wk = t2.w1[uk];
                auto at = [&](int64_t x, int64_t y, int64_t z) { return static_cast<double>(a(x, y, z)); };
                double const c00 = at(t0.i0[ui], t1.i0[uj], t2.i0[uk]) * (1 - wk) + at(t0.i0[ui], t1.i0[uj], t2.i1[uk]) * wk;
                double const c01 = at(t0.i0[ui], t1.i1[uj], t2.i0[uk]) * (1 - wk) + at(t0.i0[ui], t1.i1[uj], t2.i1[uk]) * wk;
                double const c10 = at(t0.i1[ui], t1.i0[uj], t2.i0[uk]) * (1 - wk) + at(t0.i1[ui], t1.i0[uj], t2.i1[uk]) * wk;
                double const c11 = at(t0.i1[ui], t1.i1[uj], t2.i0[uk]) * (1 - wk) + at(t0.i1[ui], t1.i1[uj], t2.i1[uk]) * wk;
                double const c0 = c00 * (1 - wj) + c01 * wj;
                double const c1 = c10 * (1 - wj) + c11 * wj;
                out(i, j, k) = static_cast<float>(c0 * (1 - wi) + c1 * wi);
            }
        }
    }
    return out;
}

BinaryArray resample_array(BinaryArray const& a, Shape3 const& out_shape) { return resample_nearest(a, out_shape); }

Volume resample(Volume const& v, Spacing3 const& target, Interp mode) {
    Shape3 const out_shape = resampled_shape(v.shape(), v.spacing, target);
    Volume out;
    out.voxels = resample_array(v.voxels, out_shape, mode);
    out.spacing = target;
    out.modality = v.modality;
    out.id = v.id;
    return out;
}

Mask3D resample(Mask3D const& m, Spacing3 const& spacing, Spacing3 const& target) {
    Shape3 const out_shape = resampled_shape(m.shape(), spacing, target);
    Mask3D out = m;
    out.voxels = resample_array(m.voxels, out_shape);
    if (m.seed_slice >= 0) {
        auto const a = static_cast<size_t>(m.seed_axis);
        out.seed_slice = std::min<int64_t>(
            out_shape[a] - 1,
            static_cast<int64_t>(std::floor((static_cast<double>(m.seed_slice) + 0.5) *
                                            static_cast<double>(out_shape[a]) / static_cast<double>(m.shape()[a]))));
    }
    return out;
}

} // namespace mass
