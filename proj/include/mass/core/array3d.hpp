#pragma once

#include "mass/core/error.hpp"
#include "mass/core/types.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace mass {

/// Dense C-order 3D array (axis 2 varies fastest).
template <typename T> class Array3D {
  public:
    Array3D() = default;
    explicit Array3D(Shape3 shape, T fill = T{})
        : shape_(shape), data_(static_cast<size_t>(checked_count(shape)), fill) {}
    Array3D(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != checked_count(shape)) {
            throw ShapeError("array data size does not match shape " + format_shape(shape));
        }
    }

    Shape3 const& shape() const { return shape_; }
    int64_t extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    int64_t index(int64_t i, int64_t j, int64_t k) const {
        return (i * shape_[1] + j) * shape_[2] + k;
    }
    int64_t index(Index3 const& p) const { return index(p[0], p[1], p[2]); }
    Index3 coords(int64_t flat) const {
        int64_t const k = flat % shape_[2];
        int64_t const r = flat / shape_[2];
        return {r / shape_[1], r % shape_[1], k};
    }
    bool contains(int64_t i, int64_t j, int64_t k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < shape_[0] && j < shape_[1] && k < shape_[2];
    }

    T& operator()(int64_t i, int64_t j, int64_t k) { return data_[static_cast<size_t>(index(i, j, k))]; }
    T const& operator()(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>(index(i, j, k))];
    }
    T& operator[](int64_t flat) { return data_[static_cast<size_t>(flat)]; }
    T const& operator[](int64_t flat) const { return data_[static_cast<size_t>(flat)]; }

    std::span<T> values() { return data_; }
    std::span<T const> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    std::vector<T> const& storage() const { return data_; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(Array3D const& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  private:
    static int64_t checked_count(Shape3 const& s) {
        if (s[0] < 0 || s[1] < 0 || s[2] < 0) throw ShapeError("negative extent in " + format_shape(s));
        return voxel_count(s);
    }

    Shape3 shape_{0, 0, 0};
    std::vector<T> data_;
};

/// Row-major 2D image used for per-slice work.
template <typename T> struct Image2D {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<T> data;

    Image2D() = default;
    Image2D(int64_t r, int64_t c, T fill = T{}) : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {}

    T& operator()(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
    T const& operator()(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
    int64_t size() const { return rows * cols; }
    bool operator==(Image2D const& o) const = default;
};

/// The two in-plane axes for slicing along `axis`, in increasing order.
inline std::array<int, 2> in_plane_axes(int axis) {
    switch (axis) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    default: return {0, 1};
    }
}

template <typename T> Image2D<T> extract_slice(Array3D<T> const& a, int axis, int64_t index) {
    auto const [ra, ca] = in_plane_axes(axis);
    Image2D<T> out(a.extent(ra), a.extent(ca));
    Index3 p{};
    p[static_cast<size_t>(axis)] = index;
    for (int64_t r = 0; r < out.rows; ++r) {
        p[static_cast<size_t>(ra)] = r;
        for (int64_t c = 0; c < out.cols; ++c) {
            p[static_cast<size_t>(ca)] = c;
            out(r, c) = a[a.index(p)];
        }
    }
    return out;
}

template <typename T> void insert_slice(Array3D<T>& a, int axis, int64_t index, Image2D<T> const& img) {
    auto const [ra, ca] = in_plane_axes(axis);
    if (img.rows != a.extent(ra) || img.cols != a.extent(ca)) throw ShapeError("slice shape mismatch");
    Index3 p{};
    p[static_cast<size_t>(axis)] = index;
    for (int64_t r = 0; r < img.rows; ++r) {
        p[static_cast<size_t>(ra)] = r;
        for (int64_t c = 0; c < img.cols; ++c) {
            p[static_cast<size_t>(ca)] = c;
            a[a.index(p)] = img(r, c);
        }
    }
}

} // namespace mass
