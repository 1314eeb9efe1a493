#include "mass/core/connectivity.hpp"

#include "mass/core/error.hpp"

#include <algorithm>
#include <vector>

namespace mass {

ComponentLabels3D label_components(BinaryArray const& m) {
    auto const& s = m.shape();
    ComponentLabels3D out{Array3D<int32_t>(s, 0), {}};
    std::vector<int64_t> stack;
    int32_t next = 0;
    for (int64_t flat = 0; flat < m.size(); ++flat) {
        if (!m[flat] || out.labels[flat]) continue;
        ++next;
        int64_t size = 0;
        stack.push_back(flat);
        out.labels[flat] = next;
        while (!stack.empty()) {
            int64_t const cur = stack.back();
            stack.pop_back();
            ++size;
            auto const p = m.coords(cur);
            for (int64_t di = -1; di <= 1; ++di) {
                for (int64_t dj = -1; dj <= 1; ++dj) {
                    for (int64_t dk = -1; dk <= 1; ++dk) {
                        int64_t const i = p[0] + di, j = p[1] + dj, k = p[2] + dk;
                        if (!m.contains(i, j, k)) continue;
                        int64_t const n = m.index(i, j, k);
                        if (m[n] && !out.labels[n]) {
                            out.labels[n] = next;
                            stack.push_back(n);
                        }
                    }
                }
            }
        }
        out.sizes.push_back(size);
    }
    return out;
}

bool is_connected(BinaryArray const& m) { return label_components(m).sizes.size() == 1; }

BinaryArray largest_component_touching(BinaryArray const& m, BinaryArray const& anchor) {
    if (m.shape() != anchor.shape()) throw ShapeError("anchor shape mismatch");
    auto const cc = label_components(m);
    std::vector<uint8_t> touches(cc.sizes.size(), 0);
    for (int64_t i = 0; i < m.size(); ++i) {
        if (anchor[i] && cc.labels[i]) touches[static_cast<size_t>(cc.labels[i] - 1)] = 1;
    }
    int32_t best = 0;
    int64_t best_size = 0;
    for (size_t c = 0; c < cc.sizes.size(); ++c) {
        if (touches[c] && cc.sizes[c] > best_size) {
            best_size = cc.sizes[c];
            best = static_cast<int32_t>(c + 1);
        }
    }
    BinaryArray out(m.shape(), 0);
    if (best == 0) return out;
    for (int64_t i = 0; i < m.size(); ++i) out[i] = cc.labels[i] == best;
    return out;
}

namespace {

template <typename Same>
ComponentLabels2D flood_2d(int64_t rows, int64_t cols, Same same, std::vector<uint8_t> const& active) {
    ComponentLabels2D out{Image2D<int32_t>(rows, cols, -1), 0};
    std::vector<int64_t> stack;
    int64_t const n = rows * cols;
    for (int64_t start = 0; start < n; ++start) {
        if (!active[static_cast<size_t>(start)] || out.labels.data[static_cast<size_t>(start)] >= 0) continue;
        int32_t const label = out.count++;
        out.labels.data[static_cast<size_t>(start)] = label;
        stack.push_back(start);
        while (!stack.empty()) {
            int64_t const cur = stack.back();
            stack.pop_back();
            int64_t const r = cur / cols, c = cur % cols;
            int64_t const nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (auto const& q : nb) {
                if (q[0] < 0 || q[1] < 0 || q[0] >= rows || q[1] >= cols) continue;
                int64_t const idx = q[0] * cols + q[1];
                if (!active[static_cast<size_t>(idx)] || out.labels.data[static_cast<size_t>(idx)] >= 0) continue;
                if (!same(cur, idx)) continue;
                out.labels.data[static_cast<size_t>(idx)] = label;
                stack.push_back(idx);
            }
        }
    }
    return out;
}

} // namespace

ComponentLabels2D label_regions_2d(Image2D<int32_t> const& values) {
    std::vector<uint8_t> active(static_cast<size_t>(values.size()), 1);
    return flood_2d(
        values.rows, values.cols,
        [&](int64_t a, int64_t b) { return values.data[static_cast<size_t>(a)] == values.data[static_cast<size_t>(b)]; },
        active);
}

ComponentLabels2D label_foreground_2d(Image2D<uint8_t> const& m) {
    std::vector<uint8_t> active(m.data.begin(), m.data.end());
    auto out = flood_2d(m.rows, m.cols, [](int64_t, int64_t) { return true; }, active);
    for (auto& l : out.labels.data) l = l + 1; // background -1 -> 0, components from 1
    return out;
}

Image2D<uint8_t> dilate_disk(Image2D<uint8_t> const& m, int radius) {
    if (radius <= 0) return m;
    std::vector<std::pair<int, int>> offsets;
    for (int dr = -radius; dr <= radius; ++dr) {
        for (int dc = -radius; dc <= radius; ++dc) {
            if (dr * dr + dc * dc <= radius * radius) offsets.emplace_back(dr, dc);
        }
    }
    Image2D<uint8_t> out(m.rows, m.cols, 0);
    for (int64_t r = 0; r < m.rows; ++r) {
        for (int64_t c = 0; c < m.cols; ++c) {
            if (!m(r, c)) continue;
            for (auto const& [dr, dc] : offsets) {
                int64_t const rr = r + dr, cc = c + dc;
                if (rr >= 0 && cc >= 0 && rr < m.rows && cc < m.cols) out(rr, cc) = 1;
            }
        }
    }
    return out;
}

} // namespace mass
