#include "mass/maskgen/hierarchy.hpp"

#include "mass/core/connectivity.hpp"
#include "mass/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <set>
#include <tuple>

namespace mass::maskgen {

namespace {

Image2D<float> median_filter(Image2D<float> const& in, int radius) {
    if (radius <= 0) return in;
    Image2D<float> out(in.rows, in.cols);
    std::vector<float> window;
    window.reserve(static_cast<size_t>((2 * radius + 1) * (2 * radius + 1)));
    for (int64_t r = 0; r < in.rows; ++r) {
        for (int64_t c = 0; c < in.cols; ++c) {
            window.clear();
            for (int64_t dr = -radius; dr <= radius; ++dr) {
                int64_t const rr = std::clamp<int64_t>(r + dr, 0, in.rows - 1);
                for (int64_t dc = -radius; dc <= radius; ++dc) {
                    int64_t const cc = std::clamp<int64_t>(c + dc, 0, in.cols - 1);
                    window.push_back(in(rr, cc));
                }
            }
            auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
            std::nth_element(window.begin(), mid, window.end());
            out(r, c) = *mid;
        }
    }
    return out;
}

struct UnionFind {
    std::vector<int32_t> parent;
    explicit UnionFind(int32_t n) : parent(static_cast<size_t>(n)) { std::iota(parent.begin(), parent.end(), 0); }
    int32_t find(int32_t x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    }
};

template <typename F> void for_each_edge(Image2D<int32_t> const& lab, F&& f) {
    for (int64_t r = 0; r < lab.rows; ++r) {
        for (int64_t c = 0; c < lab.cols; ++c) {
            int32_t const a = lab(r, c);
            if (c + 1 < lab.cols && lab(r, c + 1) != a) f(a, lab(r, c + 1));
            if (r + 1 < lab.rows && lab(r + 1, c) != a) f(a, lab(r + 1, c));
        }
    }
}

} // namespace

Image2D<float> luminance(Slice3 const& s, int median_radius) {
    Image2D<float> out(s.rows(), s.cols());
    for (auto const& ch : s.ch) {
        Image2D<float> const f = median_filter(ch, median_radius);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += f.data[i] / 3.0f;
    }
    return out;
}

RegionHierarchy::RegionHierarchy(Image2D<float> const& lum, BuiltinParams const& p, double level_offset) {
    if (p.levels < 2) throw InvalidParameter("builtin backend needs at least 2 intensity levels");
    double const width = 256.0 / p.levels;
    Image2D<int32_t> q(lum.rows, lum.cols);
    for (size_t i = 0; i < q.data.size(); ++i) {
        q.data[i] = static_cast<int32_t>(std::floor(lum.data[i] / width + level_offset));
    }
    ComponentLabels2D const comps = label_regions_2d(q);
    int32_t const n0 = comps.count;

    std::vector<int64_t> area(static_cast<size_t>(n0), 0);
    std::vector<double> sum(static_cast<size_t>(n0), 0), sum_sq(static_cast<size_t>(n0), 0);
    for (size_t i = 0; i < lum.data.size(); ++i) {
        auto const l = static_cast<size_t>(comps.labels.data[i]);
        area[l] += 1;
        sum[l] += lum.data[i];
        sum_sq[l] += static_cast<double>(lum.data[i]) * lum.data[i];
    }

    // Absorb tiny leaves into their most similar neighbour.
    UnionFind uf(n0);
    for (bool changed = true; changed;) {
        changed = false;
        std::vector<std::set<int32_t>> adj(static_cast<size_t>(n0));
        for_each_edge(comps.labels, [&](int32_t a, int32_t b) {
            a = uf.find(a);
            b = uf.find(b);
            if (a == b) return;
            adj[static_cast<size_t>(a)].insert(b);
            adj[static_cast<size_t>(b)].insert(a);
        });
        std::vector<int32_t> tiny;
        for (int32_t l = 0; l < n0; ++l) {
            if (uf.find(l) == l && area[static_cast<size_t>(l)] < p.tiny_leaf_area && !adj[static_cast<size_t>(l)].empty())
                tiny.push_back(l);
        }
        std::stable_sort(tiny.begin(), tiny.end(),
                         [&](int32_t a, int32_t b) { return area[static_cast<size_t>(a)] < area[static_cast<size_t>(b)]; });
        for (int32_t t : tiny) {
            if (uf.find(t) != t || area[static_cast<size_t>(t)] >= p.tiny_leaf_area) continue;
            double const mt = sum[static_cast<size_t>(t)] / static_cast<double>(area[static_cast<size_t>(t)]);
            int32_t best = -1;
            double best_gap = 0;
            for (int32_t nb : adj[static_cast<size_t>(t)]) {
                nb = uf.find(nb);
                if (nb == t) continue;
                double const gap =
                    std::abs(sum[static_cast<size_t>(nb)] / static_cast<double>(area[static_cast<size_t>(nb)]) - mt);
                if (best < 0 || gap < best_gap || (gap == best_gap && nb < best)) {
                    best = nb;
                    best_gap = gap;
                }
            }
            if (best < 0) continue;
            uf.parent[static_cast<size_t>(t)] = best;
            area[static_cast<size_t>(best)] += area[static_cast<size_t>(t)];
            sum[static_cast<size_t>(best)] += sum[static_cast<size_t>(t)];
            sum_sq[static_cast<size_t>(best)] += sum_sq[static_cast<size_t>(t)];
            changed = true;
        }
    }

    // Relabel surviving roots in raster order of first appearance.
    std::vector<int32_t> new_id(static_cast<size_t>(n0), -1);
    leaf_of_ = Image2D<int32_t>(lum.rows, lum.cols);
    for (size_t i = 0; i < lum.data.size(); ++i) {
        int32_t const root = uf.find(comps.labels.data[i]);
        int32_t& id = new_id[static_cast<size_t>(root)];
        if (id < 0) {
            id = n_leaves_++;
            RegionNode node;
            node.area = area[static_cast<size_t>(root)];
            node.sum = sum[static_cast<size_t>(root)];
            node.sum_sq = sum_sq[static_cast<size_t>(root)];
            nodes_.push_back(node);
        }
        leaf_of_.data[i] = id;
    }

    // Greedy agglomeration by smallest mean gap.
    std::vector<std::set<int32_t>> adj(static_cast<size_t>(n_leaves_));
    for_each_edge(leaf_of_, [&](int32_t a, int32_t b) {
        adj[static_cast<size_t>(a)].insert(b);
        adj[static_cast<size_t>(b)].insert(a);
    });
    using Entry = std::tuple<double, int32_t, int32_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    auto gap = [&](int32_t a, int32_t b) {
        return std::abs(nodes_[static_cast<size_t>(a)].mean() - nodes_[static_cast<size_t>(b)].mean());
    };
    for (int32_t a = 0; a < n_leaves_; ++a) {
        for (int32_t b : adj[static_cast<size_t>(a)]) {
            if (a < b) heap.emplace(gap(a, b), a, b);
        }
    }
    while (!heap.empty()) {
        auto const [g, a, b] = heap.top();
        heap.pop();
        if (g >= p.merge_threshold) break;
        if (nodes_[static_cast<size_t>(a)].parent >= 0 || nodes_[static_cast<size_t>(b)].parent >= 0) continue;
        auto const n = static_cast<int32_t>(nodes_.size());
        RegionNode node;
        node.left = a;
        node.right = b;
        node.area = nodes_[static_cast<size_t>(a)].area + nodes_[static_cast<size_t>(b)].area;
        node.sum = nodes_[static_cast<size_t>(a)].sum + nodes_[static_cast<size_t>(b)].sum;
        node.sum_sq = nodes_[static_cast<size_t>(a)].sum_sq + nodes_[static_cast<size_t>(b)].sum_sq;
        nodes_[static_cast<size_t>(a)].parent = n;
        nodes_[static_cast<size_t>(b)].parent = n;
        nodes_.push_back(node);
        std::set<int32_t> merged;
        for (int32_t x : {a, b}) {
            for (int32_t c : adj[static_cast<size_t>(x)]) {
                if (c == a || c == b) continue;
                merged.insert(c);
                adj[static_cast<size_t>(c)].erase(x);
                adj[static_cast<size_t>(c)].insert(n);
            }
            adj[static_cast<size_t>(x)].clear();
        }
        for (int32_t c : merged) heap.emplace(gap(c, n), std::min(c, n), std::max(c, n));
        adj.push_back(std::move(merged));
    }
}

std::vector<uint8_t> RegionHierarchy::leaves_under(int32_t node) const {
    std::vector<uint8_t> flag(static_cast<size_t>(n_leaves_), 0);
    std::vector<int32_t> stack{node};
    while (!stack.empty()) {
        int32_t const x = stack.back();
        stack.pop_back();
        RegionNode const& nd = nodes_[static_cast<size_t>(x)];
        if (nd.left < 0) {
            flag[static_cast<size_t>(x)] = 1;
        } else {
            stack.push_back(nd.left);
            stack.push_back(nd.right);
        }
    }
    return flag;
}

Image2D<uint8_t> RegionHierarchy::node_mask(int32_t node) const {
    std::vector<uint8_t> const flag = leaves_under(node);
    Image2D<uint8_t> m(rows(), cols());
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = flag[static_cast<size_t>(leaf_of_.data[i])];
    return m;
}

double RegionHierarchy::best_iou(Image2D<uint8_t> const& mask) const {
    if (mask.rows != rows() || mask.cols != cols()) throw ShapeError("mask does not match hierarchy slice");
    std::vector<int64_t> inter(nodes_.size(), 0);
    int64_t m_area = 0;
    for (size_t i = 0; i < mask.data.size(); ++i) {
        if (!mask.data[i]) continue;
        ++m_area;
        inter[static_cast<size_t>(leaf_of_.data[i])] += 1;
    }
    if (m_area == 0) return 0.0;
    double best = 0.0;
    // Children precede parents in node order, so one forward pass accumulates.
    for (size_t n = 0; n < nodes_.size(); ++n) {
        RegionNode const& nd = nodes_[n];
        if (nd.left >= 0) inter[n] = inter[static_cast<size_t>(nd.left)] + inter[static_cast<size_t>(nd.right)];
        if (inter[n] == 0) continue;
        double const iou = static_cast<double>(inter[n]) / static_cast<double>(nd.area + m_area - inter[n]);
        best = std::max(best, iou);
    }
    return best;
}

} // namespace mass::maskgen
