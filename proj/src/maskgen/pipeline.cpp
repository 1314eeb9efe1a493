#include "mass/maskgen/maskgen.hpp"

#include "mass/core/connectivity.hpp"
#include "mass/core/error.hpp"
#include "mass/core/intensity.hpp"
#include "mass/core/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace mass::maskgen {

int select_axis(Spacing3 const& s) {
    for (double x : s) {
        if (!(x > 0)) throw InvalidParameter("spacing must be positive");
    }
    double const mx = *std::max_element(s.begin(), s.end());
    double const mn = *std::min_element(s.begin(), s.end());
    if (mx / mn <= kIsotropyRatio) return 0;
    int best = 0;
    double best_mean = 0;
    for (int a = 0; a < 3; ++a) {
        auto const [p, q] = in_plane_axes(a);
        double const mean = 0.5 * (s[static_cast<size_t>(p)] + s[static_cast<size_t>(q)]);
        if (a == 0 || mean < best_mean) {
            best = a;
            best_mean = mean;
        }
    }
    return best;
}

int64_t slice_interval(double d_mm, double axis_spacing) {
    if (!(d_mm > 0)) throw InvalidParameter("d_mm must be > 0");
    if (!(axis_spacing > 0)) throw InvalidParameter("spacing must be positive");
    return std::max<int64_t>(1, static_cast<int64_t>(std::floor(d_mm / axis_spacing)));
}

std::vector<int64_t> sample_seed_slices(Volume const& v, int axis, double d_mm) {
    if (axis < 0 || axis > 2) throw InvalidParameter("axis must be 0, 1 or 2");
    int64_t const k = slice_interval(d_mm, v.spacing[static_cast<size_t>(axis)]);
    std::vector<int64_t> out;
    for (int64_t i = 0; i < v.voxels.extent(axis); i += k) out.push_back(i);
    return out;
}

Slice3 ThreeChannelVolume::slice(int axis, int64_t index) const {
    Slice3 s;
    for (size_t c = 0; c < 3; ++c) s.ch[c] = extract_slice(channels[c], axis, index);
    return s;
}

ThreeChannelVolume make_3channel(Volume const& v, MaskGenConfig const& cfg) {
    ThreeChannelVolume out;
    switch (v.modality) {
    case Modality::CT:
        if (cfg.ct_windows.size() != 3) throw ConfigError("ct_windows must list exactly three pairs");
        for (size_t c = 0; c < 3; ++c) {
            out.channels[c] = window_map(v.voxels, cfg.ct_windows[c].first, cfg.ct_windows[c].second);
        }
        break;
    case Modality::MR:
    case Modality::PET:
        if (cfg.mr_quantiles.size() != 3) throw ConfigError("mr_quantiles must list exactly three pairs");
        for (size_t c = 0; c < 3; ++c) {
            QuantileMapResult r = quantile_map(v, cfg.mr_quantiles[c].first, cfg.mr_quantiles[c].second);
            out.degenerate = out.degenerate || r.degenerate;
            out.channels[c] = Array3D<float>(v.shape(), std::move(r.values));
        }
        break;
    default:
        throw InvalidParameter("no three-channel mapping for modality " + std::string(to_string(v.modality)) +
                               "; supported modalities: CT, MR, PET");
    }
    return out;
}

namespace {

/// Boundary contrast against the 4-neighbour ring, relative to interior spread.
double contrast_score(Image2D<float> const& lum, Image2D<uint8_t> const& m, RegionNode const& node) {
    double ring_sum = 0;
    int64_t ring_n = 0;
    for (int64_t r = 0; r < m.rows; ++r) {
        for (int64_t c = 0; c < m.cols; ++c) {
            if (m(r, c)) continue;
            bool const edge = (r > 0 && m(r - 1, c)) || (r + 1 < m.rows && m(r + 1, c)) ||
                              (c > 0 && m(r, c - 1)) || (c + 1 < m.cols && m(r, c + 1));
            if (edge) {
                ring_sum += lum(r, c);
                ++ring_n;
            }
        }
    }
    if (ring_n == 0) return 1.0;
    double const mean = node.mean();
    double const var = std::max(0.0, node.sum_sq / static_cast<double>(node.area) - mean * mean);
    double const contrast = std::abs(mean - ring_sum / static_cast<double>(ring_n));
    return contrast / (contrast + 2.0 * std::sqrt(var) + 1e-6);
}

/// Keeps at most `cap` proposals, sampled evenly across area strata.
std::vector<SeedProposal2D> cap_stratified(std::vector<SeedProposal2D> props, int cap, uint64_t seed) {
    auto by_area = [](SeedProposal2D const& a, SeedProposal2D const& b) { return a.area > b.area; };
    std::stable_sort(props.begin(), props.end(), by_area);
    if (static_cast<int64_t>(props.size()) <= cap) return props;
    constexpr size_t kStrata = 5;
    size_t const n = props.size();
    std::vector<std::vector<size_t>> strata(kStrata);
    for (size_t i = 0; i < n; ++i) strata[i * kStrata / n].push_back(i);
    Rng rng(seed);
    for (auto& s : strata) {
        for (size_t i = s.size(); i > 1; --i) std::swap(s[i - 1], s[static_cast<size_t>(rng.uniform_int(i))]);
    }
    std::vector<size_t> keep;
    for (size_t round = 0; static_cast<int64_t>(keep.size()) < cap; ++round) {
        for (auto const& s : strata) {
            if (round < s.size() && static_cast<int64_t>(keep.size()) < cap) keep.push_back(s[round]);
        }
    }
    std::sort(keep.begin(), keep.end());
    std::vector<SeedProposal2D> out;
    out.reserve(keep.size());
    for (size_t i : keep) out.push_back(std::move(props[i]));
    return out;
}

} // namespace

std::vector<SeedProposal2D> propose_2d(Slice3 const& slice, MaskGenConfig const& cfg, uint64_t rng_seed, int axis,
                                       int64_t slice_index) {
    BuiltinParams const& p = cfg.builtin;
    Image2D<float> const lum = luminance(slice, p.median_radius);
    RegionHierarchy const h(lum, p, 0.0);
    RegionHierarchy const shifted(lum, p, 0.5);
    std::vector<SeedProposal2D> props;
    auto const& nodes = h.nodes();
    for (size_t n = 0; n < nodes.size(); ++n) {
        if (nodes[n].area < p.min_area) continue;
        Image2D<uint8_t> m = h.node_mask(static_cast<int32_t>(n));
        double const quality = contrast_score(lum, m, nodes[n]);
        if (quality < p.pred_iou_thresh) continue;
        double const stability = shifted.best_iou(m);
        if (stability < p.stability_thresh) continue;
        SeedProposal2D sp;
        sp.slice_index = slice_index;
        sp.axis = axis;
        sp.area = nodes[n].area;
        sp.mask2d = std::move(m);
        sp.quality = quality;
        sp.stability = stability;
        props.push_back(std::move(sp));
    }
    return cap_stratified(std::move(props), cfg.max_masks_per_slice, rng_seed);
}

Propagator::Propagator(ThreeChannelVolume const& tc, int axis, BuiltinParams const& p)
    : axis_(axis), shape_(tc.channels[0].shape()), params_(p) {
    int64_t const n = tc.channels[0].extent(axis);
    slices_.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) slices_.emplace_back(luminance(tc.slice(axis, i), p.median_radius), p, 0.0);
}

Mask3D Propagator::propagate(SeedProposal2D const& seed, std::string const& volume_id) const {
    if (seed.axis != axis_) throw InvalidParameter("seed axis does not match propagator axis");
    int64_t const n = static_cast<int64_t>(slices_.size());
    if (seed.slice_index < 0 || seed.slice_index >= n) throw InvalidParameter("seed slice out of range");
    auto const [ra, ca] = in_plane_axes(axis_);
    if (seed.mask2d.rows != shape_[static_cast<size_t>(ra)] || seed.mask2d.cols != shape_[static_cast<size_t>(ca)])
        throw ShapeError("seed mask does not match the slice shape");
    if (std::none_of(seed.mask2d.data.begin(), seed.mask2d.data.end(), [](uint8_t x) { return x != 0; }))
        throw PreconditionError("seed mask is empty");

    Mask3D out;
    out.voxels = BinaryArray(shape_, 0);
    out.seed_axis = axis_;
    out.seed_slice = seed.slice_index;
    out.source = MaskSource::BUILTIN;
    out.volume_id = volume_id;
    insert_slice(out.voxels, axis_, seed.slice_index, seed.mask2d);

    for (int64_t dir : {int64_t{1}, int64_t{-1}}) {
        Image2D<uint8_t> prev = seed.mask2d;
        for (int64_t t = seed.slice_index + dir; t >= 0 && t < n; t += dir) {
            RegionHierarchy const& h = slices_[static_cast<size_t>(t)];
            Image2D<uint8_t> const foot = dilate_disk(prev, params_.dilation_radius);
            auto const& nodes = h.nodes();
            std::vector<int64_t> in_foot(nodes.size(), 0), in_prev(nodes.size(), 0);
            int64_t prev_area = 0;
            for (size_t i = 0; i < foot.data.size(); ++i) {
                prev_area += prev.data[i];
                if (!foot.data[i]) continue;
                auto const l = static_cast<size_t>(h.leaf_map().data[i]);
                in_foot[l] += 1;
                in_prev[l] += prev.data[i];
            }
            int32_t best = -1;
            double best_iou = 0;
            for (size_t k = 0; k < nodes.size(); ++k) {
                if (nodes[k].left >= 0) {
                    in_foot[k] = in_foot[static_cast<size_t>(nodes[k].left)] + in_foot[static_cast<size_t>(nodes[k].right)];
                    in_prev[k] = in_prev[static_cast<size_t>(nodes[k].left)] + in_prev[static_cast<size_t>(nodes[k].right)];
                }
                if (in_prev[k] == 0) continue;
                double const iou =
                    static_cast<double>(in_prev[k]) / static_cast<double>(in_foot[k] + prev_area - in_prev[k]);
                if (iou > best_iou) {
                    best_iou = iou;
                    best = static_cast<int32_t>(k);
                }
            }
            if (best < 0 || best_iou < params_.stop_iou) break;
            std::vector<uint8_t> const under = h.leaves_under(best);
            Image2D<uint8_t> cur(prev.rows, prev.cols);
            for (size_t i = 0; i < cur.data.size(); ++i) {
                cur.data[i] = foot.data[i] && under[static_cast<size_t>(h.leaf_map().data[i])];
            }
            insert_slice(out.voxels, axis_, t, cur);
            prev = std::move(cur);
        }
    }
    return out;
}

Mask3D propagate_3d(Volume const& v, SeedProposal2D const& seed, MaskGenConfig const& cfg) {
    ThreeChannelVolume const tc = make_3channel(v, cfg);
    Propagator const prop(tc, seed.axis, cfg.builtin);
    return prop.propagate(seed, v.id);
}

namespace {

struct SparseMask {
    std::vector<int32_t> idx; ///< sorted flat indices
    BBox box;
};

int64_t sorted_intersection(std::vector<int32_t> const& a, std::vector<int32_t> const& b) {
    int64_t n = 0;
    size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) ++i;
        else if (b[j] < a[i]) ++j;
        else {
            ++n;
            ++i;
            ++j;
        }
    }
    return n;
}

} // namespace

MaskBank postprocess_bank(std::vector<Mask3D> const& raw, MaskGenConfig const& cfg, uint64_t rng_seed) {
    MaskBank bank;
    if (raw.empty()) return bank;
    bank.shape = raw.front().shape();
    bank.volume_id = raw.front().volume_id;
    std::vector<Mask3D> kept;
    for (Mask3D const& m : raw) {
        if (m.shape() != bank.shape) throw ShapeError("raw masks do not share one shape");
        BinaryArray anchor;
        if (m.seed_slice >= 0) {
            anchor = BinaryArray(m.shape(), 0);
            insert_slice(anchor, m.seed_axis, m.seed_slice, extract_slice(m.voxels, m.seed_axis, m.seed_slice));
        } else {
            anchor = m.voxels;
        }
        Mask3D c = m;
        c.voxels = largest_component_touching(m.voxels, anchor);
        if (c.count() < cfg.min_volume_voxels) continue;
        kept.push_back(std::move(c));
    }

    std::vector<SparseMask> sparse(kept.size());
    for (size_t i = 0; i < kept.size(); ++i) {
        auto const& vox = kept[i].voxels;
        for (int64_t f = 0; f < vox.size(); ++f) {
            if (vox[f]) sparse[i].idx.push_back(static_cast<int32_t>(f));
        }
        sparse[i].box = bounding_box(vox);
    }
    // Discarding never creates new offending pairs, so one ordered sweep suffices.
    std::vector<uint8_t> alive(kept.size(), 1);
    Rng rng(rng_seed, "dedup");
    for (size_t i = 0; i < kept.size(); ++i) {
        for (size_t j = i + 1; j < kept.size() && alive[i]; ++j) {
            if (!alive[j]) continue;
            double const na = static_cast<double>(sparse[i].idx.size());
            double const nb = static_cast<double>(sparse[j].idx.size());
            if (std::min(na, nb) / std::max(na, nb) <= cfg.dedup_iou) continue;
            if (!sparse[i].box.intersects(sparse[j].box)) continue;
            double const inter = static_cast<double>(sorted_intersection(sparse[i].idx, sparse[j].idx));
            if (inter / (na + nb - inter) > cfg.dedup_iou) {
                if (rng.bernoulli(0.5)) alive[i] = 0;
                else alive[j] = 0;
            }
        }
    }
    for (size_t i = 0; i < kept.size(); ++i) {
        if (alive[i]) bank.masks.push_back(std::move(kept[i]));
    }
    return bank;
}

MaskBank generate_mask_bank(Volume const& v, MaskGenConfig const& cfg, uint64_t rng_seed, PipelineStats* stats) {
    v.validate();
    cfg.validate();
    ThreeChannelVolume const tc = make_3channel(v, cfg);
    std::vector<int> axes;
    if (cfg.multi_axis) axes = {0, 1, 2};
    else axes = {select_axis(v.spacing)};

    PipelineStats st;
    st.axis = axes.front();
    std::vector<Mask3D> raw;
    for (int axis : axes) {
        std::vector<int64_t> const seeds = sample_seed_slices(v, axis, cfg.d_mm);
        st.seed_slices += seeds.size();
        Propagator const prop(tc, axis, cfg.builtin);
        auto const [ra, ca] = in_plane_axes(axis);
        std::unique_ptr<ExternalExchange> ext;
        if (cfg.backend == Backend::EXTERNAL) {
            std::filesystem::path dir = cfg.external.exchange_dir;
            if (dir.empty()) {
                char const* cache = std::getenv("MASS_CACHE_DIR");
                if (!cache) throw BackendError("EXTERNAL backend needs backend_params.exchange_dir or MASS_CACHE_DIR");
                dir = std::filesystem::path(cache) / v.id;
            }
            ext = std::make_unique<ExternalExchange>(dir, cfg.external);
            std::vector<Slice3> slices;
            for (int64_t s : seeds) slices.push_back(tc.slice(axis, s));
            ext->request(v.id, axis, seeds, slices, cfg);
        }
        for (int64_t s : seeds) {
            uint64_t const pseed = derive_seed(rng_seed, "propose", {static_cast<uint64_t>(axis), static_cast<uint64_t>(s)});
            std::vector<SeedProposal2D> props;
            if (ext) {
                props = ext->read(axis, s, v.voxels.extent(ra), v.voxels.extent(ca), cfg.builtin.min_area);
                props = cap_stratified(std::move(props), cfg.max_masks_per_slice, pseed);
            } else {
                props = propose_2d(tc.slice(axis, s), cfg, pseed, axis, s);
            }
            st.proposals += props.size();
            for (auto const& p : props) {
                Mask3D m = prop.propagate(p, v.id);
                m.source = ext ? MaskSource::EXTERNAL : MaskSource::BUILTIN;
                raw.push_back(std::move(m));
            }
        }
    }
    st.raw_masks = raw.size();
    MaskBank bank = postprocess_bank(raw, cfg, rng_seed);
    bank.volume_id = v.id;
    bank.shape = v.shape();
    st.final_masks = bank.size();
    if (stats) *stats = st;
    return bank;
}

QualityReport mask_quality_stats(MaskBank const& bank, std::vector<Mask3D> const& gt) {
    QualityReport rep;
    rep.per_structure.resize(gt.size());
    if (bank.empty()) {
        rep.empty_bank = true;
        spdlog::warn("mask quality requested for an empty bank; reporting zeros");
        return rep;
    }
    std::vector<int64_t> counts;
    for (Mask3D const& m : bank.masks) counts.push_back(count_foreground(m.voxels));
    for (size_t g = 0; g < gt.size(); ++g) {
        auto const& gv = gt[g].voxels;
        if (gv.shape() != bank.shape) throw ShapeError("GT mask shape does not match the bank");
        std::vector<int32_t> gidx;
        for (int64_t f = 0; f < gv.size(); ++f) {
            if (gv[f]) gidx.push_back(static_cast<int32_t>(f));
        }
        StructureQuality& q = rep.per_structure[g];
        double sum = 0;
        int64_t above = 0;
        for (size_t b = 0; b < bank.masks.size(); ++b) {
            Mask3D const& m = bank.masks[b];
            int64_t inter = 0;
            int64_t const count = counts[b];
            for (int32_t f : gidx) inter += m.voxels[f];
            double const denom = static_cast<double>(count + static_cast<int64_t>(gidx.size()));
            double const dice = denom == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / denom;
            q.best = std::max(q.best, 100.0 * dice);
            if (inter > 0) {
                ++q.n_overlapping;
                sum += dice;
                if (dice > 0.40) ++above;
            }
        }
        if (q.n_overlapping > 0) {
            q.avg = 100.0 * sum / static_cast<double>(q.n_overlapping);
            q.pct_gt40 = 100.0 * static_cast<double>(above) / static_cast<double>(q.n_overlapping);
        }
    }
    if (!gt.empty()) {
        for (auto const& q : rep.per_structure) {
            rep.aggregate.best += q.best / static_cast<double>(gt.size());
            rep.aggregate.avg += q.avg / static_cast<double>(gt.size());
            rep.aggregate.pct_gt40 += q.pct_gt40 / static_cast<double>(gt.size());
            rep.aggregate.n_overlapping += q.n_overlapping;
        }
    }
    return rep;
}

} // namespace mass::maskgen
