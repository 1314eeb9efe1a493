#include "mass/augment/augment.hpp"

#include "mass/core/error.hpp"
#include "mass/core/intensity.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mass::augment {

using nlohmann::json;

AugmentConfig AugmentConfig::identity(Shape3 crop) {
    AugmentConfig c;
    c.p_spatial = 0;
    c.p_appearance = 0;
    c.crop = crop;
    return c;
}

void AugmentConfig::validate() const {
    for (double p : {p_spatial, p_appearance, fg_crop_prob}) {
        if (!(p >= 0 && p <= 1)) throw ConfigError("augment probabilities must lie in [0, 1]");
    }
    if (!(scale >= 0 && scale < 1)) throw ConfigError("augment.scale must be in [0, 1)");
    if (!(rot_deg >= 0) || !(shear >= 0)) throw ConfigError("augment.rot_deg and augment.shear must be >= 0");
    for (Range const& r : {brightness_mult, gamma, contrast, blur_sigma}) {
        if (!(r.first > 0 && r.first <= r.second)) throw ConfigError("augment ranges need 0 < lo <= hi");
    }
    if (!(brightness_add_std >= 0) || !(noise_std >= 0)) throw ConfigError("augment noise levels must be >= 0");
    for (int64_t c : crop) {
        if (c < 1) throw ConfigError("augment.crop extents must be >= 1");
    }
    if (min_fg_voxels < 0) throw ConfigError("augment.min_fg_voxels must be >= 0");
    if (query_min_fg_voxels < -1) throw ConfigError("augment.query_min_fg_voxels must be >= -1");
}

void to_json(json& j, AugmentConfig const& c) {
    j = json{{"p_spatial", c.p_spatial},
             {"scale", c.scale},
             {"rot_deg", c.rot_deg},
             {"shear", c.shear},
             {"p_appearance", c.p_appearance},
             {"brightness_mult", {c.brightness_mult.first, c.brightness_mult.second}},
             {"brightness_add_std", c.brightness_add_std},
             {"gamma", {c.gamma.first, c.gamma.second}},
             {"contrast", {c.contrast.first, c.contrast.second}},
             {"blur_sigma", {c.blur_sigma.first, c.blur_sigma.second}},
             {"noise_std", c.noise_std},
             {"crop", c.crop},
             {"min_fg_voxels", c.min_fg_voxels},
             {"query_min_fg_voxels", c.query_min_fg_voxels},
             {"fg_crop_prob", c.fg_crop_prob},
             {"independent_crops", c.independent_crops}};
}

void from_json(json const& j, AugmentConfig& c) {
    if (!j.is_object()) throw ConfigError("augment section must be an object");
    auto range = [&](char const* key, Range& r) {
        if (!j.contains(key)) return;
        auto const& v = j[key];
        if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("augment.") + key + " must be [lo, hi]");
        r = {v[0].get<double>(), v[1].get<double>()};
    };
    try {
        for (auto const& [k, _] : j.items()) {
            static std::array<char const*, 16> const known{
                "p_spatial",  "scale",      "rot_deg",   "shear",        "p_appearance",
                "brightness_mult", "brightness_add_std", "gamma", "contrast", "blur_sigma",
                "noise_std",  "crop",       "min_fg_voxels", "query_min_fg_voxels", "fg_crop_prob", "independent_crops"};
            if (std::find_if(known.begin(), known.end(), [&](char const* s) { return k == s; }) == known.end())
                throw ConfigError("unknown key '" + k + "' in augment");
        }
        c.p_spatial = j.value("p_spatial", c.p_spatial);
        c.scale = j.value("scale", c.scale);
        c.rot_deg = j.value("rot_deg", c.rot_deg);
        c.shear = j.value("shear", c.shear);
        c.p_appearance = j.value("p_appearance", c.p_appearance);
        range("brightness_mult", c.brightness_mult);
        c.brightness_add_std = j.value("brightness_add_std", c.brightness_add_std);
        range("gamma", c.gamma);
        range("contrast", c.contrast);
        range("blur_sigma", c.blur_sigma);
        c.noise_std = j.value("noise_std", c.noise_std);
        if (j.contains("crop")) c.crop = j["crop"].get<Shape3>();
        c.min_fg_voxels = j.value("min_fg_voxels", c.min_fg_voxels);
        c.query_min_fg_voxels = j.value("query_min_fg_voxels", c.query_min_fg_voxels);
        c.fg_crop_prob = j.value("fg_crop_prob", c.fg_crop_prob);
        c.independent_crops = j.value("independent_crops", c.independent_crops);
    } catch (json::exception const& e) {
        throw ConfigError(std::string("bad augment section: ") + e.what());
    }
    c.validate();
}

bool Affine::is_identity() const { return m == Affine{}.m; }

Affine compose_affine(AffineParams const& p) {
    using M3 = std::array<double, 9>;
    auto mul = [](M3 const& a, M3 const& b) {
        M3 r{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) r[static_cast<size_t>(i * 3 + j)] += a[static_cast<size_t>(i * 3 + k)] * b[static_cast<size_t>(k * 3 + j)];
        return r;
    };
    auto rot = [](int axis, double t) {
        double const c = std::cos(t), s = std::sin(t);
        M3 r{1, 0, 0, 0, 1, 0, 0, 0, 1};
        auto const [a, b] = std::array<std::array<int, 2>, 3>{{{1, 2}, {0, 2}, {0, 1}}}[static_cast<size_t>(axis)];
        r[static_cast<size_t>(a * 3 + a)] = c;
        r[static_cast<size_t>(a * 3 + b)] = -s;
        r[static_cast<size_t>(b * 3 + a)] = s;
        r[static_cast<size_t>(b * 3 + b)] = c;
        return r;
    };
    M3 sh{1, p.shear[0], p.shear[1], 0, 1, p.shear[2], 0, 0, 1};
    M3 m = mul(mul(rot(0, p.rot_rad[0]), rot(1, p.rot_rad[1])), mul(rot(2, p.rot_rad[2]), sh));
    if (p.scale != 1.0) {
        for (double& x : m) x /= p.scale;
    }
    return Affine{m};
}

AffineParams draw_affine(Rng& rng, AugmentConfig const& cfg) {
    AffineParams p;
    if (!rng.bernoulli(cfg.p_spatial)) return p;
    p.scale = rng.uniform(1.0 - cfg.scale, 1.0 + cfg.scale);
    double const r = cfg.rot_deg * std::numbers::pi / 180.0;
    for (double& a : p.rot_rad) a = rng.uniform(-r, r);
    for (double& s : p.shear) s = rng.uniform(-cfg.shear, cfg.shear);
    return p;
}

namespace {

template <typename F> void for_each_source(Affine const& a, Index3 const& start, Shape3 const& out, F&& f) {
    std::array<double, 9> d = a.m;
    d[0] -= 1;
    d[4] -= 1;
    d[8] -= 1;
    bool const ident = a.is_identity();
    double const h0 = (static_cast<double>(out[0]) - 1) / 2, h1 = (static_cast<double>(out[1]) - 1) / 2,
                 h2 = (static_cast<double>(out[2]) - 1) / 2;
    int64_t flat = 0;
    for (int64_t i = 0; i < out[0]; ++i) {
        for (int64_t j = 0; j < out[1]; ++j) {
            for (int64_t k = 0; k < out[2]; ++k, ++flat) {
                std::array<double, 3> s{static_cast<double>(start[0] + i), static_cast<double>(start[1] + j),
                                        static_cast<double>(start[2] + k)};
                if (!ident) {
                    double const u = static_cast<double>(i) - h0, v = static_cast<double>(j) - h1,
                                 w = static_cast<double>(k) - h2;
                    s[0] += d[0] * u + d[1] * v + d[2] * w;
                    s[1] += d[3] * u + d[4] * v + d[5] * w;
                    s[2] += d[6] * u + d[7] * v + d[8] * w;
                }
                f(flat, s);
            }
        }
    }
}

} // namespace

Array3D<float> warp_image(Array3D<float> const& img, Affine const& a, Index3 const& start, Shape3 const& out,
                          float pad) {
    Array3D<float> r(out);
    Shape3 const& sh = img.shape();
    for_each_source(a, start, out, [&](int64_t flat, std::array<double, 3> const& s) {
        std::array<int64_t, 3> base;
        std::array<double, 3> frac;
        for (size_t ax = 0; ax < 3; ++ax) {
            double const fl = std::floor(s[ax]);
            base[ax] = static_cast<int64_t>(fl);
            frac[ax] = s[ax] - fl;
        }
        double acc = 0;
        for (int c = 0; c < 8; ++c) {
            double w = 1;
            std::array<int64_t, 3> p;
            for (size_t ax = 0; ax < 3; ++ax) {
                bool const hi = (c >> ax) & 1;
                w *= hi ? frac[ax] : 1.0 - frac[ax];
                p[ax] = base[ax] + (hi ? 1 : 0);
            }
            if (w == 0) continue;
            bool const inside = p[0] >= 0 && p[1] >= 0 && p[2] >= 0 && p[0] < sh[0] && p[1] < sh[1] && p[2] < sh[2];
            acc += w * (inside ? img(p[0], p[1], p[2]) : pad);
        }
        r[flat] = static_cast<float>(acc);
    });
    return r;
}

BinaryArray warp_mask(BinaryArray const& mask, Affine const& a, Index3 const& start, Shape3 const& out) {
    BinaryArray r(out, 0);
    for_each_source(a, start, out, [&](int64_t flat, std::array<double, 3> const& s) {
        auto const i = static_cast<int64_t>(std::floor(s[0] + 0.5));
        auto const j = static_cast<int64_t>(std::floor(s[1] + 0.5));
        auto const k = static_cast<int64_t>(std::floor(s[2] + 0.5));
        if (mask.contains(i, j, k)) r[flat] = mask(i, j, k) ? 1 : 0;
    });
    return r;
}

std::pair<Array3D<float>, BinaryArray> spatial_augment(Array3D<float> const& img, BinaryArray const& mask, Rng& rng,
                                                        AugmentConfig const& cfg) {
    if (img.shape() != mask.shape()) throw ShapeError("image and mask shapes differ");
    Affine const a = compose_affine(draw_affine(rng, cfg));
    float const pad = img.empty() ? 0.0f : *std::min_element(img.begin(), img.end());
    return {warp_image(img, a, {0, 0, 0}, img.shape(), pad), warp_mask(mask, a, {0, 0, 0}, mask.shape())};
}

namespace {

void blur_axis(Array3D<float>& a, int axis, std::vector<double> const& kernel) {
    int64_t const r = static_cast<int64_t>(kernel.size() / 2);
    Shape3 const& s = a.shape();
    int64_t const n = s[static_cast<size_t>(axis)];
    std::array<int64_t, 3> stride{s[1] * s[2], s[2], 1};
    int64_t const st = stride[static_cast<size_t>(axis)];
    std::vector<float> line(static_cast<size_t>(n));
    for (int64_t f = 0; f < a.size(); ++f) {
        if (a.coords(f)[static_cast<size_t>(axis)] != 0) continue;
        for (int64_t t = 0; t < n; ++t) line[static_cast<size_t>(t)] = a[f + t * st];
        for (int64_t t = 0; t < n; ++t) {
            double acc = 0;
            for (int64_t q = -r; q <= r; ++q) {
                int64_t const u = std::clamp<int64_t>(t + q, 0, n - 1);
                acc += kernel[static_cast<size_t>(q + r)] * line[static_cast<size_t>(u)];
            }
            a[f + t * st] = static_cast<float>(acc);
        }
    }
}

} // namespace

Array3D<float> appearance_augment(Array3D<float> const& img, Rng& rng, AugmentConfig const& cfg) {
    Array3D<float> out = img;
    bool changed = false;
    double const p = cfg.p_appearance;
    if (rng.bernoulli(p)) {
        double const f = rng.uniform(cfg.brightness_mult.first, cfg.brightness_mult.second);
        for (float& x : out) x = static_cast<float>(x * f);
        changed = true;
    }
    if (rng.bernoulli(p)) {
        double const add = rng.normal(0, cfg.brightness_add_std);
        for (float& x : out) x = static_cast<float>(x + add);
        changed = true;
    }
    if (rng.bernoulli(p)) {
        double const g = rng.uniform(cfg.gamma.first, cfg.gamma.second);
        auto const [mn_it, mx_it] = std::minmax_element(out.begin(), out.end());
        double const mn = *mn_it, span = *mx_it - mn;
        if (span > 1e-7) {
            for (float& x : out) x = static_cast<float>(mn + span * std::pow((x - mn) / span, g));
        }
        changed = true;
    }
    if (rng.bernoulli(p)) {
        double const c = rng.uniform(cfg.contrast.first, cfg.contrast.second);
        double mean = 0;
        for (float x : out) mean += x;
        mean /= static_cast<double>(std::max<int64_t>(1, out.size()));
        for (float& x : out) x = static_cast<float>((x - mean) * c + mean);
        changed = true;
    }
    if (rng.bernoulli(p)) {
        double const sigma = rng.uniform(cfg.blur_sigma.first, cfg.blur_sigma.second);
        auto const r = static_cast<int64_t>(std::ceil(3 * sigma));
        std::vector<double> k(static_cast<size_t>(2 * r + 1));
        double sum = 0;
        for (int64_t q = -r; q <= r; ++q) sum += k[static_cast<size_t>(q + r)] = std::exp(-0.5 * q * q / (sigma * sigma));
        for (double& w : k) w /= sum;
        for (int ax = 0; ax < 3; ++ax) blur_axis(out, ax, k);
        changed = true;
    }
    if (rng.bernoulli(p)) {
        for (float& x : out) x = static_cast<float>(x + rng.normal(0, cfg.noise_std));
        changed = true;
    }
    if (changed) {
        for (float& x : out) x = std::clamp(x, kClampLo, kClampHi);
    }
    return out;
}

PreparedVolume prepare_volume(Volume const& v) {
    PreparedVolume p;
    p.image = normalize_intensity(v);
    p.pad = static_cast<float>(percentile(p.image.values(), 1.0));
    p.id = v.id;
    return p;
}

namespace {

Index3 draw_start(Rng& rng, Shape3 const& shape, Shape3 const& crop, BBox const* fg) {
    Index3 start{};
    for (size_t a = 0; a < 3; ++a) {
        int64_t const lo = std::min<int64_t>(0, shape[a] - crop[a]);
        int64_t const hi = std::max<int64_t>(0, shape[a] - crop[a]);
        if (fg) {
            int64_t const c = fg->lo[a] + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(fg->hi[a] - fg->lo[a])));
            start[a] = std::clamp(c - crop[a] / 2, lo, hi);
        } else {
            start[a] = lo + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(hi - lo + 1)));
        }
    }
    return start;
}

} // namespace

Episode make_episode(PreparedVolume const& v, BinaryArray const& mask, Rng& rng, AugmentConfig const& cfg,
                     int64_t mask_index) {
    if (v.image.shape() != mask.shape()) throw ShapeError("image and mask shapes differ");
    BBox const box = bounding_box(mask);
    if (box.empty()) throw PreconditionError("episode mask is empty");
    Shape3 const& shape = mask.shape();
    for (int attempt = 0; attempt <= kEpisodeResamples; ++attempt) {
        bool const biased = rng.bernoulli(cfg.fg_crop_prob);
        Index3 const start_s = draw_start(rng, shape, cfg.crop, biased ? &box : nullptr);
        AffineParams const ps = draw_affine(rng, cfg);
        Index3 start_q = start_s;
        if (cfg.independent_crops) start_q = draw_start(rng, shape, cfg.crop, rng.bernoulli(cfg.fg_crop_prob) ? &box : nullptr);
        AffineParams const pq = draw_affine(rng, cfg);
        Affine const as = compose_affine(ps), aq = compose_affine(pq);
        Episode e;
        e.y_s = warp_mask(mask, as, start_s, cfg.crop);
        e.y_q = warp_mask(mask, aq, start_q, cfg.crop);
        if (count_foreground(e.y_s) < cfg.min_fg_voxels || count_foreground(e.y_q) < cfg.resolved_query_min_fg())
            continue;
        e.x_s = appearance_augment(warp_image(v.image, as, start_s, cfg.crop, v.pad), rng, cfg);
        e.x_q = appearance_augment(warp_image(v.image, aq, start_q, cfg.crop, v.pad), rng, cfg);
        e.provenance = EpisodeProvenance{v.id, mask_index, attempt + 1, {start_s, ps}, {start_q, pq}};
        return e;
    }
    throw EpisodeRejected("mask " + std::to_string(mask_index) + " of " + v.id + " gave fewer than " +
                          std::to_string(cfg.min_fg_voxels) + " foreground voxels in " +
                          std::to_string(kEpisodeResamples + 1) + " attempts");
}

Episode make_episode(Volume const& v, Mask3D const& m, Rng& rng, AugmentConfig const& cfg) {
    return make_episode(prepare_volume(v), m.voxels, rng, cfg);
}

} // namespace mass::augment
