#include "mass/augment/augment.hpp"
#include "mass/core/error.hpp"
#include "mass/phantom/phantom.hpp"

#include <doctest.h>

#include <numbers>

using namespace mass;
using namespace mass::augment;

namespace {

Array3D<float> ramp(Shape3 s) {
    Array3D<float> a(s);
    for (int64_t f = 0; f < a.size(); ++f) a[f] = static_cast<float>(f % 97) / 97.0f;
    return a;
}

BinaryArray cube(Shape3 s, int64_t lo, int64_t hi) {
    BinaryArray m(s, 0);
    for (int64_t i = lo; i < hi; ++i)
        for (int64_t j = lo; j < hi; ++j)
            for (int64_t k = lo; k < hi; ++k) m(i, j, k) = 1;
    return m;
}

} // namespace

TEST_CASE("identity spatial draw returns the inputs") {
    Array3D<float> const img = ramp({12, 10, 9});
    BinaryArray const m = cube({12, 10, 9}, 2, 6);
    AugmentConfig cfg;
    cfg.p_spatial = 0;
    Rng rng(1);
    auto const [i2, m2] = spatial_augment(img, m, rng, cfg);
    CHECK(i2 == img);
    CHECK(m2 == m);
}

TEST_CASE("random spatial draws keep masks binary") {
    Array3D<float> const img = ramp({16, 16, 16});
    BinaryArray const m = cube({16, 16, 16}, 4, 11);
    AugmentConfig cfg;
    cfg.p_spatial = 1;
    Rng rng(9);
    for (int t = 0; t < 50; ++t) {
        auto const [i2, m2] = spatial_augment(img, m, rng, cfg);
        CHECK(is_binary(m2));
        CHECK(std::all_of(i2.begin(), i2.end(), [](float x) { return std::isfinite(x); }));
    }
}

TEST_CASE("quarter-turn rotations preserve the cube voxel count") {
    BinaryArray const m = cube({16, 16, 16}, 3, 9);
    int64_t const n = count_foreground(m);
    for (int axis = 0; axis < 3; ++axis) {
        for (double sign : {1.0, -1.0}) {
            AffineParams p;
            p.rot_rad[static_cast<size_t>(axis)] = sign * std::numbers::pi / 2;
            BinaryArray const r = warp_mask(m, compose_affine(p), {0, 0, 0}, m.shape());
            CHECK(count_foreground(r) == n);
        }
    }
}

TEST_CASE("appearance identities and determinism") {
    Array3D<float> const img = ramp({10, 10, 10});
    AugmentConfig off;
    off.p_appearance = 0;
    Rng r0(3);
    CHECK(appearance_augment(img, r0, off) == img);

    AugmentConfig neutral;
    neutral.p_appearance = 1;
    neutral.brightness_mult = {1, 1};
    neutral.brightness_add_std = 0;
    neutral.gamma = {1, 1};
    neutral.contrast = {1, 1};
    neutral.noise_std = 0;
    neutral.blur_sigma = {1e-3, 1e-3};
    Rng r1(3);
    auto const out = appearance_augment(img, r1, neutral);
    for (int64_t f = 0; f < img.size(); ++f) CHECK(out[f] == doctest::Approx(img[f]).epsilon(1e-5));

    AugmentConfig on;
    on.p_appearance = 1;
    Rng a(42), b(42);
    auto const x = appearance_augment(img, a, on);
    CHECK(x == appearance_augment(img, b, on));
    CHECK(std::all_of(x.begin(), x.end(), [](float v) { return v >= kClampLo && v <= kClampHi; }));
}

TEST_CASE("episodes on a phantom: foreground floor, correspondence, determinism") {
    phantom::PhantomSpec spec;
    spec.seed = 1;
    auto const ph = phantom::generate_phantom(spec);
    PreparedVolume const pv = prepare_volume(ph.volume);
    AugmentConfig cfg;
    cfg.crop = {32, 32, 32};
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Episode const e = make_episode(pv, ph.gt[seed % ph.gt.size()].voxels, rng, cfg, 0);
        CHECK(count_foreground(e.y_s) >= cfg.min_fg_voxels);
        CHECK(count_foreground(e.y_q) >= cfg.min_fg_voxels);
        CHECK(e.x_s.shape() == cfg.crop);
        CHECK(e.y_q.shape() == cfg.crop);
        // Re-applying the recorded query transform to the source mask reproduces y_q.
        auto const& q = e.provenance.q;
        CHECK(warp_mask(ph.gt[seed % ph.gt.size()].voxels, compose_affine(q.params), q.start, cfg.crop) == e.y_q);
        Rng again(seed);
        Episode const e2 = make_episode(pv, ph.gt[seed % ph.gt.size()].voxels, again, cfg, 0);
        CHECK(e2.x_s == e.x_s);
        CHECK(e2.x_q == e.x_q);
        CHECK(e2.y_s == e.y_s);
    }
}

TEST_CASE("identity config gives identical views") {
    phantom::PhantomSpec spec;
    spec.seed = 2;
    auto const ph = phantom::generate_phantom(spec);
    Rng rng(1);
    Episode const e = make_episode(ph.volume, ph.gt[0], rng, AugmentConfig::identity({32, 32, 32}));
    CHECK(e.x_s == e.x_q);
    CHECK(e.y_s == e.y_q);
}

TEST_CASE("a zero query floor admits target-free queries") {
    phantom::PhantomSpec spec;
    spec.seed = 3;
    auto const ph = phantom::generate_phantom(spec);
    PreparedVolume const pv = prepare_volume(ph.volume);
    AugmentConfig cfg;
    cfg.crop = {32, 32, 32};
    cfg.independent_crops = true;
    cfg.fg_crop_prob = 0.5;
    cfg.query_min_fg_voxels = 0;
    int empty = 0;
    for (uint64_t seed = 0; seed < 60; ++seed) {
        Rng rng(seed);
        Episode const e = make_episode(pv, ph.gt[0].voxels, rng, cfg, 0);
        CHECK(count_foreground(e.y_s) >= cfg.min_fg_voxels);
        empty += count_foreground(e.y_q) == 0;
    }
    CHECK(empty > 0);
    CHECK(empty < 60);
    AugmentConfig d;
    CHECK(d.resolved_query_min_fg() == d.min_fg_voxels);
}

TEST_CASE("tiny masks are rejected") {
    Volume v;
    v.voxels = Array3D<float>({32, 32, 32}, 0.0f);
    v.modality = Modality::CT;
    v.id = "tiny";
    Mask3D m;
    m.voxels = BinaryArray(v.shape(), 0);
    m.voxels(10, 10, 10) = m.voxels(10, 10, 11) = m.voxels(10, 11, 10) = m.voxels(11, 10, 10) = 1;
    AugmentConfig cfg;
    cfg.min_fg_voxels = 16;
    Rng rng(0);
    CHECK_THROWS_AS(make_episode(v, m, rng, cfg), EpisodeRejected);
    m.voxels.fill(0);
    CHECK_THROWS_AS(make_episode(v, m, rng, cfg), PreconditionError);
}

TEST_CASE("augment config JSON") {
    AugmentConfig c;
    c.crop = {16, 24, 32};
    c.independent_crops = true;
    nlohmann::json const j = c;
    auto const b = j.get<AugmentConfig>();
    CHECK(b.crop == c.crop);
    CHECK(b.independent_crops);
    CHECK(b.gamma == c.gamma);
    CHECK((nlohmann::json{{"query_min_fg_voxels", 0}}.get<AugmentConfig>().query_min_fg_voxels) == 0);
    CHECK_THROWS_AS((nlohmann::json{{"p_spatial", 2.0}}.get<AugmentConfig>()), ConfigError);
    CHECK_THROWS_AS((nlohmann::json{{"wobble", 1}}.get<AugmentConfig>()), ConfigError);
}
