#include "mass/core/connectivity.hpp"
#include "mass/core/error.hpp"
#include "mass/core/metrics.hpp"
#include "mass/phantom/phantom.hpp"

#include <doctest.h>

#include <algorithm>

using namespace mass;
using namespace mass::phantom;

TEST_CASE("phantom generation is deterministic") {
    PhantomSpec spec;
    spec.seed = 7;
    auto const a = generate_phantom(spec);
    auto const b = generate_phantom(spec);
    CHECK(a.volume.voxels == b.volume.voxels);
    REQUIRE(a.gt.size() == b.gt.size());
    for (size_t i = 0; i < a.gt.size(); ++i) CHECK(a.gt[i].voxels == b.gt[i].voxels);
    spec.seed = 8;
    CHECK_FALSE(generate_phantom(spec).volume.voxels == a.volume.voxels);
}

TEST_CASE("noiseless single structure equals its level set") {
    PhantomSpec spec;
    spec.seed = 3;
    spec.n_structures = 1;
    spec.noise_std = 0;
    auto const r = generate_phantom(spec);
    REQUIRE(r.gt.size() == 1);
    double const level = (kBackgroundHu + r.intensities_hu[0]) / 2.0;
    BinaryArray ls(r.volume.shape(), 0);
    for (int64_t i = 0; i < ls.size(); ++i) ls[i] = r.volume.voxels[i] > level;
    CHECK(ls == r.gt[0].voxels);
}

TEST_CASE("seed 0, 64^3, four structures: pairwise Dice below 0.05") {
    PhantomSpec spec;
    spec.seed = 0;
    spec.shape = {64, 64, 64};
    spec.n_structures = 4;
    auto const r = generate_phantom(spec);
    REQUIRE(r.gt.size() == 4);
    for (size_t i = 0; i < 4; ++i)
        for (size_t j = i + 1; j < 4; ++j) CHECK(dice_score(r.gt[i], r.gt[j]) < 0.05);
}

TEST_CASE("structure invariants across seeds and sizes") {
    for (uint64_t seed = 0; seed < 6; ++seed) {
        for (Shape3 const shape : {Shape3{32, 32, 32}, Shape3{64, 64, 64}, Shape3{48, 40, 36}}) {
            PhantomSpec spec;
            spec.seed = seed;
            spec.shape = shape;
            spec.n_structures = shape[0] == 64 ? 16 : 8;
            auto const r = generate_phantom(spec);
            double const total = static_cast<double>(voxel_count(shape));
            for (size_t s = 0; s < r.gt.size(); ++s) {
                auto const& m = r.gt[s];
                CHECK(m.is_binary());
                CHECK(is_connected(m.voxels));
                double const frac = static_cast<double>(m.count()) / total;
                CHECK(frac >= 0.005);
                CHECK(frac <= 0.10);
                CHECK(r.intensities_hu[s] >= -60.0);
                CHECK(r.intensities_hu[s] <= 310.0);
                CHECK(r.intensities_hu[s] - kBackgroundHu >= 30.0);
                for (size_t t = s + 1; t < r.gt.size(); ++t) {
                    double const inter = static_cast<double>(intersection_count(m.voxels, r.gt[t].voxels));
                    CHECK(inter < 0.05 * static_cast<double>(std::min(m.count(), r.gt[t].count())));
                }
            }
        }
    }
}

TEST_CASE("CT background sits near -100 HU") {
    PhantomSpec spec;
    spec.seed = 1;
    auto const r = generate_phantom(spec);
    auto const labels = r.label_map();
    double sum = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 0) {
            sum += r.volume.voxels[i];
            ++n;
        }
    }
    CHECK(sum / static_cast<double>(n) == doctest::Approx(kBackgroundHu).epsilon(0.02));
}

TEST_CASE("invalid specs and impossible placement") {
    PhantomSpec spec;
    spec.n_structures = 0;
    CHECK_THROWS_AS(generate_phantom(spec), InvalidParameter);
    spec.n_structures = 17;
    CHECK_THROWS_AS(generate_phantom(spec), InvalidParameter);
    spec.n_structures = 2;
    spec.shape = {31, 64, 64};
    CHECK_THROWS_AS(generate_phantom(spec), InvalidParameter);
    spec.shape = {64, 64, 64};
    spec.templates = {4, 4}; // same slot twice cannot satisfy the overlap bound
    try {
        (void)generate_phantom(spec);
        FAIL("expected placement error");
    } catch (PlacementError const& e) {
        CHECK(std::string(e.what()).find("smaller n_structures") != std::string::npos);
    }
}
