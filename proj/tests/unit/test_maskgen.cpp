#include "mass/core/connectivity.hpp"
#include "mass/core/error.hpp"
#include "mass/core/image_io.hpp"
#include "mass/core/metrics.hpp"
#include "mass/core/rle.hpp"
#include "mass/core/rng.hpp"
#include "mass/maskgen/maskgen.hpp"
#include "mass/phantom/phantom.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

using namespace mass;
using namespace mass::maskgen;
namespace fs = std::filesystem;

namespace {

Volume ct_volume(Shape3 shape, float fill) {
    Volume v;
    v.voxels = Array3D<float>(shape, fill);
    v.spacing = {1.5, 1.5, 1.5};
    v.modality = Modality::CT;
    v.id = "test";
    return v;
}

Slice3 uniform_slice(int64_t rows, int64_t cols, float value) {
    Slice3 s;
    for (auto& c : s.ch) c = Image2D<float>(rows, cols, value);
    return s;
}

double dice2d(Image2D<uint8_t> const& a, Image2D<uint8_t> const& b) {
    int64_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        inter += a.data[i] && b.data[i];
        na += a.data[i];
        nb += b.data[i];
    }
    return na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double window_oracle(double x, double c, double w) {
    double const lo = c - w / 2;
    double const t = (x - lo) / w;
    return 255.0 * (t < 0 ? 0 : (t > 1 ? 1 : t));
}

} // namespace

TEST_CASE("select_axis") {
    CHECK(select_axis({5.0, 0.7, 0.7}) == 0);
    CHECK(select_axis({1.0, 1.0, 1.0}) == 0);
    CHECK(select_axis({1.0, 1.2, 1.0}) == 0);
    CHECK(select_axis({0.7, 0.7, 5.0}) == 2);
    CHECK(select_axis({0.8, 3.0, 0.8}) == 1);
    CHECK_THROWS_AS(select_axis({0.0, 1.0, 1.0}), InvalidParameter);
}

TEST_CASE("sample_seed_slices") {
    Volume v = ct_volume({64, 64, 64}, 0);
    v.spacing = {1.5, 1.5, 1.5};
    auto idx = sample_seed_slices(v, 0, 15.0);
    CHECK(idx == std::vector<int64_t>{0, 10, 20, 30, 40, 50, 60});

    v.spacing = {5.0, 1, 1};
    idx = sample_seed_slices(v, 0, 15.0);
    CHECK(idx.size() == 22);
    CHECK(idx[1] == 3);

    v.spacing = {20.0, 1, 1};
    CHECK(sample_seed_slices(v, 0, 15.0).size() == 64);

    // Consecutive seeds are at most d_mm + spacing apart, and index 0 is present.
    for (double s : {0.4, 0.7, 1.0, 2.5, 3.3, 7.0, 16.0}) {
        for (double d : {1.0, 5.0, 15.0, 22.0}) {
            v.spacing = {s, 1, 1};
            auto const ix = sample_seed_slices(v, 0, d);
            REQUIRE(!ix.empty());
            CHECK(ix.front() == 0);
            CHECK(ix.back() < 64);
            for (size_t i = 1; i < ix.size(); ++i) CHECK((ix[i] - ix[i - 1]) * s <= d + s + 1e-9);
        }
    }
    CHECK_THROWS_AS(sample_seed_slices(v, 0, 0.0), InvalidParameter);
}

TEST_CASE("make_3channel windows and quantiles") {
    MaskGenConfig cfg;
    Volume v = ct_volume({8, 8, 8}, 60.0f);
    auto const tc = make_3channel(v, cfg);
    CHECK(tc.channels[0][0] == doctest::Approx(127.5).epsilon(1e-6));
    CHECK(tc.channels[1][0] == doctest::Approx(173.4).epsilon(1e-3));
    CHECK(tc.channels[2][0] == doctest::Approx(108.375).epsilon(1e-6));
    for (size_t c = 0; c < 3; ++c) {
        auto const [center, width] = cfg.ct_windows[c];
        CHECK(tc.channels[c][0] == doctest::Approx(window_oracle(60, center, width)).epsilon(1e-6));
    }

    Volume mr = ct_volume({8, 8, 8}, 3.0f);
    mr.modality = Modality::MR;
    auto const flat = make_3channel(mr, cfg);
    CHECK(flat.degenerate);
    for (auto const& ch : flat.channels) {
        CHECK(std::all_of(ch.begin(), ch.end(), [](float x) { return x == 0.0f; }));
    }

    Volume synth = ct_volume({8, 8, 8}, 1.0f);
    synth.modality = Modality::SYNTH;
    try {
        make_3channel(synth, cfg);
        FAIL("expected an error");
    } catch (InvalidParameter const& e) {
        CHECK(std::string(e.what()).find("CT, MR, PET") != std::string::npos);
    }
}

TEST_CASE("propose_2d on a uniform slice gives at most the whole plane") {
    MaskGenConfig cfg;
    auto const props = propose_2d(uniform_slice(48, 48, 90.0f), cfg, 1);
    CHECK(props.size() <= 1);
    if (!props.empty()) CHECK(props[0].area == 48 * 48);
}

TEST_CASE("propose_2d finds two disks on a noisy phantom-like slice") {
    MaskGenConfig cfg;
    int64_t const n = 64;
    Image2D<float> hu(n, n, -100.0f);
    Image2D<uint8_t> d1(n, n), d2(n, n);
    Rng rng(5);
    for (int64_t r = 0; r < n; ++r) {
        for (int64_t c = 0; c < n; ++c) {
            if ((r - 20) * (r - 20) + (c - 18) * (c - 18) <= 64) d1(r, c) = 1;
            if ((r - 42) * (r - 42) + (c - 44) * (c - 44) <= 100) d2(r, c) = 1;
            float const base = d1(r, c) ? 130.0f : (d2(r, c) ? 40.0f : -100.0f);
            hu(r, c) = base + static_cast<float>(rng.normal(0, 8));
        }
    }
    Slice3 s;
    for (size_t c = 0; c < 3; ++c) {
        s.ch[c] = Image2D<float>(n, n);
        for (size_t i = 0; i < hu.data.size(); ++i) {
            s.ch[c].data[i] = static_cast<float>(window_oracle(hu.data[i], cfg.ct_windows[c].first, cfg.ct_windows[c].second));
        }
    }
    auto const props = propose_2d(s, cfg, 0);
    CHECK(props.size() >= 2);
    CHECK(static_cast<int>(props.size()) <= cfg.max_masks_per_slice);
    double b1 = 0, b2 = 0;
    for (auto const& p : props) {
        CHECK(p.area >= cfg.builtin.min_area);
        b1 = std::max(b1, dice2d(p.mask2d, d1));
        b2 = std::max(b2, dice2d(p.mask2d, d2));
    }
    CHECK(b1 >= 0.9);
    CHECK(b2 >= 0.9);
}

TEST_CASE("propose_2d respects the cap with a size-stratified sample") {
    MaskGenConfig cfg;
    cfg.max_masks_per_slice = 5;
    // Checkerboard of 8x8 tiles with alternating intensities: many separate regions.
    Slice3 s;
    for (auto& ch : s.ch) ch = Image2D<float>(64, 64);
    for (int64_t r = 0; r < 64; ++r)
        for (int64_t c = 0; c < 64; ++c)
            for (auto& ch : s.ch) ch(r, c) = ((r / 8 + c / 8) % 2) ? 220.0f : 20.0f;
    auto const a = propose_2d(s, cfg, 11);
    auto const b = propose_2d(s, cfg, 11);
    CHECK(a.size() == 5);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].mask2d == b[i].mask2d);
    MaskGenConfig wide = cfg;
    wide.max_masks_per_slice = 1000;
    CHECK(propose_2d(s, wide, 11).size() > 5);
}

TEST_CASE("propagation recovers a sphere from an equatorial seed") {
    MaskGenConfig cfg;
    Volume v = ct_volume({40, 40, 40}, -100.0f);
    Mask3D gt;
    gt.voxels = BinaryArray(v.shape(), 0);
    Rng rng(2);
    for (int64_t i = 0; i < 40; ++i)
        for (int64_t j = 0; j < 40; ++j)
            for (int64_t k = 0; k < 40; ++k) {
                bool const in = (i - 20) * (i - 20) + (j - 19) * (j - 19) + (k - 21) * (k - 21) <= 100;
                gt.voxels(i, j, k) = in;
                v.voxels(i, j, k) = (in ? 130.0f : -100.0f) + static_cast<float>(rng.normal(0, 8));
            }
    SeedProposal2D seed;
    seed.axis = 0;
    seed.slice_index = 20;
    seed.mask2d = extract_slice(gt.voxels, 0, 20);
    auto const m = propagate_3d(v, seed, cfg);
    CHECK(dice_score(m.voxels, gt.voxels) >= 0.8);
    CHECK(extract_slice(m.voxels, 0, 20) == seed.mask2d);
    CHECK(propagate_3d(v, seed, cfg).voxels == m.voxels);

    // Seed on the last slice: only the backward direction exists.
    Volume w = ct_volume({16, 16, 16}, -100.0f);
    for (int64_t i = 6; i < 16; ++i)
        for (int64_t j = 4; j < 12; ++j)
            for (int64_t k = 4; k < 12; ++k) w.voxels(i, j, k) = 130.0f;
    SeedProposal2D last;
    last.axis = 0;
    last.slice_index = 15;
    last.mask2d = Image2D<uint8_t>(16, 16);
    for (int64_t j = 4; j < 12; ++j)
        for (int64_t k = 4; k < 12; ++k) last.mask2d(j, k) = 1;
    auto const ml = propagate_3d(w, last, cfg);
    CHECK(extract_slice(ml.voxels, 0, 15) == last.mask2d);
    BinaryArray block(w.shape(), 0);
    for (int64_t i = 6; i < 16; ++i)
        for (int64_t j = 4; j < 12; ++j)
            for (int64_t k = 4; k < 12; ++k) block(i, j, k) = 1;
    CHECK(dice_score(ml.voxels, block) >= 0.9);
    CHECK(intersection_count(ml.voxels, block) == ml.count());

    SeedProposal2D empty = last;
    std::fill(empty.mask2d.data.begin(), empty.mask2d.data.end(), 0);
    CHECK_THROWS_AS(propagate_3d(w, empty, cfg), PreconditionError);
}

TEST_CASE("postprocess keeps the seed-touching component and removes duplicates") {
    MaskGenConfig cfg;
    Shape3 const shape{20, 20, 20};
    Mask3D blob;
    blob.voxels = BinaryArray(shape, 0);
    blob.seed_axis = 0;
    blob.seed_slice = 5;
    blob.volume_id = "v";
    for (int64_t i = 3; i < 9; ++i)
        for (int64_t j = 3; j < 9; ++j)
            for (int64_t k = 3; k < 9; ++k) blob.voxels(i, j, k) = 1;
    Mask3D speck = blob;
    speck.voxels(15, 15, 15) = 1;
    auto bank = postprocess_bank({speck}, cfg, 0);
    REQUIRE(bank.size() == 1);
    CHECK(bank.masks[0].voxels == blob.voxels);

    bank = postprocess_bank({blob, blob}, cfg, 0);
    CHECK(bank.size() == 1);

    Mask3D tiny = blob;
    tiny.voxels.fill(0);
    tiny.voxels(5, 5, 5) = 1;
    CHECK(postprocess_bank({tiny}, cfg, 0).empty());
}

TEST_CASE("postprocess on a random bank leaves no pair above the dedup IoU") {
    MaskGenConfig cfg;
    Shape3 const shape{16, 16, 16};
    Rng rng(3);
    std::vector<Mask3D> raw;
    for (int n = 0; n < 40; ++n) {
        Mask3D m;
        m.voxels = BinaryArray(shape, 0);
        m.volume_id = "r";
        m.seed_axis = 0;
        int64_t const lo = 2 + static_cast<int64_t>(rng.uniform_int(3));
        int64_t const hi = 10 + static_cast<int64_t>(rng.uniform_int(3));
        for (int64_t i = lo; i < hi; ++i)
            for (int64_t j = lo; j < hi; ++j)
                for (int64_t k = 3; k < 12; ++k) m.voxels(i, j, k) = rng.bernoulli(0.97) || (j == 6 && k == 6);
        m.seed_slice = lo;
        raw.push_back(m);
    }
    auto const bank = postprocess_bank(raw, cfg, 3);
    CHECK(!bank.empty());
    CHECK(bank.size() < raw.size());
    for (size_t i = 0; i < bank.size(); ++i) {
        CHECK(is_connected(bank.masks[i].voxels));
        CHECK(bank.masks[i].count() >= cfg.min_volume_voxels);
        for (size_t j = i + 1; j < bank.size(); ++j) CHECK(iou(bank.masks[i].voxels, bank.masks[j].voxels) <= 0.9);
    }
    auto const again = postprocess_bank(raw, cfg, 3);
    REQUIRE(again.size() == bank.size());
    for (size_t i = 0; i < bank.size(); ++i) CHECK(again.masks[i].voxels == bank.masks[i].voxels);
}

TEST_CASE("mask quality statistics") {
    Shape3 const shape{10, 10, 10};
    Mask3D g;
    g.voxels = BinaryArray(shape, 0);
    for (int64_t i = 0; i < 4; ++i) g.voxels(i, 0, 0) = 1;
    MaskBank bank;
    bank.shape = shape;
    bank.volume_id = "q";
    bank.masks = {g};
    auto rep = mask_quality_stats(bank, {g});
    CHECK(rep.aggregate.best == doctest::Approx(100.0));

    Mask3D half;
    half.voxels = BinaryArray(shape, 0);
    // |half| = 4, overlap 2 -> Dice 0.5
    half.voxels(0, 0, 0) = half.voxels(1, 0, 0) = half.voxels(5, 5, 5) = half.voxels(5, 5, 6) = 1;
    Mask3D far;
    far.voxels = BinaryArray(shape, 0);
    far.voxels(9, 9, 9) = 1;
    bank.masks = {half, far};
    rep = mask_quality_stats(bank, {g});
    CHECK(rep.per_structure[0].avg == doctest::Approx(50.0));
    CHECK(rep.per_structure[0].pct_gt40 == doctest::Approx(100.0));
    CHECK(rep.per_structure[0].n_overlapping == 1);

    bank.masks.clear();
    rep = mask_quality_stats(bank, {g});
    CHECK(rep.empty_bank);
    CHECK(rep.aggregate.best == 0.0);
}

TEST_CASE("default pipeline on a phantom matches a brute-force quality oracle") {
    phantom::PhantomSpec spec;
    spec.seed = 0;
    auto const ph = phantom::generate_phantom(spec);
    MaskGenConfig cfg;
    PipelineStats st;
    auto const t0 = std::chrono::steady_clock::now();
    MaskBank const bank = generate_mask_bank(ph.volume, cfg, 0, &st);
    double const secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("seeds=" << st.seed_slices << " proposals=" << st.proposals << " raw=" << st.raw_masks
                     << " final=" << st.final_masks << " time=" << secs << "s");
    REQUIRE(!bank.empty());
    for (auto const& m : bank.masks) {
        CHECK(m.is_binary());
        CHECK(m.count() >= cfg.min_volume_voxels);
        CHECK(is_connected(m.voxels));
        auto const seed = extract_slice(m.voxels, m.seed_axis, m.seed_slice);
        CHECK(std::any_of(seed.data.begin(), seed.data.end(), [](uint8_t x) { return x != 0; }));
    }
    auto const rep = mask_quality_stats(bank, ph.gt);
    for (size_t g = 0; g < ph.gt.size(); ++g) {
        double best = 0, sum = 0;
        int64_t n = 0, above = 0;
        for (auto const& m : bank.masks) {
            int64_t inter = 0, a = 0, b = 0;
            for (int64_t f = 0; f < m.voxels.size(); ++f) {
                inter += m.voxels[f] & ph.gt[g].voxels[f];
                a += m.voxels[f];
                b += ph.gt[g].voxels[f];
            }
            double const d = 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
            best = std::max(best, d);
            if (inter > 0) {
                ++n;
                sum += d;
                above += d > 0.4;
            }
        }
        MESSAGE("structure " << g << " best=" << 100 * best << " avg=" << (n ? 100 * sum / n : 0) << " n=" << n);
        CHECK(rep.per_structure[g].best == doctest::Approx(100 * best));
        CHECK(rep.per_structure[g].avg == doctest::Approx(n ? 100 * sum / static_cast<double>(n) : 0.0));
        CHECK(rep.per_structure[g].pct_gt40 ==
              doctest::Approx(n ? 100.0 * static_cast<double>(above) / static_cast<double>(n) : 0.0));
    }
    for (size_t i = 0; i < bank.size(); ++i)
        for (size_t j = i + 1; j < bank.size(); ++j) CHECK(iou(bank.masks[i].voxels, bank.masks[j].voxels) <= 0.9);

    MaskBank const again = generate_mask_bank(ph.volume, cfg, 0);
    REQUIRE(again.size() == bank.size());
    for (size_t i = 0; i < bank.size(); ++i) CHECK(again.masks[i].voxels == bank.masks[i].voxels);
}

TEST_CASE("EXTERNAL backend round trip through the exchange directory") {
    phantom::PhantomSpec spec;
    spec.seed = 1;
    spec.shape = {32, 32, 32};
    spec.n_structures = 2;
    auto const ph = phantom::generate_phantom(spec);
    fs::path const dir = fs::temp_directory_path() / "mass_exchange_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    MaskGenConfig cfg;
    cfg.backend = Backend::EXTERNAL;
    cfg.external.exchange_dir = dir;
    cfg.external.poll_interval_s = 0.01;
    cfg.external.timeout_s = 30;

    std::thread responder([&] {
        while (!fs::exists(dir / "request.json")) std::this_thread::sleep_for(std::chrono::milliseconds(5));
        nlohmann::json req;
        std::ifstream(dir / "request.json") >> req;
        int const axis = req["axis"].get<int>();
        for (int64_t idx : req["slices"].get<std::vector<int64_t>>()) {
            CHECK(fs::exists(dir / ("slice_" + std::to_string(axis) + "_" + std::to_string(idx) + ".png")));
            std::vector<uint8_t> bytes;
            uint32_t k = 0;
            for (auto const& g : ph.gt) {
                auto const sl = extract_slice(g.voxels, axis, idx);
                BinaryArray flat(Shape3{1, sl.rows, sl.cols}, sl.data);
                append_record(bytes, RleRecord{k++, encode_runs(flat)});
            }
            std::ofstream(dir / ("proposals_" + std::to_string(idx) + ".rle"), std::ios::binary)
                .write(reinterpret_cast<char const*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        }
        std::ofstream(dir / "done") << "ok\n";
    });
    MaskBank const bank = generate_mask_bank(ph.volume, cfg, 0);
    responder.join();
    REQUIRE(!bank.empty());
    for (auto const& m : bank.masks) CHECK(m.source == MaskSource::EXTERNAL);
    int seen = 0;
    for (auto const& g : ph.gt) {
        bool hit = false;
        for (int64_t idx : sample_seed_slices(ph.volume, 0, cfg.d_mm)) {
            auto const sl = extract_slice(g.voxels, 0, idx);
            hit = hit || std::count(sl.data.begin(), sl.data.end(), 1) >= cfg.builtin.min_area;
        }
        if (!hit) continue;
        ++seen;
        double best = 0;
        for (auto const& m : bank.masks) best = std::max(best, dice_score(m, g));
        CHECK(best >= 0.7);
    }
    CHECK(seen >= 1);

    // A missing proposal file is reported with its path.
    ExternalExchange ex(dir, cfg.external);
    try {
        ex.read(0, 999, 32, 32, 1);
        FAIL("expected a backend error");
    } catch (BackendError const& e) {
        CHECK(std::string(e.what()).find("proposals_999.rle") != std::string::npos);
    }
    std::ofstream(dir / "proposals_5.rle", std::ios::binary) << "garbage";
    CHECK_THROWS_AS(ex.read(0, 5, 32, 32, 1), BackendError);

    cfg.external.exchange_dir = dir / "missing";
    CHECK_THROWS_AS(generate_mask_bank(ph.volume, cfg, 0), BackendError);
    fs::remove_all(dir);
}

TEST_CASE("config JSON round trip and validation") {
    MaskGenConfig cfg;
    cfg.d_mm = 9;
    cfg.builtin.levels = 8;
    cfg.multi_axis = true;
    nlohmann::json j = cfg;
    auto const back = j.get<MaskGenConfig>();
    CHECK(back.d_mm == 9);
    CHECK(back.builtin.levels == 8);
    CHECK(back.multi_axis);
    CHECK(back.ct_windows == cfg.ct_windows);

    CHECK_THROWS_AS((nlohmann::json{{"d_mm", 0}}.get<MaskGenConfig>()), ConfigError);
    CHECK_THROWS_AS((nlohmann::json{{"dedup_iou", 1.5}}.get<MaskGenConfig>()), ConfigError);
    CHECK_THROWS_AS((nlohmann::json{{"max_masks_per_slice", 0}}.get<MaskGenConfig>()), ConfigError);
    CHECK_THROWS_AS((nlohmann::json{{"bogus", 1}}.get<MaskGenConfig>()), ConfigError);
    CHECK_THROWS_AS((nlohmann::json{{"backend", "SAM"}}.get<MaskGenConfig>()), ConfigError);
}
