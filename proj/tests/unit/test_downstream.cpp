#include "mass/core/error.hpp"
#include "mass/core/metrics.hpp"
#include "mass/downstream/downstream.hpp"
#include "mass/phantom/phantom.hpp"

// torch pulls in a CHECK macro of its own.
#undef CHECK
#include <doctest.h>

#include <cmath>

using namespace mass;
using namespace mass::downstream;

namespace {

model::ModelConfig small_model(int base = 2) {
    model::ModelConfig c;
    c.base_channels = base;
    c.stages = 2;
    c.heads = 2;
    return c;
}

phantom::PhantomResult make_phantom(uint64_t seed, Shape3 shape = {48, 48, 48}, std::vector<int> templates = {}) {
    phantom::PhantomSpec s;
    s.seed = seed;
    s.shape = shape;
    s.templates = std::move(templates);
    if (!s.templates.empty()) s.n_structures = static_cast<int>(s.templates.size());
    return phantom::generate_phantom(s);
}

Reference ref_of(phantom::PhantomResult const& p, size_t k) { return {p.volume, p.gt[k].voxels}; }

std::vector<torch::Tensor> params_of(torch::nn::Module const& m) {
    std::vector<torch::Tensor> out;
    for (auto const& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

bool same_params(std::vector<torch::Tensor> const& a, std::vector<torch::Tensor> const& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!torch::equal(a[i], b[i])) return false;
    return true;
}

Array3D<float> rotate_12(Array3D<float> const& a) {
    // (i, j, k) -> (i, k, n - 1 - j)
    Shape3 const s = a.shape();
    Array3D<float> out({s[0], s[2], s[1]});
    for (int64_t i = 0; i < s[0]; ++i)
        for (int64_t j = 0; j < s[1]; ++j)
            for (int64_t k = 0; k < s[2]; ++k) out(i, k, s[1] - 1 - j) = a(i, j, k);
    return out;
}

double correlation(Array3D<float> const& a, Array3D<float> const& b) {
    double ma = 0, mb = 0;
    auto const n = static_cast<double>(a.size());
    for (int64_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

} // namespace

TEST_CASE("window starts cover the extent with half-crop steps") {
    CHECK(window_starts(64, 32) == std::vector<int64_t>{0, 16, 32});
    CHECK(window_starts(32, 32) == std::vector<int64_t>{0});
    CHECK(window_starts(40, 32) == std::vector<int64_t>{0, 8});
    CHECK(window_starts(50, 16) == std::vector<int64_t>{0, 8, 16, 24, 32, 34});
    CHECK_THROWS_AS(window_starts(16, 32), ShapeError);
}

TEST_CASE("reference crop is centred on the mask and keeps a small structure whole") {
    auto const p = make_phantom(3);
    auto const prep = augment::prepare_volume(p.volume);
    for (auto const& g : p.gt) {
        BBox const b = g.bbox();
        bool fits = true;
        for (size_t a = 0; a < 3; ++a) fits = fits && b.hi[a] - b.lo[a] <= 32;
        auto const [img, msk] = reference_crop(prep, g.voxels, {32, 32, 32});
        CHECK(img.shape() == Shape3{32, 32, 32});
        if (fits) CHECK(count_foreground(msk) == g.count());
        else CHECK(count_foreground(msk) > 0);
    }
    BinaryArray empty(p.volume.shape());
    CHECK_THROWS_AS(reference_crop(prep, empty, {32, 32, 32}), PreconditionError);
    CHECK_THROWS_AS(reference_crop(prep, BinaryArray({8, 8, 8}, 1), {32, 32, 32}), ShapeError);
}

TEST_CASE("sliding window over a single-crop volume equals one forward pass") {
    auto net = model::make_model(small_model(), 1);
    auto const p = make_phantom(5, {32, 32, 32});
    ReferenceSet refs{ref_of(p, 0)};
    auto const task = average_task_embedding(net, refs, {32, 32, 32});
    auto const prep = augment::prepare_volume(p.volume);
    auto const slid = sliding_logits(net, prep, task, {32, 32, 32});
    torch::NoGradGuard ng;
    auto const x = torch::from_blob(const_cast<float*>(prep.image.storage().data()), {1, 1, 32, 32, 32}).clone();
    auto const direct = net->decode(net->encode(x), task).contiguous();
    float const* d = direct.data_ptr<float>();
    bool equal = true;
    for (int64_t i = 0; i < slid.size(); ++i) equal = equal && slid[i] == d[i];
    CHECK(equal);
}

TEST_CASE("duplicated references reproduce the single-reference output bitwise") {
    auto net = model::make_model(small_model(), 2);
    auto const a = make_phantom(7);
    auto const q = make_phantom(8);
    IcConfig cfg;
    for (auto mode : {Averaging::EMBEDDING, Averaging::PROBABILITY}) {
        cfg.averaging = mode;
        auto const one = ic_infer(net, {ref_of(a, 1)}, q.volume, cfg, &q.gt[1].voxels);
        auto const three = ic_infer(net, {ref_of(a, 1), ref_of(a, 1), ref_of(a, 1)}, q.volume, cfg, &q.gt[1].voxels);
        CHECK(one.probability == three.probability);
        CHECK(one.mask.voxels == three.mask.voxels);
        CHECK(*one.dice == *three.dice);
    }
    // Distinct references: untrained model, value unconstrained.
    ReferenceSet five;
    for (size_t k = 0; k < a.gt.size(); ++k) five.push_back(ref_of(a, k));
    five.push_back(ref_of(q, 0));
    auto const r = ic_infer(net, five, q.volume, {}, &q.gt[0].voxels);
    REQUIRE(r.dice.has_value());
    CHECK(*r.dice >= 0.0);
    CHECK(*r.dice <= 1.0);
}

TEST_CASE("in-context inference rejects incompatible inputs") {
    auto net = model::make_model(small_model(), 3);
    auto const a = make_phantom(9, {32, 32, 32});
    IcConfig cfg;
    CHECK_THROWS_AS(ic_infer(net, {}, a.volume, cfg), PreconditionError);
    cfg.crop = {30, 32, 32};
    CHECK_THROWS_AS(ic_infer(net, {ref_of(a, 0)}, a.volume, cfg), ShapeError);
    cfg.crop = {48, 48, 48};
    CHECK_THROWS_AS(ic_infer(net, {ref_of(a, 0)}, a.volume, cfg), ShapeError);
    cfg.crop = {32, 32, 32};
    BinaryArray wrong({16, 16, 16});
    CHECK_THROWS_AS(ic_infer(net, {ref_of(a, 0)}, a.volume, cfg, &wrong), ShapeError);
}

TEST_CASE("fine-tuning configuration, zero epochs and determinism") {
    auto net = model::make_model(small_model(), 4);
    auto const a = make_phantom(11, {32, 32, 32});
    auto const b = make_phantom(12, {32, 32, 32});
    ReferenceSet train{ref_of(a, 0), ref_of(b, 0)};
    FinetuneConfig cfg;
    cfg.ic.crop = {32, 32, 32};
    cfg.augment.crop = {32, 32, 32};
    CHECK_THROWS_AS(finetune_run(net, train, {}, cfg), ConfigError);
    CHECK_THROWS_AS(finetune_run(net, {}, train, cfg), PreconditionError);

    cfg.early_stopping = false;
    cfg.epochs = 0;
    auto const zero = finetune_run(net, train, {}, cfg);
    CHECK(same_params(params_of(*zero.net), params_of(*net)));
    double const ic = (*ic_infer(net, train, a.volume, cfg.ic, &a.gt[0].voxels).dice +
                       *ic_infer(net, train, b.volume, cfg.ic, &b.gt[0].voxels).dice) /
                      2;
    CHECK(zero.best_dice == doctest::Approx(ic).epsilon(1e-12));

    cfg.epochs = 2;
    cfg.steps_per_epoch = 2;
    cfg.lr = 1e-3;
    auto const r1 = finetune_run(net, train, {}, cfg);
    auto const r2 = finetune_run(net, train, {}, cfg);
    CHECK(r1.epoch_dice == r2.epoch_dice);
    CHECK(same_params(params_of(*r1.net), params_of(*r2.net)));
    // Evaluated on its own training items, the returned model never loses.
    CHECK(r1.best_dice >= r1.initial_dice);
    CHECK(r1.epochs_run == 2);
}

TEST_CASE("early stopping halts after the patience window") {
    auto net = model::make_model(small_model(), 5);
    auto const a = make_phantom(13, {32, 32, 32});
    auto const b = make_phantom(14, {32, 32, 32});
    FinetuneConfig cfg;
    cfg.ic.crop = {32, 32, 32};
    cfg.augment.crop = {32, 32, 32};
    cfg.epochs = 6;
    cfg.steps_per_epoch = 1;
    cfg.batch_size = 1;
    cfg.patience = 1;
    cfg.lr = 1e-9;
    auto const r = finetune_run(net, {ref_of(a, 0)}, {ref_of(b, 0)}, cfg);
    CHECK(r.epochs_run < 6);
    CHECK(r.epoch_dice.size() == static_cast<size_t>(r.epochs_run + 1));
    CHECK(r.best_dice == *std::max_element(r.epoch_dice.begin(), r.epoch_dice.end()));
}

TEST_CASE("rank-based AUC matches a pairwise oracle") {
    Rng rng(21);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> s;
        std::vector<int> y;
        for (int i = 0; i < 30; ++i) {
            s.push_back(std::floor(rng.uniform() * 8));  // many ties
            y.push_back(rng.bernoulli(0.4));
        }
        y[0] = 1;
        y[1] = 0;
        double num = 0, den = 0;
        for (size_t i = 0; i < s.size(); ++i)
            for (size_t j = 0; j < s.size(); ++j)
                if (y[i] && !y[j]) {
                    den += 1;
                    num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                }
        CHECK(binary_auc(s, y) == doctest::Approx(num / den).epsilon(1e-12));
    }
    CHECK(std::isnan(binary_auc({1, 2}, {1, 1})));
}

TEST_CASE("frozen classification separates presence from absence and leaves the encoder intact") {
    auto net = model::make_model(small_model(8), 6);
    // Bright template 6 present or absent; templates 1 and 2 always present.
    std::vector<LabeledVolume> train, test;
    for (int i = 0; i < 40; ++i) {
        bool const present = i % 2 == 0;
        auto p = make_phantom(200 + static_cast<uint64_t>(i), {32, 32, 32},
                              present ? std::vector<int>{6, 1, 2} : std::vector<int>{1, 2});
        (i < 24 ? train : test).push_back({std::move(p.volume), present ? 1 : 0});
    }
    auto const before = params_of(*net->encoder);
    ClassifyConfig cfg;
    cfg.crop = {32, 32, 32};
    cfg.lr = 5e-3;
    auto const r = frozen_classify(net, train, test, cfg);
    CHECK(r.encoder_unchanged);
    CHECK(same_params(before, params_of(*net->encoder)));
    CHECK(r.accuracy >= 0.9);
    CHECK(r.auc >= 0.9);

    // Permuted labels carry no signal.
    auto ptrain = train;
    auto ptest = test;
    Rng rng(5);
    for (auto* set : {&ptrain, &ptest})
        for (auto& v : *set) v.label = rng.bernoulli(0.5) ? 1 : 0;
    auto const perm = frozen_classify(net, ptrain, ptest, cfg);
    CHECK(std::abs(perm.accuracy - 0.5) <= 0.15 + 1e-12);

    auto single = train;
    for (auto& v : single) v.label = 1;
    CHECK_THROWS_AS(frozen_classify(net, single, test, cfg), InvalidParameter);
}

TEST_CASE("frozen classification tolerates gradients left by pretraining") {
    auto net = model::make_model(small_model(4), 9);
    auto const x = torch::rand({1, 1, 32, 32, 32});
    auto const y = (torch::rand({1, 1, 32, 32, 32}) > 0.5).to(torch::kFloat);
    net->forward(x, y, x).sum().backward();
    std::vector<torch::Tensor> stale;
    for (auto const& p : net->encoder->parameters()) stale.push_back(p.grad().clone());
    std::vector<LabeledVolume> train, test;
    for (int i = 0; i < 8; ++i) {
        bool const present = i % 2 == 0;
        auto p = make_phantom(300 + static_cast<uint64_t>(i), {32, 32, 32},
                              present ? std::vector<int>{6, 1} : std::vector<int>{1});
        (i < 4 ? train : test).push_back({std::move(p.volume), present ? 1 : 0});
    }
    ClassifyConfig cfg;
    cfg.crop = {32, 32, 32};
    cfg.epochs = 2;
    auto const r = frozen_classify(net, train, test, cfg);
    CHECK(r.encoder_unchanged);
    auto const after = net->encoder->parameters();
    for (size_t i = 0; i < after.size(); ++i) CHECK(torch::equal(after[i].grad(), stale[i]));
}

TEST_CASE("feature PCA components are orthonormal and ordered") {
    auto net = model::make_model(small_model(4), 7);
    auto const p = make_phantom(15);
    auto const r = feature_pca(net, p.volume, {32, 32, 32});
    REQUIRE(r.rank >= 3);
    Eigen::MatrixXd const g = r.components.transpose() * r.components;
    CHECK((g - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(r.explained[0] >= r.explained[1]);
    CHECK(r.explained[1] >= r.explained[2]);
    CHECK(r.explained[0] + r.explained[1] + r.explained[2] <= 1.0 + 1e-12);
    for (auto const& ch : r.channels) {
        auto const [lo, hi] = std::minmax_element(ch.begin(), ch.end());
        CHECK(*lo == doctest::Approx(0.0));
        CHECK(*hi == doctest::Approx(255.0));
    }
}

TEST_CASE("feature PCA pads when the feature rank is below three") {
    auto net = model::make_model(small_model(2), 8);
    auto const p = make_phantom(16, {32, 32, 32});
    auto const r = feature_pca(net, p.volume, {32, 32, 32});
    CHECK(r.rank <= 2);
    CHECK(r.explained[2] == 0.0);
    CHECK(std::all_of(r.channels[2].begin(), r.channels[2].end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("feature PCA rotation diagnostic runs on an untrained model") {
    auto net = model::make_model(small_model(4), 9);
    auto const p = make_phantom(17, {32, 32, 32});
    auto rotated = p.volume;
    rotated.voxels = rotate_12(p.volume.voxels);
    auto const a = feature_pca(net, p.volume, {32, 32, 32});
    auto const b = feature_pca(net, rotated, {32, 32, 32});
    for (size_t c = 0; c < 3; ++c) {
        double const corr = std::abs(correlation(rotate_12(a.channels[c]), b.channels[c]));
        MESSAGE("channel " << c << " rotation correlation " << corr);
        CHECK(std::isfinite(corr));
    }
}
