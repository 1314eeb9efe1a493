#include "mass/core/error.hpp"
#include "mass/core/rng.hpp"
#include "mass/model/model.hpp"

// torch pulls in a CHECK macro of its own.
#undef CHECK
#include <doctest.h>

#include <cmath>

using namespace mass;
using namespace mass::model;

namespace {

torch::Tensor ball_mask(int64_t n, double radius) {
    torch::Tensor y = torch::zeros({1, 1, n, n, n});
    auto a = y.accessor<float, 5>();
    double const c = (static_cast<double>(n) - 1) / 2;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t k = 0; k < n; ++k)
                a[0][0][i][j][k] = (i - c) * (i - c) + (j - c) * (j - c) + (k - c) * (k - c) <= radius * radius;
    return y;
}

torch::Tensor episode_loss(torch::Tensor logits, torch::Tensor y) {
    torch::Tensor const p = torch::sigmoid(logits);
    torch::Tensor const dice = 1 - (2 * (p * y).sum() + 1e-5) / (p.sum() + y.sum() + 1e-5);
    return dice + torch::binary_cross_entropy_with_logits(logits, y);
}

} // namespace

TEST_CASE("pyramid and logit shapes") {
    ModelConfig cfg;
    auto net = make_model(cfg, 0);
    net->eval();
    torch::NoGradGuard ng;
    torch::Tensor const x = torch::randn({1, 1, 32, 32, 32});
    auto const f = net->encode(x);
    REQUIRE(f.size() == 5);
    for (int l = 0; l <= 4; ++l) {
        CHECK(f[static_cast<size_t>(l)].size(1) == cfg.channels(l));
        CHECK(f[static_cast<size_t>(l)].size(2) == (32 >> l));
    }
    CHECK(f[4].sizes().vec() == std::vector<int64_t>{1, 128, 2, 2, 2});
    auto const t = net->encode_task(f, ball_mask(32, 6));
    CHECK(t.sizes().vec() == std::vector<int64_t>{1, cfg.n_query_tokens + 1, cfg.resolved_embed_dim()});
    CHECK(net->decode(f, t).sizes().vec() == std::vector<int64_t>{1, 1, 32, 32, 32});

    for (int64_t n : {16, 48}) {
        auto const fn = net->encode(torch::randn({1, 1, n, n, n}));
        auto const tn = net->encode_task(fn, ball_mask(n, 4));
        CHECK(tn.sizes() == t.sizes());
        CHECK(net->decode(fn, tn).size(4) == n);
    }
    try {
        net->encode(torch::randn({1, 1, 24, 32, 32}));
        FAIL("expected a shape error");
    } catch (ShapeError const& e) {
        CHECK(std::string(e.what()).find("2^stages = 16") != std::string::npos);
    }
}

TEST_CASE("eval-mode determinism and finite outputs") {
    auto net = make_model(ModelConfig{}, 1);
    net->eval();
    torch::NoGradGuard ng;
    torch::Tensor const x = torch::randn({1, 1, 32, 32, 32});
    torch::Tensor const y = ball_mask(32, 8);
    CHECK(torch::equal(net->forward(x, y, x), net->forward(x, y, x)));
    auto const f = net->encode(x);
    CHECK(torch::equal(net->encode_task(f, y), net->encode_task(f, y)));
    torch::Tensor const z = net->forward(torch::zeros({1, 1, 32, 32, 32}), y, torch::zeros({1, 1, 32, 32, 32}));
    CHECK(torch::isfinite(z).all().item<bool>());
    auto same = make_model(ModelConfig{}, 1);
    same->eval();
    CHECK(torch::equal(same->forward(x, y, x), net->forward(x, y, x)));
}

TEST_CASE("foreground pooling") {
    auto net = make_model(ModelConfig{}, 2);
    net->eval();
    torch::NoGradGuard ng;
    torch::Tensor const x = torch::randn({1, 1, 32, 32, 32});
    auto const f = net->encode(x);
    torch::Tensor const ones = torch::ones({1, 1, 32, 32, 32});
    torch::Tensor const up = torch::nn::functional::interpolate(
        f[1], torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{32, 32, 32}).mode(torch::kTrilinear).align_corners(false));
    CHECK(torch::allclose(net->task->pool_foreground(f, ones), up.mean({2, 3, 4}), 1e-5, 1e-6));

    // Flipping features and mask together leaves the pooled token unchanged.
    torch::Tensor const y = ball_mask(32, 7).roll({3}, {2});
    FeaturePyramid flipped;
    for (auto const& t : f) flipped.push_back(t.flip({2, 4}));
    torch::Tensor const a = net->task->pool_foreground(f, y);
    torch::Tensor const b = net->task->pool_foreground(flipped, y.flip({2, 4}));
    CHECK(torch::allclose(a, b, 1e-5, 1e-6));

    CHECK_THROWS_AS(net->encode_task(f, ones * 0.5), InvalidParameter);
}

TEST_CASE("task embeddings change the logits") {
    auto net = make_model(ModelConfig{}, 3);
    net->eval();
    torch::NoGradGuard ng;
    auto const f = net->encode(torch::randn({1, 1, 32, 32, 32}));
    int64_t const e = net->config().resolved_embed_dim();
    torch::Tensor const t1 = torch::randn({1, 9, e});
    torch::Tensor const t2 = torch::randn({1, 9, e});
    CHECK((net->decode(f, t1) - net->decode(f, t2)).abs().max().item<double>() > 0);
    CHECK_THROWS_AS(net->decode(f, torch::randn({1, 9, e + 4})), ConfigError);
}

TEST_CASE("parameter accounting") {
    ModelConfig cfg;
    auto const c = count_parameters(cfg);
    CHECK(c.total < 2'000'000);
    CHECK(c.encoder + c.task_module + c.decoder == c.total);
    ModelConfig wide = cfg;
    wide.base_channels = 16;
    auto const w = count_parameters(wide);
    double const ratio = static_cast<double>(w.encoder) / static_cast<double>(c.encoder);
    MESSAGE("encoder " << c.encoder << " task " << c.task_module << " decoder " << c.decoder << " ratio " << ratio);
    CHECK(ratio >= 3.5);
    CHECK(ratio <= 4.2);
    ModelConfig bad = cfg;
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("every parameter group receives gradient") {
    auto net = make_model(ModelConfig{}, 4);
    net->train();
    torch::Tensor const x = torch::randn({2, 1, 32, 32, 32});
    torch::Tensor const y = torch::cat({ball_mask(32, 6), ball_mask(32, 9)}, 0);
    episode_loss(net->forward(x, y, x), y).backward();
    auto norm = [](torch::nn::Module& m) {
        double s = 0;
        for (auto const& p : m.parameters()) {
            if (p.grad().defined()) s += p.grad().pow(2).sum().item<double>();
        }
        return std::sqrt(s);
    };
    CHECK(norm(*net->encoder) > 0);
    CHECK(norm(*net->task) > 0);
    CHECK(norm(*net->decoder) > 0);
    for (auto const& item : net->task->named_parameters()) {
        if (item.key() == "queries") CHECK(item.value().grad().norm().item<double>() > 0);
    }
}

TEST_CASE("micro-config gradients match central differences") {
    ModelConfig cfg;
    cfg.base_channels = 2;
    cfg.stages = 2;
    auto net = make_model(cfg, 5);
    net->to(torch::kDouble);
    net->train();
    torch::manual_seed(6);
    torch::Tensor const xs = torch::randn({1, 1, 8, 8, 8}, torch::kDouble);
    torch::Tensor const xq = torch::randn({1, 1, 8, 8, 8}, torch::kDouble);
    torch::Tensor const y = (torch::rand({1, 1, 8, 8, 8}, torch::kDouble) > 0.6).to(torch::kDouble);
    auto loss = [&] { return episode_loss(net->forward(xs, y, xq), y); };
    net->zero_grad();
    loss().backward();

    std::vector<torch::Tensor> params = net->parameters();
    int64_t total = 0;
    for (auto const& p : params) total += p.numel();
    Rng rng(7);
    torch::NoGradGuard ng;
    for (int n = 0; n < 20; ++n) {
        auto pick = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(total)));
        size_t pi = 0;
        while (pick >= params[pi].numel()) pick -= params[pi++].numel();
        torch::Tensor flat = params[pi].view({-1});
        double const analytic = params[pi].grad().view({-1})[pick].item<double>();
        double const h = 1e-6;
        double const orig = flat[pick].item<double>();
        flat[pick] = orig + h;
        double const up = loss().item<double>();
        flat[pick] = orig - h;
        double const down = loss().item<double>();
        flat[pick] = orig;
        double const numeric = (up - down) / (2 * h);
        double const scale = std::max(std::abs(analytic), std::abs(numeric));
        double const rel = scale < 1e-9 ? 0.0 : std::abs(analytic - numeric) / scale;
        CAPTURE(analytic);
        CAPTURE(numeric);
        CHECK(rel <= 1e-3);
    }
}
