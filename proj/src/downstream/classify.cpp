#include "mass/core/error.hpp"
#include "mass/core/rng.hpp"
#include "mass/downstream/downstream.hpp"
#include "mass/train/train.hpp"

#include "tensor_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace mass::downstream {

ClassifierHeadImpl::ClassifierHeadImpl(int channels, int n_classes) {
    score = register_module("score", torch::nn::Linear(channels, 1));
    fc = register_module("fc", torch::nn::Linear(channels, n_classes));
}

torch::Tensor ClassifierHeadImpl::forward(torch::Tensor tokens) {
    auto const w = torch::softmax(score->forward(tokens), 1);  // (B, N, 1)
    return fc->forward((w * tokens).sum(1));
}

torch::Tensor encoder_tokens(model::MassNet& net, Volume const& v, Shape3 const& crop) {
    net->config().check_crop(crop);
    detail::check_fits(v.shape(), crop, "volume");
    auto const prep = augment::prepare_volume(v);
    Index3 start{};
    for (size_t a = 0; a < 3; ++a) start[a] = (v.shape()[a] - crop[a]) / 2;
    torch::NoGradGuard ng;
    net->eval();
    auto const f = net->encode(detail::to_tensor(detail::crop_array(prep.image, start, crop), detail::param_dtype(*net)));
    auto const& top = f.back();  // (1, C, d, h, w)
    return top.flatten(2).transpose(1, 2).contiguous();
}

double binary_auc(std::vector<double> const& scores, std::vector<int> const& positive) {
    if (scores.size() != positive.size()) throw InvalidParameter("score and label counts differ");
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    // Average ranks over ties.
    std::vector<double> rank(scores.size());
    for (size_t i = 0; i < order.size();) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double const r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t t = i; t <= j; ++t) rank[order[t]] = r;
        i = j + 1;
    }
    double n_pos = 0, n_neg = 0, rank_sum = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (positive[i]) {
            n_pos += 1;
            rank_sum += rank[i];
        } else {
            n_neg += 1;
        }
    }
    if (n_pos == 0 || n_neg == 0) return std::nan("");
    return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

ClassifyResult frozen_classify(model::MassNet& net, std::vector<LabeledVolume> const& train,
                               std::vector<LabeledVolume> const& test, ClassifyConfig const& cfg) {
    if (train.empty() || test.empty()) throw PreconditionError("classification needs train and test volumes");
    if (cfg.epochs < 0 || !(cfg.lr > 0) || cfg.batch_size < 1) throw ConfigError("invalid classification schedule");
    std::set<int> classes;
    for (auto const& t : train) {
        if (t.label < 0) throw InvalidParameter("class labels must be >= 0");
        classes.insert(t.label);
    }
    if (classes.size() < 2) throw InvalidParameter("training labels contain a single class");
    int n_classes = *classes.rbegin() + 1;
    for (auto const& t : test) {
        if (t.label < 0) throw InvalidParameter("class labels must be >= 0");
        n_classes = std::max(n_classes, t.label + 1);
    }

    auto const before = [&] {
        std::vector<torch::Tensor> s;
        for (auto const& p : net->encoder->parameters()) s.push_back(p.detach().clone());
        return s;
    }();
    std::vector<bool> had_grad;
    std::vector<torch::Tensor> grad_before; // gradients left by earlier training must stay untouched
    for (auto& p : net->encoder->parameters()) {
        had_grad.push_back(p.requires_grad());
        grad_before.push_back(p.grad().defined() ? p.grad().detach().clone() : torch::Tensor());
        p.set_requires_grad(false);
    }

    auto const tokens = [&](std::vector<LabeledVolume> const& set) {
        std::vector<torch::Tensor> out;
        for (auto const& s : set) out.push_back(encoder_tokens(net, s.volume, cfg.crop));
        return torch::cat(out, 0);
    };
    auto const x_train = tokens(train);
    auto const x_test = tokens(test);
    std::vector<int64_t> ytr;
    for (auto const& t : train) ytr.push_back(t.label);
    auto const y_train = torch::tensor(ytr, torch::kLong);

    auto const dtype = x_train.scalar_type();
    torch::manual_seed(derive_seed(cfg.seed, "head"));
    ClassifyResult res;
    res.head = ClassifierHead(static_cast<int>(x_train.size(2)), n_classes);
    res.head->to(dtype);
    train::Optimizer opt(train::OptimizerKind::ADAMW, res.head->parameters(), cfg.weight_decay);
    auto const n = static_cast<int64_t>(train.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(cfg.seed, "classify", {static_cast<uint64_t>(epoch)});
        std::vector<int64_t> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
        for (int64_t b = 0; b < n; b += cfg.batch_size) {
            auto const idx =
                torch::tensor(std::vector<int64_t>(perm.begin() + b, perm.begin() + std::min(n, b + cfg.batch_size)));
            opt.zero_grad();
            auto const loss = torch::nn::functional::cross_entropy(res.head->forward(x_train.index_select(0, idx)),
                                                                   y_train.index_select(0, idx));
            loss.backward();
            opt.step(cfg.lr);
        }
    }

    torch::NoGradGuard ng;
    auto const prob = torch::softmax(res.head->forward(x_test), 1).to(torch::kDouble).contiguous();
    auto const pred = prob.argmax(1);
    int correct = 0;
    for (size_t i = 0; i < test.size(); ++i) {
        res.predictions.push_back(static_cast<int>(pred[static_cast<int64_t>(i)].item<int64_t>()));
        correct += res.predictions.back() == test[i].label;
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    double auc_sum = 0;
    int auc_n = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::vector<double> s;
        std::vector<int> pos;
        for (size_t i = 0; i < test.size(); ++i) {
            s.push_back(prob[static_cast<int64_t>(i)][c].item<double>());
            pos.push_back(test[i].label == c);
        }
        double const a = binary_auc(s, pos);
        res.class_auc.push_back(a);
        if (!std::isnan(a)) {
            auc_sum += a;
            ++auc_n;
        }
    }
    res.auc = auc_n ? auc_sum / auc_n : std::nan("");

    auto const after = net->encoder->parameters();
    res.encoder_unchanged = true;
    for (size_t i = 0; i < after.size(); ++i) {
        auto const g = after[i].grad();
        bool const touched = grad_before[i].defined() ? !g.defined() || !torch::equal(g, grad_before[i])
                                                      : g.defined() && g.abs().sum().item<double>() != 0;
        if (touched) throw PreconditionError("encoder received gradients during frozen classification");
        res.encoder_unchanged = res.encoder_unchanged && torch::equal(after[i], before[i]);
        after[i].set_requires_grad(had_grad[i]);
    }
    return res;
}

} // namespace mass::downstream
