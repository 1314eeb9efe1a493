#include "mass/core/error.hpp"
#include "mass/core/log.hpp"
#include "mass/core/rng.hpp"
#include "mass/downstream/downstream.hpp"
#include "mass/train/train.hpp"

#include "tensor_util.hpp"

#include <numeric>

namespace mass::downstream {

namespace {

void copy_state(torch::nn::Module const& from, torch::nn::Module& to) {
    torch::NoGradGuard ng;
    auto src = from.named_parameters(true);
    auto dst = to.named_parameters(true);
    for (auto const& item : src) dst[item.key()].copy_(item.value());
    auto sb = from.named_buffers(true);
    auto db = to.named_buffers(true);
    for (auto const& item : sb) db[item.key()].copy_(item.value());
}

std::vector<torch::Tensor> snapshot(torch::nn::Module const& m) {
    std::vector<torch::Tensor> out;
    for (auto const& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

void restore(torch::nn::Module& m, std::vector<torch::Tensor> const& s) {
    torch::NoGradGuard ng;
    auto ps = m.parameters();
    for (size_t i = 0; i < ps.size(); ++i) ps[i].copy_(s[i]);
}

double mean_dice(model::MassNet& net, ReferenceSet const& refs, ReferenceSet const& eval, IcConfig const& ic) {
    double sum = 0;
    for (auto const& e : eval) sum += *ic_infer(net, refs, e.volume, ic, &e.mask).dice;
    return sum / static_cast<double>(eval.size());
}

} // namespace

model::MassNet clone_model(model::MassNet const& net) {
    auto out = model::make_model(net->config(), 0);
    out->to(detail::param_dtype(*net));
    copy_state(*net, *out);
    return out;
}

FinetuneResult finetune_run(model::MassNet const& net, ReferenceSet const& train, ReferenceSet const& val,
                            FinetuneConfig const& cfg) {
    if (train.empty()) throw PreconditionError("fine-tuning needs at least one labeled volume");
    if (cfg.early_stopping && val.empty())
        throw ConfigError("early stopping requested without a validation split");
    if (cfg.epochs < 0 || cfg.steps_per_epoch < 1 || cfg.batch_size < 1 || cfg.patience < 1 || !(cfg.lr > 0))
        throw ConfigError("invalid fine-tuning schedule");
    cfg.augment.validate();
    net->config().check_crop(cfg.augment.crop);

    FinetuneResult res;
    res.net = clone_model(net);
    auto& m = res.net;
    auto const dtype = detail::param_dtype(*m);
    ReferenceSet const& eval = val.empty() ? train : val;

    std::vector<augment::PreparedVolume> prep;
    for (auto const& r : train) {
        if (r.mask.shape() != r.volume.shape()) throw ShapeError("label shape does not match volume '" + r.volume.id + "'");
        prep.push_back(augment::prepare_volume(r.volume));
    }

    res.initial_dice = mean_dice(m, train, eval, cfg.ic);
    res.best_dice = res.initial_dice;
    res.epoch_dice.push_back(res.initial_dice);
    auto best = snapshot(*m);

    train::Optimizer opt(train::OptimizerKind::ADAMW, m->parameters(), cfg.weight_decay);
    int since_best = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        m->train();
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            std::vector<augment::Episode> eps;
            for (int b = 0; b < cfg.batch_size; ++b) {
                Rng rng(cfg.seed, "finetune",
                        {static_cast<uint64_t>(epoch), static_cast<uint64_t>(step), static_cast<uint64_t>(b)});
                size_t const i = rng.uniform_int(train.size());
                size_t const j = rng.uniform_int(train.size());
                auto ei = augment::make_episode(prep[i], train[i].mask, rng, cfg.augment, static_cast<int64_t>(i));
                if (j != i) {
                    auto ej = augment::make_episode(prep[j], train[j].mask, rng, cfg.augment, static_cast<int64_t>(j));
                    ei.x_q = std::move(ej.x_q);
                    ei.y_q = std::move(ej.y_q);
                    ei.provenance.q = ej.provenance.q;
                }
                eps.push_back(std::move(ei));
            }
            auto const batch = train::stack_episodes(eps, dtype);
            opt.zero_grad();
            auto const loss = train::seg_loss(m->forward(batch.x_s, batch.y_s, batch.x_q), batch.y_q);
            if (!std::isfinite(loss.total.item<double>()))
                throw NonFiniteLoss("non-finite fine-tuning loss at epoch " + std::to_string(epoch));
            loss.total.backward();
            opt.step(cfg.lr);
        }
        double const d = mean_dice(m, train, eval, cfg.ic);
        res.epoch_dice.push_back(d);
        res.epochs_run = epoch;
        if (d > res.best_dice) {
            res.best_dice = d;
            res.best_epoch = epoch;
            best = snapshot(*m);
            since_best = 0;
        } else if (cfg.early_stopping && ++since_best >= cfg.patience) {
            log::info("early stopping after epoch " + std::to_string(epoch));
            break;
        }
    }
    restore(*m, best);
    m->eval();
    return res;
}

} // namespace mass::downstream
