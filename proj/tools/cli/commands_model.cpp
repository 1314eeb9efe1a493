#include "commands.hpp"

#include "mass/core/error.hpp"
#include "mass/core/image_io.hpp"
#include "mass/core/log.hpp"
#include "mass/core/mask_bank.hpp"
#include "mass/core/rng.hpp"
#include "mass/core/volume_io.hpp"
#include "mass/downstream/downstream.hpp"
#include "mass/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace mass::cli {

using nlohmann::json;

namespace {

train::TrainState load_ckpt(fs::path const& p) {
    if (p.empty()) throw ConfigError("--ckpt is required");
    return train::load_checkpoint(p);
}

downstream::ReferenceSet load_refs(fs::path const& dir, int label) {
    downstream::ReferenceSet out;
    for (auto const& c : list_cases(dir)) out.push_back({load_image(c), load_case_mask(c, label)});
    return out;
}

} // namespace

void cmd_pretrain(PretrainOptions const& o, RunManifest m) {
    train::TrainConfig cfg;
    if (!o.config.empty()) cfg = read_json(o.config).get<train::TrainConfig>();
    if (o.seed) cfg.seed = *o.seed;
    if (o.max_steps > 0) cfg.max_steps = o.max_steps;
    cfg.validate();
    m.seed = cfg.seed;
    m.config = cfg;
    m.inputs = {o.corpus};
    if (!o.config.empty()) m.inputs.push_back(o.config);
    if (!o.resume.empty()) m.inputs.push_back(o.resume);

    std::vector<train::CorpusEntry> corpus;
    for (auto const& c : list_cases(o.corpus)) {
        if (!fs::exists(c / "bank" / "manifest.json"))
            throw FormatError("case " + c.string() + " has no bank/; run gen-masks first");
        train::CorpusEntry e;
        e.volume = load_image(c);
        e.bank = load_mask_bank(c / "bank");
        corpus.push_back(std::move(e));
    }
    write_run_manifest(o.out, m, !o.resume.empty());
    train::RunOptions ro;
    ro.out_dir = o.out;
    ro.resume_from = o.resume;
    int64_t const report = std::max<int64_t>(1, cfg.resolved_total_steps(corpus.size()) / 20);
    ro.on_step = [&](train::LossRecord const& r) {
        if ((r.step + 1) % report == 0)
            log::info("step " + std::to_string(r.step + 1) + " total " + std::to_string(r.total));
    };
    auto const res = train::run_pretraining(corpus, cfg, ro);
    auto const& h = res.state.history;
    train::LossRecord const last = h.empty() ? train::LossRecord{} : h.back();
    write_json(o.out / "metrics.json", json{{"steps", res.state.step},
                                            {"final", {{"dice", last.dice}, {"bce", last.bce}, {"total", last.total}}},
                                            {"quarantined", res.quarantined}});
    LineSeries dice{"dice", {}, {}}, bce{"bce", {}, {}}, total{"total", {}, {}};
    for (auto const& r : h) {
        double const x = static_cast<double>(r.step);
        dice.x.push_back(x), dice.y.push_back(r.dice);
        bce.x.push_back(x), bce.y.push_back(r.bce);
        total.x.push_back(x), total.y.push_back(r.total);
    }
    write_line_plot_svg(o.out / "loss.svg", "Pretraining loss", {total, dice, bce});
}

void cmd_infer_ic(InferOptions const& o, RunManifest m) {
    auto st = load_ckpt(o.ckpt);
    downstream::IcConfig cfg;
    cfg.crop = st.cfg.augment.crop;
    if (!o.config.empty()) downstream::from_json(read_json(o.config), cfg);
    if (o.probability_averaging) cfg.averaging = downstream::Averaging::PROBABILITY;
    m.config = cfg;
    m.inputs = {o.ckpt, o.refs, o.query};
    if (!o.gt.empty()) m.inputs.push_back(o.gt);
    auto const refs = load_refs(o.refs, o.label);
    Volume const q = load_image(o.query);
    std::optional<BinaryArray> gt;
    if (!o.gt.empty()) gt = load_mask(o.gt, o.label);
    write_run_manifest(o.out, m);
    auto const r = downstream::ic_infer(st.net, refs, q, cfg, gt ? &*gt : nullptr);
    write_label_map(r.mask.voxels, q.spacing, o.out / "prediction.nii.gz");
    Array3D<float> mask_f(r.mask.shape());
    for (int64_t i = 0; i < mask_f.size(); ++i) mask_f[i] = r.mask.voxels[i];
    write_mid_slices(o.out, "probability", {&r.probability}, 0.0f, 1.0f);
    auto const norm = augment::prepare_volume(q).image;
    write_mid_slices(o.out, "overlay", {&norm, &mask_f, &norm}, 0.0f, 1.0f);
    json j{{"query", q.id}, {"k", refs.size()}, {"foreground_voxels", r.mask.count()}};
    j["dice"] = r.dice ? json(*r.dice) : json(nullptr);
    write_json(o.out / "metrics.json", j);
}

void cmd_finetune(FinetuneOptions const& o, RunManifest m) {
    auto st = load_ckpt(o.ckpt);
    downstream::FinetuneConfig cfg;
    cfg.ic.crop = st.cfg.augment.crop;
    cfg.augment = st.cfg.augment;
    if (!o.config.empty()) downstream::from_json(read_json(o.config), cfg);
    if (o.seed) cfg.seed = *o.seed;
    if (o.val.empty() && cfg.early_stopping)
        throw ConfigError("early stopping needs --val (or set early_stopping false in --config)");
    m.seed = cfg.seed;
    m.config = cfg;
    m.inputs = {o.ckpt, o.train};
    if (!o.val.empty()) m.inputs.push_back(o.val);
    auto const train = load_refs(o.train, o.label);
    auto const val = o.val.empty() ? downstream::ReferenceSet{} : load_refs(o.val, o.label);
    write_run_manifest(o.out, m);
    auto const r = downstream::finetune_run(st.net, train, val, cfg);
    {
        torch::NoGradGuard ng;
        auto dst = st.net->parameters();
        auto src = r.net->parameters();
        for (size_t i = 0; i < dst.size(); ++i) dst[i].copy_(src[i]);
    }
    st.step = 0;
    st.history.clear();
    train::save_checkpoint(st, o.out / "finetuned.ckpt");
    write_json(o.out / "metrics.json", json{{"initial_dice", r.initial_dice},
                                            {"best_dice", r.best_dice},
                                            {"best_epoch", r.best_epoch},
                                            {"epochs_run", r.epochs_run},
                                            {"epoch_dice", r.epoch_dice}});
    LineSeries s{"validation Dice", {}, {}};
    for (size_t e = 0; e < r.epoch_dice.size(); ++e) {
        s.x.push_back(static_cast<double>(e));
        s.y.push_back(r.epoch_dice[e]);
    }
    write_line_plot_svg(o.out / "finetune-dice.svg", "Fine-tuning", {s});
}

void cmd_classify(ClassifyOptions const& o, RunManifest m) {
    if (!o.frozen) throw ConfigError("only frozen-encoder classification is supported; pass --frozen");
    if (!(o.test_fraction > 0 && o.test_fraction < 1)) throw InvalidParameter("--test-fraction must lie in (0, 1)");
    auto st = load_ckpt(o.ckpt);
    downstream::ClassifyConfig cfg;
    cfg.crop = st.cfg.augment.crop;
    if (!o.config.empty()) downstream::from_json(read_json(o.config), cfg);
    if (o.seed) cfg.seed = *o.seed;
    m.seed = cfg.seed;
    m.config = cfg;
    m.config["random_encoder"] = o.random_encoder;
    m.config["test_fraction"] = o.test_fraction;
    m.inputs = {o.ckpt, o.data};
    json const labels = read_json(o.data / "labels.json");

    // Stratified split: per class, a seeded shuffle puts the first share in test.
    std::map<int, std::vector<downstream::LabeledVolume>> by_class;
    for (auto const& c : list_cases(o.data)) {
        Volume v = load_image(c);
        auto const key = c.filename().string();
        if (!labels.contains(key)) throw FormatError("labels.json has no entry for " + key);
        int const y = labels[key].get<int>();
        by_class[y].push_back({std::move(v), y});
    }
    std::vector<downstream::LabeledVolume> train, test;
    for (auto& [y, items] : by_class) {
        Rng rng(cfg.seed, "split", {static_cast<uint64_t>(y)});
        for (size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.uniform_int(i)]);
        auto const n_test = static_cast<size_t>(std::lround(o.test_fraction * static_cast<double>(items.size())));
        for (size_t i = 0; i < items.size(); ++i) (i < n_test ? test : train).push_back(std::move(items[i]));
    }
    write_run_manifest(o.out, m);
    auto net = st.net;
    if (o.random_encoder) {
        net = model::make_model(st.cfg.model, derive_seed(cfg.seed, "control"));
        net->to(st.dtype());
    }
    auto const r = downstream::frozen_classify(net, train, test, cfg);
    json pred = json::object();
    for (size_t i = 0; i < test.size(); ++i) pred[test[i].volume.id] = r.predictions[i];
    json j{{"accuracy", r.accuracy},
           {"class_auc", r.class_auc},
           {"encoder_unchanged", r.encoder_unchanged},
           {"n_train", train.size()},
           {"n_test", test.size()},
           {"predictions", pred}};
    j["auc"] = std::isnan(r.auc) ? json(nullptr) : json(r.auc);
    write_json(o.out / "metrics.json", j);
    std::vector<std::string> names;
    for (size_t c = 0; c < r.class_auc.size(); ++c) names.push_back("class " + std::to_string(c));
    write_bar_plot_svg(o.out / "auc.svg", "One-vs-rest AUC", names, r.class_auc);
}

void cmd_feature_pca(PcaOptions const& o, RunManifest m) {
    auto st = load_ckpt(o.ckpt);
    Shape3 const crop = o.crop.empty() ? st.cfg.augment.crop : parse_shape(o.crop);
    m.config = {{"crop", crop}};
    m.inputs = {o.ckpt, o.in};
    Volume const v = load_image(o.in);
    write_run_manifest(o.out, m);
    auto const r = downstream::feature_pca(st.net, v, crop);
    write_mid_slices(o.out, "pca", {&r.channels[0], &r.channels[1], &r.channels[2]}, 0.0f, 255.0f);
    write_json(o.out / "metrics.json", json{{"explained_variance_ratio", r.explained}, {"rank", r.rank}});
    write_bar_plot_svg(o.out / "explained-variance.svg", "Explained variance ratio", {"PC1", "PC2", "PC3"},
                       {r.explained[0], r.explained[1], r.explained[2]});
}

} // namespace mass::cli
