#include "commands.hpp"

#include "mass/core/error.hpp"
#include "mass/core/image_io.hpp"
#include "mass/core/mask_bank.hpp"
#include "mass/core/rng.hpp"
#include "mass/core/volume_io.hpp"
#include "mass/maskgen/maskgen.hpp"
#include "mass/phantom/phantom.hpp"

#include "mass/core/log.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace mass::cli {

using nlohmann::json;

void cmd_phantom_gen(PhantomGenOptions const& o, RunManifest m) {
    if (o.n < 1) throw InvalidParameter("--n must be >= 1");
    phantom::PhantomSpec base;
    base.shape = parse_shape(o.shape);
    base.n_structures = o.structures;
    base.noise_std = o.noise;
    if (o.style == "CT") base.modality_style = phantom::Style::CT_LIKE;
    else if (o.style == "MR") base.modality_style = phantom::Style::MR_LIKE;
    else throw InvalidParameter("--style must be CT or MR, got '" + o.style + "'");
    std::vector<int> others;
    if (o.presence >= 0) {
        if (o.presence >= phantom::kMaxStructures) throw InvalidParameter("--presence template out of range");
        if (o.structures < 2) throw InvalidParameter("--presence needs --structures >= 2");
        for (int t = 0; static_cast<int>(others.size()) < o.structures - 1; ++t)
            if (t != o.presence) others.push_back(t);
    }
    m.config = {{"shape", base.shape}, {"n", o.n},          {"structures", o.structures},
                {"style", o.style},    {"noise", o.noise}, {"presence", o.presence}};
    write_run_manifest(o.out, m);

    json labels = json::object();
    json cases = json::array();
    for (int i = 0; i < o.n; ++i) {
        phantom::PhantomSpec s = base;
        s.seed = o.seed + static_cast<uint64_t>(i);
        bool const present = i % 2 == 0;
        if (o.presence >= 0) {
            s.templates = others;
            if (present) s.templates.insert(s.templates.begin(), o.presence);
            s.n_structures = static_cast<int>(s.templates.size());
        }
        auto const p = phantom::generate_phantom(s);
        fs::path const dir = o.out / p.volume.id;
        fs::create_directories(dir);
        write_volume(p.volume, dir / "image.nii.gz");
        write_label_map(p.label_map(), p.volume.spacing, dir / "labels.nii.gz");
        MaskBank gt;
        gt.volume_id = p.volume.id;
        gt.shape = p.volume.shape();
        gt.masks = p.gt;
        save_mask_bank(gt, dir / "gt");
        if (o.presence >= 0) labels[p.volume.id] = present ? 1 : 0;
        cases.push_back({{"id", p.volume.id}, {"templates", p.template_ids}, {"intensities_hu", p.intensities_hu}});
        log::info("wrote " + dir.string());
    }
    if (o.presence >= 0) write_json(o.out / "labels.json", labels);
    write_json(o.out / "metrics.json", json{{"cases", cases}});
}

namespace {

maskgen::MaskGenConfig load_maskgen_config(fs::path const& path) {
    if (path.empty()) return {};
    maskgen::MaskGenConfig c = read_json(path).get<maskgen::MaskGenConfig>();
    c.validate();
    return c;
}

json stats_json(maskgen::PipelineStats const& s) {
    return {{"axis", s.axis},
            {"seed_slices", s.seed_slices},
            {"proposals", s.proposals},
            {"raw_masks", s.raw_masks},
            {"final_masks", s.final_masks}};
}

} // namespace

void cmd_gen_masks(GenMasksOptions const& o, RunManifest m) {
    if (o.jobs < 1) throw InvalidParameter("--jobs must be >= 1");
    auto const cfg = load_maskgen_config(o.config);
    m.config = cfg;
    m.inputs = {o.in};
    if (!o.config.empty()) m.inputs.push_back(o.config);

    bool const corpus = fs::is_directory(o.in) && !fs::exists(o.in / "image.nii.gz") &&
                        !fs::exists(o.in / "image.nii") && !fs::exists(o.in / "image.json");
    if (!corpus) {
        if (o.out.empty()) throw ConfigError("--out is required for a single volume");
        write_run_manifest(o.out, m);
        Volume const v = load_image(o.in);
        maskgen::PipelineStats st;
        auto const bank = maskgen::generate_mask_bank(v, cfg, derive_seed(o.seed, "maskgen/" + v.id), &st);
        save_mask_bank(bank, o.out);
        write_json(o.out / "metrics.json", json{{v.id, stats_json(st)}});
        return;
    }

    // Corpus mode: one bank per case, written to <out>/<case>/bank.
    fs::path const out = o.out.empty() ? o.in : o.out;
    auto const cases = list_cases(o.in);
    write_run_manifest(out, m, out == o.in);
    std::vector<json> stats(cases.size());
    std::atomic<size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto worker = [&] {
        for (size_t i = next++; i < cases.size(); i = next++) {
            try {
                Volume const v = load_image(cases[i]);
                maskgen::PipelineStats st;
                auto const bank = maskgen::generate_mask_bank(v, cfg, derive_seed(o.seed, "maskgen/" + v.id), &st);
                save_mask_bank(bank, out / cases[i].filename() / "bank");
                stats[i] = stats_json(st);
                log::info(v.id + ": " + std::to_string(bank.size()) + " masks");
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
                next = cases.size();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < std::min<int>(o.jobs, static_cast<int>(cases.size())); ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
    json metrics = json::object();
    for (size_t i = 0; i < cases.size(); ++i) metrics[cases[i].filename().string()] = stats[i];
    write_json(out / "gen-masks-metrics.json", metrics);
}

namespace {

json quality_json(maskgen::StructureQuality const& q) {
    return {{"best", q.best}, {"avg", q.avg}, {"pct_gt40", q.pct_gt40}, {"n_overlapping", q.n_overlapping}};
}

} // namespace

void cmd_eval_bank(EvalBankOptions const& o, RunManifest m) {
    std::vector<std::pair<fs::path, fs::path>> pairs;
    if (!o.corpus.empty()) {
        for (auto const& c : list_cases(o.corpus)) pairs.emplace_back(c / "bank", c / "gt");
        m.inputs = {o.corpus};
    } else {
        if (o.bank.empty() || o.gt.empty()) throw ConfigError("pass --corpus, or both --bank and --gt");
        pairs.emplace_back(o.bank, o.gt);
        m.inputs = {o.bank, o.gt};
    }
    write_run_manifest(o.out, m);
    json per = json::object();
    std::vector<std::string> names;
    std::vector<double> best;
    double agg_best = 0, agg_avg = 0, agg_gt40 = 0;
    for (auto const& [bank_dir, gt_dir] : pairs) {
        auto const bank = load_mask_bank(bank_dir);
        auto const gt = load_mask_bank(gt_dir);
        auto const r = maskgen::mask_quality_stats(bank, gt.masks);
        json s = json::array();
        for (size_t k = 0; k < r.per_structure.size(); ++k) {
            s.push_back(quality_json(r.per_structure[k]));
            names.push_back(bank.volume_id + "#" + std::to_string(k));
            best.push_back(r.per_structure[k].best);
        }
        per[bank.volume_id] = {{"structures", s},
                               {"aggregate", quality_json(r.aggregate)},
                               {"bank_size", bank.size()},
                               {"empty_bank", r.empty_bank}};
        agg_best += r.aggregate.best;
        agg_avg += r.aggregate.avg;
        agg_gt40 += r.aggregate.pct_gt40;
    }
    double const n = static_cast<double>(pairs.size());
    write_json(o.out / "metrics.json",
               json{{"volumes", per},
                    {"aggregate", {{"best", agg_best / n}, {"avg", agg_avg / n}, {"pct_gt40", agg_gt40 / n}}}});
    write_bar_plot_svg(o.out / "best-dice.svg", "Best Dice per structure (%)", names, best);
}

} // namespace mass::cli
