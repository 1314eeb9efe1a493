#include "commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace mass::cli;

int main(int argc, char** argv) {
    CLI::App app{"mask-guided self-supervised segmentation toolkit\n"
                 "Environment: MASS_CACHE_DIR holds slice exchanges for the external mask backend."};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(MASS_VERSION));

    RunManifest manifest;
    for (int i = 0; i < argc; ++i) manifest.argv.emplace_back(argv[i]);
    std::function<void()> run;

    PhantomGenOptions pg;
    auto* c = app.add_subcommand("phantom-gen", "Generate synthetic phantoms with ground-truth masks");
    c->add_option("--out", pg.out, "Output directory (one case directory per phantom)")->required();
    c->add_option("--seed", pg.seed, "Seed of the first phantom; case i uses seed + i");
    c->add_option("--shape", pg.shape, "Extent N or D,H,W")->capture_default_str();
    c->add_option("--n", pg.n, "Number of phantoms")->capture_default_str();
    c->add_option("--structures", pg.structures, "Structures per phantom")->capture_default_str();
    c->add_option("--style", pg.style, "CT or MR")->capture_default_str();
    c->add_option("--noise", pg.noise, "Noise std as a fraction of the dynamic range")->capture_default_str();
    c->add_option("--presence", pg.presence,
                  "Template id present in even cases and absent in odd ones; writes labels.json");
    c->callback([&] { run = [&] { manifest.command = "phantom-gen"; manifest.seed = pg.seed; cmd_phantom_gen(pg, manifest); }; });

    GenMasksOptions gm;
    c = app.add_subcommand("gen-masks", "Annotation-free mask bank generation");
    c->add_option("--in", gm.in, "Volume file, case directory, or corpus directory")->required();
    c->add_option("--out", gm.out, "Bank directory (single volume) or corpus root (default: --in)");
    c->add_option("--config", gm.config, "Mask generation config (JSON)");
    c->add_option("--seed", gm.seed, "Root seed")->capture_default_str();
    c->add_option("--jobs", gm.jobs, "Volumes processed in parallel")->capture_default_str();
    c->callback([&] { run = [&] { manifest.command = "gen-masks"; manifest.seed = gm.seed; cmd_gen_masks(gm, manifest); }; });

    PretrainOptions pt;
    uint64_t pt_seed = 0;
    c = app.add_subcommand("pretrain", "In-context segmentation pretraining on mask banks");
    c->add_option("--corpus", pt.corpus, "Corpus directory with <case>/image and <case>/bank")->required();
    c->add_option("--config", pt.config, "Training config (JSON)");
    c->add_option("--out", pt.out, "Run directory")->required();
    auto* pt_seed_opt = c->add_option("--seed", pt_seed, "Overrides the config seed");
    c->add_option("--max-steps", pt.max_steps, "Overrides the step budget");
    c->add_option("--resume", pt.resume, "Checkpoint to resume from");
    c->callback([&] {
        if (pt_seed_opt->count()) pt.seed = pt_seed;
        run = [&] { manifest.command = "pretrain"; cmd_pretrain(pt, manifest); };
    });

    InferOptions ic;
    c = app.add_subcommand("infer-ic", "In-context segmentation of a query from labeled references");
    c->add_option("--ckpt", ic.ckpt, "Model checkpoint")->required();
    c->add_option("--refs", ic.refs, "Directory of reference cases (image + mask or labels)")->required();
    c->add_option("--query", ic.query, "Query volume or case directory")->required();
    c->add_option("--gt", ic.gt, "Ground-truth mask for the query");
    c->add_option("--label", ic.label, "Label value selecting the target in label maps");
    c->add_option("--config", ic.config, "Inference config (JSON)");
    c->add_flag("--probability-averaging", ic.probability_averaging, "Average probability maps instead of embeddings");
    c->add_option("--out", ic.out, "Output directory")->required();
    c->callback([&] { run = [&] { manifest.command = "infer-ic"; cmd_infer_ic(ic, manifest); }; });

    FinetuneOptions ft;
    uint64_t ft_seed = 0;
    c = app.add_subcommand("finetune", "Full fine-tuning on a few labeled volumes");
    c->add_option("--ckpt", ft.ckpt, "Model checkpoint")->required();
    c->add_option("--train", ft.train, "Directory of labeled training cases")->required();
    c->add_option("--val", ft.val, "Directory of labeled validation cases");
    c->add_option("--label", ft.label, "Label value selecting the target in label maps");
    c->add_option("--config", ft.config, "Fine-tuning config (JSON)");
    auto* ft_seed_opt = c->add_option("--seed", ft_seed, "Overrides the config seed");
    c->add_option("--out", ft.out, "Output directory")->required();
    c->callback([&] {
        if (ft_seed_opt->count()) ft.seed = ft_seed;
        run = [&] { manifest.command = "finetune"; cmd_finetune(ft, manifest); };
    });

    ClassifyOptions cl;
    uint64_t cl_seed = 0;
    c = app.add_subcommand("classify", "Frozen-encoder classification");
    c->add_option("--ckpt", cl.ckpt, "Model checkpoint")->required();
    c->add_option("--data", cl.data, "Directory of cases plus labels.json")->required();
    c->add_flag("--frozen", cl.frozen, "Train only the head on frozen encoder features");
    c->add_flag("--random-encoder", cl.random_encoder, "Control run with a freshly initialized encoder");
    c->add_option("--test-fraction", cl.test_fraction, "Held-out share per class")->capture_default_str();
    c->add_option("--config", cl.config, "Classification config (JSON)");
    auto* cl_seed_opt = c->add_option("--seed", cl_seed, "Overrides the config seed");
    c->add_option("--out", cl.out, "Output directory")->required();
    c->callback([&] {
        if (cl_seed_opt->count()) cl.seed = cl_seed;
        run = [&] { manifest.command = "classify"; cmd_classify(cl, manifest); };
    });

    PcaOptions pc;
    c = app.add_subcommand("feature-pca", "PCA visualization of decoder features");
    c->add_option("--ckpt", pc.ckpt, "Model checkpoint")->required();
    c->add_option("--in", pc.in, "Volume or case directory")->required();
    c->add_option("--crop", pc.crop, "Window size N or D,H,W (default: training crop)");
    c->add_option("--out", pc.out, "PNG output directory")->required();
    c->callback([&] { run = [&] { manifest.command = "feature-pca"; cmd_feature_pca(pc, manifest); }; });

    EvalBankOptions eb;
    c = app.add_subcommand("eval-bank", "Mask bank quality against ground truth");
    c->add_option("--bank", eb.bank, "Mask bank directory");
    c->add_option("--gt", eb.gt, "Ground-truth mask bank directory");
    c->add_option("--corpus", eb.corpus, "Corpus directory; evaluates every <case>/bank against <case>/gt");
    c->add_option("--out", eb.out, "Output directory")->required();
    c->callback([&] { run = [&] { manifest.command = "eval-bank"; cmd_eval_bank(eb, manifest); }; });

    try {
        app.parse(argc, argv);
    } catch (CLI::CallForHelp const& e) {
        return app.exit(e);
    } catch (CLI::CallForAllHelp const& e) {
        return app.exit(e);
    } catch (CLI::Success const& e) {
        return app.exit(e);
    } catch (CLI::ParseError const& e) {
        std::cerr << "usage error: " << e.what() << "\n\n";
        auto const subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return kUsage;
    }
    return guarded(run);
}
