#pragma once

#include "cli_common.hpp"

#include <optional>

namespace mass::cli {

struct PhantomGenOptions {
    fs::path out;
    uint64_t seed = 0;
    std::string shape = "64";
    int n = 1;
    int structures = 4;
    std::string style = "CT";
    double noise = 0.02;
    int presence = -1; ///< template toggled on/off for a classification set
};

struct GenMasksOptions {
    fs::path in, out, config;
    uint64_t seed = 0;
    int jobs = 1;
};

struct PretrainOptions {
    fs::path corpus, config, out, resume;
    std::optional<uint64_t> seed;
    int max_steps = 0;
};

struct InferOptions {
    fs::path ckpt, refs, query, gt, out, config;
    int label = -1;
    bool probability_averaging = false;
};

struct FinetuneOptions {
    fs::path ckpt, train, val, out, config;
    int label = -1;
    std::optional<uint64_t> seed;
};

struct ClassifyOptions {
    fs::path ckpt, data, out, config;
    bool frozen = false;
    bool random_encoder = false;
    double test_fraction = 0.4;
    std::optional<uint64_t> seed;
};

struct PcaOptions {
    fs::path ckpt, in, out;
    std::string crop;
};

struct EvalBankOptions {
    fs::path bank, gt, corpus, out;
};

void cmd_phantom_gen(PhantomGenOptions const& o, RunManifest m);
void cmd_gen_masks(GenMasksOptions const& o, RunManifest m);
void cmd_pretrain(PretrainOptions const& o, RunManifest m);
void cmd_infer_ic(InferOptions const& o, RunManifest m);
void cmd_finetune(FinetuneOptions const& o, RunManifest m);
void cmd_classify(ClassifyOptions const& o, RunManifest m);
void cmd_feature_pca(PcaOptions const& o, RunManifest m);
void cmd_eval_bank(EvalBankOptions const& o, RunManifest m);

} // namespace mass::cli
