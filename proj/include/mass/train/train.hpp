#pragma once

#include "mass/augment/augment.hpp"
#include "mass/core/mask_bank.hpp"
#include "mass/model/model.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mass::train {

enum class OptimizerKind { LAMB, ADAMW };

struct TrainConfig {
    int epochs = 100;
    int steps_per_epoch = 0; ///< 0: ceil(volumes / batch_size)
    int max_steps = 0;       ///< > 0 overrides epochs * steps_per_epoch
    double base_lr = 2e-3;
    double weight_decay = 1e-5;
    double poly_power = 0.9;
    int batch_size = 4;
    OptimizerKind optimizer = OptimizerKind::LAMB;
    uint64_t seed = 0;
    int checkpoint_every = 0; ///< 0 disables periodic checkpoints
    int workers = 1;
    int queue_capacity = 4;
    bool mixed_precision = false;
    bool double_precision = false;
    model::ModelConfig model;
    augment::AugmentConfig augment;

    void validate() const;
    int resolved_total_steps(size_t n_volumes) const;
};

void to_json(nlohmann::json& j, TrainConfig const& c);
/// Keys: the fields above plus "model" and "augment" sections.
void from_json(nlohmann::json const& j, TrainConfig& c);

struct SegLoss {
    torch::Tensor dice, bce, total;
};

inline constexpr double kDiceEps = 1e-5;

/// Per-sample soft Dice (averaged over the batch) plus mean BCE on logits.
SegLoss seg_loss(torch::Tensor const& logits, torch::Tensor const& target);

/// base_lr * (1 - step/total)^power; steps past the end clamp to 0 with a warning.
double poly_lr(int64_t step, int64_t total_steps, double base_lr, double power);

inline constexpr double kLambTrustMin = 1e-3;
inline constexpr double kLambTrustMax = 10.0;

/// Adam-family optimizer over a fixed parameter list.
class Optimizer {
  public:
    Optimizer(OptimizerKind kind, std::vector<torch::Tensor> params, double weight_decay, double beta1 = 0.9,
              double beta2 = 0.999, double eps = 1e-6);
    void step(double lr);
    void zero_grad();

    OptimizerKind kind() const { return kind_; }
    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }
    std::vector<torch::Tensor>& first_moments() { return m_; }
    std::vector<torch::Tensor>& second_moments() { return v_; }

  private:
    OptimizerKind kind_;
    std::vector<torch::Tensor> params_, m_, v_;
    double wd_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

struct LossRecord {
    int64_t step = 0;
    double lr = 0;
    double dice = 0;
    double bce = 0;
    double total = 0;
};

struct TrainState {
    TrainConfig cfg;
    model::MassNet net{nullptr};
    std::unique_ptr<Optimizer> opt;
    int64_t step = 0;
    int64_t total_steps = 0;
    std::vector<LossRecord> history;

    static TrainState create(TrainConfig const& cfg, int64_t total_steps);
    torch::Dtype dtype() const { return cfg.double_precision ? torch::kDouble : torch::kFloat; }
};

/// Stacks episodes into (B, 1, D, H, W) tensors.
struct EpisodeBatch {
    torch::Tensor x_s, y_s, x_q, y_q;
    std::vector<augment::EpisodeProvenance> provenance;
};
EpisodeBatch stack_episodes(std::vector<augment::Episode> const& eps, torch::Dtype dtype);

/// One forward, one loss, one optimizer update at the current poly_lr.
/// Throws NonFiniteLoss carrying the batch provenance.
LossRecord train_step(TrainState& state, EpisodeBatch const& batch);

struct CorpusEntry {
    Volume volume;
    MaskBank bank;
};

/// Deterministic episode source: slot s of step t depends only on (seed, t, s).
class EpisodeSampler {
  public:
    EpisodeSampler(std::vector<CorpusEntry> const& corpus, TrainConfig const& cfg);
    std::vector<augment::Episode> batch(int64_t step) const;
    size_t active_volumes() const { return active_.size(); }
    std::vector<std::string> const& quarantined() const { return quarantined_; }

  private:
    struct Source {
        augment::PreparedVolume vol;
        std::vector<BinaryArray const*> masks;
        std::vector<int64_t> mask_index;
    };
    TrainConfig cfg_;
    std::vector<Source> active_;
    std::vector<std::string> quarantined_;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(TrainState const& s, std::filesystem::path const& path);
/// Throws ChecksumError (corrupt or truncated), VersionMismatch, or ConfigError
/// listing differing model fields when `expected` disagrees with the file.
TrainState load_checkpoint(std::filesystem::path const& path, model::ModelConfig const* expected = nullptr);

struct RunOptions {
    std::filesystem::path out_dir; ///< empty: nothing written
    std::filesystem::path resume_from;
    int64_t stop_after = -1; ///< stop early at this step (for resume tests)
    std::function<void(LossRecord const&)> on_step;
};

struct RunResult {
    TrainState state;
    std::vector<std::string> quarantined;
};

RunResult run_pretraining(std::vector<CorpusEntry> const& corpus, TrainConfig const& cfg, RunOptions const& opts = {});

void write_history_csv(std::vector<LossRecord> const& h, std::filesystem::path const& path);

} // namespace mass::train
