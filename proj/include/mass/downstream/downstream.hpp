#pragma once

#include "mass/augment/augment.hpp"
#include "mass/model/model.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <optional>
#include <vector>

namespace mass::downstream {

/// One labeled example; `mask` shares the volume's shape.
struct Reference {
    Volume volume;
    BinaryArray mask;
};
using ReferenceSet = std::vector<Reference>;

enum class Averaging { EMBEDDING, PROBABILITY };

struct IcConfig {
    Shape3 crop{32, 32, 32}; ///< sliding window (and reference crop) size
    Averaging averaging = Averaging::EMBEDDING;
    double threshold = 0.5;
};

struct IcResult {
    Mask3D mask;
    Array3D<float> probability;
    std::optional<double> dice;
};

/// Reference crop of `crop` size centred on the mask's bounding box.
std::pair<Array3D<float>, BinaryArray> reference_crop(augment::PreparedVolume const& v, BinaryArray const& mask,
                                                      Shape3 const& crop);

/// Token-wise running mean of per-reference task embeddings, (1, n + 1, D).
torch::Tensor average_task_embedding(model::MassNet& net, ReferenceSet const& refs, Shape3 const& crop);

/// Window origins along one axis: step crop/2, last window flush with the end.
std::vector<int64_t> window_starts(int64_t extent, int64_t crop);

/// Sliding-window logits for `query` under one task embedding.
Array3D<float> sliding_logits(model::MassNet& net, augment::PreparedVolume const& query, torch::Tensor const& task,
                              Shape3 const& crop);

/// Penultimate decoder features (C, D, H, W), averaged over windows like the logits.
torch::Tensor sliding_features(model::MassNet& net, augment::PreparedVolume const& query, torch::Tensor const& task,
                               Shape3 const& crop);

IcResult ic_infer(model::MassNet& net, ReferenceSet const& refs, Volume const& query, IcConfig const& cfg = {},
                  BinaryArray const* gt = nullptr);

/// Deep copy with identical parameters.
model::MassNet clone_model(model::MassNet const& net);

struct FinetuneConfig {
    int epochs = 50;
    int steps_per_epoch = 10;
    int batch_size = 2;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    int patience = 10;
    bool early_stopping = true;
    uint64_t seed = 0;
    IcConfig ic;
    augment::AugmentConfig augment;
};

struct FinetuneResult {
    model::MassNet net{nullptr};
    double initial_dice = 0; ///< evaluation Dice before any update
    double best_dice = 0;
    int best_epoch = 0;   ///< 0 means the unmodified model won
    int epochs_run = 0;
    std::vector<double> epoch_dice;
};

/// Full-parameter fine-tuning with AdamW; episodes pair two training items.
/// Evaluation uses ic_infer with all training items as references on `val`
/// (or on `train` when `val` is empty and early stopping is off).
FinetuneResult finetune_run(model::MassNet const& net, ReferenceSet const& train, ReferenceSet const& val,
                            FinetuneConfig const& cfg);

struct LabeledVolume {
    Volume volume;
    int label = 0;
};

struct ClassifyConfig {
    int epochs = 50;
    double lr = 5e-4;
    double weight_decay = 1e-5;
    int batch_size = 8;
    uint64_t seed = 0;
    Shape3 crop{32, 32, 32}; ///< centre crop fed to the encoder
};

/// Attention pooling over encoder tokens followed by a linear layer.
class ClassifierHeadImpl : public torch::nn::Module {
  public:
    ClassifierHeadImpl(int channels, int n_classes);
    torch::Tensor forward(torch::Tensor tokens); ///< (B, N, C) -> (B, n_classes)

  private:
    torch::nn::Linear score{nullptr}, fc{nullptr};
};
TORCH_MODULE(ClassifierHead);

struct ClassifyResult {
    ClassifierHead head{nullptr};
    double accuracy = 0;
    double auc = 0; ///< macro one-vs-rest
    std::vector<double> class_auc;
    bool encoder_unchanged = false;
    std::vector<int> predictions;
};

/// Trains only the head on frozen final-stage features; evaluates on `test`.
ClassifyResult frozen_classify(model::MassNet& net, std::vector<LabeledVolume> const& train,
                               std::vector<LabeledVolume> const& test, ClassifyConfig const& cfg);

/// Final-stage encoder tokens (1, N, C) of the centre crop.
torch::Tensor encoder_tokens(model::MassNet& net, Volume const& v, Shape3 const& crop);

/// Mann-Whitney AUC of `scores` for the positive class; ties count half.
double binary_auc(std::vector<double> const& scores, std::vector<int> const& positive);

struct PcaResult {
    std::array<Array3D<float>, 3> channels; ///< [0, 255], by explained variance
    std::array<double, 3> explained{0, 0, 0}; ///< variance ratios
    Eigen::MatrixXd components; ///< C x 3, orthonormal columns
    int rank = 0;
};

/// PCA of decoder penultimate features (self-reference with an all-ones mask).
PcaResult feature_pca(model::MassNet& net, Volume const& v, Shape3 const& crop);

void to_json(nlohmann::json& j, IcConfig const& c);
void from_json(nlohmann::json const& j, IcConfig& c);
void to_json(nlohmann::json& j, FinetuneConfig const& c);
void from_json(nlohmann::json const& j, FinetuneConfig& c);
void to_json(nlohmann::json& j, ClassifyConfig const& c);
void from_json(nlohmann::json const& j, ClassifyConfig& c);

} // namespace mass::downstream
