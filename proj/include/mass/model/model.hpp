#pragma once

#include "mass/core/types.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <vector>

namespace mass::model {

struct ModelConfig {
    int base_channels = 8;
    int stages = 4;
    int n_query_tokens = 8;
    int embed_dim = 0; ///< 0 means 8 * base_channels
    int heads = 4;
    int cross_attn_stages = 3; ///< lowest-resolution decoder stages with cross-attention
    int pixel_shuffle_factor = 2;
    bool full_res_foreground = false; ///< pool F^(0) instead of upsampled F^(1)

    int resolved_embed_dim() const { return embed_dim > 0 ? embed_dim : 8 * base_channels; }
    /// Channels of pyramid level l: base * 2^l, capped at 16 * base.
    int channels(int level) const;
    void validate() const;
    /// Throws ShapeError unless every extent is divisible by 2^stages.
    void check_crop(Shape3 const& crop) const;
};

void to_json(nlohmann::json& j, ModelConfig const& c);
void from_json(nlohmann::json const& j, ModelConfig& c);

/// F^(0) .. F^(stages); level l has stride 2^l.
using FeaturePyramid = std::vector<torch::Tensor>;

struct ParameterCounts {
    int64_t encoder = 0;
    int64_t task_module = 0;
    int64_t decoder = 0;
    int64_t total = 0;
};

class ResBlockImpl : public torch::nn::Module {
  public:
    ResBlockImpl(int in, int out, int stride);
    torch::Tensor forward(torch::Tensor x);

  private:
    torch::nn::Conv3d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::InstanceNorm3d norm1{nullptr}, norm2{nullptr}, skip_norm{nullptr};
};
TORCH_MODULE(ResBlock);

/// Multi-head attention over token sequences (B, N, D).
class AttentionImpl : public torch::nn::Module {
  public:
    AttentionImpl(int q_dim, int kv_dim, int embed, int heads);
    torch::Tensor forward(torch::Tensor q, torch::Tensor kv);

  private:
    int heads_;
    torch::nn::Linear wq{nullptr}, wk{nullptr}, wv{nullptr}, wo{nullptr};
};
TORCH_MODULE(Attention);

class EncoderImpl : public torch::nn::Module {
  public:
    explicit EncoderImpl(ModelConfig const& cfg);
    FeaturePyramid forward(torch::Tensor x);

  private:
    ModelConfig cfg_;
    torch::nn::Conv3d stem{nullptr};
    torch::nn::InstanceNorm3d stem_norm{nullptr};
    torch::nn::ModuleList blocks{nullptr};
};
TORCH_MODULE(Encoder);

class TaskEncoderImpl : public torch::nn::Module {
  public:
    explicit TaskEncoderImpl(ModelConfig const& cfg);
    /// (B, n_query_tokens + 1, embed_dim): pooled foreground token first.
    torch::Tensor forward(FeaturePyramid const& f, torch::Tensor y);
    /// Mask-weighted mean of the foreground features, before projection.
    torch::Tensor pool_foreground(FeaturePyramid const& f, torch::Tensor y) const;

  private:
    ModelConfig cfg_;
    torch::nn::Linear fg_proj{nullptr};
    torch::Tensor null_token;
    torch::nn::Conv3d fuse{nullptr};
    torch::Tensor queries;
    torch::nn::LayerNorm ln_q1{nullptr}, ln_kv{nullptr}, ln_q2{nullptr}, ln_q3{nullptr};
    Attention cross{nullptr}, self_attn{nullptr};
    torch::nn::Sequential mlp{nullptr};
};
TORCH_MODULE(TaskEncoder);

class DecoderImpl : public torch::nn::Module {
  public:
    explicit DecoderImpl(ModelConfig const& cfg);
    /// Logits (B, 1, D, H, W). `penultimate` receives the last feature map.
    torch::Tensor forward(FeaturePyramid const& f, torch::Tensor task, torch::Tensor* penultimate = nullptr);

  private:
    ModelConfig cfg_;
    torch::nn::ModuleList ups{nullptr}, blocks{nullptr}, attn{nullptr}, attn_norm{nullptr};
    torch::nn::Conv3d head{nullptr};
};
TORCH_MODULE(Decoder);

class MassNetImpl : public torch::nn::Module {
  public:
    explicit MassNetImpl(ModelConfig const& cfg);

    FeaturePyramid encode(torch::Tensor x);
    /// Throws InvalidParameter for non-binary masks.
    torch::Tensor encode_task(FeaturePyramid const& f, torch::Tensor y);
    torch::Tensor decode(FeaturePyramid const& f, torch::Tensor task, torch::Tensor* penultimate = nullptr);
    /// Episode forward: logits for the query given a reference pair.
    torch::Tensor forward(torch::Tensor x_s, torch::Tensor y_s, torch::Tensor x_q);

    ModelConfig const& config() const { return cfg_; }
    Encoder encoder{nullptr};
    TaskEncoder task{nullptr};
    Decoder decoder{nullptr};

  private:
    ModelConfig cfg_;
};
TORCH_MODULE(MassNet);

/// Builds a network with deterministic initialization from `seed`.
MassNet make_model(ModelConfig const& cfg, uint64_t seed);

ParameterCounts count_parameters(ModelConfig const& cfg);
ParameterCounts count_parameters(MassNet const& net);

} // namespace mass::model
