#include "mass/model/model.hpp"

#include "mass/core/error.hpp"

#include <algorithm>
#include <cmath>

namespace mass::model {

namespace F = torch::nn::functional;
using torch::Tensor;

int ModelConfig::channels(int level) const {
    return std::min(base_channels << level, 16 * base_channels);
}

void ModelConfig::validate() const {
    if (base_channels < 1) throw ConfigError("model.base_channels must be >= 1");
    if (stages < 1 || stages > 6) throw ConfigError("model.stages must be in [1, 6]");
    if (n_query_tokens < 1) throw ConfigError("model.n_query_tokens must be >= 1");
    if (heads < 1) throw ConfigError("model.heads must be >= 1");
    if (resolved_embed_dim() % heads != 0) {
        throw ConfigError("model.embed_dim " + std::to_string(resolved_embed_dim()) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (cross_attn_stages < 0) throw ConfigError("model.cross_attn_stages must be >= 0");
    int const r = pixel_shuffle_factor;
    if (r < 2 || (r & (r - 1)) != 0 || (1 << stages) < r)
        throw ConfigError("model.pixel_shuffle_factor must be a power of two in [2, 2^stages]");
}

void ModelConfig::check_crop(Shape3 const& crop) const {
    int64_t const d = int64_t{1} << stages;
    for (int64_t c : crop) {
        if (c <= 0 || c % d != 0) {
            throw ShapeError("input extents " + format_shape(crop) + " must be divisible by 2^stages = " +
                             std::to_string(d));
        }
    }
}

void to_json(nlohmann::json& j, ModelConfig const& c) {
    j = nlohmann::json{{"base_channels", c.base_channels},
                       {"stages", c.stages},
                       {"n_query_tokens", c.n_query_tokens},
                       {"embed_dim", c.resolved_embed_dim()},
                       {"heads", c.heads},
                       {"cross_attn_stages", c.cross_attn_stages},
                       {"pixel_shuffle_factor", c.pixel_shuffle_factor},
                       {"full_res_foreground", c.full_res_foreground}};
}

void from_json(nlohmann::json const& j, ModelConfig& c) {
    if (!j.is_object()) throw ConfigError("model section must be an object");
    static std::vector<std::string> const known{"base_channels",     "stages", "n_query_tokens",
                                                "embed_dim",         "heads",  "cross_attn_stages",
                                                "pixel_shuffle_factor", "full_res_foreground"};
    for (auto const& [k, _] : j.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown key '" + k + "' in model");
    }
    try {
        c.base_channels = j.value("base_channels", c.base_channels);
        c.stages = j.value("stages", c.stages);
        c.n_query_tokens = j.value("n_query_tokens", c.n_query_tokens);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.heads = j.value("heads", c.heads);
        c.cross_attn_stages = j.value("cross_attn_stages", c.cross_attn_stages);
        c.pixel_shuffle_factor = j.value("pixel_shuffle_factor", c.pixel_shuffle_factor);
        c.full_res_foreground = j.value("full_res_foreground", c.full_res_foreground);
    } catch (nlohmann::json::exception const& e) {
        throw ConfigError(std::string("bad model section: ") + e.what());
    }
    c.validate();
}

namespace {

torch::nn::Conv3d conv(int in, int out, int k, int stride = 1) {
    return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, k).stride(stride).padding(k / 2));
}

torch::nn::InstanceNorm3d inorm(int c) {
    return torch::nn::InstanceNorm3d(torch::nn::InstanceNorm3dOptions(c).affine(true));
}

Tensor lrelu(Tensor const& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.01)); }

/// (B, C, D, H, W) -> (B, C r^3, D/r, H/r, W/r)
Tensor pixel_unshuffle3d(Tensor const& x, int64_t r) {
    auto const s = x.sizes();
    Tensor v = x.reshape({s[0], s[1], s[2] / r, r, s[3] / r, r, s[4] / r, r});
    v = v.permute({0, 1, 3, 5, 7, 2, 4, 6});
    return v.reshape({s[0], s[1] * r * r * r, s[2] / r, s[3] / r, s[4] / r});
}

/// (B, C, D, H, W) -> (B, D*H*W, C)
Tensor to_tokens(Tensor const& x) { return x.flatten(2).transpose(1, 2); }

int log2i(int v) {
    int l = 0;
    while ((1 << l) < v) ++l;
    return l;
}

} // namespace

ResBlockImpl::ResBlockImpl(int in, int out, int stride) {
    conv1 = register_module("conv1", conv(in, out, 3, stride));
    norm1 = register_module("norm1", inorm(out));
    conv2 = register_module("conv2", conv(out, out, 3));
    norm2 = register_module("norm2", inorm(out));
    if (in != out || stride != 1) {
        skip = register_module("skip", conv(in, out, 1, stride));
        skip_norm = register_module("skip_norm", inorm(out));
    }
}

Tensor ResBlockImpl::forward(Tensor x) {
    Tensor h = lrelu(norm1(conv1(x)));
    h = norm2(conv2(h));
    Tensor s = skip ? skip_norm(skip(x)) : x;
    return lrelu(h + s);
}

AttentionImpl::AttentionImpl(int q_dim, int kv_dim, int embed, int heads) : heads_(heads) {
    wq = register_module("wq", torch::nn::Linear(q_dim, embed));
    wk = register_module("wk", torch::nn::Linear(kv_dim, embed));
    wv = register_module("wv", torch::nn::Linear(kv_dim, embed));
    wo = register_module("wo", torch::nn::Linear(embed, q_dim));
}

Tensor AttentionImpl::forward(Tensor q, Tensor kv) {
    int64_t const b = q.size(0), nq = q.size(1), nk = kv.size(1);
    Tensor Q = wq(q), K = wk(kv), V = wv(kv);
    int64_t const e = Q.size(2), dh = e / heads_;
    Q = Q.view({b, nq, heads_, dh}).transpose(1, 2);
    K = K.view({b, nk, heads_, dh}).transpose(1, 2);
    V = V.view({b, nk, heads_, dh}).transpose(1, 2);
    Tensor a = torch::softmax(torch::matmul(Q, K.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh)), -1);
    Tensor o = torch::matmul(a, V).transpose(1, 2).reshape({b, nq, e});
    return wo(o);
}

EncoderImpl::EncoderImpl(ModelConfig const& cfg) : cfg_(cfg) {
    stem = register_module("stem", conv(1, cfg.channels(0), 3));
    stem_norm = register_module("stem_norm", inorm(cfg.channels(0)));
    blocks = register_module("blocks", torch::nn::ModuleList());
    blocks->push_back(ResBlock(cfg.channels(0), cfg.channels(0), 1));
    for (int l = 1; l <= cfg.stages; ++l) blocks->push_back(ResBlock(cfg.channels(l - 1), cfg.channels(l), 2));
}

FeaturePyramid EncoderImpl::forward(Tensor x) {
    FeaturePyramid out;
    Tensor h = lrelu(stem_norm(stem(x)));
    for (size_t l = 0; l < blocks->size(); ++l) {
        h = blocks[l]->as<ResBlock>()->forward(h);
        out.push_back(h);
    }
    return out;
}

TaskEncoderImpl::TaskEncoderImpl(ModelConfig const& cfg) : cfg_(cfg) {
    int const e = cfg.resolved_embed_dim();
    int const fg_c = cfg.full_res_foreground ? cfg.channels(0) : cfg.channels(1);
    fg_proj = register_module("fg_proj", torch::nn::Linear(fg_c, e));
    null_token = register_parameter("null_token", torch::zeros({e}));
    int const r = cfg.pixel_shuffle_factor;
    fuse = register_module("fuse", conv(cfg.channels(log2i(r)) + r * r * r, e, 1));
    queries = register_parameter("queries", torch::randn({cfg.n_query_tokens, e}) * 0.02);
    ln_q1 = register_module("ln_q1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({e})));
    ln_kv = register_module("ln_kv", torch::nn::LayerNorm(torch::nn::LayerNormOptions({e})));
    ln_q2 = register_module("ln_q2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({e})));
    ln_q3 = register_module("ln_q3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({e})));
    cross = register_module("cross", Attention(e, e, e, cfg.heads));
    self_attn = register_module("self_attn", Attention(e, e, e, cfg.heads));
    mlp = register_module("mlp", torch::nn::Sequential(torch::nn::Linear(e, 2 * e), torch::nn::GELU(),
                                                       torch::nn::Linear(2 * e, e)));
}

Tensor TaskEncoderImpl::pool_foreground(FeaturePyramid const& f, Tensor y) const {
    Tensor feat;
    if (cfg_.full_res_foreground) {
        feat = f[0];
    } else {
        std::vector<int64_t> size(y.sizes().begin() + 2, y.sizes().end());
        feat = F::interpolate(f[1], F::InterpolateFuncOptions().size(size).mode(torch::kTrilinear).align_corners(false));
    }
    Tensor const w = y.to(feat.dtype());
    Tensor const num = (feat * w).sum({2, 3, 4});
    Tensor const den = w.sum({2, 3, 4});
    return num / den.clamp_min(1e-12);
}

Tensor TaskEncoderImpl::forward(FeaturePyramid const& f, Tensor y) {
    int64_t const b = y.size(0);
    Tensor const pooled = pool_foreground(f, y);
    Tensor const has_fg = (y.flatten(1).sum(1) > 0).to(pooled.dtype()).unsqueeze(1);
    Tensor const fg = has_fg * fg_proj(pooled) + (1 - has_fg) * null_token.unsqueeze(0);

    int const r = cfg_.pixel_shuffle_factor;
    Tensor const fused = fuse(torch::cat({f[static_cast<size_t>(log2i(r))], pixel_unshuffle3d(y.to(f[0].dtype()), r)}, 1));
    Tensor const kv = ln_kv(to_tokens(fused));
    Tensor q = queries.unsqueeze(0).expand({b, -1, -1});
    q = q + cross(ln_q1(q), kv);
    Tensor const qn = ln_q2(q);
    q = q + self_attn(qn, qn);
    q = q + mlp->forward(ln_q3(q));
    return torch::cat({fg.unsqueeze(1), q}, 1);
}

DecoderImpl::DecoderImpl(ModelConfig const& cfg) : cfg_(cfg) {
    int const e = cfg.resolved_embed_dim();
    ups = register_module("ups", torch::nn::ModuleList());
    blocks = register_module("blocks", torch::nn::ModuleList());
    attn = register_module("attn", torch::nn::ModuleList());
    attn_norm = register_module("attn_norm", torch::nn::ModuleList());
    int const n_attn = std::min(cfg.cross_attn_stages, cfg.stages);
    for (int l = cfg.stages - 1; l >= 0; --l) {
        ups->push_back(torch::nn::ConvTranspose3d(
            torch::nn::ConvTranspose3dOptions(cfg.channels(l + 1), cfg.channels(l), 2).stride(2)));
        blocks->push_back(ResBlock(2 * cfg.channels(l), cfg.channels(l), 1));
        if (l >= cfg.stages - n_attn) {
            attn->push_back(Attention(cfg.channels(l), e, e, cfg.heads));
            attn_norm->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.channels(l)})));
        }
    }
    head = register_module("head", conv(cfg.channels(0), 1, 1));
}

Tensor DecoderImpl::forward(FeaturePyramid const& f, Tensor task, Tensor* penultimate) {
    if (task.size(2) != cfg_.resolved_embed_dim()) {
        throw ConfigError("task embedding width " + std::to_string(task.size(2)) + " does not match embed_dim " +
                          std::to_string(cfg_.resolved_embed_dim()));
    }
    if (static_cast<int>(f.size()) != cfg_.stages + 1) throw ConfigError("feature pyramid depth does not match stages");
    Tensor x = f.back();
    size_t a = 0;
    for (size_t i = 0; i < ups->size(); ++i) {
        int const l = cfg_.stages - 1 - static_cast<int>(i);
        x = ups[i]->as<torch::nn::ConvTranspose3d>()->forward(x);
        x = blocks[i]->as<ResBlock>()->forward(torch::cat({x, f[static_cast<size_t>(l)]}, 1));
        if (a < attn->size()) {
            auto const s = x.sizes().vec();
            Tensor t = attn_norm[a]->as<torch::nn::LayerNorm>()->forward(to_tokens(x));
            t = attn[a]->as<Attention>()->forward(t, task);
            x = x + t.transpose(1, 2).reshape(s);
            ++a;
        }
    }
    if (penultimate) *penultimate = x;
    return head(x);
}

MassNetImpl::MassNetImpl(ModelConfig const& cfg) : cfg_(cfg) {
    cfg.validate();
    encoder = register_module("encoder", Encoder(cfg));
    task = register_module("task", TaskEncoder(cfg));
    decoder = register_module("decoder", Decoder(cfg));
}

FeaturePyramid MassNetImpl::encode(Tensor x) {
    if (x.dim() != 5 || x.size(1) != 1) throw ShapeError("encoder input must be (B, 1, D, H, W)");
    cfg_.check_crop({x.size(2), x.size(3), x.size(4)});
    return encoder(x);
}

Tensor MassNetImpl::encode_task(FeaturePyramid const& f, Tensor y) {
    if (y.dim() != 5 || y.size(1) != 1) throw ShapeError("reference mask must be (B, 1, D, H, W)");
    if (y.size(2) != f[0].size(2) || y.size(3) != f[0].size(3) || y.size(4) != f[0].size(4))
        throw ShapeError("reference mask does not match the encoded crop");
    if (!torch::logical_or(y == 0, y == 1).all().item<bool>()) throw InvalidParameter("reference mask must be binary");
    return task(f, y);
}

Tensor MassNetImpl::decode(FeaturePyramid const& f, Tensor t, Tensor* penultimate) {
    return decoder(f, t, penultimate);
}

Tensor MassNetImpl::forward(Tensor x_s, Tensor y_s, Tensor x_q) {
    FeaturePyramid const fs = encode(x_s);
    Tensor const t = encode_task(fs, y_s);
    return decode(encode(x_q), t);
}

MassNet make_model(ModelConfig const& cfg, uint64_t seed) {
    cfg.validate();
    torch::manual_seed(seed);
    return MassNet(cfg);
}

namespace {

int64_t count(torch::nn::Module const& m) {
    int64_t n = 0;
    for (auto const& p : m.parameters()) n += p.numel();
    return n;
}

} // namespace

ParameterCounts count_parameters(MassNet const& net) {
    ParameterCounts c;
    c.encoder = count(*net->encoder);
    c.task_module = count(*net->task);
    c.decoder = count(*net->decoder);
    c.total = count(*net);
    return c;
}

ParameterCounts count_parameters(ModelConfig const& cfg) {
    torch::NoGradGuard ng;
    return count_parameters(make_model(cfg, 0));
}

} // namespace mass::model
