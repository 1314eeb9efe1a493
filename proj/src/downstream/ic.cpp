#include "mass/core/error.hpp"
#include "mass/core/metrics.hpp"
#include "mass/downstream/downstream.hpp"

#include "tensor_util.hpp"

#include <algorithm>

namespace mass::downstream {

namespace detail {

void check_fits(Shape3 const& shape, Shape3 const& crop, char const* what) {
    for (int a = 0; a < 3; ++a) {
        if (shape[static_cast<size_t>(a)] < crop[static_cast<size_t>(a)])
            throw ShapeError(std::string(what) + " shape " + format_shape(shape) + " is smaller than crop " +
                             format_shape(crop));
    }
}

} // namespace detail

std::pair<Array3D<float>, BinaryArray> reference_crop(augment::PreparedVolume const& v, BinaryArray const& mask,
                                                      Shape3 const& crop) {
    Shape3 const& shape = v.image.shape();
    if (mask.shape() != shape)
        throw ShapeError("reference mask " + format_shape(mask.shape()) + " does not match image " +
                         format_shape(shape));
    if (!is_binary(mask)) throw InvalidParameter("reference mask is not binary");
    detail::check_fits(shape, crop, "reference");
    BBox const box = bounding_box(mask);
    if (box.empty()) throw PreconditionError("reference mask of '" + v.id + "' is empty");
    Index3 start{};
    for (size_t a = 0; a < 3; ++a) {
        int64_t const centre = (box.lo[a] + box.hi[a]) / 2;
        start[a] = std::clamp<int64_t>(centre - crop[a] / 2, 0, shape[a] - crop[a]);
    }
    return {detail::crop_array(v.image, start, crop), detail::crop_array(mask, start, crop)};
}

namespace {

torch::Tensor task_embedding(model::MassNet& net, Reference const& r, Shape3 const& crop, torch::Dtype dtype) {
    auto const prep = augment::prepare_volume(r.volume);
    auto const [img, msk] = reference_crop(prep, r.mask, crop);
    auto const f = net->encode(detail::to_tensor(img, dtype));
    return net->encode_task(f, detail::to_tensor(msk, dtype));
}

void check_refs(model::MassNet& net, ReferenceSet const& refs, Shape3 const& crop) {
    if (refs.empty()) throw PreconditionError("reference set is empty");
    net->config().check_crop(crop);
}

} // namespace

torch::Tensor average_task_embedding(model::MassNet& net, ReferenceSet const& refs, Shape3 const& crop) {
    check_refs(net, refs, crop);
    torch::NoGradGuard ng;
    net->eval();
    auto const dtype = detail::param_dtype(*net);
    torch::Tensor mean;
    int k = 0;
    for (auto const& r : refs) {
        auto const e = task_embedding(net, r, crop, dtype);
        ++k;
        // Running mean: duplicates of one embedding reproduce it exactly.
        mean = k == 1 ? e : mean + (e - mean) / static_cast<double>(k);
    }
    return mean;
}

std::vector<int64_t> window_starts(int64_t extent, int64_t crop) {
    if (crop <= 0 || extent < crop) throw ShapeError("window larger than extent");
    std::vector<int64_t> out;
    int64_t const step = std::max<int64_t>(1, crop / 2);
    for (int64_t s = 0; s + crop < extent; s += step) out.push_back(s);
    out.push_back(extent - crop);
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

/// Averages decoder outputs over all windows; `feat` optionally collects
/// penultimate features (C, D, H, W) the same way.
Array3D<float> sliding_decode(model::MassNet& net, Array3D<float> const& image, torch::Tensor const& task,
                              Shape3 const& crop, torch::Tensor* feat) {
    Shape3 const& shape = image.shape();
    detail::check_fits(shape, crop, "query");
    net->config().check_crop(crop);
    torch::NoGradGuard ng;
    net->eval();
    auto const dtype = detail::param_dtype(*net);
    auto const opts = torch::TensorOptions().dtype(torch::kDouble);
    auto sum = torch::zeros({shape[0], shape[1], shape[2]}, opts);
    auto count = torch::zeros({shape[0], shape[1], shape[2]}, opts);
    torch::Tensor fsum;
    auto const s0 = window_starts(shape[0], crop[0]);
    auto const s1 = window_starts(shape[1], crop[1]);
    auto const s2 = window_starts(shape[2], crop[2]);
    using torch::indexing::Slice;
    for (int64_t a : s0)
        for (int64_t b : s1)
            for (int64_t c : s2) {
                auto const win = detail::crop_array(image, {a, b, c}, crop);
                auto const f = net->encode(detail::to_tensor(win, dtype));
                torch::Tensor pen;
                auto const logits = net->decode(f, task, feat ? &pen : nullptr);
                auto const region = std::vector<torch::indexing::TensorIndex>{
                    Slice(a, a + crop[0]), Slice(b, b + crop[1]), Slice(c, c + crop[2])};
                sum.index(region).add_(logits[0][0].to(torch::kDouble));
                count.index(region).add_(1.0);
                if (feat) {
                    auto const p = pen[0].to(torch::kDouble);
                    if (!fsum.defined()) fsum = torch::zeros({p.size(0), shape[0], shape[1], shape[2]}, opts);
                    fsum.index({Slice(), Slice(a, a + crop[0]), Slice(b, b + crop[1]), Slice(c, c + crop[2])})
                        .add_(p);
                }
            }
    auto const avg = (sum / count).to(torch::kFloat).contiguous();
    if (feat) *feat = fsum / count.unsqueeze(0);
    std::vector<float> data(avg.data_ptr<float>(), avg.data_ptr<float>() + avg.numel());
    return Array3D<float>(shape, std::move(data));
}

} // namespace

Array3D<float> sliding_logits(model::MassNet& net, augment::PreparedVolume const& query, torch::Tensor const& task,
                              Shape3 const& crop) {
    return sliding_decode(net, query.image, task, crop, nullptr);
}

torch::Tensor sliding_features(model::MassNet& net, augment::PreparedVolume const& query, torch::Tensor const& task,
                               Shape3 const& crop) {
    torch::Tensor feat;
    sliding_decode(net, query.image, task, crop, &feat);
    return feat;
}

IcResult ic_infer(model::MassNet& net, ReferenceSet const& refs, Volume const& query, IcConfig const& cfg,
                  BinaryArray const* gt) {
    check_refs(net, refs, cfg.crop);
    if (!(cfg.threshold > 0 && cfg.threshold < 1)) throw InvalidParameter("threshold must lie in (0, 1)");
    if (gt && gt->shape() != query.shape())
        throw ShapeError("ground truth " + format_shape(gt->shape()) + " does not match query " +
                         format_shape(query.shape()));
    auto const prep = augment::prepare_volume(query);
    Shape3 const& shape = query.shape();
    Array3D<float> prob(shape);
    if (cfg.averaging == Averaging::EMBEDDING) {
        auto const logits = sliding_logits(net, prep, average_task_embedding(net, refs, cfg.crop), cfg.crop);
        for (int64_t i = 0; i < prob.size(); ++i) prob[i] = 1.0f / (1.0f + std::exp(-logits[i]));
    } else {
        std::vector<double> acc(static_cast<size_t>(prob.size()), 0.0);
        int k = 0;
        for (auto const& r : refs) {
            auto const logits =
                sliding_logits(net, prep, average_task_embedding(net, ReferenceSet{r}, cfg.crop), cfg.crop);
            ++k;
            for (int64_t i = 0; i < prob.size(); ++i) {
                double const p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
                acc[static_cast<size_t>(i)] += (p - acc[static_cast<size_t>(i)]) / k;
            }
        }
        for (int64_t i = 0; i < prob.size(); ++i) prob[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
    }
    IcResult out;
    out.mask.voxels = BinaryArray(shape);
    out.mask.source = MaskSource::GT;
    out.mask.volume_id = query.id;
    for (int64_t i = 0; i < prob.size(); ++i) out.mask.voxels[i] = prob[i] >= cfg.threshold ? 1 : 0;
    out.probability = std::move(prob);
    if (gt) out.dice = dice_score(out.mask.voxels, *gt);
    return out;
}

} // namespace mass::downstream
