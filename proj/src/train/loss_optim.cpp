#include "mass/core/error.hpp"
#include "mass/train/train.hpp"

#include "mass/core/log.hpp"

#include <cmath>

namespace mass::train {

SegLoss seg_loss(torch::Tensor const& logits, torch::Tensor const& target) {
    if (!logits.sizes().equals(target.sizes())) {
        throw ShapeError("logits " + std::string(c10::str(logits.sizes())) + " and target " +
                         std::string(c10::str(target.sizes())) + " differ in shape");
    }
    torch::Tensor const y = target.to(logits.dtype());
    torch::Tensor const p = torch::sigmoid(logits);
    std::vector<int64_t> dims;
    for (int64_t d = 1; d < logits.dim(); ++d) dims.push_back(d);
    torch::Tensor const inter = (p * y).sum(dims);
    torch::Tensor const denom = p.sum(dims) + y.sum(dims);
    SegLoss l;
    l.dice = (1 - (2 * inter + kDiceEps) / (denom + kDiceEps)).mean();
    l.bce = torch::binary_cross_entropy_with_logits(logits, y);
    l.total = l.dice + l.bce;
    return l;
}

double poly_lr(int64_t step, int64_t total_steps, double base_lr, double power) {
    if (total_steps <= 0) throw InvalidParameter("poly_lr needs total_steps > 0");
    if (step < 0) throw InvalidParameter("poly_lr step must be >= 0");
    if (step >= total_steps) {
        if (step > total_steps) log::warn("poly_lr: step " + std::to_string(step) + " past total " + std::to_string(total_steps) + "; learning rate clamped to 0");
        return 0.0;
    }
    return base_lr * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), power);
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<torch::Tensor> params, double weight_decay, double beta1,
                     double beta2, double eps)
    : kind_(kind), params_(std::move(params)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto const& p : params_) {
        m_.push_back(torch::zeros_like(p));
        v_.push_back(torch::zeros_like(p));
    }
}

void Optimizer::zero_grad() {
    for (auto& p : params_) {
        if (p.grad().defined()) p.mutable_grad().zero_();
    }
}

void Optimizer::step(double lr) {
    torch::NoGradGuard ng;
    ++t_;
    double const c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double const c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        torch::Tensor& p = params_[i];
        if (!p.grad().defined()) continue;
        torch::Tensor const& g = p.grad();
        m_[i].mul_(b1_).add_(g, 1 - b1_);
        v_[i].mul_(b2_).addcmul_(g, g, 1 - b2_);
        torch::Tensor u = (m_[i] / c1) / ((v_[i] / c2).sqrt() + eps_);
        if (wd_ != 0) u = u + wd_ * p;
        double scale = lr;
        if (kind_ == OptimizerKind::LAMB) {
            double const wn = p.norm().item<double>();
            double const un = u.norm().item<double>();
            double const trust = (wn > 0 && un > 0) ? std::clamp(wn / un, kLambTrustMin, kLambTrustMax) : 1.0;
            scale *= trust;
        }
        p.sub_(u, scale);
    }
}

} // namespace mass::train
