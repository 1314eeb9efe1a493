#include "mass/core/error.hpp"
#include "mass/core/log.hpp"
#include "mass/downstream/downstream.hpp"

#include "tensor_util.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>

namespace mass::downstream {

PcaResult feature_pca(model::MassNet& net, Volume const& v, Shape3 const& crop) {
    auto const prep = augment::prepare_volume(v);
    detail::check_fits(v.shape(), crop, "volume");
    // Self-reference: the centre crop with every voxel marked foreground.
    Index3 start{};
    for (size_t a = 0; a < 3; ++a) start[a] = (v.shape()[a] - crop[a]) / 2;
    torch::Tensor task;
    {
        torch::NoGradGuard ng;
        net->eval();
        auto const dtype = detail::param_dtype(*net);
        auto const f = net->encode(detail::to_tensor(detail::crop_array(prep.image, start, crop), dtype));
        task = net->encode_task(f, detail::to_tensor(BinaryArray(crop, 1), dtype));
    }
    auto const feat = sliding_features(net, prep, task, crop).contiguous();  // (C, D, H, W) double
    int64_t const c = feat.size(0);
    int64_t const n = feat.numel() / c;
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> const> x(
        feat.data_ptr<double>(), c, n);
    Eigen::VectorXd const mean = x.rowwise().mean();
    Eigen::MatrixXd const centred = x.colwise() - mean;
    Eigen::MatrixXd const cov = centred * centred.transpose() / static_cast<double>(std::max<int64_t>(1, n - 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw PreconditionError("feature covariance eigendecomposition failed");
    // Eigen sorts ascending.
    Eigen::VectorXd const lam = es.eigenvalues().reverse().cwiseMax(0.0);
    Eigen::MatrixXd const vecs = es.eigenvectors().rowwise().reverse();
    double const total = lam.sum();
    double const tol = std::max(1e-12, 1e-9 * (lam.size() ? lam(0) : 0.0));

    PcaResult out;
    out.rank = static_cast<int>((lam.array() > tol).count());
    int const k = static_cast<int>(std::min<int64_t>(3, c));
    out.components = Eigen::MatrixXd::Zero(c, 3);
    out.components.leftCols(k) = vecs.leftCols(k);
    if (out.rank < 3) log::warn("feature rank " + std::to_string(out.rank) + " < 3; padding with zero channels");
    Eigen::MatrixXd const proj = out.components.transpose() * centred;  // 3 x n
    for (int i = 0; i < 3; ++i) {
        out.channels[static_cast<size_t>(i)] = Array3D<float>(v.shape(), 0.0f);
        if (i >= out.rank) continue;
        out.explained[static_cast<size_t>(i)] = total > 0 ? lam(i) / total : 0.0;
        double const lo = proj.row(i).minCoeff();
        double const hi = proj.row(i).maxCoeff();
        auto& ch = out.channels[static_cast<size_t>(i)];
        for (int64_t j = 0; j < n; ++j)
            ch[j] = hi > lo ? static_cast<float>(255.0 * (proj(i, j) - lo) / (hi - lo)) : 0.0f;
    }
    return out;
}

} // namespace mass::downstream
