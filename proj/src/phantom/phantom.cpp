#include "mass/phantom/phantom.hpp"

#include "mass/core/connectivity.hpp"
#include "mass/core/error.hpp"
#include "mass/core/metrics.hpp"
#include "mass/core/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace mass::phantom {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Slots form a 2x2x4 grid (thin along axis 2); templates 0-7 take a checkerboard of it so small
// phantoms stay spread out. Intensities interleave so the first structures
// of any phantom are far apart in HU; all sit >= 50 HU above background.
constexpr std::array<StructureTemplate, kMaxStructures> kTemplates{{
    {ShapeKind::Ellipsoid, 40.0, {0.27, 0.27, 0.15}, {0.15, 0.14, 0.08}},
    {ShapeKind::Ellipsoid, 130.0, {0.73, 0.73, 0.15}, {0.15, 0.14, 0.08}},
    {ShapeKind::Box, 220.0, {0.27, 0.73, 0.383}, {0.12, 0.11, 0.07}},
    {ShapeKind::Tube, -20.0, {0.73, 0.27, 0.383}, {0.17, 0.075, 0.075}},
    {ShapeKind::Ellipsoid, 85.0, {0.27, 0.27, 0.617}, {0.15, 0.14, 0.08}},
    {ShapeKind::Box, 175.0, {0.73, 0.73, 0.617}, {0.12, 0.11, 0.07}},
    {ShapeKind::Ellipsoid, 270.0, {0.27, 0.73, 0.85}, {0.15, 0.14, 0.08}},
    {ShapeKind::Tube, 0.0, {0.73, 0.27, 0.85}, {0.17, 0.075, 0.075}},
    {ShapeKind::Ellipsoid, -50.0, {0.27, 0.73, 0.15}, {0.15, 0.14, 0.08}},
    {ShapeKind::Ellipsoid, 20.0, {0.73, 0.27, 0.15}, {0.15, 0.14, 0.08}},
    {ShapeKind::Box, 60.0, {0.27, 0.27, 0.383}, {0.12, 0.11, 0.07}},
    {ShapeKind::Tube, 105.0, {0.73, 0.73, 0.383}, {0.17, 0.075, 0.075}},
    {ShapeKind::Ellipsoid, 150.0, {0.27, 0.73, 0.617}, {0.15, 0.14, 0.08}},
    {ShapeKind::Box, 195.0, {0.73, 0.27, 0.617}, {0.12, 0.11, 0.07}},
    {ShapeKind::Ellipsoid, 245.0, {0.27, 0.27, 0.85}, {0.15, 0.14, 0.08}},
    {ShapeKind::Tube, 300.0, {0.73, 0.73, 0.85}, {0.17, 0.075, 0.075}},
}};

constexpr double kCenterJitter = 0.03;
constexpr double kSizeJitter = 0.12;
constexpr double kMaxTiltRad = 12.0 * std::numbers::pi / 180.0;
constexpr double kIntensityJitterHu = 8.0;
constexpr double kMinFraction = 0.005;
constexpr double kMaxFraction = 0.10;
constexpr double kMaxOverlap = 0.05;

Mat3 rotation(double a, double b, double c) {
    double const ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b), cc = std::cos(c),
                 sc = std::sin(c);
    Mat3 const rx{{{1, 0, 0}, {0, ca, -sa}, {0, sa, ca}}};
    Mat3 const ry{{{cb, 0, sb}, {0, 1, 0}, {-sb, 0, cb}}};
    Mat3 const rz{{{cc, -sc, 0}, {sc, cc, 0}, {0, 0, 1}}};
    auto mul = [](Mat3 const& x, Mat3 const& y) {
        Mat3 r{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) r[i][j] += x[i][k] * y[k][j];
        return r;
    };
    return mul(rz, mul(ry, rx));
}

struct Placement {
    StructureTemplate tmpl;
    std::array<double, 3> center{};
    std::array<double, 3> size{};
    Mat3 rot{};
};

bool inside(Placement const& p, double x, double y, double z) {
    std::array<double, 3> const d{x - p.center[0], y - p.center[1], z - p.center[2]};
    std::array<double, 3> q{};
    for (int i = 0; i < 3; ++i) q[i] = p.rot[0][i] * d[0] + p.rot[1][i] * d[1] + p.rot[2][i] * d[2]; // R^T d
    switch (p.tmpl.kind) {
    case ShapeKind::Ellipsoid: {
        double s = 0;
        for (int i = 0; i < 3; ++i) s += (q[i] / p.size[i]) * (q[i] / p.size[i]);
        return s <= 1.0;
    }
    case ShapeKind::Box:
        return std::abs(q[0]) <= p.size[0] && std::abs(q[1]) <= p.size[1] && std::abs(q[2]) <= p.size[2];
    case ShapeKind::Tube: {
        // Long axis along q[0].
        double const r = (q[1] / p.size[1]) * (q[1] / p.size[1]) + (q[2] / p.size[2]) * (q[2] / p.size[2]);
        return r <= 1.0 && std::abs(q[0]) <= p.size[0];
    }
    }
    return false;
}

BinaryArray rasterize(Placement const& p, Shape3 const& shape, bool& touches_border) {
    BinaryArray m(shape, 0);
    touches_border = false;
    double const reach = std::sqrt(p.size[0] * p.size[0] + p.size[1] * p.size[1] + p.size[2] * p.size[2]) + 1;
    std::array<int64_t, 3> lo{}, hi{};
    for (size_t a = 0; a < 3; ++a) {
        lo[a] = std::max<int64_t>(0, static_cast<int64_t>(std::floor(p.center[a] - reach)));
        hi[a] = std::min<int64_t>(shape[a], static_cast<int64_t>(std::ceil(p.center[a] + reach)) + 1);
    }
    for (int64_t i = lo[0]; i < hi[0]; ++i)
        for (int64_t j = lo[1]; j < hi[1]; ++j)
            for (int64_t k = lo[2]; k < hi[2]; ++k) {
                if (!inside(p, static_cast<double>(i), static_cast<double>(j), static_cast<double>(k))) continue;
                m(i, j, k) = 1;
                if (i == 0 || j == 0 || k == 0 || i == shape[0] - 1 || j == shape[1] - 1 || k == shape[2] - 1) {
                    touches_border = true;
                }
            }
    return m;
}

} // namespace

void PhantomSpec::validate() const {
    int const n = templates.empty() ? n_structures : static_cast<int>(templates.size());
    if (n < 1 || n > kMaxStructures) {
        throw InvalidParameter("n_structures must be in [1, " + std::to_string(kMaxStructures) + "], got " +
                               std::to_string(n));
    }
    for (int const t : templates) {
        if (t < 0 || t >= kMaxStructures) throw InvalidParameter("template id out of range: " + std::to_string(t));
    }
    for (size_t a = 0; a < 3; ++a) {
        if (shape[a] < kMinPhantomExtent) {
            throw InvalidParameter("phantom shape must be >= " + std::to_string(kMinPhantomExtent) +
                                   " along every axis, got " + format_shape(shape));
        }
        if (!(spacing[a] > 0)) throw InvalidParameter("phantom spacing must be positive");
    }
    if (noise_std < 0) throw InvalidParameter("noise_std must be >= 0");
}

StructureTemplate const& structure_template(int id) {
    if (id < 0 || id >= kMaxStructures) throw InvalidParameter("template id out of range: " + std::to_string(id));
    return kTemplates[static_cast<size_t>(id)];
}

Array3D<uint8_t> PhantomResult::label_map() const {
    Array3D<uint8_t> labels(volume.shape(), 0);
    for (size_t s = 0; s < gt.size(); ++s) {
        for (int64_t i = 0; i < labels.size(); ++i) {
            if (gt[s].voxels[i]) labels[i] = static_cast<uint8_t>(s + 1);
        }
    }
    return labels;
}

PhantomResult generate_phantom(PhantomSpec const& spec) {
    spec.validate();
    std::vector<int> ids = spec.templates;
    if (ids.empty()) {
        for (int i = 0; i < spec.n_structures; ++i) ids.push_back(i);
    }

    Rng rng(spec.seed, "phantom");
    auto const& shape = spec.shape;
    double const min_extent = static_cast<double>(std::min({shape[0], shape[1], shape[2]}));
    double const total = static_cast<double>(voxel_count(shape));

    PhantomResult out;
    std::string const id = "phantom_s" + std::to_string(spec.seed);
    for (int const tid : ids) {
        auto const& tmpl = kTemplates[static_cast<size_t>(tid)];
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            Placement p;
            p.tmpl = tmpl;
            for (size_t a = 0; a < 3; ++a) {
                double const frac = tmpl.center[a] + rng.uniform(-kCenterJitter, kCenterJitter);
                p.center[a] = frac * static_cast<double>(shape[a] - 1);
                p.size[a] = tmpl.size[a] * min_extent * rng.uniform(1 - kSizeJitter, 1 + kSizeJitter);
            }
            p.rot = rotation(rng.uniform(-kMaxTiltRad, kMaxTiltRad), rng.uniform(-kMaxTiltRad, kMaxTiltRad),
                             rng.uniform(-kMaxTiltRad, kMaxTiltRad));
            bool border = false;
            BinaryArray m = rasterize(p, shape, border);
            if (border) continue;
            double const frac = static_cast<double>(count_foreground(m)) / total;
            if (frac < kMinFraction || frac > kMaxFraction) continue;
            if (!is_connected(m)) continue;
            bool ok = true;
            int64_t const n_self = count_foreground(m);
            for (auto const& other : out.gt) {
                int64_t const inter = intersection_count(m, other.voxels);
                int64_t const smaller = std::min(n_self, other.count());
                if (static_cast<double>(inter) >= kMaxOverlap * static_cast<double>(smaller)) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            Mask3D mask;
            mask.voxels = std::move(m);
            mask.source = MaskSource::PHANTOM;
            mask.volume_id = id;
            out.gt.push_back(std::move(mask));
            out.template_ids.push_back(tid);
            out.intensities_hu.push_back(tmpl.intensity_hu + rng.uniform(-kIntensityJitterHu, kIntensityJitterHu));
            placed = true;
        }
        if (!placed) {
            throw PlacementError("could not place structure " + std::to_string(out.gt.size()) + " (template " +
                                 std::to_string(tid) + ") within " + std::to_string(kPlacementAttempts) +
                                 " attempts; use a smaller n_structures or a larger shape");
        }
    }

    Array3D<float> hu(shape, static_cast<float>(kBackgroundHu));
    for (size_t s = 0; s < out.gt.size(); ++s) {
        auto const value = static_cast<float>(out.intensities_hu[s]);
        for (int64_t i = 0; i < hu.size(); ++i) {
            if (out.gt[s].voxels[i]) hu[i] = value;
        }
    }
    if (spec.noise_std > 0) {
        Rng noise(spec.seed, "phantom-noise");
        double const sigma = spec.noise_std * kDynamicRangeHu;
        for (auto& v : hu) v = static_cast<float>(v + sigma * noise.normal());
    }
    if (spec.modality_style == Style::MR_LIKE) {
        // Affine map to arbitrary MR-like units; contrast order preserved.
        for (auto& v : hu) v = static_cast<float>(300.0 + 1.5 * (v - kBackgroundHu));
    }

    out.volume.voxels = std::move(hu);
    out.volume.spacing = spec.spacing;
    out.volume.modality = spec.modality_style == Style::CT_LIKE ? Modality::CT : Modality::MR;
    out.volume.id = id;
    return out;
}

} // namespace mass::phantom
