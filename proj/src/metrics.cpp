#include "iwarp/metrics.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "iwarp/common.hpp"

namespace iwarp {

namespace {

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
}

}  // namespace

double psnr(const torch::Tensor& pred, const torch::Tensor& target, double cap) {
    check_same(pred, target, "psnr");
    const double mse = (pred.to(torch::kDouble) - target.to(torch::kDouble)).mul(255.0).pow(2).mean().item<double>();
    if (mse == 0.0) return cap;
    return std::min(cap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double l1_error(const torch::Tensor& pred, const torch::Tensor& target) {
    check_same(pred, target, "l1");
    return (pred.to(torch::kDouble) - target.to(torch::kDouble)).abs().mean().item<double>() * 255.0;
}

std::vector<AnchorMatch> match_anchors(const torch::Tensor& pred, const torch::Tensor& gt,
                                       const std::vector<std::array<double, 2>>& anchors,
                                       const AnchorMatchOptions& options) {
    check_same(pred, gt, "match_anchors");
    if (pred.dim() != 3) throw ShapeError("match_anchors: expected [C, H, W], got " + shape_string(pred));
    auto p = pred.to(torch::kDouble).contiguous();
    auto g = gt.to(torch::kDouble).contiguous();
    auto pa = p.accessor<double, 3>();
    auto ga = g.accessor<double, 3>();
    const int64_t channels = p.size(0), h = p.size(1), w = p.size(2);
    const int64_t pr = options.patch_radius, sr = options.search_radius;
    auto clampi = [](int64_t v, int64_t hi) { return std::clamp<int64_t>(v, 0, hi - 1); };
    const double n = static_cast<double>((2 * pr + 1) * (2 * pr + 1) * channels);

    std::vector<AnchorMatch> out;
    out.reserve(anchors.size());
    for (const auto& a : anchors) {
        const auto cx = static_cast<int64_t>(std::floor(a[0]));
        const auto cy = static_cast<int64_t>(std::floor(a[1]));
        double best = std::numeric_limits<double>::infinity();
        int64_t best_sx = 0, best_sy = 0, best_r2 = 0;
        for (int64_t sy = -sr; sy <= sr; ++sy) {
            for (int64_t sx = -sr; sx <= sr; ++sx) {
                double ssd = 0;
                for (int64_t dy = -pr; dy <= pr && ssd <= best; ++dy) {
                    const int64_t gy = clampi(cy + dy, h), py = clampi(cy + dy + sy, h);
                    for (int64_t dx = -pr; dx <= pr; ++dx) {
                        const int64_t gx = clampi(cx + dx, w), px = clampi(cx + dx + sx, w);
                        for (int64_t c = 0; c < channels; ++c) {
                            const double diff = pa[c][py][px] - ga[c][gy][gx];
                            ssd += diff * diff;
                        }
                    }
                }
                const int64_t r2 = sx * sx + sy * sy;
                if (ssd < best || (ssd == best && r2 < best_r2)) {
                    best = ssd;
                    best_sx = sx;
                    best_sy = sy;
                    best_r2 = r2;
                }
            }
        }
        AnchorMatch m;
        m.x = a[0] + static_cast<double>(best_sx);
        m.y = a[1] + static_cast<double>(best_sy);
        m.distance = std::sqrt(static_cast<double>(best_r2));
        m.confidence = std::exp(-best / n / options.tau);
        out.push_back(m);
    }
    return out;
}

void AkdMkr::add(const AnchorMatch& m, bool gt_visible) {
    if (!gt_visible) return;
    ++visible;
    if (m.confidence >= threshold) {
        ++matched;
        distance_sum += m.distance;
    } else {
        ++missing;
    }
}

double AkdMkr::akd() const {
    return matched > 0 ? distance_sum / static_cast<double>(matched) : std::numeric_limits<double>::quiet_NaN();
}

double AkdMkr::mkr() const {
    return visible > 0 ? static_cast<double>(missing) / static_cast<double>(visible)
                       : std::numeric_limits<double>::quiet_NaN();
}

std::vector<AkdMkr> akd_mkr(const std::vector<torch::Tensor>& pred_frames, const std::vector<torch::Tensor>& gt_frames,
                            const std::vector<std::vector<std::array<double, 2>>>& anchors,
                            const std::vector<std::vector<bool>>& visible, const std::vector<double>& thresholds,
                            const AnchorMatchOptions& options) {
    if (pred_frames.size() != gt_frames.size() || anchors.size() != gt_frames.size() ||
        visible.size() != gt_frames.size()) {
        throw std::invalid_argument("akd_mkr: frame, anchor and visibility counts differ");
    }
    std::vector<AkdMkr> acc;
    for (double t : thresholds) acc.push_back(AkdMkr{t});
    for (size_t f = 0; f < pred_frames.size(); ++f) {
        auto matches = match_anchors(pred_frames[f], gt_frames[f], anchors[f], options);
        for (size_t j = 0; j < matches.size(); ++j) {
            for (auto& a : acc) a.add(matches[j], visible[f][j]);
        }
    }
    return acc;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_matrix(const torch::Tensor& t) {
    auto c = t.to(torch::kDouble).contiguous();
    if (c.dim() == 1) c = c.unsqueeze(1);
    Mat m(c.size(0), c.size(1));
    auto a = c.accessor<double, 2>();
    for (int64_t i = 0; i < c.size(0); ++i)
        for (int64_t j = 0; j < c.size(1); ++j) m(i, j) = a[i][j];
    return m;
}

Mat sqrt_psd(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
    Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const torch::Tensor& mu1, const torch::Tensor& cov1, const torch::Tensor& mu2,
                        const torch::Tensor& cov2, double ridge) {
    Vec m1 = to_matrix(mu1.reshape({-1})).col(0);
    Vec m2 = to_matrix(mu2.reshape({-1})).col(0);
    const auto dim = m1.size();
    Mat c1 = to_matrix(cov1.reshape({dim, dim}));
    Mat c2 = to_matrix(cov2.reshape({dim, dim}));
    if (m2.size() != dim) throw ShapeError("frechet_distance: mean dimensions differ");
    c1.diagonal().array() += ridge;
    c2.diagonal().array() += ridge;
    // tr sqrt(C1 C2) = tr sqrt(S C2 S), S = C1^(1/2), which is symmetric PSD
    Mat s = sqrt_psd(c1);
    Eigen::SelfAdjointEigenSolver<Mat> es(s * c2 * s, Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (m1 - m2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
    return std::max(value, 0.0);
}

double feature_distance(const torch::Tensor& features_a, const torch::Tensor& features_b, double ridge) {
    if (features_a.dim() != 2 || features_b.dim() != 2 || features_a.size(1) != features_b.size(1)) {
        throw ShapeError("feature_distance: expected [N, C] sets with one C, got " + shape_string(features_a) +
                         " and " + shape_string(features_b));
    }
    if (features_a.size(0) < 2 || features_b.size(0) < 2) {
        throw std::invalid_argument("feature_distance: each set needs at least 2 samples");
    }
    auto stats = [](const torch::Tensor& f) {
        auto x = f.to(torch::kDouble);
        auto mu = x.mean(0);
        auto centered = x - mu;
        auto cov = centered.t().matmul(centered) / static_cast<double>(x.size(0) - 1);
        return std::pair{mu, cov};
    };
    auto [mu1, cov1] = stats(features_a);
    auto [mu2, cov2] = stats(features_b);
    return frechet_distance(mu1, cov1, mu2, cov2, ridge);
}

}  // namespace iwarp
