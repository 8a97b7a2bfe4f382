#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

namespace iwarp {

inline constexpr double kPsnrCap = 99.0;

/// Images in [0, 1]; both metrics work on the 0-255 scale.
double psnr(const torch::Tensor& pred, const torch::Tensor& target, double cap = kPsnrCap);
double l1_error(const torch::Tensor& pred, const torch::Tensor& target);

struct AnchorMatchOptions {
    int64_t patch_radius = 5;   // 11 x 11 template
    int64_t search_radius = 6;  // +-6 px displacement window
    double tau = 0.01;          // confidence = exp(-mse / tau), mse on [0, 1] intensities
};

/// One template match: the patch around the ground-truth anchor in the GT frame
/// is searched for in the predicted frame.
struct AnchorMatch {
    double x = 0, y = 0;  // predicted location, pixels
    double distance = 0;  // to the ground-truth location, pixels
    double confidence = 0;
};

/// Template-matches every anchor of one frame. Images [3, H, W] in [0, 1];
/// anchors in pixel units (pixel i spans [i, i + 1)).
std::vector<AnchorMatch> match_anchors(const torch::Tensor& pred, const torch::Tensor& gt,
                                       const std::vector<std::array<double, 2>>& anchors,
                                       const AnchorMatchOptions& options = {});

/// Running (AKD, MKR) accumulator at one confidence threshold.
struct AkdMkr {
    double threshold = 0;
    double distance_sum = 0;
    int64_t matched = 0;  // GT-visible anchors with confidence >= threshold
    int64_t visible = 0;  // GT-visible anchors
    int64_t missing = 0;  // GT-visible anchors with confidence < threshold

    void add(const AnchorMatch& m, bool gt_visible);
    /// NaN when no anchor matched.
    double akd() const;
    /// NaN when no anchor is visible.
    double mkr() const;
};

/// AKD (pixels) and MKR over a sequence of predicted frames.
std::vector<AkdMkr> akd_mkr(const std::vector<torch::Tensor>& pred_frames, const std::vector<torch::Tensor>& gt_frames,
                            const std::vector<std::vector<std::array<double, 2>>>& anchors,
                            const std::vector<std::vector<bool>>& visible, const std::vector<double>& thresholds,
                            const AnchorMatchOptions& options = {});

/// Frechet distance between Gaussians (mu, cov); `ridge` is added to both diagonals.
double frechet_distance(const torch::Tensor& mu1, const torch::Tensor& cov1, const torch::Tensor& mu2,
                        const torch::Tensor& cov2, double ridge = 1e-6);

/// Frechet distance between Gaussian fits of two feature sets [N, C] (N >= 2).
double feature_distance(const torch::Tensor& features_a, const torch::Tensor& features_b, double ridge = 1e-6);

}  // namespace iwarp
