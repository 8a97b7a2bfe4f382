#pragma once

#include <array>
#include <random>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "iwarp/unet.hpp"

namespace iwarp {

/// K keypoints per image: locations [B, K, 2] as (x, y) in [-1, 1]^2 and
/// strengths [B, K] in [0, 1].
struct KeypointSet {
    torch::Tensor locations;
    torch::Tensor strengths;

    int64_t batch() const { return locations.size(0); }
    int64_t num_keypoints() const { return locations.size(1); }
    KeypointSet slice(int64_t begin, int64_t end) const;
    KeypointSet detach() const { return {locations.detach(), strengths.detach()}; }
};

KeypointSet concat(const std::vector<KeypointSet>& sets);

/// Normalizes a non-negative heatmap [..., h, w] and returns its expected
/// cell coordinate [..., 2]. An all-zero heatmap is treated as uniform.
torch::Tensor soft_argmax(const torch::Tensor& heatmap);

/// Softmax over the cells of [..., h, w] logits at the given temperature.
torch::Tensor heatmap_from_logits(const torch::Tensor& logits, double temperature);

/// Strength-scaled Gaussian per keypoint: [B, K, h, w].
/// channel j = strengths[j] * exp(-|u - loc_j|^2 / (2 variance)).
torch::Tensor render_keypoint_map(const KeypointSet& kps, int64_t h, int64_t w, double variance);

struct DetectorOptions {
    int64_t num_keypoints = 20;
    int64_t image_size = 64;
    int64_t width = 32;
    int64_t max_width = 256;
    int64_t depth = 3;
    double temperature = 0.1;
};

struct DetectorOutput {
    torch::Tensor heatmap_logits;   // [B, K, h, w]
    torch::Tensor strength_logits;  // [B, K, h, w]
};

/// U-net keypoint detector operating at 1/4 of the image resolution, with a
/// location head (soft-argmax of per-keypoint heatmaps) and a strength head.
class KeypointDetectorImpl : public torch::nn::Module {
public:
    explicit KeypointDetectorImpl(const DetectorOptions& options);

    KeypointSet forward(const torch::Tensor& image);
    DetectorOutput raw(const torch::Tensor& image);

    const DetectorOptions& options() const { return options_; }
    torch::nn::Conv2d& location_head() { return kp_head_; }
    torch::nn::Conv2d& strength_head() { return strength_head_; }

private:
    DetectorOptions options_;
    UNet backbone_{nullptr};
    torch::nn::Conv2d kp_head_{nullptr};
    torch::nn::Conv2d strength_head_{nullptr};
};
TORCH_MODULE(KeypointDetector);

/// Affine map on normalized coordinates: x' = M x + t, stored row-major as
/// {m00, m01, t0, m10, m11, t1}.
struct AffineTransform {
    std::array<double, 6> m{1, 0, 0, 0, 1, 0};

    static AffineTransform identity() { return {}; }
    static AffineTransform translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty}}; }
    bool is_identity() const;
    AffineTransform inverse() const;
    /// Applies the map to points [..., 2].
    torch::Tensor apply(const torch::Tensor& points) const;
};

struct RandomAffineOptions {
    double max_rotation = 0.26;  // radians
    double min_scale = 0.9;
    double max_scale = 1.1;
    double max_translation = 0.1;
    double shear_sigma = 0.03;
};

AffineTransform random_affine(std::mt19937_64& rng, const RandomAffineOptions& options = {});

/// Moves image content located at x to T(x) (samples the input at T^-1(u)).
/// Batch size must match transforms.size().
torch::Tensor warp_image(const torch::Tensor& image, const std::vector<AffineTransform>& transforms);

/// Mean over batch and keypoints of |detect(T(image)) - T(detect(image))|_1.
torch::Tensor equivariance_loss(KeypointDetector& detector, const torch::Tensor& image,
                                const std::vector<AffineTransform>& transforms);

/// Mean Euclidean equivariance error measured in grid cells (no gradient).
double equivariance_error_cells(KeypointDetector& detector, const torch::Tensor& image,
                                const std::vector<AffineTransform>& transforms);

/// {frame, locations: [[x, y], ...], strengths: [...]} for batch element `index`.
nlohmann::json keypoints_to_json(int64_t frame, const KeypointSet& kps, int64_t index = 0);
KeypointSet keypoints_from_json(const nlohmann::json& record);

}  // namespace iwarp
