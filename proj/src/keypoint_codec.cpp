#include "iwarp/keypoint_codec.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "iwarp/common.hpp"

namespace iwarp {

namespace F = torch::nn::functional;

KeypointSet KeypointSet::slice(int64_t begin, int64_t end) const {
    return {locations.slice(0, begin, end), strengths.slice(0, begin, end)};
}

KeypointSet concat(const std::vector<KeypointSet>& sets) {
    std::vector<torch::Tensor> locs;
    std::vector<torch::Tensor> strengths;
    for (const auto& s : sets) {
        locs.push_back(s.locations);
        strengths.push_back(s.strengths);
    }
    return {torch::cat(locs, 0), torch::cat(strengths, 0)};
}

torch::Tensor soft_argmax(const torch::Tensor& heatmap) {
    TORCH_CHECK(heatmap.dim() >= 2, "soft_argmax expects [..., h, w]");
    const int64_t h = heatmap.size(-2);
    const int64_t w = heatmap.size(-1);
    auto total = heatmap.sum({-2, -1}, /*keepdim=*/true);
    auto uniform = torch::full_like(heatmap, 1.0 / static_cast<double>(h * w));
    auto prob = torch::where(total > 0, heatmap / torch::where(total > 0, total, torch::ones_like(total)),
                             uniform);
    auto grid = coordinate_grid(h, w, heatmap.options());  // [h, w, 2]
    return (prob.unsqueeze(-1) * grid).sum({-3, -2});
}

torch::Tensor heatmap_from_logits(const torch::Tensor& logits, double temperature) {
    auto flat = logits.flatten(-2) / temperature;
    return torch::softmax(flat, -1).view(logits.sizes());
}

torch::Tensor render_keypoint_map(const KeypointSet& kps, int64_t h, int64_t w, double variance) {
    if (!(variance > 0)) throw ConfigError("render_keypoint_map: variance must be > 0");
    auto grid = coordinate_grid(h, w, kps.locations.options());           // [h, w, 2]
    auto diff = grid.view({1, 1, h, w, 2}) - kps.locations.unsqueeze(2).unsqueeze(2);
    auto gauss = torch::exp(-diff.pow(2).sum(-1) / (2.0 * variance));     // [B, K, h, w]
    return kps.strengths.unsqueeze(-1).unsqueeze(-1) * gauss;
}

KeypointDetectorImpl::KeypointDetectorImpl(const DetectorOptions& options) : options_(options) {
    if (options.image_size % 4 != 0) throw ConfigError("detector: image size must be divisible by 4");
    backbone_ = register_module(
        "backbone", UNet(UNetOptions{3, options.width, options.max_width, options.depth}));
    const int64_t feat = backbone_->out_channels();
    kp_head_ = register_module(
        "kp_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(feat, options.num_keypoints, 3).padding(1)));
    strength_head_ = register_module(
        "strength_head",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(feat, options.num_keypoints, 3).padding(1)));
}

DetectorOutput KeypointDetectorImpl::raw(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != options_.image_size ||
        image.size(3) != options_.image_size) {
        throw ShapeError("detect_keypoints: expected [B, 3, " + std::to_string(options_.image_size) + ", " +
                         std::to_string(options_.image_size) + "], got " + shape_string(image));
    }
    auto feat = backbone_(downsample_quarter(image));
    return {kp_head_(feat), strength_head_(feat)};
}

KeypointSet KeypointDetectorImpl::forward(const torch::Tensor& image) {
    auto out = raw(image);
    auto prob = heatmap_from_logits(out.heatmap_logits, options_.temperature);
    auto locations = soft_argmax(prob);
    // strength logit pooled under the keypoint's own heatmap
    auto strengths = torch::sigmoid((prob * out.strength_logits).sum({2, 3}));
    return {locations, strengths};
}

bool AffineTransform::is_identity() const {
    return m == std::array<double, 6>{1, 0, 0, 0, 1, 0};
}

AffineTransform AffineTransform::inverse() const {
    const double det = m[0] * m[4] - m[1] * m[3];
    if (std::abs(det) < 1e-12) throw std::invalid_argument("affine transform is not invertible");
    const double a = m[4] / det, b = -m[1] / det, c = -m[3] / det, d = m[0] / det;
    return {{a, b, -(a * m[2] + b * m[5]), c, d, -(c * m[2] + d * m[5])}};
}

torch::Tensor AffineTransform::apply(const torch::Tensor& points) const {
    if (is_identity()) return points;
    auto x = points.select(-1, 0);
    auto y = points.select(-1, 1);
    return torch::stack({x * m[0] + y * m[1] + m[2], x * m[3] + y * m[4] + m[5]}, -1);
}

AffineTransform random_affine(std::mt19937_64& rng, const RandomAffineOptions& o) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double theta = o.max_rotation * unit(rng);
    const double scale = o.min_scale + (o.max_scale - o.min_scale) * 0.5 * (unit(rng) + 1.0);
    const double shear = o.shear_sigma * normal(rng);
    const double tx = o.max_translation * unit(rng);
    const double ty = o.max_translation * unit(rng);
    const double c = std::cos(theta) * scale, s = std::sin(theta) * scale;
    // rotation-scale composed with a horizontal shear
    return {{c, c * shear - s, tx, s, s * shear + c, ty}};
}

torch::Tensor warp_image(const torch::Tensor& image, const std::vector<AffineTransform>& transforms) {
    TORCH_CHECK(image.dim() == 4, "warp_image expects [B, C, H, W]");
    if (static_cast<int64_t>(transforms.size()) != image.size(0)) {
        throw std::invalid_argument("warp_image: one transform per batch element required");
    }
    bool all_identity = true;
    for (const auto& t : transforms) all_identity = all_identity && t.is_identity();
    if (all_identity) return image;

    std::vector<torch::Tensor> thetas;
    for (const auto& t : transforms) {
        const auto inv = t.inverse();
        thetas.push_back(torch::tensor({inv.m[0], inv.m[1], inv.m[2], inv.m[3], inv.m[4], inv.m[5]},
                                       torch::kFloat64)
                             .view({2, 3}));
    }
    auto theta = torch::stack(thetas).to(image.dtype());
    auto grid = F::affine_grid(theta, image.sizes().vec(), /*align_corners=*/false);
    return F::grid_sample(image, grid,
                          F::GridSampleFuncOptions()
                              .mode(torch::kBilinear)
                              .padding_mode(torch::kBorder)
                              .align_corners(false));
}

namespace {

torch::Tensor transform_locations(const torch::Tensor& locations,
                                  const std::vector<AffineTransform>& transforms) {
    std::vector<torch::Tensor> rows;
    for (size_t i = 0; i < transforms.size(); ++i) {
        rows.push_back(transforms[i].apply(locations[static_cast<int64_t>(i)]));
    }
    return torch::stack(rows);
}

}  // namespace

torch::Tensor equivariance_loss(KeypointDetector& detector, const torch::Tensor& image,
                                const std::vector<AffineTransform>& transforms) {
    auto kp = detector->forward(image).locations;
    auto kp_warped = detector->forward(warp_image(image, transforms)).locations;
    auto expected = transform_locations(kp, transforms);
    return (kp_warped - expected).abs().sum(-1).mean();
}

double equivariance_error_cells(KeypointDetector& detector, const torch::Tensor& image,
                                const std::vector<AffineTransform>& transforms) {
    torch::NoGradGuard no_grad;
    auto kp = detector->forward(image).locations;
    auto kp_warped = detector->forward(warp_image(image, transforms)).locations;
    auto expected = transform_locations(kp, transforms);
    const double cell = 2.0 / static_cast<double>(detector->options().image_size / 4);
    return (kp_warped - expected).pow(2).sum(-1).sqrt().mean().item<double>() / cell;
}

nlohmann::json keypoints_to_json(int64_t frame, const KeypointSet& kps, int64_t index) {
    auto loc = kps.locations[index].detach().to(torch::kFloat64).contiguous();
    auto str = kps.strengths[index].detach().to(torch::kFloat64).contiguous();
    nlohmann::json locations = nlohmann::json::array();
    nlohmann::json strengths = nlohmann::json::array();
    for (int64_t j = 0; j < loc.size(0); ++j) {
        locations.push_back({loc[j][0].item<double>(), loc[j][1].item<double>()});
        strengths.push_back(str[j].item<double>());
    }
    return {{"frame", frame}, {"locations", locations}, {"strengths", strengths}};
}

KeypointSet keypoints_from_json(const nlohmann::json& record) {
    const auto& locs = record.at("locations");
    const auto& strengths = record.at("strengths");
    if (locs.size() != strengths.size()) throw DataError("keypoint record: locations/strengths size mismatch");
    const auto k = static_cast<int64_t>(locs.size());
    auto loc = torch::empty({1, k, 2}, torch::kFloat32);
    auto str = torch::empty({1, k}, torch::kFloat32);
    for (int64_t j = 0; j < k; ++j) {
        loc[0][j][0] = locs[static_cast<size_t>(j)].at(0).get<double>();
        loc[0][j][1] = locs[static_cast<size_t>(j)].at(1).get<double>();
        str[0][j] = strengths[static_cast<size_t>(j)].get<double>();
    }
    return {loc, str};
}

}  // namespace iwarp
