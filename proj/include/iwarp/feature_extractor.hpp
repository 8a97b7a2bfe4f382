#pragma once

#include <vector>

#include <torch/torch.h>

namespace iwarp {

struct FeatureExtractorOptions {
    int64_t width = 16;
    int64_t layers = 3;
    uint64_t seed = 1234;
    bool include_pixels = true;  // layer 0 = the image itself
};

/// Frozen convolutional pyramid with fixed-seed random weights. Stands in for
/// a pretrained network in the perceptual loss and the feature distance.
class FeatureExtractorImpl : public torch::nn::Module {
public:
    explicit FeatureExtractorImpl(const FeatureExtractorOptions& options);

    std::vector<torch::Tensor> forward(const torch::Tensor& image);
    /// Globally average-pooled deepest features, [B, C].
    torch::Tensor pooled(const torch::Tensor& image);

    const FeatureExtractorOptions& options() const { return options_; }

private:
    FeatureExtractorOptions options_;
    torch::nn::ModuleList convs_;
};
TORCH_MODULE(FeatureExtractor);

}  // namespace iwarp
