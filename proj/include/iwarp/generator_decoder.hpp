#pragma once

#include <torch/torch.h>

namespace iwarp {

struct DecoderOptions {
    int64_t in_channels = 256;  // d'
    int64_t base_width = 64;
    int64_t res_blocks = 8;
    int64_t upsamples = 2;
};

/// Pre-activation residual block: (IN, ReLU, conv3x3) x 2 plus identity.
class ResBlockImpl : public torch::nn::Module {
public:
    explicit ResBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::InstanceNorm2d norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Warped feature grid [B, d', h, w] -> image [B, 3, 4h, 4w] in [0, 1].
class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const DecoderOptions& options);
    torch::Tensor forward(const torch::Tensor& warped);
    const DecoderOptions& options() const { return options_; }

private:
    DecoderOptions options_;
    torch::nn::Conv2d conv_in_{nullptr};
    torch::nn::Sequential res_;
    torch::nn::ModuleList up_convs_;
    torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(Decoder);

}  // namespace iwarp
