#pragma once

#include <vector>

#include <torch/torch.h>

namespace iwarp {

/// One 3x3 convolution, ReLU, then 2x2 max pooling.
class DownBlockImpl : public torch::nn::Module {
public:
    DownBlockImpl(int64_t in_channels, int64_t out_channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(DownBlock);

/// One 3x3 convolution, ReLU, then 2x bilinear upsampling.
class UpBlockImpl : public torch::nn::Module {
public:
    UpBlockImpl(int64_t in_channels, int64_t out_channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(UpBlock);

struct UNetOptions {
    int64_t in_channels = 3;
    int64_t base_width = 32;
    int64_t max_width = 256;
    int64_t depth = 3;
};

/// Hourglass encoder/decoder with skip connections. The output keeps the input
/// resolution and has out_channels() = width of the last up block + in_channels.
class UNetImpl : public torch::nn::Module {
public:
    explicit UNetImpl(const UNetOptions& options);
    torch::Tensor forward(const torch::Tensor& x);
    int64_t out_channels() const { return out_channels_; }
    const UNetOptions& options() const { return options_; }

private:
    UNetOptions options_;
    torch::nn::ModuleList down_;
    torch::nn::ModuleList up_;
    int64_t out_channels_ = 0;
};
TORCH_MODULE(UNet);

}  // namespace iwarp
