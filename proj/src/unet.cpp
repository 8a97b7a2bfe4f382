#include "iwarp/unet.hpp"

#include <algorithm>

#include "iwarp/common.hpp"

namespace iwarp {

namespace F = torch::nn::functional;

DownBlockImpl::DownBlockImpl(int64_t in_channels, int64_t out_channels)
    : conv_(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)) {
    register_module("conv", conv_);
}

torch::Tensor DownBlockImpl::forward(const torch::Tensor& x) {
    return torch::max_pool2d(torch::relu(conv_(x)), 2);
}

UpBlockImpl::UpBlockImpl(int64_t in_channels, int64_t out_channels)
    : conv_(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)) {
    register_module("conv", conv_);
}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x) {
    auto y = torch::relu(conv_(x));
    return F::interpolate(y, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

UNetImpl::UNetImpl(const UNetOptions& options) : options_(options) {
    if (options.depth < 1) throw ConfigError("unet depth must be >= 1");
    std::vector<int64_t> widths;
    int64_t in = options.in_channels;
    std::vector<int64_t> skip_channels{in};
    for (int64_t i = 0; i < options.depth; ++i) {
        int64_t out = std::min(options.base_width << i, options.max_width);
        down_->push_back(DownBlock(in, out));
        widths.push_back(out);
        in = out;
        skip_channels.push_back(out);
    }
    // decoder: up block i maps back to the resolution of skip i and concatenates it
    int64_t cur = in;
    for (int64_t i = options.depth - 1; i >= 0; --i) {
        int64_t out = std::min(options.base_width << std::max<int64_t>(i - 1, 0), options.max_width);
        if (i == 0) out = options.base_width;
        up_->push_back(UpBlock(cur, out));
        cur = out + skip_channels[static_cast<size_t>(i)];
    }
    out_channels_ = cur;
    register_module("down", down_);
    register_module("up", up_);
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
    const int64_t scale = int64_t{1} << options_.depth;
    if (x.dim() != 4 || x.size(1) != options_.in_channels || x.size(2) % scale != 0 ||
        x.size(3) % scale != 0) {
        throw ShapeError("unet: expected [B, " + std::to_string(options_.in_channels) +
                         ", H, W] with H, W divisible by " + std::to_string(scale) + ", got " +
                         shape_string(x));
    }
    std::vector<torch::Tensor> skips{x};
    auto y = x;
    for (const auto& block : *down_) {
        y = block->as<DownBlock>()->forward(y);
        skips.push_back(y);
    }
    skips.pop_back();
    for (const auto& block : *up_) {
        y = block->as<UpBlock>()->forward(y);
        y = torch::cat({y, skips.back()}, 1);
        skips.pop_back();
    }
    return y;
}

}  // namespace iwarp
