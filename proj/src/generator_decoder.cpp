#include "iwarp/generator_decoder.hpp"

#include <algorithm>

#include "iwarp/common.hpp"

namespace iwarp {

namespace F = torch::nn::functional;

namespace {

torch::nn::InstanceNorm2d make_norm(int64_t channels) {
    return torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(channels).affine(true));
}

}  // namespace

ResBlockImpl::ResBlockImpl(int64_t channels)
    : norm1_(make_norm(channels)),
      norm2_(make_norm(channels)),
      conv1_(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)),
      conv2_(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)) {
    register_module("norm1", norm1_);
    register_module("conv1", conv1_);
    register_module("norm2", norm2_);
    register_module("conv2", conv2_);
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
    auto y = conv1_(torch::relu(norm1_(x)));
    y = conv2_(torch::relu(norm2_(y)));
    return x + y;
}

DecoderImpl::DecoderImpl(const DecoderOptions& options) : options_(options) {
    if (options.upsamples < 2) throw ConfigError("decoder needs at least 2 upsampling blocks");
    const int64_t w = options.base_width;
    conv_in_ = register_module("conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(options.in_channels, w, 3).padding(1)));
    for (int64_t i = 0; i < options.res_blocks; ++i) res_->push_back(ResBlock(w));
    register_module("res", res_);
    int64_t cur = w;
    for (int64_t i = 0; i < options.upsamples; ++i) {
        const int64_t out = std::max<int64_t>(cur / 2, 8);
        up_convs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(cur, out, 3).padding(1)));
        cur = out;
    }
    register_module("up_convs", up_convs_);
    conv_out_ = register_module("conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(cur, 3, 3).padding(1)));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& warped) {
    if (warped.dim() != 4 || warped.size(1) != options_.in_channels) {
        throw ShapeError("decode: expected [B, " + std::to_string(options_.in_channels) + ", h, w] features, got " +
                         shape_string(warped));
    }
    auto x = conv_in_(warped);
    x = res_->forward(x);
    for (size_t i = 0; i < up_convs_->size(); ++i) {
        x = up_convs_[i]->as<torch::nn::Conv2d>()->forward(x);
        // no normalization here: it would strip the absolute colour levels
        x = torch::relu(x);
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
    }
    return torch::sigmoid(conv_out_(x));
}

}  // namespace iwarp
