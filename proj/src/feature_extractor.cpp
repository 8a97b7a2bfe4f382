#include "iwarp/feature_extractor.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

namespace iwarp {

FeatureExtractorImpl::FeatureExtractorImpl(const FeatureExtractorOptions& options) : options_(options) {
    auto gen = at::detail::createCPUGenerator(options.seed);
    int64_t in = 3;
    for (int64_t i = 0; i < options.layers; ++i) {
        const int64_t out = options.width << i;
        auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
        torch::NoGradGuard no_grad;
        const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
        conv->weight.copy_(at::normal(0.0, std, conv->weight.sizes(), gen));
        conv->bias.zero_();
        conv->weight.set_requires_grad(false);
        conv->bias.set_requires_grad(false);
        convs_->push_back(conv);
        in = out;
    }
    register_module("convs", convs_);
}

std::vector<torch::Tensor> FeatureExtractorImpl::forward(const torch::Tensor& image) {
    std::vector<torch::Tensor> features;
    if (options_.include_pixels) features.push_back(image);
    auto x = image;
    for (size_t i = 0; i < convs_->size(); ++i) {
        if (i > 0) x = torch::avg_pool2d(x, 2);
        x = torch::relu(convs_[i]->as<torch::nn::Conv2d>()->forward(x));
        features.push_back(x);
    }
    return features;
}

torch::Tensor FeatureExtractorImpl::pooled(const torch::Tensor& image) {
    auto features = forward(image);
    return features.back().mean({2, 3});
}

}  // namespace iwarp
