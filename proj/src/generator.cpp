#include "iwarp/generator.hpp"

#include "iwarp/common.hpp"

namespace iwarp {

FuseMode parse_fuse_mode(const std::string& name) {
    if (name == "attention") return FuseMode::Attention;
    if (name == "average") return FuseMode::Average;
    throw ConfigError("unknown fuse mode '" + name + "' (expected attention or average)");
}

DetectorOptions detector_options(const ModelConfig& cfg) {
    DetectorOptions o;
    o.num_keypoints = cfg.num_keypoints;
    o.image_size = cfg.image_size;
    o.width = cfg.detector_width;
    o.depth = cfg.detector_depth;
    o.temperature = cfg.softargmax_temperature;
    return o;
}

EncoderOptions encoder_options(const ModelConfig& cfg) {
    EncoderOptions o;
    o.num_keypoints = cfg.num_keypoints;
    o.image_size = cfg.image_size;
    o.d = cfg.d;
    o.d_prime = cfg.d_prime;
    o.unet_width = cfg.unet_width;
    o.unet_depth = cfg.unet_depth;
    o.value_width = cfg.value_width;
    o.n_extra = cfg.resolved_n_extra();
    o.kp_variance = cfg.kp_variance;
    return o;
}

DecoderOptions decoder_options(const ModelConfig& cfg) {
    return {cfg.d_prime, cfg.decoder_width, cfg.decoder_res_blocks, cfg.decoder_upsamples};
}

GeneratorImpl::GeneratorImpl(const ModelConfig& config) : config_(config) {
    detector = register_module("detector", KeypointDetector(detector_options(config)));
    encoder = register_module("encoder", QkvEncoder(encoder_options(config)));
    if (config.residual) {
        refine = register_module("refine", ResidualRefine(config.d, config.d_prime, config.resolved_mlp_hidden()));
    }
    decoder = register_module("decoder", Decoder(decoder_options(config)));
}

torch::Tensor GeneratorImpl::warp(const QueryGrid& queries, const KeyValueSet& bundle,
                                  const GenerateOptions& options, AttentionResult* result_out) {
    const double scale = config_.resolved_scale();
    AttentionResult result;
    if (options.top_k > 0) {
        if (options.key_mask.defined()) throw std::invalid_argument("top-k attention does not take a key mask");
        result = topk_attend(queries.entries, bundle.keys, bundle.values, scale,
                             std::min(options.top_k, bundle.size()));
    } else {
        result = attend(queries.entries, bundle.keys, bundle.values, scale, options.key_mask);
    }
    auto feature = refine ? refine->forward(result, bundle, queries)
                          : rows_to_grid(result.warped, queries.grid_h, queries.grid_w);
    if (result_out) *result_out = result;
    return feature;
}

GeneratorOutput GeneratorImpl::synthesize(const std::vector<torch::Tensor>& sources,
                                          const std::vector<KeypointSet>& source_kp, const KeypointSet& driving_kp,
                                          const GenerateOptions& options) {
    GeneratorOutput out;
    out.driving_kp = driving_kp;
    out.source_kp = source_kp;
    if (options.fuse == FuseMode::Attention) {
        auto [queries, bundle] = encoder->assemble(sources, source_kp, driving_kp);
        out.warped_feature = warp(queries, bundle, options, &out.attention);
        out.queries = queries;
        out.bundle = bundle;
    } else {
        if (options.key_mask.defined()) throw std::invalid_argument("average fusion does not take a key mask");
        out.queries = encoder->encode_queries(encoder->render(driving_kp));
        torch::Tensor sum;
        for (size_t s = 0; s < sources.size(); ++s) {
            auto bundle = encoder->with_extra(encoder->encode_source(sources[s], source_kp[s], 0));
            auto feature = warp(out.queries, bundle, options);
            sum = sum.defined() ? sum + feature : feature;
        }
        out.warped_feature = sum / static_cast<double>(sources.size());
    }
    out.image = decoder->forward(out.warped_feature);
    return out;
}

GeneratorOutput GeneratorImpl::forward(const std::vector<torch::Tensor>& sources, const torch::Tensor& driving,
                                       const GenerateOptions& options) {
    if (sources.empty()) throw std::invalid_argument("generator: at least one source image is required");
    const int64_t batch = driving.size(0);
    std::vector<torch::Tensor> all(sources.begin(), sources.end());
    all.push_back(driving);
    for (const auto& img : all) {
        if (img.dim() != 4 || img.size(0) != batch) {
            throw ShapeError("generator: sources and driving must be [B, 3, H, W] with one batch size, got " +
                             shape_string(img));
        }
    }
    // one detector pass over sources and driving
    auto kp = detector->forward(torch::cat(all, 0));
    std::vector<KeypointSet> source_kp;
    for (size_t s = 0; s < sources.size(); ++s) {
        source_kp.push_back(kp.slice(static_cast<int64_t>(s) * batch, static_cast<int64_t>(s + 1) * batch));
    }
    auto driving_kp = kp.slice(static_cast<int64_t>(sources.size()) * batch, static_cast<int64_t>(all.size()) * batch);
    return synthesize(sources, source_kp, driving_kp, options);
}

}  // namespace iwarp
