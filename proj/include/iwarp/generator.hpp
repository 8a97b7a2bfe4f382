#pragma once

#include <vector>

#include <torch/torch.h>

#include "iwarp/config.hpp"
#include "iwarp/generator_decoder.hpp"
#include "iwarp/implicit_attention.hpp"
#include "iwarp/keypoint_codec.hpp"
#include "iwarp/qkv_encoders.hpp"

namespace iwarp {

enum class FuseMode {
    Attention,  // one attention over the concatenation of all sources
    Average,    // warp each source separately, then average the warped features
};

FuseMode parse_fuse_mode(const std::string& name);

struct GenerateOptions {
    FuseMode fuse = FuseMode::Attention;
    int64_t top_k = 0;          // 0: dense attention
    torch::Tensor key_mask;     // optional [B, k] keep-mask over the assembled bundle
};

struct GeneratorOutput {
    torch::Tensor image;
    KeypointSet driving_kp;
    std::vector<KeypointSet> source_kp;
    QueryGrid queries;
    KeyValueSet bundle;
    AttentionResult attention;
    torch::Tensor warped_feature;
};

DetectorOptions detector_options(const ModelConfig& cfg);
EncoderOptions encoder_options(const ModelConfig& cfg);
DecoderOptions decoder_options(const ModelConfig& cfg);

/// Keypoint detector + query/key/value encoders + implicit attention warp
/// (with optional residual refinement) + decoder.
class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const ModelConfig& config);

    GeneratorOutput forward(const std::vector<torch::Tensor>& sources, const torch::Tensor& driving,
                            const GenerateOptions& options = {});

    /// Everything after keypoint detection.
    GeneratorOutput synthesize(const std::vector<torch::Tensor>& sources, const std::vector<KeypointSet>& source_kp,
                               const KeypointSet& driving_kp, const GenerateOptions& options = {});

    /// Attention warp of an assembled bundle into a [B, d', h, w] feature grid.
    torch::Tensor warp(const QueryGrid& queries, const KeyValueSet& bundle, const GenerateOptions& options,
                       AttentionResult* result_out = nullptr);

    const ModelConfig& config() const { return config_; }

    KeypointDetector detector{nullptr};
    QkvEncoder encoder{nullptr};
    ResidualRefine refine{nullptr};
    Decoder decoder{nullptr};

private:
    ModelConfig config_;
};
TORCH_MODULE(Generator);

}  // namespace iwarp
