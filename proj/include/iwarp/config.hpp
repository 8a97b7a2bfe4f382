#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace iwarp {

struct ModelConfig {
    int64_t image_size = 64;
    int64_t num_keypoints = 20;
    double kp_variance = 0.01;
    double softargmax_temperature = 0.1;
    int64_t detector_width = 32;
    int64_t detector_depth = 3;
    int64_t unet_width = 32;
    int64_t unet_depth = 3;
    int64_t d = 128;
    int64_t d_prime = 256;
    int64_t n_extra = -1;  // -1: 10% of the per-source grid size
    int64_t value_width = 64;
    int64_t decoder_width = 64;
    int64_t decoder_res_blocks = 8;
    int64_t decoder_upsamples = 2;
    int64_t mlp_hidden = -1;  // -1: d_prime
    bool residual = true;
    double attention_scale = -1;  // -1: sqrt(d)

    int64_t grid() const { return image_size / 4; }
    int64_t resolved_n_extra() const;
    int64_t resolved_mlp_hidden() const { return mlp_hidden > 0 ? mlp_hidden : d_prime; }
    double resolved_scale() const;
};

struct TrainConfig {
    int64_t batch_size = 8;
    double lr = 0.0002;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int64_t steps = 1000;
    int64_t lr_drop_step = -1;  // -1: never
    double lr_drop_factor = 0.1;
    double w_perceptual = 10.0;
    double w_gan = 1.0;
    double w_equivariance = 10.0;
    int64_t n_sources_train = 0;  // 0: one source w.p. 1 - p_multi_source, else two
    double p_multi_source = 0.5;
    double p_drop = 0.1;
    std::string source_strategy = "random";
    int64_t seed = 0;
    int64_t checkpoint_every = 0;  // 0: only at the end
    int64_t log_every = 1;
    int64_t disc_width = 32;
    int64_t disc_scales = 2;
    int64_t disc_layers = 3;
    int64_t perceptual_width = 16;
    int64_t perceptual_layers = 3;
    int64_t perceptual_seed = 1234;
    bool deterministic = true;
};

struct DataConfig {
    std::string root = "data";
    int64_t n_clips = 232;
    double eval_fraction = 32.0 / 232.0;
    int64_t min_frames = 60;
    int64_t max_frames = 180;
    int64_t seed = 0;
};

struct EvalConfig {
    int64_t n_sources = 1;
    std::string strategy = "first-frame";
    std::string fuse = "attention";
    std::string split = "eval";  // eval | disocclusion
    int64_t max_frames = 180;
    int64_t frame_stride = 1;
    int64_t max_clips = 0;  // 0: all
    int64_t top_k = 0;      // 0: dense
};

/// Flat dotted-key configuration ("model.d = 128"). Every field has a default;
/// unknown keys are rejected.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    std::map<std::string, std::string> flatten() const;
    nlohmann::json to_json() const;
    /// Stable hash of the flattened config (hex).
    std::string hash() const;
    /// Hash over model.* keys only; identifies the parameter layout.
    std::string model_hash() const;
    void validate() const;

    static RunConfig from_text(const std::string& text);
    static RunConfig from_file(const std::filesystem::path& path);
    static RunConfig from_json(const nlohmann::json& flat);
    std::string to_text() const;
};

/// Named presets: "default" (desk scale) and "tiny" (CPU-friendly widths).
RunConfig preset_config(const std::string& name);

}  // namespace iwarp
