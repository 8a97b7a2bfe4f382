#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "iwarp/checkpoint.hpp"
#include "iwarp/config.hpp"
#include "iwarp/feature_extractor.hpp"
#include "iwarp/generator.hpp"
#include "iwarp/synthetic_data.hpp"

namespace iwarp {

/// Sum over extractor layers of mean |phi_l(pred) - phi_l(target)|.
torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& target, FeatureExtractor& extractor);

/// Strided 4x4 conv stack ending in a one-channel patch logit map.
class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    PatchDiscriminatorImpl(int64_t width, int64_t layers);
    torch::Tensor forward(const torch::Tensor& image);

private:
    torch::nn::ModuleList convs_;
    torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// Patch discriminators applied to the image and its 2x average-pooled copies.
class MultiScaleDiscriminatorImpl : public torch::nn::Module {
public:
    MultiScaleDiscriminatorImpl(int64_t width, int64_t layers, int64_t scales);
    std::vector<torch::Tensor> forward(const torch::Tensor& image);

private:
    torch::nn::ModuleList scales_;
};
TORCH_MODULE(MultiScaleDiscriminator);

/// Hinge losses averaged over scales:
/// d = mean relu(1 - D(real)) + mean relu(1 + D(fake)), g = -mean D(fake).
torch::Tensor hinge_d_loss(const std::vector<torch::Tensor>& real_logits, const std::vector<torch::Tensor>& fake_logits);
torch::Tensor hinge_g_loss(const std::vector<torch::Tensor>& fake_logits);

struct GanLosses {
    torch::Tensor g_loss;
    torch::Tensor d_loss;
};

/// d_loss sees the fake detached; g_loss keeps the graph to the generator.
GanLosses gan_losses(MultiScaleDiscriminator& discriminator, const torch::Tensor& real, const torch::Tensor& fake);
GanLosses gan_losses_from_logits(const std::vector<torch::Tensor>& real_logits,
                                 const std::vector<torch::Tensor>& fake_logits);

struct LossReport {
    int64_t step = 0;
    double lr = 0;
    int64_t n_sources = 0;
    int64_t k_source_rows = 0;
    int64_t k_total = 0;
    int64_t dropped_rows = 0;
    double perceptual = 0;
    double gan_g = 0;
    double gan_d = 0;
    double equivariance = 0;
    double weighted_perceptual = 0;
    double weighted_gan = 0;
    double weighted_equivariance = 0;
    double total = 0;

    nlohmann::json to_json() const;
};

/// Generator, discriminator, frozen perceptual extractor and both optimizers.
class Trainer {
public:
    explicit Trainer(const RunConfig& config);

    /// One generator update followed by one discriminator update.
    LossReport train_step(const Batch& batch);

    /// Batch for the current step (source count and frames derived from seed and step).
    Batch next_batch(const std::vector<const ClipData*>& clips) const;
    int64_t sources_for_step(int64_t step) const;

    /// Runs until config.train.steps, appending JSON lines to `log_path` and
    /// checkpointing to `checkpoint_dir` at the configured cadence and at the end.
    void run(const std::vector<const ClipData*>& clips, const std::filesystem::path& checkpoint_dir,
             const std::filesystem::path& log_path, const std::function<void(const LossReport&)>& on_step = {});

    double lr_at(int64_t step) const;

    void save(const std::filesystem::path& dir) const;
    static std::unique_ptr<Trainer> load(const std::filesystem::path& dir);
    /// Restores the state into this trainer; configs must describe the same model.
    void restore(const Checkpoint& checkpoint);

    const RunConfig& config() const { return config_; }
    RunConfig& mutable_config() { return config_; }
    int64_t step() const { return step_; }

    Generator generator{nullptr};
    MultiScaleDiscriminator discriminator{nullptr};
    FeatureExtractor extractor{nullptr};

    /// Generator loss for a batch, backpropagated but not applied (for audits).
    LossReport compute_generator_gradients(const Batch& batch);

private:
    struct StepLosses;
    StepLosses generator_losses(const Batch& batch, std::mt19937_64& rng, LossReport& report);
    void apply_lr();

    RunConfig config_;
    int64_t step_ = 0;
    std::unique_ptr<torch::optim::Adam> gen_opt_;
    std::unique_ptr<torch::optim::Adam> disc_opt_;
};

/// Loads the generator part of a checkpoint for inference.
Generator load_generator(const std::filesystem::path& dir, RunConfig* config_out = nullptr);

void configure_determinism(bool deterministic);

}  // namespace iwarp
