#include "iwarp/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "iwarp/common.hpp"

namespace iwarp {

namespace fs = std::filesystem;

torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& target, FeatureExtractor& extractor) {
    if (pred.sizes() != target.sizes()) {
        throw ShapeError("perceptual_loss: shape mismatch " + shape_string(pred) + " vs " + shape_string(target));
    }
    auto fp = extractor->forward(pred);
    std::vector<torch::Tensor> ft;
    {
        torch::NoGradGuard no_grad;
        ft = extractor->forward(target.detach());
    }
    auto loss = torch::zeros({}, pred.options());
    for (size_t l = 0; l < fp.size(); ++l) loss = loss + (fp[l] - ft[l]).abs().mean();
    return loss;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t width, int64_t layers) {
    int64_t in = 3;
    for (int64_t i = 0; i < layers; ++i) {
        const int64_t out = std::min<int64_t>(width << i, 512);
        convs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
        in = out;
    }
    register_module("convs", convs_);
    head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).padding(1)));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& image) {
    auto x = image;
    for (const auto& conv : *convs_) x = torch::leaky_relu(conv->as<torch::nn::Conv2d>()->forward(x), 0.2);
    return head_(x);
}

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(int64_t width, int64_t layers, int64_t scales) {
    for (int64_t s = 0; s < scales; ++s) scales_->push_back(PatchDiscriminator(width, layers));
    register_module("scales", scales_);
}

std::vector<torch::Tensor> MultiScaleDiscriminatorImpl::forward(const torch::Tensor& image) {
    std::vector<torch::Tensor> out;
    auto x = image;
    for (size_t s = 0; s < scales_->size(); ++s) {
        if (s > 0) x = torch::avg_pool2d(x, 2);
        out.push_back(scales_[s]->as<PatchDiscriminator>()->forward(x));
    }
    return out;
}

torch::Tensor hinge_d_loss(const std::vector<torch::Tensor>& real_logits, const std::vector<torch::Tensor>& fake_logits) {
    auto loss = torch::zeros({}, real_logits.front().options());
    for (size_t s = 0; s < real_logits.size(); ++s) {
        loss = loss + torch::relu(1.0 - real_logits[s]).mean() + torch::relu(1.0 + fake_logits[s]).mean();
    }
    return loss / static_cast<double>(real_logits.size());
}

torch::Tensor hinge_g_loss(const std::vector<torch::Tensor>& fake_logits) {
    auto loss = torch::zeros({}, fake_logits.front().options());
    for (const auto& f : fake_logits) loss = loss - f.mean();
    return loss / static_cast<double>(fake_logits.size());
}

GanLosses gan_losses_from_logits(const std::vector<torch::Tensor>& real_logits,
                                 const std::vector<torch::Tensor>& fake_logits) {
    std::vector<torch::Tensor> detached;
    for (const auto& f : fake_logits) detached.push_back(f.detach());
    return {hinge_g_loss(fake_logits), hinge_d_loss(real_logits, detached)};
}

GanLosses gan_losses(MultiScaleDiscriminator& discriminator, const torch::Tensor& real, const torch::Tensor& fake) {
    auto real_logits = discriminator->forward(real);
    auto g = hinge_g_loss(discriminator->forward(fake));
    auto d = hinge_d_loss(real_logits, discriminator->forward(fake.detach()));
    return {g, d};
}

nlohmann::json LossReport::to_json() const {
    return {{"step", step},
            {"lr", lr},
            {"n_sources", n_sources},
            {"k_source_rows", k_source_rows},
            {"k_total", k_total},
            {"dropped_rows", dropped_rows},
            {"perceptual", perceptual},
            {"gan_g", gan_g},
            {"gan_d", gan_d},
            {"equivariance", equivariance},
            {"weighted_perceptual", weighted_perceptual},
            {"weighted_gan", weighted_gan},
            {"weighted_equivariance", weighted_equivariance},
            {"total", total}};
}

void configure_determinism(bool deterministic) {
    if (deterministic) {
        torch::set_num_threads(1);
        at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
    }
}

namespace {

torch::optim::AdamOptions adam_options(const TrainConfig& t) {
    return torch::optim::AdamOptions(t.lr).betas({t.beta1, t.beta2});
}

}  // namespace

Trainer::Trainer(const RunConfig& config) : config_(config) {
    config_.validate();
    configure_determinism(config_.train.deterministic);
    torch::manual_seed(static_cast<uint64_t>(config_.train.seed));
    generator = Generator(config_.model);
    const auto& t = config_.train;
    discriminator = MultiScaleDiscriminator(t.disc_width, t.disc_layers, t.disc_scales);
    extractor = FeatureExtractor(FeatureExtractorOptions{t.perceptual_width, t.perceptual_layers,
                                                         static_cast<uint64_t>(t.perceptual_seed), true});
    gen_opt_ = std::make_unique<torch::optim::Adam>(generator->parameters(), adam_options(t));
    disc_opt_ = std::make_unique<torch::optim::Adam>(discriminator->parameters(), adam_options(t));
}

double Trainer::lr_at(int64_t step) const {
    const auto& t = config_.train;
    return (t.lr_drop_step >= 0 && step >= t.lr_drop_step) ? t.lr * t.lr_drop_factor : t.lr;
}

void Trainer::apply_lr() {
    const double lr = lr_at(step_);
    for (auto* opt : {gen_opt_.get(), disc_opt_.get()}) {
        for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
}

int64_t Trainer::sources_for_step(int64_t step) const {
    const auto& t = config_.train;
    if (t.n_sources_train > 0) return t.n_sources_train;
    std::mt19937_64 rng(derive_seed(static_cast<uint64_t>(t.seed), {static_cast<uint64_t>(step), 1000}));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return u(rng) < t.p_multi_source ? 2 : 1;
}

Batch Trainer::next_batch(const std::vector<const ClipData*>& clips) const {
    const auto& t = config_.train;
    return sample_batch(clips, t.batch_size, sources_for_step(step_), parse_strategy(t.source_strategy),
                        static_cast<uint64_t>(t.seed), step_);
}

struct Trainer::StepLosses {
    torch::Tensor total;
    torch::Tensor image;
};

Trainer::StepLosses Trainer::generator_losses(const Batch& batch, std::mt19937_64& rng, LossReport& report) {
    const auto& t = config_.train;
    const auto& m = config_.model;
    const auto n_sources = static_cast<int64_t>(batch.sources.size());
    const int64_t cells = m.grid() * m.grid();
    const int64_t n_extra = m.resolved_n_extra();

    GenerateOptions options;
    // without an extra bank a fully dropped source would leave no keys
    if (t.p_drop > 0 && n_extra > 0) {
        options.key_mask = semantic_dropout_mask(bundle_layout(n_sources, cells, n_extra), batch.source_masks,
                                                 t.p_drop, rng);
        report.dropped_rows = options.key_mask.logical_not().sum().item<int64_t>();
    }
    auto out = generator->forward(batch.sources, batch.driving, options);
    report.n_sources = n_sources;
    report.k_source_rows = n_sources * cells;
    report.k_total = out.bundle.size();

    auto zero = torch::zeros({}, out.image.options());
    auto perc = t.w_perceptual > 0 ? perceptual_loss(out.image, batch.driving, extractor) : zero;
    auto gan = t.w_gan > 0 ? hinge_g_loss(discriminator->forward(out.image)) : zero;
    torch::Tensor equiv = zero;
    if (t.w_equivariance > 0) {
        std::vector<AffineTransform> transforms;
        for (int64_t i = 0; i < batch.driving.size(0); ++i) transforms.push_back(random_affine(rng));
        equiv = equivariance_loss(generator->detector, batch.driving, transforms);
    }
    report.perceptual = perc.item<double>();
    report.gan_g = gan.item<double>();
    report.equivariance = equiv.item<double>();
    report.weighted_perceptual = t.w_perceptual * report.perceptual;
    report.weighted_gan = t.w_gan * report.gan_g;
    report.weighted_equivariance = t.w_equivariance * report.equivariance;
    auto total = perc * t.w_perceptual + gan * t.w_gan + equiv * t.w_equivariance;
    report.total = total.item<double>();
    return {total, out.image};
}

namespace {

void check_finite(const LossReport& r, int64_t seed) {
    for (double v : {r.perceptual, r.gan_g, r.gan_d, r.equivariance, r.total}) {
        if (!std::isfinite(v)) {
            auto diag = r.to_json();
            diag["seed"] = seed;
            throw NonFiniteLossError("non-finite loss at step " + std::to_string(r.step) + ": " + diag.dump());
        }
    }
}

}  // namespace

LossReport Trainer::compute_generator_gradients(const Batch& batch) {
    LossReport report;
    report.step = step_;
    std::mt19937_64 rng(derive_seed(static_cast<uint64_t>(config_.train.seed), {static_cast<uint64_t>(step_), 7}));
    gen_opt_->zero_grad();
    auto losses = generator_losses(batch, rng, report);
    losses.total.backward();
    return report;
}

LossReport Trainer::train_step(const Batch& batch) {
    generator->train();
    discriminator->train();
    apply_lr();
    LossReport report;
    report.step = step_;
    report.lr = lr_at(step_);
    std::mt19937_64 rng(derive_seed(static_cast<uint64_t>(config_.train.seed), {static_cast<uint64_t>(step_), 7}));

    gen_opt_->zero_grad();
    auto losses = generator_losses(batch, rng, report);
    check_finite(report, config_.train.seed);
    losses.total.backward();
    gen_opt_->step();

    if (config_.train.w_gan > 0) {
        disc_opt_->zero_grad();
        auto d_loss =
            hinge_d_loss(discriminator->forward(batch.driving), discriminator->forward(losses.image.detach()));
        report.gan_d = d_loss.item<double>();
        check_finite(report, config_.train.seed);
        d_loss.backward();
        disc_opt_->step();
    }

    ++step_;
    return report;
}

void Trainer::run(const std::vector<const ClipData*>& clips, const fs::path& checkpoint_dir, const fs::path& log_path,
                  const std::function<void(const LossReport&)>& on_step) {
    std::ofstream log;
    if (!log_path.empty()) {
        if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
        log.open(log_path, std::ios::app);
        if (!log) throw std::runtime_error("cannot open loss log " + log_path.string());
    }
    const auto& t = config_.train;
    while (step_ < t.steps) {
        auto report = train_step(next_batch(clips));
        if (log.is_open() && (report.step % std::max<int64_t>(t.log_every, 1) == 0 || step_ == t.steps)) {
            log << report.to_json().dump() << "\n";
            log.flush();
        }
        if (on_step) on_step(report);
        if (!checkpoint_dir.empty() && t.checkpoint_every > 0 && step_ % t.checkpoint_every == 0 && step_ < t.steps) {
            save(checkpoint_dir);
        }
    }
    if (!checkpoint_dir.empty()) save(checkpoint_dir);
}

namespace {

void export_adam(const torch::optim::Adam& opt, const torch::nn::Module& module, const std::string& prefix,
                 std::map<std::string, torch::Tensor>& arrays, nlohmann::json& steps) {
    const auto& state = const_cast<torch::optim::Adam&>(opt).state();
    for (const auto& item : module.named_parameters(true)) {
        auto it = state.find(item.value().unsafeGetTensorImpl());
        if (it == state.end()) continue;
        const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
        arrays["adam." + prefix + item.key() + ".exp_avg"] = s.exp_avg();
        arrays["adam." + prefix + item.key() + ".exp_avg_sq"] = s.exp_avg_sq();
        steps[prefix + item.key()] = s.step();
    }
}

void import_adam(torch::optim::Adam& opt, torch::nn::Module& module, const std::string& prefix,
                 const Checkpoint& ckpt) {
    const auto& steps = ckpt.manifest.at("adam_steps");
    auto& state = opt.state();
    state.clear();
    for (auto& item : module.named_parameters(true)) {
        const auto key = prefix + item.key();
        if (!steps.contains(key)) continue;
        auto find = [&](const std::string& suffix) {
            auto it = ckpt.arrays.find("adam." + key + suffix);
            if (it == ckpt.arrays.end()) throw CheckpointError("checkpoint: missing parameter 'adam." + key + suffix + "'");
            if (it->second.sizes() != item.value().sizes()) {
                throw CheckpointError("checkpoint: shape mismatch for 'adam." + key + suffix + "'");
            }
            return it->second.clone();
        };
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(steps.at(key).get<int64_t>());
        s->exp_avg(find(".exp_avg"));
        s->exp_avg_sq(find(".exp_avg_sq"));
        state[item.value().unsafeGetTensorImpl()] = std::move(s);
    }
}

}  // namespace

void Trainer::save(const fs::path& dir) const {
    auto arrays = collect_parameters(*generator, "generator.");
    for (auto& [k, v] : collect_parameters(*discriminator, "discriminator.")) arrays.emplace(k, v);
    nlohmann::json steps = nlohmann::json::object();
    export_adam(*gen_opt_, *generator, "generator.", arrays, steps);
    export_adam(*disc_opt_, *discriminator, "discriminator.", arrays, steps);
    nlohmann::json manifest = {{"step", step_},
                               {"config", config_.to_json()},
                               {"config_hash", config_.hash()},
                               {"model_hash", config_.model_hash()},
                               {"adam_steps", steps}};
    save_checkpoint(dir, manifest, arrays);
}

void Trainer::restore(const Checkpoint& ckpt) {
    const auto& m = ckpt.manifest;
    if (!m.contains("step") || !m.contains("adam_steps") || !m.contains("model_hash")) {
        throw CheckpointError("checkpoint: corrupt manifest (missing step, adam_steps or model_hash)");
    }
    if (m.at("model_hash").get<std::string>() != config_.model_hash()) {
        throw CheckpointError("checkpoint: model configuration differs from the trainer's");
    }
    restore_parameters(*generator, "generator.", ckpt);
    restore_parameters(*discriminator, "discriminator.", ckpt);
    import_adam(*gen_opt_, *generator, "generator.", ckpt);
    import_adam(*disc_opt_, *discriminator, "discriminator.", ckpt);
    step_ = m.at("step").get<int64_t>();
}

std::unique_ptr<Trainer> Trainer::load(const fs::path& dir) {
    auto ckpt = load_checkpoint(dir);
    if (!ckpt.manifest.contains("config")) throw CheckpointError("checkpoint: manifest has no config");
    auto config = RunConfig::from_json(ckpt.manifest.at("config"));
    auto trainer = std::make_unique<Trainer>(config);
    trainer->restore(ckpt);
    return trainer;
}

Generator load_generator(const fs::path& dir, RunConfig* config_out) {
    auto ckpt = load_checkpoint(dir);
    if (!ckpt.manifest.contains("config")) throw CheckpointError("checkpoint: manifest has no config");
    auto config = RunConfig::from_json(ckpt.manifest.at("config"));
    Generator g(config.model);
    restore_parameters(*g, "generator.", ckpt);
    g->eval();
    if (config_out) *config_out = config;
    return g;
}

}  // namespace iwarp
