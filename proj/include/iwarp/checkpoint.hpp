#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace iwarp {

inline constexpr int kCheckpointFormatVersion = 1;

/// Directory with manifest.json (format_version, parameter table name -> shape,
/// dtype, byte offset) and params.bin holding every array as little-endian
/// float32, in name order.
struct Checkpoint {
    nlohmann::json manifest;
    std::map<std::string, torch::Tensor> arrays;
};

/// `manifest` carries caller fields (step, config, ...); the parameter table,
/// blob name and format version are filled in here.
void save_checkpoint(const std::filesystem::path& dir, nlohmann::json manifest,
                     const std::map<std::string, torch::Tensor>& arrays);

/// Throws CheckpointError on version mismatch, a corrupt manifest, or a blob too
/// short for a listed parameter (the message names the parameter).
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Named parameters of `module` under `prefix`.
std::map<std::string, torch::Tensor> collect_parameters(const torch::nn::Module& module, const std::string& prefix);

/// Copies arrays into the module's parameters; every parameter must be present
/// with a matching shape.
void restore_parameters(torch::nn::Module& module, const std::string& prefix, const Checkpoint& checkpoint);

}  // namespace iwarp
