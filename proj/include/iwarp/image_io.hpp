#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace iwarp {

/// Reads an 8-bit RGB PNG as a float tensor [3, H, W] in [0, 1].
torch::Tensor read_rgb_png(const std::filesystem::path& path);
/// Writes [3, H, W] float (clamped to [0, 1], rounded) or uint8 as 8-bit RGB PNG.
void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& image);

/// 8-bit single-channel label image [H, W] (uint8).
torch::Tensor read_label_png(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const torch::Tensor& labels);

/// Quantizes [0, 1] floats to the 8-bit grid (round(255 x) / 255).
torch::Tensor quantize_8bit(const torch::Tensor& image);

/// Writes via a temporary sibling file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace iwarp
