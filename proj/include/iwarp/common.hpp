#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <torch/torch.h>

namespace iwarp {

/// Input tensor does not match the configured resolution, channel count or grid.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by the training loop when a loss term becomes NaN/inf.
class NonFiniteLossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Cell-center coordinates of an h x w grid in [-1, 1]^2, shape [h, w, 2] with
/// (x, y) ordering: x grows rightward along columns, y downward along rows.
torch::Tensor coordinate_grid(int64_t h, int64_t w, const torch::TensorOptions& options = {});

/// Average-pool by 4 in both spatial dimensions ([B, C, H, W] -> [B, C, H/4, W/4]).
torch::Tensor downsample_quarter(const torch::Tensor& image);

/// Derives an independent 64-bit seed from a base seed and a list of stream indices.
uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> stream);

std::string shape_string(const torch::Tensor& t);

}  // namespace iwarp
