#pragma once

#include <utility>
#include <vector>

#include <torch/torch.h>

#include "iwarp/keypoint_codec.hpp"
#include "iwarp/unet.hpp"

namespace iwarp {

inline constexpr int64_t kExtraSource = -1;

/// Flattened driving queries [B, q, d] with q = grid_h * grid_w (row-major cells).
struct QueryGrid {
    torch::Tensor entries;
    int64_t grid_h = 0;
    int64_t grid_w = 0;

    int64_t size() const { return grid_h * grid_w; }
};

/// Row-aligned keys [B, k, d], values [B, k, d'] and 1/4-resolution pixels
/// [B, k, 3]. source_id[i] is the source index of row i (kExtraSource for the
/// learned bank) and cell[i] its row-major grid cell (-1 for extra rows).
struct KeyValueSet {
    torch::Tensor keys;
    torch::Tensor values;
    torch::Tensor pixels;
    std::vector<int64_t> source_id;
    std::vector<int64_t> cell;

    int64_t size() const { return static_cast<int64_t>(source_id.size()); }
    int64_t num_extra() const;
    int64_t num_sources() const;
    KeyValueSet select_rows(const std::vector<int64_t>& rows) const;
};

KeyValueSet concat_bundles(const std::vector<KeyValueSet>& parts);

/// Row bookkeeping (source_id / cell) for n_sources grids followed by n_extra
/// bank rows; tensors are left undefined.
KeyValueSet bundle_layout(int64_t n_sources, int64_t cells, int64_t n_extra);

struct EncoderOptions {
    int64_t num_keypoints = 20;
    int64_t image_size = 64;
    int64_t d = 128;
    int64_t d_prime = 256;
    int64_t unet_width = 32;
    int64_t unet_max_width = 256;
    int64_t unet_depth = 3;
    int64_t value_width = 64;
    int64_t n_extra = 26;
    double kp_variance = 0.01;

    int64_t grid() const { return image_size / 4; }
};

/// U-net over the driving keypoint map, 1x1 projection to d, plus learned
/// per-cell position embeddings.
class QueryEncoderImpl : public torch::nn::Module {
public:
    explicit QueryEncoderImpl(const EncoderOptions& options);
    QueryGrid forward(const torch::Tensor& driving_map);
    torch::Tensor& position() { return pos_; }

private:
    EncoderOptions options_;
    UNet unet_{nullptr};
    torch::nn::Conv2d proj_{nullptr};
    torch::Tensor pos_;
};
TORCH_MODULE(QueryEncoder);

/// Same structure as the query encoder but fed the 1/4-resolution source image
/// concatenated with the source keypoint map.
class KeyEncoderImpl : public torch::nn::Module {
public:
    explicit KeyEncoderImpl(const EncoderOptions& options);
    /// Returns keys [B, q, d] with position embeddings added.
    torch::Tensor forward(const torch::Tensor& source_quarter, const torch::Tensor& source_map);
    torch::Tensor& position() { return pos_; }

private:
    EncoderOptions options_;
    UNet unet_{nullptr};
    torch::nn::Conv2d proj_{nullptr};
    torch::Tensor pos_;
};
TORCH_MODULE(KeyEncoder);

/// Full-resolution image -> conv -> two stride-2 convs -> [B, q, d'].
class ValueEncoderImpl : public torch::nn::Module {
public:
    explicit ValueEncoderImpl(const EncoderOptions& options);
    torch::Tensor forward(const torch::Tensor& image);

private:
    EncoderOptions options_;
    torch::nn::Conv2d conv0_{nullptr};
    torch::nn::Conv2d down1_{nullptr};
    torch::nn::Conv2d down2_{nullptr};
};
TORCH_MODULE(ValueEncoder);

/// Input-independent key/value/pixel rows appended to every bundle.
class ExtraBankImpl : public torch::nn::Module {
public:
    ExtraBankImpl(int64_t rows, int64_t d, int64_t d_prime);
    KeyValueSet rows(int64_t batch) const;
    int64_t size() const { return rows_; }

    torch::Tensor keys, position, values, pixels;

private:
    int64_t rows_;
};
TORCH_MODULE(ExtraBank);

/// Initial position code for a grid x grid layout. Rows are d-dim and their
/// dot products fall off as a Gaussian of cell distance; at scale sqrt(d) a
/// row's logit against itself is about self_logit.
torch::Tensor local_position_code(int64_t grid, int64_t d, double self_logit = 8.0, double radius = 1.0);

/// Owns the query/key/value encoders and the extra bank, and assembles
/// multi-source attention inputs.
class QkvEncoderImpl : public torch::nn::Module {
public:
    explicit QkvEncoderImpl(const EncoderOptions& options);

    QueryGrid encode_queries(const torch::Tensor& driving_map);
    torch::Tensor encode_keys(const torch::Tensor& source_quarter, const torch::Tensor& source_map);
    torch::Tensor encode_values(const torch::Tensor& source_image);

    /// Keys/values/pixels of one source without the extra bank.
    KeyValueSet encode_source(const torch::Tensor& image, const KeypointSet& kps, int64_t source_index);
    KeyValueSet encode_sources(const std::vector<torch::Tensor>& images, const std::vector<KeypointSet>& kps);
    KeyValueSet with_extra(const KeyValueSet& bundle);

    /// Queries from the driving keypoints; keys and values from every source,
    /// concatenated along k, followed by the extra bank.
    std::pair<QueryGrid, KeyValueSet> assemble(const std::vector<torch::Tensor>& source_images,
                                               const std::vector<KeypointSet>& source_kps,
                                               const KeypointSet& driving_kps);

    torch::Tensor render(const KeypointSet& kps) const;

    const EncoderOptions& options() const { return options_; }
    QueryEncoder queries{nullptr};
    KeyEncoder keys{nullptr};
    ValueEncoder values{nullptr};
    ExtraBank extra{nullptr};

private:
    EncoderOptions options_;
};
TORCH_MODULE(QkvEncoder);

}  // namespace iwarp
