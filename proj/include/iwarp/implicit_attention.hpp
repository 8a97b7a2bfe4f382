#pragma once

#include <random>
#include <vector>

#include <torch/torch.h>

#include "iwarp/qkv_encoders.hpp"

namespace iwarp {

/// warped: [B, q, d']. attention: [B, q, k] row-stochastic (dense mode only).
/// In sparse mode topk_index / topk_weight [B, q, k'] replace the dense map.
struct AttentionResult {
    torch::Tensor warped;
    torch::Tensor attention;
    torch::Tensor topk_index;
    torch::Tensor topk_weight;

    bool sparse() const { return !attention.defined(); }
    bool retained() const { return attention.defined() || (topk_index.defined() && topk_weight.defined()); }
};

/// Applies the (dense or top-k) attention of `result` to row-aligned data
/// [B, k, C], giving [B, q, C]. Throws if no attention was retained.
torch::Tensor apply_attention(const AttentionResult& result, const torch::Tensor& rows);

/// softmax(Q K^T / scale) V with an optional boolean key mask [B, k] (false
/// rows are excluded as if removed). Accepts [q, d] or [B, q, d] operands.
/// Gradients come from a hand-written backward pass.
AttentionResult attend(const torch::Tensor& queries, const torch::Tensor& keys, const torch::Tensor& values,
                       double scale, const torch::Tensor& key_mask = {});

/// Per query row keeps the top_k largest logits, softmaxes over them and sums
/// only the matching value rows. Inference only.
AttentionResult topk_attend(const torch::Tensor& queries, const torch::Tensor& keys, const torch::Tensor& values,
                            double scale, int64_t top_k);

/// [B, q, C] rows -> [B, C, h, w] feature grid.
torch::Tensor rows_to_grid(const torch::Tensor& rows, int64_t h, int64_t w);

/// MLP over concat(A * pixels, A * keys, Q) added to the attention output.
class ResidualRefineImpl : public torch::nn::Module {
public:
    ResidualRefineImpl(int64_t d, int64_t d_prime, int64_t hidden);

    /// Returns the warped feature grid [B, d', h, w].
    torch::Tensor forward(const AttentionResult& result, const KeyValueSet& bundle, const QueryGrid& queries);

    torch::nn::Linear& output_layer() { return fc3_; }

private:
    torch::nn::Linear fc1_{nullptr}, fc2_{nullptr}, fc3_{nullptr};
};
TORCH_MODULE(ResidualRefine);

/// Region label per bundle row ([B, k] int64, -1 for extra rows) looked up from
/// per-source label grids [B, h, w].
torch::Tensor row_region_labels(const KeyValueSet& bundle, const std::vector<torch::Tensor>& region_masks);

/// Keep-mask [B, k] for semantic dropout. For every batch element, source (in
/// order) and region label present in that source's mask (ascending), one
/// uniform draw u in [0, 1) is taken; u < p_drop removes all of that region's
/// rows. Extra-bank rows are always kept.
torch::Tensor semantic_dropout_mask(const KeyValueSet& bundle, const std::vector<torch::Tensor>& region_masks,
                                    double p_drop, std::mt19937_64& rng);

/// Row-removing form of semantic dropout for a single-sample bundle (B = 1).
KeyValueSet semantic_dropout(const KeyValueSet& bundle, const std::vector<torch::Tensor>& region_masks,
                             double p_drop, std::mt19937_64& rng);

}  // namespace iwarp
