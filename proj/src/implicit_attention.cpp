#include "iwarp/implicit_attention.hpp"

#include <limits>
#include <set>

#include "iwarp/common.hpp"

namespace iwarp {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

/// Outputs (A, A V) with A = rowsoftmax(Q K^T / scale), masked keys at -inf.
class WarpAttentionFunction : public torch::autograd::Function<WarpAttentionFunction> {
public:
    static variable_list forward(AutogradContext* ctx, const torch::Tensor& q, const torch::Tensor& k,
                                 const torch::Tensor& v, const torch::Tensor& mask, double scale) {
        auto logits = torch::bmm(q, k.transpose(1, 2)) / scale;
        if (mask.numel() > 0) {
            logits = logits.masked_fill(mask.logical_not().unsqueeze(1), -std::numeric_limits<double>::infinity());
        }
        auto shifted = logits - std::get<0>(logits.max(-1, /*keepdim=*/true));
        auto e = shifted.exp();
        auto a = e / e.sum(-1, /*keepdim=*/true);
        auto out = torch::bmm(a, v);
        ctx->save_for_backward({q, k, v, a});
        ctx->saved_data["scale"] = scale;
        return {a, out};
    }

    static variable_list backward(AutogradContext* ctx, variable_list grads) {
        auto saved = ctx->get_saved_variables();
        const auto& q = saved[0];
        const auto& k = saved[1];
        const auto& v = saved[2];
        const auto& a = saved[3];
        const double scale = ctx->saved_data["scale"].toDouble();
        const auto& grad_a = grads[0];
        const auto grad_out =
            grads[1].defined() ? grads[1] : torch::zeros({a.size(0), a.size(1), v.size(2)}, a.options());

        auto d_a = torch::bmm(grad_out, v.transpose(1, 2));
        if (grad_a.defined()) d_a = d_a + grad_a;
        // softmax Jacobian-vector product, row by row
        auto d_logits = a * (d_a - (d_a * a).sum(-1, /*keepdim=*/true));
        auto d_q = torch::bmm(d_logits, k) / scale;
        auto d_k = torch::bmm(d_logits.transpose(1, 2), q) / scale;
        auto d_v = torch::bmm(a.transpose(1, 2), grad_out);
        return {d_q, d_k, d_v, torch::Tensor(), torch::Tensor()};
    }
};

struct Batched {
    torch::Tensor q, k, v;
    bool squeezed = false;
};

Batched batch_operands(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v, double scale) {
    if (!(scale > 0)) throw std::invalid_argument("attend: scale must be > 0");
    Batched b;
    if (q.dim() == 2 && k.dim() == 2 && v.dim() == 2) {
        b = {q.unsqueeze(0), k.unsqueeze(0), v.unsqueeze(0), true};
    } else if (q.dim() == 3 && k.dim() == 3 && v.dim() == 3) {
        b = {q, k, v, false};
    } else {
        throw ShapeError("attend: operands must all be 2-D or all 3-D");
    }
    if (b.k.size(1) == 0) throw std::invalid_argument("attend: no keys (k = 0), softmax undefined");
    if (b.q.size(0) != b.k.size(0) || b.k.size(0) != b.v.size(0) || b.q.size(2) != b.k.size(2) ||
        b.k.size(1) != b.v.size(1)) {
        throw ShapeError("attend: inconsistent shapes Q " + shape_string(q) + ", K " + shape_string(k) + ", V " +
                         shape_string(v));
    }
    return b;
}

}  // namespace

AttentionResult attend(const torch::Tensor& queries, const torch::Tensor& keys, const torch::Tensor& values,
                       double scale, const torch::Tensor& key_mask) {
    auto b = batch_operands(queries, keys, values, scale);
    // autograd functions cannot take undefined inputs; an empty mask means "keep all"
    auto mask = torch::empty({0}, torch::kBool);
    if (key_mask.defined()) {
        mask = key_mask.dim() == 1 ? key_mask.unsqueeze(0) : key_mask;
        if (mask.size(0) != b.k.size(0) || mask.size(1) != b.k.size(1)) {
            throw ShapeError("attend: key mask " + shape_string(key_mask) + " does not match keys " +
                             shape_string(keys));
        }
        mask = mask.to(torch::kBool);
        if (!mask.any(1).all().item<bool>()) {
            throw std::invalid_argument("attend: key mask removes every key of a batch element");
        }
    }
    auto outs = WarpAttentionFunction::apply(b.q, b.k, b.v, mask, scale);
    AttentionResult r{outs[1], outs[0], {}, {}};
    if (b.squeezed) {
        r.warped = r.warped.squeeze(0);
        r.attention = r.attention.squeeze(0);
    }
    return r;
}

AttentionResult topk_attend(const torch::Tensor& queries, const torch::Tensor& keys, const torch::Tensor& values,
                            double scale, int64_t top_k) {
    auto b = batch_operands(queries, keys, values, scale);
    const int64_t k = b.k.size(1);
    if (top_k < 1 || top_k > k) {
        throw std::invalid_argument("topk_attend: top_k must be in [1, " + std::to_string(k) + "], got " +
                                    std::to_string(top_k));
    }
    auto logits = torch::bmm(b.q, b.k.transpose(1, 2)) / scale;
    auto [top, index] = logits.topk(top_k, -1, /*largest=*/true, /*sorted=*/true);
    auto weight = torch::softmax(top, -1);  // [B, q, k']
    AttentionResult r{{}, {}, index, weight};
    r.warped = apply_attention(r, b.v);
    if (b.squeezed) {
        r.warped = r.warped.squeeze(0);
        r.topk_index = r.topk_index.squeeze(0);
        r.topk_weight = r.topk_weight.squeeze(0);
    }
    return r;
}

torch::Tensor apply_attention(const AttentionResult& result, const torch::Tensor& rows) {
    if (!result.retained()) {
        throw std::logic_error(
            "attention map was not retained; rerun attend in dense mode (or topk_attend) before residual_refine");
    }
    auto x = rows.dim() == 2 ? rows.unsqueeze(0) : rows;
    if (!result.sparse()) {
        auto a = result.attention.dim() == 2 ? result.attention.unsqueeze(0) : result.attention;
        return torch::bmm(a, x);
    }
    auto index = result.topk_index.dim() == 2 ? result.topk_index.unsqueeze(0) : result.topk_index;
    auto weight = result.topk_weight.dim() == 2 ? result.topk_weight.unsqueeze(0) : result.topk_weight;
    const int64_t batch = index.size(0), nq = index.size(1), top_k = index.size(2), c = x.size(2);
    auto gathered = x.gather(1, index.reshape({batch, nq * top_k, 1}).expand({batch, nq * top_k, c}))
                        .view({batch, nq, top_k, c});
    return (weight.unsqueeze(-1) * gathered).sum(2);
}

torch::Tensor rows_to_grid(const torch::Tensor& rows, int64_t h, int64_t w) {
    if (rows.dim() != 3 || rows.size(1) != h * w) {
        throw ShapeError("rows_to_grid: expected [B, " + std::to_string(h * w) + ", C], got " + shape_string(rows));
    }
    return rows.transpose(1, 2).reshape({rows.size(0), rows.size(2), h, w});
}

ResidualRefineImpl::ResidualRefineImpl(int64_t d, int64_t d_prime, int64_t hidden) {
    fc1_ = register_module("fc1", torch::nn::Linear(3 + 2 * d, hidden));
    fc2_ = register_module("fc2", torch::nn::Linear(hidden, hidden));
    fc3_ = register_module("fc3", torch::nn::Linear(hidden, d_prime));
}

torch::Tensor ResidualRefineImpl::forward(const AttentionResult& result, const KeyValueSet& bundle,
                                          const QueryGrid& queries) {
    auto warped = result.warped.dim() == 2 ? result.warped.unsqueeze(0) : result.warped;
    auto warped_pixels = apply_attention(result, bundle.pixels);
    auto warped_keys = apply_attention(result, bundle.keys);
    auto x = torch::cat({warped_pixels, warped_keys, queries.entries}, -1);
    x = torch::relu(fc1_(x));
    x = torch::relu(fc2_(x));
    return rows_to_grid(warped + fc3_(x), queries.grid_h, queries.grid_w);
}

torch::Tensor row_region_labels(const KeyValueSet& bundle, const std::vector<torch::Tensor>& region_masks) {
    if (region_masks.empty()) throw std::invalid_argument("semantic dropout: no region masks");
    const int64_t batch = region_masks.front().size(0);
    std::vector<torch::Tensor> flat;
    for (const auto& m : region_masks) flat.push_back(m.reshape({batch, -1}).to(torch::kInt64).contiguous());
    auto labels = torch::full({batch, bundle.size()}, int64_t{-1}, torch::kInt64);
    auto acc = labels.accessor<int64_t, 2>();
    for (size_t r = 0; r < bundle.source_id.size(); ++r) {
        const int64_t s = bundle.source_id[r];
        if (s == kExtraSource) continue;
        if (s < 0 || s >= static_cast<int64_t>(flat.size())) {
            throw std::invalid_argument("semantic dropout: missing region mask for source " + std::to_string(s));
        }
        auto src = flat[static_cast<size_t>(s)].accessor<int64_t, 2>();
        for (int64_t b = 0; b < batch; ++b) acc[b][static_cast<int64_t>(r)] = src[b][bundle.cell[r]];
    }
    return labels;
}

torch::Tensor semantic_dropout_mask(const KeyValueSet& bundle, const std::vector<torch::Tensor>& region_masks,
                                    double p_drop, std::mt19937_64& rng) {
    if (p_drop < 0 || p_drop > 1) throw std::invalid_argument("semantic dropout: p_drop must be in [0, 1]");
    auto labels = row_region_labels(bundle, region_masks);
    const int64_t batch = labels.size(0);
    auto keep = torch::ones({batch, bundle.size()}, torch::kBool);
    auto keep_acc = keep.accessor<bool, 2>();
    auto label_acc = labels.accessor<int64_t, 2>();
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (int64_t b = 0; b < batch; ++b) {
        for (size_t s = 0; s < region_masks.size(); ++s) {
            auto m = region_masks[s][b].to(torch::kInt64).contiguous();
            std::set<int64_t> present(m.data_ptr<int64_t>(), m.data_ptr<int64_t>() + m.numel());
            for (int64_t region : present) {
                if (uniform(rng) >= p_drop) continue;
                for (int64_t r = 0; r < bundle.size(); ++r) {
                    if (bundle.source_id[static_cast<size_t>(r)] == static_cast<int64_t>(s) &&
                        label_acc[b][r] == region) {
                        keep_acc[b][r] = false;
                    }
                }
            }
        }
    }
    return keep;
}

KeyValueSet semantic_dropout(const KeyValueSet& bundle, const std::vector<torch::Tensor>& region_masks,
                             double p_drop, std::mt19937_64& rng) {
    if (bundle.keys.size(0) != 1) throw std::invalid_argument("semantic_dropout: row removal needs batch size 1");
    auto keep = semantic_dropout_mask(bundle, region_masks, p_drop, rng);
    std::vector<int64_t> rows;
    auto acc = keep.accessor<bool, 2>();
    for (int64_t r = 0; r < bundle.size(); ++r) {
        if (acc[0][r]) rows.push_back(r);
    }
    return bundle.select_rows(rows);
}

}  // namespace iwarp
