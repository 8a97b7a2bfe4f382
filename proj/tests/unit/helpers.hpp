#pragma once

#include <cmath>
#include <vector>

#include <torch/torch.h>

namespace testing {

inline double max_abs(const torch::Tensor& a, const torch::Tensor& b) {
    return (a.to(torch::kDouble) - b.to(torch::kDouble)).abs().max().item<double>();
}

/// Cell-center coordinate of index i on an n-cell axis.
inline double cell_center(int64_t i, int64_t n) { return -1.0 + (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n); }

/// Row softmax by explicit loops over a [q, k] double tensor.
inline torch::Tensor loop_softmax(const torch::Tensor& logits) {
    auto l = logits.to(torch::kDouble).contiguous();
    auto out = torch::zeros_like(l);
    auto la = l.accessor<double, 2>();
    auto oa = out.accessor<double, 2>();
    for (int64_t i = 0; i < l.size(0); ++i) {
        double mx = -INFINITY;
        for (int64_t j = 0; j < l.size(1); ++j) mx = std::max(mx, la[i][j]);
        double z = 0;
        for (int64_t j = 0; j < l.size(1); ++j) z += std::exp(la[i][j] - mx);
        for (int64_t j = 0; j < l.size(1); ++j) oa[i][j] = std::exp(la[i][j] - mx) / z;
    }
    return out;
}

/// softmax(Q K^T / c) V by triple loops; returns {attention, warped}.
inline std::pair<torch::Tensor, torch::Tensor> loop_attention(const torch::Tensor& q, const torch::Tensor& k,
                                                              const torch::Tensor& v, double c) {
    auto Q = q.to(torch::kDouble).contiguous();
    auto K = k.to(torch::kDouble).contiguous();
    auto V = v.to(torch::kDouble).contiguous();
    const int64_t nq = Q.size(0), nk = K.size(0), d = Q.size(1), dv = V.size(1);
    auto logits = torch::zeros({nq, nk}, torch::kDouble);
    auto qa = Q.accessor<double, 2>();
    auto ka = K.accessor<double, 2>();
    auto va = V.accessor<double, 2>();
    auto la = logits.accessor<double, 2>();
    for (int64_t i = 0; i < nq; ++i)
        for (int64_t j = 0; j < nk; ++j) {
            double s = 0;
            for (int64_t t = 0; t < d; ++t) s += qa[i][t] * ka[j][t];
            la[i][j] = s / c;
        }
    auto attn = loop_softmax(logits);
    auto aa = attn.accessor<double, 2>();
    auto out = torch::zeros({nq, dv}, torch::kDouble);
    auto oa = out.accessor<double, 2>();
    for (int64_t i = 0; i < nq; ++i)
        for (int64_t j = 0; j < nk; ++j)
            for (int64_t t = 0; t < dv; ++t) oa[i][t] += aa[i][j] * va[j][t];
    return {attn, out};
}

}  // namespace testing
