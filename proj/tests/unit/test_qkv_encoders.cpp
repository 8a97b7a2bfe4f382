#include "doctest_torch.hpp"

#include "helpers.hpp"
#include "iwarp/common.hpp"
#include "iwarp/implicit_attention.hpp"
#include "iwarp/qkv_encoders.hpp"

using namespace iwarp;
using testing::max_abs;
namespace F = torch::nn::functional;

namespace {

EncoderOptions small_options(int64_t image_size = 64) {
    EncoderOptions o;
    o.num_keypoints = 4;
    o.image_size = image_size;
    o.d = 6;
    o.d_prime = 5;
    o.unet_width = 4;
    o.unet_depth = 2;
    o.value_width = 3;
    o.n_extra = 7;
    return o;
}

torch::Tensor param(const torch::nn::Module& m, const std::string& name) {
    for (const auto& p : m.named_parameters(true)) {
        if (p.key() == name) return p.value();
    }
    throw std::runtime_error("no parameter " + name);
}

torch::Tensor conv(const torch::nn::Module& m, const std::string& prefix, const torch::Tensor& x, int64_t stride = 1,
                   int64_t pad = 1) {
    return F::conv2d(x, param(m, prefix + ".weight"),
                     F::Conv2dFuncOptions().bias(param(m, prefix + ".bias")).stride(stride).padding(pad));
}

// Reference U-net forward written directly against the parameter table.
torch::Tensor unet_oracle(const torch::nn::Module& m, const std::string& prefix, const torch::Tensor& x,
                          int64_t depth) {
    std::vector<torch::Tensor> skips{x};
    auto y = x;
    for (int64_t i = 0; i < depth; ++i) {
        y = torch::max_pool2d(torch::relu(conv(m, prefix + ".down." + std::to_string(i) + ".conv", y)), 2);
        skips.push_back(y);
    }
    for (int64_t i = 0; i < depth; ++i) {
        y = torch::relu(conv(m, prefix + ".up." + std::to_string(i) + ".conv", y));
        y = F::interpolate(y, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{y.size(2) * 2, y.size(3) * 2})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
        y = torch::cat({y, skips[static_cast<size_t>(depth - 1 - i)]}, 1);
    }
    return y;
}

// [B, C, h, w] -> rows [B, h*w, C] by explicit cell loops (row-major cells).
torch::Tensor loop_rows(const torch::Tensor& grid) {
    const int64_t b = grid.size(0), c = grid.size(1), h = grid.size(2), w = grid.size(3);
    auto out = torch::empty({b, h * w, c}, grid.options());
    for (int64_t r = 0; r < h; ++r)
        for (int64_t col = 0; col < w; ++col) out.select(1, r * w + col).copy_(grid.select(3, col).select(2, r));
    return out;
}

KeypointSet random_kp(int64_t b, int64_t k, torch::Dtype dtype = torch::kDouble) {
    return {torch::rand({b, k, 2}, dtype) * 1.6 - 0.8, torch::rand({b, k}, dtype)};
}

}  // namespace

TEST_SUITE("qkv_encoders") {

TEST_CASE("query rows equal the flattened quarter grid") {
    QkvEncoder enc(small_options(64));
    auto q = enc->encode_queries(enc->render(random_kp(2, 4, torch::kFloat)));
    CHECK(q.entries.sizes() == torch::IntArrayRef({2, 256, 6}));
    CHECK(q.size() == 256);
    CHECK(q.grid_h == 16);
}

TEST_CASE("full-size inputs: 256x256 gives 4096 rows, k = 4496 and 8592") {
    auto o = small_options(256);
    o.n_extra = 400;
    o.d = 2;
    o.d_prime = 2;
    o.unet_width = 2;
    o.value_width = 1;
    QkvEncoder enc(o);
    torch::NoGradGuard ng;
    auto img = torch::rand({1, 3, 256, 256});
    auto kp = random_kp(1, 4, torch::kFloat);
    auto [q1, b1] = enc->assemble({img}, {kp}, kp);
    CHECK(q1.size() == 4096);
    CHECK(enc->encode_values(img).size(1) == 4096);
    CHECK(b1.size() == 4496);
    auto [q2, b2] = enc->assemble({img, img}, {kp, kp}, kp);
    CHECK(b2.size() == 8592);
    CHECK(b2.keys.size(1) == 8592);
}

TEST_CASE("queries from a zero map with zero embeddings match the reference forward") {
    torch::manual_seed(41);
    auto o = small_options();
    QueryEncoder qe(o);
    qe->to(torch::kDouble);
    torch::NoGradGuard ng;
    qe->position().zero_();
    auto map = torch::zeros({1, 4, 16, 16}, torch::kDouble);
    auto out = qe->forward(map).entries;
    auto ref = loop_rows(conv(*qe, "proj", unet_oracle(*qe, "unet", map, o.unet_depth), 1, 0));
    CHECK(max_abs(out, ref) < 1e-12);
    // bias propagation alone: every cell away from the borders sees the same input
    CHECK(out.abs().max().item<double>() > 0);
}

TEST_CASE("keys match the reference forward and carry position embeddings") {
    torch::manual_seed(42);
    auto o = small_options();
    KeyEncoder ke(o);
    ke->to(torch::kDouble);
    torch::NoGradGuard ng;
    auto quarter = torch::rand({2, 3, 16, 16}, torch::kDouble);
    auto map = torch::rand({2, 4, 16, 16}, torch::kDouble);
    auto out = ke->forward(quarter, map);
    auto x = torch::cat({quarter, map}, 1);
    auto ref = loop_rows(conv(*ke, "proj", unet_oracle(*ke, "unet", x, o.unet_depth), 1, 0)) + ke->position();
    CHECK(max_abs(out, ref) < 1e-12);
}

TEST_CASE("values: zero image with zero biases gives zero rows, random image matches reference") {
    torch::manual_seed(43);
    auto o = small_options();
    ValueEncoder ve(o);
    ve->to(torch::kDouble);
    torch::NoGradGuard ng;
    auto img = torch::rand({2, 3, 64, 64}, torch::kDouble);
    auto out = ve->forward(img);
    CHECK(out.sizes() == torch::IntArrayRef({2, 256, 5}));
    auto y = torch::relu(conv(*ve, "conv0", img));
    y = torch::relu(conv(*ve, "down1", y, 2));
    auto ref = loop_rows(conv(*ve, "down2", y, 2));
    CHECK(max_abs(out, ref) < 1e-12);

    for (auto& p : ve->named_parameters()) {
        if (p.key().find("bias") != std::string::npos) p.value().zero_();
    }
    CHECK(ve->forward(torch::zeros({1, 3, 64, 64}, torch::kDouble)).abs().max().item<double>() == 0.0);
}

TEST_CASE("encoders reject inputs at the wrong resolution") {
    QkvEncoder enc(small_options());
    CHECK_THROWS_AS(enc->encode_queries(torch::zeros({1, 4, 8, 8})), ShapeError);
    CHECK_THROWS_AS(enc->encode_keys(torch::zeros({1, 3, 16, 16}), torch::zeros({1, 4, 8, 8})), ShapeError);
    CHECK_THROWS_AS(enc->encode_values(torch::zeros({1, 3, 32, 32})), ShapeError);
    CHECK_THROWS_AS(enc->encode_sources({torch::zeros({1, 3, 64, 64}), torch::zeros({1, 3, 32, 32})},
                                        {random_kp(1, 4, torch::kFloat), random_kp(1, 4, torch::kFloat)}),
                    ShapeError);
}

TEST_CASE("assemble rejects an empty source list") {
    QkvEncoder enc(small_options());
    CHECK_THROWS(enc->assemble({}, {}, random_kp(1, 4, torch::kFloat)));
}

TEST_CASE("rows stay aligned: pixels, keys and values come from the same cell of the same source") {
    torch::manual_seed(44);
    QkvEncoder enc(small_options());
    enc->to(torch::kDouble);
    torch::NoGradGuard ng;
    auto a = torch::rand({1, 3, 64, 64}, torch::kDouble);
    auto b = torch::rand({1, 3, 64, 64}, torch::kDouble);
    auto ka = random_kp(1, 4), kb = random_kp(1, 4);
    auto [q, bundle] = enc->assemble({a, b}, {ka, kb}, ka);
    REQUIRE(bundle.size() == 2 * 256 + 7);
    auto single_b = enc->encode_source(b, kb, 1);
    for (int64_t r = 0; r < bundle.size(); ++r) {
        const int64_t s = bundle.source_id[static_cast<size_t>(r)];
        const int64_t cell = bundle.cell[static_cast<size_t>(r)];
        if (s == kExtraSource) {
            CHECK(r >= 512);
            continue;
        }
        const auto& img = s == 0 ? a : b;
        const int64_t row = cell / 16, col = cell % 16;
        auto patch = img[0].slice(1, row * 4, row * 4 + 4).slice(2, col * 4, col * 4 + 4).mean({1, 2});
        CHECK(max_abs(bundle.pixels[0][r], patch) < 1e-12);
        if (s == 1) {
            CHECK(max_abs(bundle.keys[0][r], single_b.keys[0][cell]) < 1e-12);
            CHECK(max_abs(bundle.values[0][r], single_b.values[0][cell]) < 1e-12);
        }
    }
}

TEST_CASE("two identical sources give identical key blocks") {
    torch::manual_seed(45);
    QkvEncoder enc(small_options());
    torch::NoGradGuard ng;
    auto img = torch::rand({1, 3, 64, 64});
    auto kp = random_kp(1, 4, torch::kFloat);
    auto bundle = enc->encode_sources({img, img}, {kp, kp});
    CHECK(torch::equal(bundle.keys.slice(1, 0, 256), bundle.keys.slice(1, 256, 512)));
}

TEST_CASE("extra rows are input independent and k grows linearly in sources") {
    torch::manual_seed(46);
    QkvEncoder enc(small_options());
    torch::NoGradGuard ng;
    std::vector<torch::Tensor> imgs;
    std::vector<KeypointSet> kps;
    torch::Tensor first_extra;
    for (int64_t n = 1; n <= 3; ++n) {
        imgs.push_back(torch::rand({1, 3, 64, 64}));
        kps.push_back(random_kp(1, 4, torch::kFloat));
        auto [q, bundle] = enc->assemble(imgs, kps, kps.front());
        CHECK(bundle.size() == n * 256 + 7);
        CHECK(bundle.num_sources() == n);
        auto extra = bundle.keys.slice(1, n * 256);
        if (!first_extra.defined()) first_extra = extra;
        CHECK(torch::equal(extra, first_extra));
    }
}

TEST_CASE("permuting sources permutes row blocks and leaves attention output unchanged") {
    torch::manual_seed(47);
    QkvEncoder enc(small_options());
    enc->to(torch::kDouble);
    torch::NoGradGuard ng;
    auto a = torch::rand({1, 3, 64, 64}, torch::kDouble);
    auto b = torch::rand({1, 3, 64, 64}, torch::kDouble);
    auto ka = random_kp(1, 4), kb = random_kp(1, 4), kd = random_kp(1, 4);
    auto [q1, ab] = enc->assemble({a, b}, {ka, kb}, kd);
    auto [q2, ba] = enc->assemble({b, a}, {kb, ka}, kd);
    CHECK(max_abs(ab.keys.slice(1, 0, 256), ba.keys.slice(1, 256, 512)) < 1e-12);
    CHECK(max_abs(ab.values.slice(1, 256, 512), ba.values.slice(1, 0, 256)) < 1e-12);
    auto r1 = attend(q1.entries, ab.keys, ab.values, 2.0);
    auto r2 = attend(q2.entries, ba.keys, ba.values, 2.0);
    CHECK(max_abs(r1.warped, r2.warped) < 1e-12);
}

TEST_CASE("query and key position embeddings start from one shared code") {
    auto enc = QkvEncoder(EncoderOptions{});
    CHECK(torch::equal(enc->queries->position(), enc->keys->position()));
}

TEST_CASE("initial position code falls off with cell distance") {
    torch::manual_seed(3);
    const int64_t grid = 16, d = 128;
    auto code = local_position_code(grid, d, 8.0, 1.0);
    REQUIRE(code.sizes() == torch::IntArrayRef({grid * grid, d}));
    auto logits = torch::mm(code, code.t()) / std::sqrt(static_cast<double>(d));
    // self logit is self_logit in expectation, exactly so in the mean over cells
    CHECK(logits.diagonal().mean().item<double>() == doctest::Approx(8.0).epsilon(0.05));

    auto ys = torch::arange(grid).repeat_interleave(grid);
    auto xs = torch::arange(grid).repeat(grid);
    auto dist2 = (xs.unsqueeze(1) - xs.unsqueeze(0)).pow(2) + (ys.unsqueeze(1) - ys.unsqueeze(0)).pow(2);
    auto kernel = 8.0 * torch::exp(-dist2.to(torch::kFloat) / 2.0);
    CHECK((logits - kernel).abs().mean().item<double>() < 1.0);

    auto a = torch::softmax(logits, 1);
    auto near = (dist2 <= 2).to(torch::kFloat);
    CHECK((a * near).sum(1).mean().item<double>() > 0.75);
    CHECK(a.diagonal().mean().item<double>() > 0.4);
}

}
