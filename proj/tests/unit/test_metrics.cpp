#include "doctest_torch.hpp"

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "iwarp/common.hpp"
#include "iwarp/metrics.hpp"

using namespace iwarp;

namespace {

torch::Tensor textured(int64_t seed, int64_t size = 32) {
    torch::manual_seed(seed);
    return (torch::rand({3, size, size}, torch::kDouble) * 255).round() / 255;
}

// Brute-force template match for a single anchor, no early exit.
std::pair<int64_t, int64_t> oracle_match(const torch::Tensor& pred, const torch::Tensor& gt, double x, double y) {
    const int64_t h = gt.size(1), w = gt.size(2);
    const auto cx = static_cast<int64_t>(std::floor(x)), cy = static_cast<int64_t>(std::floor(y));
    auto clampi = [](int64_t v, int64_t n) { return std::min(std::max<int64_t>(v, 0), n - 1); };
    double best = INFINITY;
    std::pair<int64_t, int64_t> arg{0, 0};
    int64_t best_r2 = 0;
    for (int64_t sy = -6; sy <= 6; ++sy) {
        for (int64_t sx = -6; sx <= 6; ++sx) {
            double ssd = 0;
            for (int64_t dy = -5; dy <= 5; ++dy) {
                for (int64_t dx = -5; dx <= 5; ++dx) {
                    auto a = pred.index({torch::indexing::Slice(), clampi(cy + dy + sy, h), clampi(cx + dx + sx, w)});
                    auto b = gt.index({torch::indexing::Slice(), clampi(cy + dy, h), clampi(cx + dx, w)});
                    ssd += (a - b).pow(2).sum().item<double>();
                }
            }
            const int64_t r2 = sx * sx + sy * sy;
            if (ssd < best || (ssd == best && r2 < best_r2)) {
                best = ssd;
                arg = {sx, sy};
                best_r2 = r2;
            }
        }
    }
    return arg;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("psnr and l1 on identical and shifted images") {
    auto a = textured(1).clamp(0, 254.0 / 255);
    CHECK(psnr(a, a) == kPsnrCap);
    CHECK(l1_error(a, a) == 0.0);
    auto b = a + 1.0 / 255;
    CHECK(l1_error(a, b) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(psnr(a, b) == doctest::Approx(48.1308).epsilon(1e-5));
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)));
    CHECK(l1_error(a, b) == doctest::Approx(l1_error(b, a)));
    CHECK_THROWS_AS(psnr(a, a.slice(1, 0, 4)), ShapeError);
}

TEST_CASE("anchor matching on an identical frame has zero distance and full confidence") {
    auto img = textured(2);
    std::vector<std::array<double, 2>> anchors{{3.5, 4.5}, {16.2, 16.9}, {30.5, 1.5}};
    for (const auto& m : match_anchors(img, img, anchors)) {
        CHECK(m.distance == 0.0);
        CHECK(m.confidence == 1.0);
    }
}

TEST_CASE("a 3 px horizontal roll yields a keypoint distance of exactly 3") {
    auto gt = textured(3);
    auto pred = torch::roll(gt, {3}, {2});
    std::vector<std::array<double, 2>> anchors{{12.5, 10.5}, {16.5, 20.5}, {19.5, 15.5}};
    for (const auto& m : match_anchors(pred, gt, anchors)) {
        CHECK(m.distance == 3.0);
        CHECK(m.confidence == 1.0);
    }
    auto r = akd_mkr({pred}, {gt}, {anchors}, {{true, true, true}}, {0.5});
    CHECK(r[0].akd() == 3.0);
    CHECK(r[0].mkr() == 0.0);
}

TEST_CASE("anchor matching agrees with a brute-force search") {
    auto gt = textured(4);
    auto pred = (0.7 * gt + 0.3 * textured(5)).clamp(0, 1);
    std::vector<std::array<double, 2>> anchors{{1.5, 1.5}, {10.2, 22.7}, {31.0, 30.0}, {16.0, 5.5}};
    auto got = match_anchors(pred, gt, anchors);
    for (size_t i = 0; i < anchors.size(); ++i) {
        auto [sx, sy] = oracle_match(pred, gt, anchors[i][0], anchors[i][1]);
        CHECK(got[i].x == anchors[i][0] + sx);
        CHECK(got[i].y == anchors[i][1] + sy);
        CHECK(got[i].distance == doctest::Approx(std::hypot(sx, sy)));
        CHECK(got[i].confidence > 0.0);
        CHECK(got[i].confidence < 1.0);
    }
}

TEST_CASE("missing keypoint rate counts low-confidence visible anchors only") {
    AkdMkr acc;
    acc.threshold = 0.5;
    acc.add({0, 0, 2.0, 0.9}, true);
    acc.add({0, 0, 4.0, 0.6}, true);
    acc.add({0, 0, 1.0, 0.1}, true);
    acc.add({0, 0, 9.0, 0.9}, false);
    CHECK(acc.akd() == 3.0);
    CHECK(acc.mkr() == doctest::Approx(1.0 / 3.0));
    AkdMkr empty;
    CHECK(std::isnan(empty.akd()));
    CHECK(std::isnan(empty.mkr()));
}

TEST_CASE("frechet distance closed forms") {
    auto mu = torch::zeros({1}, torch::kDouble);
    auto one = torch::ones({1, 1}, torch::kDouble);
    CHECK(frechet_distance(mu, one, mu + 1, one, 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(frechet_distance(mu, one, mu, 4 * one, 0.0) == doctest::Approx(1.0).epsilon(1e-9));

    torch::manual_seed(6);
    auto a = torch::randn({4, 4}, torch::kDouble);
    auto b = torch::randn({4, 4}, torch::kDouble);
    auto c1 = a.matmul(a.t()) + torch::eye(4, torch::kDouble);
    auto c2 = b.matmul(b.t()) + 0.5 * torch::eye(4, torch::kDouble);
    auto m1 = torch::randn({4}, torch::kDouble);
    auto m2 = torch::randn({4}, torch::kDouble);
    // tr sqrt(C1 C2) = sum of sqrt of the (real, positive) eigenvalues of C1 C2
    auto ev = torch::linalg_eigvals(c1.matmul(c2));
    const double tr_sqrt = torch::sqrt(torch::real(ev)).sum().item<double>();
    const double expected = (m1 - m2).pow(2).sum().item<double>() + c1.trace().item<double>() +
                            c2.trace().item<double>() - 2 * tr_sqrt;
    CHECK(frechet_distance(m1, c1, m2, c2, 0.0) == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("feature distance is zero on identical sets and symmetric") {
    torch::manual_seed(8);
    auto x = torch::randn({40, 5}, torch::kDouble);
    auto y = torch::randn({40, 5}, torch::kDouble) * 1.5 + 0.3;
    CHECK(std::abs(feature_distance(x, x)) < 1e-6);
    CHECK(feature_distance(x, y) == doctest::Approx(feature_distance(y, x)).epsilon(1e-8));
    CHECK(feature_distance(x, y) > 0.5);
    CHECK_THROWS(feature_distance(x.slice(0, 0, 1), y));
}

}
