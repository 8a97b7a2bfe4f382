#include "iwarp/common.hpp"

#include <sstream>

namespace iwarp {

torch::Tensor coordinate_grid(int64_t h, int64_t w, const torch::TensorOptions& options) {
    const auto dtype = options.has_dtype() ? options.dtype().toScalarType() : torch::kFloat32;
    auto opts = options.dtype(torch::kFloat64);
    // cell centers: -1 + (2i + 1) / n
    auto xs = (torch::arange(w, opts) * 2 + 1) / static_cast<double>(w) - 1;
    auto ys = (torch::arange(h, opts) * 2 + 1) / static_cast<double>(h) - 1;
    auto gx = xs.view({1, w}).expand({h, w});
    auto gy = ys.view({h, 1}).expand({h, w});
    return torch::stack(std::vector<torch::Tensor>{gx, gy}, -1).to(dtype);
}

torch::Tensor downsample_quarter(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(2) % 4 != 0 || image.size(3) % 4 != 0) {
        throw ShapeError("downsample_quarter: expected [B, C, H, W] with H, W divisible by 4, got " +
                         shape_string(image));
    }
    return torch::avg_pool2d(image, 4);
}

uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> stream) {
    // splitmix64 chain
    auto mix = [](uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    uint64_t h = mix(base);
    for (uint64_t s : stream) {
        h = mix(h ^ mix(s + 0x632be59bd9b4e019ULL));
    }
    return h;
}

std::string shape_string(const torch::Tensor& t) {
    if (!t.defined()) return "<undefined>";
    std::ostringstream os;
    os << t.sizes();
    return os.str();
}

}  // namespace iwarp
