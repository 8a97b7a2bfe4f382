#include "iwarp/qkv_encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "iwarp/common.hpp"

namespace iwarp {

int64_t KeyValueSet::num_extra() const {
    return std::count(source_id.begin(), source_id.end(), kExtraSource);
}

int64_t KeyValueSet::num_sources() const {
    std::set<int64_t> ids;
    for (auto s : source_id) {
        if (s != kExtraSource) ids.insert(s);
    }
    return static_cast<int64_t>(ids.size());
}

KeyValueSet KeyValueSet::select_rows(const std::vector<int64_t>& rows) const {
    KeyValueSet out;
    auto index = torch::tensor(rows, torch::TensorOptions().dtype(torch::kInt64).device(keys.device()));
    out.keys = keys.index_select(1, index);
    out.values = values.index_select(1, index);
    out.pixels = pixels.index_select(1, index);
    for (auto r : rows) {
        out.source_id.push_back(source_id.at(static_cast<size_t>(r)));
        out.cell.push_back(cell.at(static_cast<size_t>(r)));
    }
    return out;
}

KeyValueSet concat_bundles(const std::vector<KeyValueSet>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_bundles: no bundles");
    KeyValueSet out;
    std::vector<torch::Tensor> k, v, p;
    for (const auto& part : parts) {
        k.push_back(part.keys);
        v.push_back(part.values);
        p.push_back(part.pixels);
        out.source_id.insert(out.source_id.end(), part.source_id.begin(), part.source_id.end());
        out.cell.insert(out.cell.end(), part.cell.begin(), part.cell.end());
    }
    out.keys = torch::cat(k, 1);
    out.values = torch::cat(v, 1);
    out.pixels = torch::cat(p, 1);
    return out;
}

KeyValueSet bundle_layout(int64_t n_sources, int64_t cells, int64_t n_extra) {
    KeyValueSet out;
    for (int64_t s = 0; s < n_sources; ++s) {
        for (int64_t c = 0; c < cells; ++c) {
            out.source_id.push_back(s);
            out.cell.push_back(c);
        }
    }
    for (int64_t e = 0; e < n_extra; ++e) {
        out.source_id.push_back(kExtraSource);
        out.cell.push_back(-1);
    }
    return out;
}

namespace {

// [B, C, h, w] -> [B, h*w, C]
torch::Tensor flatten_cells(const torch::Tensor& x) { return x.flatten(2).transpose(1, 2); }

void check_grid(const torch::Tensor& x, int64_t channels, int64_t grid, const char* what) {
    if (x.dim() != 4 || x.size(1) != channels || x.size(2) != grid || x.size(3) != grid) {
        throw ShapeError(std::string(what) + ": expected [B, " + std::to_string(channels) + ", " +
                         std::to_string(grid) + ", " + std::to_string(grid) + "], got " + shape_string(x));
    }
}

}  // namespace

QueryEncoderImpl::QueryEncoderImpl(const EncoderOptions& options) : options_(options) {
    unet_ = register_module("unet", UNet(UNetOptions{options.num_keypoints, options.unet_width,
                                                     options.unet_max_width, options.unet_depth}));
    proj_ = register_module("proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(unet_->out_channels(), options.d, 1)));
    const int64_t q = options.grid() * options.grid();
    pos_ = register_parameter("position", torch::randn({q, options.d}) * 0.02);
}

QueryGrid QueryEncoderImpl::forward(const torch::Tensor& driving_map) {
    check_grid(driving_map, options_.num_keypoints, options_.grid(), "encode_queries");
    auto q = flatten_cells(proj_(unet_(driving_map))) + pos_;
    return {q, options_.grid(), options_.grid()};
}

KeyEncoderImpl::KeyEncoderImpl(const EncoderOptions& options) : options_(options) {
    unet_ = register_module("unet", UNet(UNetOptions{options.num_keypoints + 3, options.unet_width,
                                                     options.unet_max_width, options.unet_depth}));
    proj_ = register_module("proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(unet_->out_channels(), options.d, 1)));
    const int64_t q = options.grid() * options.grid();
    pos_ = register_parameter("position", torch::randn({q, options.d}) * 0.02);
}

torch::Tensor KeyEncoderImpl::forward(const torch::Tensor& source_quarter, const torch::Tensor& source_map) {
    check_grid(source_quarter, 3, options_.grid(), "encode_keys(image)");
    check_grid(source_map, options_.num_keypoints, options_.grid(), "encode_keys(map)");
    auto x = torch::cat({source_quarter, source_map}, 1);
    return flatten_cells(proj_(unet_(x))) + pos_;
}

ValueEncoderImpl::ValueEncoderImpl(const EncoderOptions& options) : options_(options) {
    const int64_t w = options.value_width;
    conv0_ = register_module("conv0", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, w, 3).padding(1)));
    down1_ = register_module("down1",
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(w, 2 * w, 3).stride(2).padding(1)));
    down2_ = register_module(
        "down2", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * w, options.d_prime, 3).stride(2).padding(1)));
}

torch::Tensor ValueEncoderImpl::forward(const torch::Tensor& image) {
    check_grid(image, 3, options_.image_size, "encode_values");
    auto x = torch::relu(conv0_(image));
    x = torch::relu(down1_(x));
    return flatten_cells(down2_(x));
}

ExtraBankImpl::ExtraBankImpl(int64_t rows, int64_t d, int64_t d_prime) : rows_(rows) {
    keys = register_parameter("keys", torch::randn({rows, d}) * 0.1);
    position = register_parameter("position", torch::randn({rows, d}) * 0.02);
    values = register_parameter("values", torch::randn({rows, d_prime}) * 0.1);
    pixels = register_parameter("pixels", torch::full({rows, 3}, 0.5));
}

KeyValueSet ExtraBankImpl::rows(int64_t batch) const {
    KeyValueSet out = bundle_layout(0, 0, rows_);
    out.keys = (keys + position).unsqueeze(0).expand({batch, rows_, keys.size(1)});
    out.values = values.unsqueeze(0).expand({batch, rows_, values.size(1)});
    out.pixels = pixels.unsqueeze(0).expand({batch, rows_, 3});
    return out;
}

torch::Tensor local_position_code(int64_t grid, int64_t d, double self_logit, double radius) {
    // random Fourier features: code(a) . code(b) ~ self_logit * sqrt(d) * exp(-|a - b|^2 / (2 radius^2))
    auto ys = torch::arange(grid, torch::kFloat).repeat_interleave(grid);
    auto xs = torch::arange(grid, torch::kFloat).repeat(grid);
    auto cells = torch::stack({xs, ys}, 1);  // [grid*grid, 2] in cell units
    auto freq = torch::randn({2, d}) / radius;
    auto phase = torch::rand({d}) * (2 * std::numbers::pi);
    const double amplitude = std::sqrt(self_logit * std::sqrt(static_cast<double>(d)) * 2.0 / static_cast<double>(d));
    return amplitude * torch::cos(torch::mm(cells, freq) + phase);
}

QkvEncoderImpl::QkvEncoderImpl(const EncoderOptions& options) : options_(options) {
    queries = register_module("queries", QueryEncoder(options));
    keys = register_module("keys", KeyEncoder(options));
    values = register_module("values", ValueEncoder(options));
    extra = register_module("extra", ExtraBank(options.n_extra, options.d, options.d_prime));
    // one shared code on both sides: attention starts as a sharp local blur around each cell
    torch::NoGradGuard no_grad;
    auto code = local_position_code(options.grid(), options.d);
    queries->position().copy_(code);
    keys->position().copy_(code);
}

torch::Tensor QkvEncoderImpl::render(const KeypointSet& kps) const {
    return render_keypoint_map(kps, options_.grid(), options_.grid(), options_.kp_variance);
}

QueryGrid QkvEncoderImpl::encode_queries(const torch::Tensor& driving_map) { return queries->forward(driving_map); }

torch::Tensor QkvEncoderImpl::encode_keys(const torch::Tensor& source_quarter, const torch::Tensor& source_map) {
    return keys->forward(source_quarter, source_map);
}

torch::Tensor QkvEncoderImpl::encode_values(const torch::Tensor& source_image) {
    return values->forward(source_image);
}

KeyValueSet QkvEncoderImpl::encode_source(const torch::Tensor& image, const KeypointSet& kps, int64_t source_index) {
    auto bundle = encode_sources({image}, {kps});
    std::fill(bundle.source_id.begin(), bundle.source_id.end(), source_index);
    return bundle;
}

KeyValueSet QkvEncoderImpl::encode_sources(const std::vector<torch::Tensor>& images,
                                           const std::vector<KeypointSet>& kps) {
    if (images.empty()) throw std::invalid_argument("assemble: at least one source image is required");
    if (images.size() != kps.size()) throw std::invalid_argument("assemble: one keypoint set per source required");
    const auto n = static_cast<int64_t>(images.size());
    for (const auto& img : images) {
        if (img.sizes() != images.front().sizes()) {
            throw ShapeError("assemble: all sources must share one resolution, got " + shape_string(images.front()) +
                             " and " + shape_string(img));
        }
    }
    const int64_t batch = images.front().size(0);
    // every source goes through the encoders in one stacked batch
    auto stacked = torch::cat(images, 0);
    auto kp = concat(kps);
    auto quarter = downsample_quarter(stacked);
    auto k = encode_keys(quarter, render(kp));
    auto v = encode_values(stacked);
    auto p = flatten_cells(quarter);
    const int64_t cells = options_.grid() * options_.grid();
    auto split = [&](const torch::Tensor& t) {
        // [n*B, cells, C] -> [B, n*cells, C], source-major along rows
        return t.view({n, batch, cells, t.size(2)}).transpose(0, 1).reshape({batch, n * cells, t.size(2)});
    };
    KeyValueSet out = bundle_layout(n, cells, 0);
    out.keys = split(k);
    out.values = split(v);
    out.pixels = split(p);
    return out;
}

KeyValueSet QkvEncoderImpl::with_extra(const KeyValueSet& bundle) {
    if (extra->size() == 0) return bundle;
    auto bank = extra->rows(bundle.keys.size(0));
    bank.keys = bank.keys.to(bundle.keys.dtype());
    bank.values = bank.values.to(bundle.values.dtype());
    bank.pixels = bank.pixels.to(bundle.pixels.dtype());
    return concat_bundles({bundle, bank});
}

std::pair<QueryGrid, KeyValueSet> QkvEncoderImpl::assemble(const std::vector<torch::Tensor>& source_images,
                                                           const std::vector<KeypointSet>& source_kps,
                                                           const KeypointSet& driving_kps) {
    auto bundle = with_extra(encode_sources(source_images, source_kps));
    auto q = encode_queries(render(driving_kps));
    return {q, bundle};
}

}  // namespace iwarp
