#include "iwarp/image_io.hpp"

#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "iwarp/common.hpp"

namespace iwarp {

namespace fs = std::filesystem;

torch::Tensor quantize_8bit(const torch::Tensor& image) {
    return (image.clamp(0.0, 1.0) * 255.0).round() / 255.0;
}

torch::Tensor read_rgb_png(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("cannot read image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    return t.permute({2, 0, 1}).to(torch::kFloat32) / 255.0;
}

void write_rgb_png(const fs::path& path, const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("write_rgb_png: expected [3, H, W], got " + shape_string(image));
    torch::Tensor bytes = image.scalar_type() == torch::kUInt8
                              ? image
                              : (image.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8);
    bytes = bytes.permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC3, bytes.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    const auto tmp = path.string() + ".tmp.png";
    if (!cv::imwrite(tmp, bgr)) throw DataError("cannot write image " + path.string());
    fs::rename(tmp, path);
}

torch::Tensor read_label_png(const fs::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty() || m.type() != CV_8UC1) throw DataError("cannot read 8-bit label image " + path.string());
    return torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
}

void write_label_png(const fs::path& path, const torch::Tensor& labels) {
    if (labels.dim() != 2) throw ShapeError("write_label_png: expected [H, W], got " + shape_string(labels));
    auto bytes = labels.to(torch::kUInt8).contiguous();
    cv::Mat m(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC1, bytes.data_ptr<uint8_t>());
    const auto tmp = path.string() + ".tmp.png";
    if (!cv::imwrite(tmp, m)) throw DataError("cannot write label image " + path.string());
    fs::rename(tmp, path);
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

}  // namespace iwarp
