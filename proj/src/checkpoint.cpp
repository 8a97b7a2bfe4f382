#include "iwarp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "iwarp/common.hpp"
#include "iwarp/image_io.hpp"

namespace iwarp {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

void save_checkpoint(const fs::path& dir, nlohmann::json manifest, const std::map<std::string, torch::Tensor>& arrays) {
    fs::create_directories(dir);
    std::string blob;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& [name, tensor] : arrays) {
        auto data = tensor.detach().to(torch::kCPU).to(torch::kFloat32).contiguous();
        const auto nbytes = static_cast<size_t>(data.numel()) * sizeof(float);
        table.push_back({{"name", name},
                         {"shape", data.sizes().vec()},
                         {"dtype", "float32"},
                         {"offset", blob.size()},
                         {"nbytes", nbytes}});
        blob.append(reinterpret_cast<const char*>(data.data_ptr<float>()), nbytes);
    }
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["blob"] = "params.bin";
    manifest["parameters"] = table;
    write_file_atomic(dir / "params.bin", blob);
    write_file_atomic(dir / "manifest.json", manifest.dump(1) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
    Checkpoint ckpt;
    {
        std::ifstream in(dir / "manifest.json");
        if (!in) throw CheckpointError("checkpoint: missing manifest.json in " + dir.string());
        try {
            in >> ckpt.manifest;
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError("checkpoint: corrupt manifest in " + dir.string() + ": " + e.what());
        }
    }
    const auto& m = ckpt.manifest;
    if (!m.is_object() || !m.contains("format_version") || !m.contains("parameters") || !m.contains("blob")) {
        throw CheckpointError("checkpoint: corrupt manifest in " + dir.string() + " (missing required fields)");
    }
    const int version = m.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
        throw CheckpointError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointFormatVersion) + ")");
    }
    std::ifstream blob_in(dir / m.at("blob").get<std::string>(), std::ios::binary);
    if (!blob_in) throw CheckpointError("checkpoint: missing blob file in " + dir.string());
    std::stringstream ss;
    ss << blob_in.rdbuf();
    const std::string blob = ss.str();

    try {
        for (const auto& entry : m.at("parameters")) {
            const auto name = entry.at("name").get<std::string>();
            if (entry.at("dtype").get<std::string>() != "float32") {
                throw CheckpointError("checkpoint: parameter '" + name + "' has unsupported dtype");
            }
            const auto shape = entry.at("shape").get<std::vector<int64_t>>();
            const auto offset = entry.at("offset").get<size_t>();
            int64_t numel = 1;
            for (auto s : shape) numel *= s;
            const size_t nbytes = static_cast<size_t>(numel) * sizeof(float);
            if (offset + nbytes > blob.size()) {
                throw CheckpointError("checkpoint: blob truncated while reading parameter '" + name + "' (needs bytes " +
                                      std::to_string(offset) + ".." + std::to_string(offset + nbytes) + ", blob has " +
                                      std::to_string(blob.size()) + ")");
            }
            auto t = torch::empty(shape, torch::kFloat32);
            std::memcpy(t.data_ptr<float>(), blob.data() + offset, nbytes);
            ckpt.arrays.emplace(name, t);
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint: corrupt parameter table in " + dir.string() + ": " + e.what());
    }
    return ckpt;
}

std::map<std::string, torch::Tensor> collect_parameters(const torch::nn::Module& module, const std::string& prefix) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& item : module.named_parameters(/*recurse=*/true)) {
        out.emplace(prefix + item.key(), item.value());
    }
    return out;
}

void restore_parameters(torch::nn::Module& module, const std::string& prefix, const Checkpoint& checkpoint) {
    torch::NoGradGuard no_grad;
    for (auto& item : module.named_parameters(/*recurse=*/true)) {
        const auto name = prefix + item.key();
        auto it = checkpoint.arrays.find(name);
        if (it == checkpoint.arrays.end()) throw CheckpointError("checkpoint: missing parameter '" + name + "'");
        if (it->second.sizes() != item.value().sizes()) {
            throw CheckpointError("checkpoint: shape mismatch for '" + name + "': stored " + shape_string(it->second) +
                                  ", model " + shape_string(item.value()));
        }
        item.value().copy_(it->second.to(item.value().dtype()));
    }
}

}  // namespace iwarp
