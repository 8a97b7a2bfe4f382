#include "iwarp/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <variant>
#include <vector>

#include "iwarp/common.hpp"

namespace iwarp {

int64_t ModelConfig::resolved_n_extra() const {
    if (n_extra >= 0) return n_extra;
    return static_cast<int64_t>(std::llround(0.10 * static_cast<double>(grid() * grid())));
}

double ModelConfig::resolved_scale() const {
    return attention_scale > 0 ? attention_scale : std::sqrt(static_cast<double>(d));
}

namespace {

using Field = std::variant<int64_t*, double*, bool*, std::string*>;

std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
    auto& m = c.model;
    auto& t = c.train;
    auto& d = c.data;
    auto& e = c.eval;
    return {
        {"model.image_size", &m.image_size},
        {"model.num_keypoints", &m.num_keypoints},
        {"model.kp_variance", &m.kp_variance},
        {"model.softargmax_temperature", &m.softargmax_temperature},
        {"model.detector_width", &m.detector_width},
        {"model.detector_depth", &m.detector_depth},
        {"model.unet_width", &m.unet_width},
        {"model.unet_depth", &m.unet_depth},
        {"model.d", &m.d},
        {"model.d_prime", &m.d_prime},
        {"model.n_extra", &m.n_extra},
        {"model.value_width", &m.value_width},
        {"model.decoder_width", &m.decoder_width},
        {"model.decoder_res_blocks", &m.decoder_res_blocks},
        {"model.decoder_upsamples", &m.decoder_upsamples},
        {"model.mlp_hidden", &m.mlp_hidden},
        {"model.residual", &m.residual},
        {"model.attention_scale", &m.attention_scale},
        {"train.batch_size", &t.batch_size},
        {"train.lr", &t.lr},
        {"train.beta1", &t.beta1},
        {"train.beta2", &t.beta2},
        {"train.steps", &t.steps},
        {"train.lr_drop_step", &t.lr_drop_step},
        {"train.lr_drop_factor", &t.lr_drop_factor},
        {"train.w_perceptual", &t.w_perceptual},
        {"train.w_gan", &t.w_gan},
        {"train.w_equivariance", &t.w_equivariance},
        {"train.n_sources_train", &t.n_sources_train},
        {"train.p_multi_source", &t.p_multi_source},
        {"train.p_drop", &t.p_drop},
        {"train.source_strategy", &t.source_strategy},
        {"train.seed", &t.seed},
        {"train.checkpoint_every", &t.checkpoint_every},
        {"train.log_every", &t.log_every},
        {"train.disc_width", &t.disc_width},
        {"train.disc_scales", &t.disc_scales},
        {"train.disc_layers", &t.disc_layers},
        {"train.perceptual_width", &t.perceptual_width},
        {"train.perceptual_layers", &t.perceptual_layers},
        {"train.perceptual_seed", &t.perceptual_seed},
        {"train.deterministic", &t.deterministic},
        {"data.root", &d.root},
        {"data.n_clips", &d.n_clips},
        {"data.eval_fraction", &d.eval_fraction},
        {"data.min_frames", &d.min_frames},
        {"data.max_frames", &d.max_frames},
        {"data.seed", &d.seed},
        {"eval.n_sources", &e.n_sources},
        {"eval.strategy", &e.strategy},
        {"eval.fuse", &e.fuse},
        {"eval.split", &e.split},
        {"eval.max_frames", &e.max_frames},
        {"eval.frame_stride", &e.frame_stride},
        {"eval.max_clips", &e.max_clips},
        {"eval.top_k", &e.top_k},
    };
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
    const std::string value = trim(raw);
    for (auto& [name, field] : fields(*this)) {
        if (name != key) continue;
        try {
            std::visit(
                [&](auto* ptr) {
                    using T = std::remove_pointer_t<decltype(ptr)>;
                    size_t used = 0;
                    if constexpr (std::is_same_v<T, int64_t>) {
                        *ptr = std::stoll(value, &used);
                    } else if constexpr (std::is_same_v<T, double>) {
                        *ptr = std::stod(value, &used);
                    } else if constexpr (std::is_same_v<T, bool>) {
                        if (value == "true" || value == "1") {
                            *ptr = true;
                        } else if (value == "false" || value == "0") {
                            *ptr = false;
                        } else {
                            throw std::invalid_argument("bool");
                        }
                        used = value.size();
                    } else {
                        std::string v = value;
                        if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
                        *ptr = v;
                        used = value.size();
                    }
                    if (used != value.size()) throw std::invalid_argument("trailing characters");
                },
                field);
        } catch (const std::logic_error&) {
            throw ConfigError("config: invalid value '" + value + "' for key '" + key + "'");
        }
        return;
    }
    throw ConfigError("config: unknown key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
    auto flat = flatten();
    auto it = flat.find(key);
    if (it == flat.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
}

std::map<std::string, std::string> RunConfig::flatten() const {
    std::map<std::string, std::string> out;
    auto copy = *this;
    for (auto& [name, field] : fields(copy)) {
        out[name] = std::visit(
            [](auto* ptr) -> std::string {
                using T = std::remove_pointer_t<decltype(ptr)>;
                if constexpr (std::is_same_v<T, int64_t>) {
                    return std::to_string(*ptr);
                } else if constexpr (std::is_same_v<T, double>) {
                    return format_double(*ptr);
                } else if constexpr (std::is_same_v<T, bool>) {
                    return *ptr ? "true" : "false";
                } else {
                    return *ptr;
                }
            },
            field);
    }
    return out;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : flatten()) j[k] = v;
    return j;
}

namespace {

std::string fnv1a_hex(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace

std::string RunConfig::hash() const { return fnv1a_hex(to_text()); }

std::string RunConfig::model_hash() const {
    std::string text;
    for (const auto& [k, v] : flatten()) {
        if (k.rfind("model.", 0) == 0) text += k + "=" + v + "\n";
    }
    return fnv1a_hex(text);
}

void RunConfig::validate() const {
    const auto& m = model;
    if (m.image_size <= 0 || m.image_size % 4 != 0) throw ConfigError("model.image_size must be a positive multiple of 4");
    const int64_t g = m.grid();
    if (g % (int64_t{1} << m.unet_depth) != 0) throw ConfigError("model.unet_depth too deep for the 1/4-resolution grid");
    if (g % (int64_t{1} << m.detector_depth) != 0) throw ConfigError("model.detector_depth too deep for the 1/4-resolution grid");
    if (m.num_keypoints < 1) throw ConfigError("model.num_keypoints must be >= 1");
    if (!(m.kp_variance > 0)) throw ConfigError("model.kp_variance must be > 0");
    if (!(m.softargmax_temperature > 0)) throw ConfigError("model.softargmax_temperature must be > 0");
    if (m.d < 1 || m.d_prime < 1) throw ConfigError("model.d and model.d_prime must be >= 1");
    if (m.decoder_upsamples != 2) throw ConfigError("model.decoder_upsamples must be 2 (output is 4x the feature grid)");
    const auto& t = train;
    if (t.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(t.lr > 0)) throw ConfigError("train.lr must be > 0");
    if (t.w_perceptual < 0 || t.w_gan < 0 || t.w_equivariance < 0) throw ConfigError("loss weights must be >= 0");
    if (t.p_drop < 0 || t.p_drop > 1) throw ConfigError("train.p_drop must be in [0, 1]");
    if (t.n_sources_train < 0) throw ConfigError("train.n_sources_train must be >= 0");
    if (t.source_strategy != "random" && t.source_strategy != "first-frame" &&
        t.source_strategy != "regularly-spaced") {
        throw ConfigError("train.source_strategy must be random, first-frame or regularly-spaced");
    }
    if (eval.strategy != "first-frame" && eval.strategy != "regularly-spaced") {
        throw ConfigError("eval.strategy must be first-frame or regularly-spaced");
    }
    if (eval.fuse != "attention" && eval.fuse != "average") throw ConfigError("eval.fuse must be attention or average");
    if (eval.split != "eval" && eval.split != "disocclusion") throw ConfigError("eval.split must be eval or disocclusion");
    if (eval.n_sources < 1) throw ConfigError("eval.n_sources must be >= 1");
    if (eval.frame_stride < 1) throw ConfigError("eval.frame_stride must be >= 1");
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    bool seen_key = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        if (key == "preset") {
            // a preset replaces the defaults, so it must come before any key
            if (seen_key) throw ConfigError("config line " + std::to_string(lineno) + ": preset must come first");
            cfg = preset_config(trim(line.substr(eq + 1)));
            continue;
        }
        cfg.set(key, line.substr(eq + 1));
        seen_key = true;
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

RunConfig RunConfig::from_json(const nlohmann::json& flat) {
    RunConfig cfg;
    for (const auto& [k, v] : flat.items()) {
        cfg.set(k, v.is_string() ? v.get<std::string>() : v.dump());
    }
    return cfg;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : flatten()) out += k + " = " + v + "\n";
    return out;
}

RunConfig preset_config(const std::string& name) {
    RunConfig cfg;
    if (name == "default") return cfg;
    if (name == "tiny") {
        cfg.model.detector_width = 16;
        cfg.model.unet_width = 16;
        cfg.model.unet_depth = 2;
        cfg.model.detector_depth = 2;
        cfg.model.num_keypoints = 10;
        cfg.model.d = 32;
        cfg.model.d_prime = 32;
        cfg.model.value_width = 16;
        cfg.model.decoder_width = 32;
        cfg.model.decoder_res_blocks = 4;
        cfg.train.disc_width = 16;
        cfg.train.perceptual_width = 8;
        cfg.train.lr = 1e-3;
        cfg.train.w_gan = 0;
        cfg.data.n_clips = 96;
        cfg.data.eval_fraction = 32.0 / 96.0;
        cfg.data.min_frames = 60;
        cfg.data.max_frames = 120;
        return cfg;
    }
    throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace iwarp
