#include "iwarp/synthetic_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "iwarp/common.hpp"
#include "iwarp/image_io.hpp"

namespace iwarp {

namespace fs = std::filesystem;

double Motion::at(int64_t frame) const {
    const double f = static_cast<double>(frame);
    return start + velocity * f + amplitude * std::sin(2.0 * std::numbers::pi * f / period + phase);
}

int64_t SceneSpec::num_regions() const {
    return 1 + static_cast<int64_t>(sprites.size()) * kPartsPerSprite + static_cast<int64_t>(occluders.size());
}

namespace {

using Vec2 = std::array<double, 2>;
using Rgb = std::array<double, 3>;

struct Pose {
    double cx, cy, cos_t, sin_t, scale;
};

Pose sprite_pose(const SpriteSpec& s, int64_t frame) {
    const double theta = s.rotation.at(frame);
    return {s.x.at(frame), s.y.at(frame), std::cos(theta), std::sin(theta), s.scale.at(frame) * s.size};
}

Vec2 to_world(const Pose& p, const Vec2& local) {
    return {p.cx + p.scale * (p.cos_t * local[0] - p.sin_t * local[1]),
            p.cy + p.scale * (p.sin_t * local[0] + p.cos_t * local[1])};
}

Vec2 to_local(const Pose& p, double x, double y) {
    const double dx = (x - p.cx) / p.scale, dy = (y - p.cy) / p.scale;
    return {p.cos_t * dx + p.sin_t * dy, -p.sin_t * dx + p.cos_t * dy};
}

// part-local coordinates of a sprite-local point
Vec2 part_local(const PartSpec& part, const Vec2& local) {
    const double c = std::cos(part.angle), s = std::sin(part.angle);
    const double dx = local[0] - part.cx, dy = local[1] - part.cy;
    return {c * dx + s * dy, -s * dx + c * dy};
}

bool inside_part(const PartSpec& part, const Vec2& u) {
    const double nx = u[0] / part.rx, ny = u[1] / part.ry;
    switch (part.shape) {
        case PartShape::Ellipse:
            return nx * nx + ny * ny <= 1.0;
        case PartShape::Rectangle:
            return std::abs(nx) <= 1.0 && std::abs(ny) <= 1.0;
        case PartShape::Triangle:
            // apex at (0, -1), base from (-1, 1) to (1, 1) in normalized part units
            return ny <= 1.0 && ny >= -1.0 && std::abs(nx) <= (ny + 1.0) * 0.5;
    }
    return false;
}

Rgb part_color(const PartSpec& part, const Vec2& u) {
    switch (part.pattern) {
        case 1:
            return std::sin(u[0] * part.pattern_scale * std::numbers::pi) > 0 ? part.color : part.color2;
        case 2: {
            const auto i = static_cast<int64_t>(std::floor(u[0] * part.pattern_scale));
            const auto j = static_cast<int64_t>(std::floor(u[1] * part.pattern_scale));
            return ((i + j) % 2 == 0) ? part.color : part.color2;
        }
        default:
            return part.color;
    }
}

Rgb background_color(const SceneSpec& spec, double x, double y) {
    const double c = static_cast<double>(spec.canvas);
    double t = 0;
    switch (spec.background_id % 4) {
        case 0:
            t = y / c;
            break;
        case 1:
            t = std::sin(2.0 * std::numbers::pi * y / (c / 4.0)) > 0 ? 1.0 : 0.0;
            break;
        case 2:
            t = ((static_cast<int64_t>(x / (c / 4.0)) + static_cast<int64_t>(y / (c / 4.0))) % 2 == 0) ? 1.0 : 0.0;
            break;
        default:
            t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * x / c * 1.5) * std::sin(2.0 * std::numbers::pi * y / c);
            break;
    }
    Rgb out;
    for (int k = 0; k < 3; ++k) out[k] = spec.background_a[k] * (1 - t) + spec.background_b[k] * t;
    return out;
}

bool inside_occluder(const OccluderSpec& o, int64_t frame, double x, double y) {
    return std::abs(x - o.x.at(frame)) < o.width / 2 && std::abs(y - o.y.at(frame)) < o.height / 2;
}

struct Sample {
    Rgb color;
    int64_t label;
};

Sample shade(const SceneSpec& spec, const std::vector<Pose>& poses, int64_t frame, double x, double y) {
    for (size_t o = spec.occluders.size(); o-- > 0;) {
        if (inside_occluder(spec.occluders[o], frame, x, y)) {
            const auto& occ = spec.occluders[o];
            const double stripe = std::sin((x + y) * 0.8) > 0 ? 1.0 : 0.8;
            return {{occ.color[0] * stripe, occ.color[1] * stripe, occ.color[2] * stripe},
                    1 + static_cast<int64_t>(spec.sprites.size()) * kPartsPerSprite + static_cast<int64_t>(o)};
        }
    }
    for (size_t s = spec.sprites.size(); s-- > 0;) {
        const auto& sprite = spec.sprites[s];
        const auto local = to_local(poses[s], x, y);
        for (size_t p = sprite.parts.size(); p-- > 0;) {
            const auto u = part_local(sprite.parts[p], local);
            if (inside_part(sprite.parts[p], u)) {
                return {part_color(sprite.parts[p], u),
                        1 + static_cast<int64_t>(s) * kPartsPerSprite + static_cast<int64_t>(p)};
            }
        }
    }
    return {background_color(spec, x, y), 0};
}

nlohmann::json motion_json(const Motion& m) {
    return {{"start", m.start}, {"velocity", m.velocity}, {"amplitude", m.amplitude}, {"period", m.period},
            {"phase", m.phase}};
}

}  // namespace

nlohmann::json to_json(const SceneSpec& spec) {
    nlohmann::json sprites = nlohmann::json::array();
    for (const auto& s : spec.sprites) {
        nlohmann::json parts = nlohmann::json::array();
        for (const auto& p : s.parts) {
            parts.push_back({{"shape", static_cast<int>(p.shape)},
                             {"center", {p.cx, p.cy}},
                             {"half_extent", {p.rx, p.ry}},
                             {"angle", p.angle},
                             {"color", p.color},
                             {"color2", p.color2},
                             {"pattern", p.pattern},
                             {"pattern_scale", p.pattern_scale}});
        }
        sprites.push_back({{"parts", parts},
                           {"anchors", s.anchors},
                           {"size", s.size},
                           {"x", motion_json(s.x)},
                           {"y", motion_json(s.y)},
                           {"rotation", motion_json(s.rotation)},
                           {"scale", motion_json(s.scale)}});
    }
    nlohmann::json occluders = nlohmann::json::array();
    for (const auto& o : spec.occluders) {
        occluders.push_back({{"size", {o.width, o.height}},
                             {"x", motion_json(o.x)},
                             {"y", motion_json(o.y)},
                             {"color", o.color}});
    }
    return {{"seed", spec.seed},
            {"canvas", spec.canvas},
            {"background_id", spec.background_id},
            {"background_a", spec.background_a},
            {"background_b", spec.background_b},
            {"sprites", sprites},
            {"occluders", occluders},
            {"n_frames", spec.n_frames}};
}

std::vector<std::array<double, 2>> anchor_positions(const SceneSpec& spec, int64_t frame) {
    std::vector<Vec2> out;
    for (const auto& sprite : spec.sprites) {
        const auto pose = sprite_pose(sprite, frame);
        for (const auto& a : sprite.anchors) out.push_back(to_world(pose, a));
    }
    return out;
}

bool occluder_covers(const SceneSpec& spec, int64_t frame, double x, double y) {
    return std::any_of(spec.occluders.begin(), spec.occluders.end(),
                       [&](const OccluderSpec& o) { return inside_occluder(o, frame, x, y); });
}

void validate(const SceneSpec& spec) {
    if (spec.canvas <= 0 || spec.canvas % 4 != 0) throw DataError("scene: canvas must be a positive multiple of 4");
    if (spec.n_frames < 1) throw DataError("scene: n_frames must be >= 1");
    if (spec.sprites.empty()) throw DataError("scene: at least one sprite required");
    if (spec.num_regions() > 255) throw DataError("scene: too many regions for 8-bit masks");
    for (const auto& s : spec.sprites) {
        if (static_cast<int64_t>(s.parts.size()) != kPartsPerSprite) throw DataError("scene: sprite needs 4 parts");
        if (static_cast<int64_t>(s.anchors.size()) != kAnchorsPerSprite) throw DataError("scene: sprite needs 8 anchors");
        if (!(s.size > 0)) throw DataError("scene: sprite size must be > 0");
        for (const auto* m : {&s.x, &s.y, &s.rotation, &s.scale}) {
            if (!(m->period > 0)) throw DataError("scene: motion period must be > 0");
        }
    }
    const double c = static_cast<double>(spec.canvas);
    for (int64_t f = 0; f < spec.n_frames; ++f) {
        const auto anchors = anchor_positions(spec, f);
        for (size_t s = 0; s < spec.sprites.size(); ++s) {
            if (!(spec.sprites[s].scale.at(f) > 0)) throw DataError("scene: sprite scale must stay positive");
            int on = 0;
            for (int64_t a = 0; a < kAnchorsPerSprite; ++a) {
                const auto& p = anchors[s * kAnchorsPerSprite + static_cast<size_t>(a)];
                if (p[0] >= 0 && p[0] < c && p[1] >= 0 && p[1] < c) ++on;
            }
            if (2 * on < kAnchorsPerSprite) {
                throw DataError("scene: sprite " + std::to_string(s) + " is less than 50% on canvas at frame " +
                                std::to_string(f));
            }
        }
    }
}

FrameRecord render_frame(const SceneSpec& spec, int64_t frame) {
    const int64_t n = spec.canvas;
    std::vector<Pose> poses;
    for (const auto& s : spec.sprites) poses.push_back(sprite_pose(s, frame));

    auto image = torch::empty({3, n, n}, torch::kFloat32);
    auto acc = image.accessor<float, 3>();
    constexpr double offsets[2] = {0.25, 0.75};
    for (int64_t y = 0; y < n; ++y) {
        for (int64_t x = 0; x < n; ++x) {
            Rgb sum{0, 0, 0};
            for (double oy : offsets) {
                for (double ox : offsets) {
                    const auto sample = shade(spec, poses, frame, static_cast<double>(x) + ox, static_cast<double>(y) + oy);
                    for (int k = 0; k < 3; ++k) sum[k] += sample.color[k];
                }
            }
            for (int k = 0; k < 3; ++k) acc[k][y][x] = static_cast<float>(sum[k] / 4.0);
        }
    }
    FrameRecord rec;
    rec.image = quantize_8bit(image);

    const int64_t g = n / 4;
    rec.region_mask = torch::empty({g, g}, torch::kInt64);
    auto mask = rec.region_mask.accessor<int64_t, 2>();
    for (int64_t r = 0; r < g; ++r) {
        for (int64_t c = 0; c < g; ++c) {
            mask[r][c] = shade(spec, poses, frame, 4.0 * c + 2.0, 4.0 * r + 2.0).label;
        }
    }

    rec.keypoints = anchor_positions(spec, frame);
    const double c = static_cast<double>(n);
    for (const auto& p : rec.keypoints) {
        const bool on_canvas = p[0] >= 0 && p[0] < c && p[1] >= 0 && p[1] < c;
        rec.visible.push_back(on_canvas && !occluder_covers(spec, frame, p[0], p[1]));
    }
    return rec;
}

std::vector<FrameRecord> generate_scene(const SceneSpec& spec) {
    validate(spec);
    std::vector<FrameRecord> frames;
    frames.reserve(static_cast<size_t>(spec.n_frames));
    for (int64_t f = 0; f < spec.n_frames; ++f) frames.push_back(render_frame(spec, f));
    return frames;
}

namespace {

Rgb random_color(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    return {u(rng), u(rng), u(rng)};
}

SpriteSpec random_sprite(std::mt19937_64& rng, double canvas, int64_t n_frames) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    SpriteSpec s;
    s.size = canvas * range(0.075, 0.095);

    auto make_part = [&](PartShape shape, double cx, double cy, double rx, double ry, double angle) {
        PartSpec p;
        p.shape = shape;
        p.cx = cx;
        p.cy = cy;
        p.rx = rx;
        p.ry = ry;
        p.angle = angle;
        p.color = random_color(rng);
        p.color2 = random_color(rng);
        p.pattern = static_cast<int>(std::floor(range(0.0, 3.0)));
        p.pattern_scale = range(1.5, 3.0);
        return p;
    };
    const double body_rx = range(0.9, 1.3), body_ry = range(1.2, 1.7);
    const double head_r = range(0.6, 0.9);
    s.parts.push_back(make_part(PartShape::Ellipse, 0, 0, body_rx, body_ry, 0));
    s.parts.push_back(make_part(range(0, 1) < 0.5 ? PartShape::Ellipse : PartShape::Triangle, 0,
                                -body_ry - head_r * 0.7, head_r, head_r, range(-0.3, 0.3)));
    for (double side : {-1.0, 1.0}) {
        s.parts.push_back(make_part(range(0, 1) < 0.7 ? PartShape::Rectangle : PartShape::Ellipse,
                                    side * (body_rx + 0.25), range(-0.4, 0.6), range(0.25, 0.4), range(0.7, 1.0),
                                    side * range(0.1, 0.6)));
    }
    // anchors: part centers, then a point 60% out along each part's x axis
    for (const auto& p : s.parts) s.anchors.push_back({p.cx, p.cy});
    for (const auto& p : s.parts) {
        s.anchors.push_back({p.cx + 0.6 * p.rx * std::cos(p.angle), p.cy + 0.6 * p.rx * std::sin(p.angle)});
    }

    const double two_pi = 2.0 * std::numbers::pi;
    const double nf = static_cast<double>(n_frames);
    s.x = {canvas * range(0.38, 0.62), range(-0.03, 0.03), range(2.0, 7.0), range(0.5, 1.5) * nf, range(0, two_pi)};
    s.y = {canvas * range(0.45, 0.62), range(-0.03, 0.03), range(2.0, 6.0), range(0.5, 1.5) * nf, range(0, two_pi)};
    s.rotation = {range(-0.3, 0.3), 0.0, range(0.1, 0.5), range(0.5, 1.5) * nf, range(0, two_pi)};
    s.scale = {1.0, 0.0, range(0.0, 0.12), range(0.5, 1.5) * nf, range(0, two_pi)};
    return s;
}

}  // namespace

bool has_disocclusion(const std::vector<std::vector<bool>>& visible, int64_t cap) {
    const auto length = static_cast<int64_t>(visible.size());
    if (length < 4) return false;
    std::vector<int64_t> later;
    for (int64_t n : {2, 3}) {
        const auto idx = source_indices(length, n, SourceStrategy::RegularlySpaced, nullptr, cap);
        later.insert(later.end(), idx.begin() + 1, idx.end());
    }
    for (size_t a = 0; a < visible.front().size(); ++a) {
        if (visible.front()[a]) continue;
        for (int64_t f : later) {
            if (visible[static_cast<size_t>(f)][a]) return true;
        }
    }
    return false;
}

SceneSpec random_scene(uint64_t seed, int64_t canvas, int64_t n_frames, bool disocclusion) {
    for (uint64_t attempt = 0; attempt < 1000; ++attempt) {
        std::mt19937_64 rng(derive_seed(seed, {attempt}));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
        const double c = static_cast<double>(canvas);

        SceneSpec spec;
        spec.seed = seed;
        spec.canvas = canvas;
        spec.n_frames = n_frames;
        spec.background_id = static_cast<int>(std::floor(range(0.0, 4.0)));
        spec.background_a = random_color(rng);
        spec.background_b = random_color(rng);
        spec.sprites.push_back(random_sprite(rng, c, n_frames));

        if (disocclusion) {
            // cover one non-body part in frame 0, then slide away from the sprite
            const auto& sprite = spec.sprites.front();
            const auto part_index = static_cast<size_t>(1 + std::floor(range(0.0, 3.0)));
            const auto& part = sprite.parts[part_index];
            const auto pose = sprite_pose(sprite, 0);
            const auto center = to_world(pose, {part.cx, part.cy});
            const double extent = 2.0 * std::max(part.rx, part.ry) * pose.scale + 4.0;
            OccluderSpec occ;
            occ.width = extent;
            occ.height = extent;
            double dir = center[0] >= pose.cx ? 1.0 : -1.0;
            if (part_index == 1) dir = range(0, 1) < 0.5 ? -1.0 : 1.0;
            const double travel = extent + 0.35 * c;
            const double clear_frame = std::max(4.0, static_cast<double>(std::min<int64_t>(n_frames, 180)) / 3.0);
            occ.x = {center[0], dir * travel / clear_frame, 0, 1, 0};
            occ.y = {center[1], part_index == 1 ? -range(0.0, 0.2) : 0.0, 0, 1, 0};
            occ.color = random_color(rng);
            spec.occluders.push_back(occ);
        } else if (range(0, 1) < 0.5) {
            OccluderSpec occ;
            occ.width = range(8.0, 16.0);
            occ.height = range(8.0, 20.0);
            const double dir = range(0, 1) < 0.5 ? -1.0 : 1.0;
            const double start = dir > 0 ? -occ.width : c + occ.width;
            occ.x = {start, dir * (c + 2 * occ.width) / static_cast<double>(n_frames), 0, 1, 0};
            occ.y = {range(0.25, 0.75) * c, 0, range(0.0, 4.0), range(20.0, 60.0), range(0, 6.28)};
            occ.color = random_color(rng);
            spec.occluders.push_back(occ);
        }

        try {
            validate(spec);
        } catch (const DataError&) {
            continue;
        }
        if (disocclusion) {
            std::vector<std::vector<bool>> visible;
            const double cd = static_cast<double>(canvas);
            for (int64_t f = 0; f < n_frames; ++f) {
                std::vector<bool> row;
                for (const auto& p : anchor_positions(spec, f)) {
                    row.push_back(p[0] >= 0 && p[0] < cd && p[1] >= 0 && p[1] < cd &&
                                  !occluder_covers(spec, f, p[0], p[1]));
                }
                visible.push_back(std::move(row));
            }
            if (!has_disocclusion(visible)) continue;
        }
        return spec;
    }
    throw DataError("random_scene: could not sample a valid scene for seed " + std::to_string(seed));
}

torch::Tensor ClipData::frame(int64_t i) const { return frames[i].to(torch::kFloat32) / 255.0; }

torch::Tensor ClipData::mask(int64_t i) const { return masks[i].to(torch::kInt64); }

ClipData clip_from_records(const std::string& name, const std::vector<FrameRecord>& records, int64_t n_regions) {
    if (records.empty()) throw DataError("clip " + name + " has no frames");
    ClipData clip;
    clip.name = name;
    clip.n_regions = n_regions;
    std::vector<torch::Tensor> frames, masks;
    for (const auto& r : records) {
        frames.push_back((r.image * 255.0).round().to(torch::kUInt8));
        masks.push_back(r.region_mask.to(torch::kUInt8));
        clip.keypoints.push_back(r.keypoints);
        clip.visible.push_back(r.visible);
    }
    clip.frames = torch::stack(frames);
    clip.masks = torch::stack(masks);
    clip.disocclusion = has_disocclusion(clip.visible);
    return clip;
}

std::vector<const ClipData*> Corpus::split(bool eval) const {
    std::vector<const ClipData*> out;
    for (const auto& c : clips) {
        if (c.eval == eval) out.push_back(&c);
    }
    return out;
}

std::vector<const ClipData*> Corpus::disocclusion_split() const {
    std::vector<const ClipData*> out;
    for (const auto& c : clips) {
        if (c.eval && c.disocclusion) out.push_back(&c);
    }
    return out;
}

namespace {

std::string frame_name(const char* prefix, int64_t i) {
    std::ostringstream os;
    os << prefix << std::setw(5) << std::setfill('0') << i << ".png";
    return os.str();
}

std::string clip_name(int64_t i) {
    std::ostringstream os;
    os << "clip_" << std::setw(5) << std::setfill('0') << i;
    return os.str();
}

struct ClipPlan {
    uint64_t seed;
    int64_t n_frames;
    bool eval;
    bool disocclusion;
};

std::vector<ClipPlan> plan_corpus(const CorpusOptions& o) {
    if (o.n_clips < 1) throw DataError("corpus: n_clips must be >= 1");
    if (o.min_frames < 4 || o.max_frames < o.min_frames) throw DataError("corpus: invalid frame range");
    const auto n_eval = static_cast<int64_t>(std::llround(o.eval_fraction * static_cast<double>(o.n_clips)));
    std::vector<ClipPlan> plans;
    for (int64_t i = 0; i < o.n_clips; ++i) {
        std::mt19937_64 rng(derive_seed(o.seed, {static_cast<uint64_t>(i), 17}));
        std::uniform_int_distribution<int64_t> len(o.min_frames, o.max_frames);
        const bool eval = i >= o.n_clips - n_eval;
        const int64_t n_frames = len(rng);
        // evenly interleaved so every split gets the same share of disocclusion clips
        const double f = o.disocclusion_fraction;
        const bool disocclusion = std::floor(static_cast<double>(i + 1) * f) > std::floor(static_cast<double>(i) * f);
        plans.push_back({derive_seed(o.seed, {static_cast<uint64_t>(i)}), n_frames, eval, disocclusion});
    }
    return plans;
}

ClipData make_clip(const ClipPlan& plan, int64_t i, int64_t resolution, SceneSpec* spec_out) {
    auto spec = random_scene(plan.seed, resolution, plan.n_frames, plan.disocclusion);
    auto clip = clip_from_records(clip_name(i), generate_scene(spec), spec.num_regions());
    clip.eval = plan.eval;
    if (spec_out) *spec_out = spec;
    return clip;
}

}  // namespace

Corpus build_corpus_in_memory(const CorpusOptions& options) {
    Corpus corpus;
    corpus.resolution = options.resolution;
    const auto plans = plan_corpus(options);
    for (size_t i = 0; i < plans.size(); ++i) {
        corpus.clips.push_back(make_clip(plans[i], static_cast<int64_t>(i), options.resolution, nullptr));
    }
    return corpus;
}

void write_clip(const fs::path& dir, const ClipData& clip, const SceneSpec* spec) {
    fs::create_directories(dir);
    nlohmann::json frames = nlohmann::json::array();
    for (int64_t i = 0; i < clip.size(); ++i) {
        const auto image = frame_name("frame_", i);
        const auto mask = frame_name("mask_", i);
        write_rgb_png(dir / image, clip.frames[i]);
        write_label_png(dir / mask, clip.masks[i]);
        frames.push_back({{"index", i},
                          {"image", image},
                          {"mask", mask},
                          {"keypoints", clip.keypoints[static_cast<size_t>(i)]},
                          {"visible", clip.visible[static_cast<size_t>(i)]}});
    }
    nlohmann::json gt = {{"schema_version", 1},
                         {"name", clip.name},
                         {"split", clip.eval ? "eval" : "train"},
                         {"disocclusion", clip.disocclusion},
                         {"resolution", clip.resolution()},
                         {"n_frames", clip.size()},
                         {"n_regions", clip.n_regions},
                         {"keypoint_units", "pixels"},
                         {"frames", frames}};
    if (spec) gt["spec"] = to_json(*spec);
    write_file_atomic(dir / "gt.json", gt.dump(1));
}

ClipData read_clip(const fs::path& dir) {
    std::ifstream in(dir / "gt.json");
    if (!in) throw DataError("missing gt.json in " + dir.string());
    nlohmann::json gt;
    try {
        in >> gt;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt gt.json in " + dir.string() + ": " + e.what());
    }
    if (gt.value("schema_version", 0) != 1) throw DataError("unsupported gt.json schema in " + dir.string());
    ClipData clip;
    clip.name = gt.at("name").get<std::string>();
    clip.eval = gt.at("split").get<std::string>() == "eval";
    clip.disocclusion = gt.at("disocclusion").get<bool>();
    clip.n_regions = gt.at("n_regions").get<int64_t>();
    std::vector<torch::Tensor> frames, masks;
    for (const auto& f : gt.at("frames")) {
        frames.push_back((read_rgb_png(dir / f.at("image").get<std::string>()) * 255.0).round().to(torch::kUInt8));
        masks.push_back(read_label_png(dir / f.at("mask").get<std::string>()));
        clip.keypoints.push_back(f.at("keypoints").get<std::vector<std::array<double, 2>>>());
        clip.visible.push_back(f.at("visible").get<std::vector<bool>>());
    }
    if (frames.empty()) throw DataError("clip " + dir.string() + " has no frames");
    clip.frames = torch::stack(frames);
    clip.masks = torch::stack(masks);
    return clip;
}

Corpus build_corpus(const fs::path& root, const CorpusOptions& options) {
    fs::create_directories(root);
    Corpus corpus;
    corpus.resolution = options.resolution;
    const auto plans = plan_corpus(options);
    nlohmann::json index = nlohmann::json::array();
    for (size_t i = 0; i < plans.size(); ++i) {
        SceneSpec spec;
        auto clip = make_clip(plans[i], static_cast<int64_t>(i), options.resolution, &spec);
        write_clip(root / clip.name, clip, &spec);
        index.push_back({{"name", clip.name},
                         {"split", clip.eval ? "eval" : "train"},
                         {"n_frames", clip.size()},
                         {"disocclusion", clip.disocclusion}});
        corpus.clips.push_back(std::move(clip));
    }
    nlohmann::json manifest = {{"schema_version", 1},
                               {"resolution", options.resolution},
                               {"seed", options.seed},
                               {"eval_fraction", options.eval_fraction},
                               {"clips", index}};
    write_file_atomic(root / "corpus.json", manifest.dump(1));
    return corpus;
}

Corpus load_corpus(const fs::path& root) {
    std::ifstream in(root / "corpus.json");
    if (!in) throw DataError("no corpus.json under " + root.string() + " (run datagen first)");
    nlohmann::json manifest;
    in >> manifest;
    Corpus corpus;
    corpus.resolution = manifest.at("resolution").get<int64_t>();
    for (const auto& entry : manifest.at("clips")) {
        corpus.clips.push_back(read_clip(root / entry.at("name").get<std::string>()));
    }
    return corpus;
}

SourceStrategy parse_strategy(const std::string& name) {
    if (name == "first-frame") return SourceStrategy::FirstFrame;
    if (name == "regularly-spaced") return SourceStrategy::RegularlySpaced;
    if (name == "random") return SourceStrategy::Random;
    throw ConfigError("unknown source strategy '" + name + "'");
}

std::vector<int64_t> source_indices(int64_t clip_length, int64_t n_sources, SourceStrategy strategy,
                                    std::mt19937_64* rng, int64_t cap) {
    if (n_sources < 1) throw std::invalid_argument("source_indices: n_sources must be >= 1");
    if (clip_length < n_sources + 1) {
        throw DataError("clip too short: " + std::to_string(clip_length) + " frames for " + std::to_string(n_sources) +
                        " sources plus a driving frame");
    }
    std::vector<int64_t> out;
    switch (strategy) {
        case SourceStrategy::FirstFrame:
            if (n_sources != 1) {
                // first frame plus regular spacing, as in the multi-source protocol
                return source_indices(clip_length, n_sources, SourceStrategy::RegularlySpaced, rng, cap);
            }
            return {0};
        case SourceStrategy::RegularlySpaced: {
            const int64_t length = std::min(clip_length, cap);
            for (int64_t i = 0; i < n_sources; ++i) out.push_back(i * length / n_sources);
            return out;
        }
        case SourceStrategy::Random: {
            if (!rng) throw std::invalid_argument("source_indices: random strategy needs an rng");
            std::uniform_int_distribution<int64_t> pick(0, clip_length - 1);
            while (static_cast<int64_t>(out.size()) < n_sources) {
                const int64_t f = pick(*rng);
                if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
            }
            return out;
        }
    }
    return out;
}

Batch sample_batch(const std::vector<const ClipData*>& clips, int64_t batch_size, int64_t n_sources,
                   SourceStrategy strategy, uint64_t seed, int64_t step) {
    if (clips.empty()) throw DataError("sample_batch: empty clip list");
    Batch batch;
    std::vector<std::vector<torch::Tensor>> sources(static_cast<size_t>(n_sources));
    std::vector<std::vector<torch::Tensor>> masks(static_cast<size_t>(n_sources));
    std::vector<torch::Tensor> driving, driving_masks;
    for (int64_t i = 0; i < batch_size; ++i) {
        std::mt19937_64 rng(derive_seed(seed, {static_cast<uint64_t>(step), static_cast<uint64_t>(i)}));
        std::uniform_int_distribution<size_t> pick_clip(0, clips.size() - 1);
        const size_t ci = pick_clip(rng);
        const ClipData& clip = *clips[ci];
        auto src = source_indices(clip.size(), n_sources, strategy, &rng);
        std::vector<int64_t> remaining;
        for (int64_t f = 0; f < clip.size(); ++f) {
            if (std::find(src.begin(), src.end(), f) == src.end()) remaining.push_back(f);
        }
        std::uniform_int_distribution<size_t> pick_frame(0, remaining.size() - 1);
        const int64_t drv = remaining[pick_frame(rng)];
        for (size_t s = 0; s < src.size(); ++s) {
            sources[s].push_back(clip.frame(src[s]));
            masks[s].push_back(clip.mask(src[s]));
        }
        driving.push_back(clip.frame(drv));
        driving_masks.push_back(clip.mask(drv));
        batch.clip.push_back(static_cast<int64_t>(ci));
        batch.source_frames.push_back(src);
        batch.driving_frame.push_back(drv);
    }
    for (size_t s = 0; s < sources.size(); ++s) {
        batch.sources.push_back(torch::stack(sources[s]));
        batch.source_masks.push_back(torch::stack(masks[s]));
    }
    batch.driving = torch::stack(driving);
    batch.driving_mask = torch::stack(driving_masks);
    return batch;
}

}  // namespace iwarp
