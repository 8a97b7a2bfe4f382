#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace iwarp {

/// value(f) = start + velocity f + amplitude sin(2 pi f / period + phase)
struct Motion {
    double start = 0;
    double velocity = 0;
    double amplitude = 0;
    double period = 1;
    double phase = 0;

    double at(int64_t frame) const;
};

enum class PartShape { Ellipse = 0, Rectangle = 1, Triangle = 2 };

/// One rigid part of a sprite, in sprite-local units.
struct PartSpec {
    PartShape shape = PartShape::Ellipse;
    double cx = 0, cy = 0;  // center
    double rx = 1, ry = 1;  // half extents
    double angle = 0;
    std::array<double, 3> color{1, 1, 1};
    std::array<double, 3> color2{0, 0, 0};
    int pattern = 0;  // 0 solid, 1 stripes, 2 checker
    double pattern_scale = 3.0;
};

inline constexpr int64_t kPartsPerSprite = 4;
inline constexpr int64_t kAnchorsPerSprite = 8;

struct SpriteSpec {
    std::vector<PartSpec> parts;                   // kPartsPerSprite, later parts drawn on top
    std::vector<std::array<double, 2>> anchors;    // kAnchorsPerSprite, sprite-local
    double size = 6.0;                             // pixels per local unit
    Motion x, y, rotation, scale;                  // center in pixels, radians, multiplier
};

/// Axis-aligned rectangle drawn above every sprite.
struct OccluderSpec {
    double width = 10, height = 10;
    Motion x, y;
    std::array<double, 3> color{0.5, 0.5, 0.5};
};

struct SceneSpec {
    uint64_t seed = 0;
    int64_t canvas = 64;
    int background_id = 0;
    std::array<double, 3> background_a{0.2, 0.2, 0.2};
    std::array<double, 3> background_b{0.4, 0.4, 0.4};
    std::vector<SpriteSpec> sprites;
    std::vector<OccluderSpec> occluders;
    int64_t n_frames = 60;

    int64_t num_regions() const;
    int64_t num_anchors() const { return static_cast<int64_t>(sprites.size()) * kAnchorsPerSprite; }
};

nlohmann::json to_json(const SceneSpec& spec);

/// Keypoints are in pixel units (pixel i spans [i, i + 1)).
struct FrameRecord {
    torch::Tensor image;        // [3, H, W] float on the 8-bit grid
    std::vector<std::array<double, 2>> keypoints;
    std::vector<bool> visible;
    torch::Tensor region_mask;  // [H/4, W/4] int64 labels
};

/// Throws DataError on malformed specs or when a sprite has fewer than half of
/// its anchors on canvas in some frame.
void validate(const SceneSpec& spec);

std::vector<std::array<double, 2>> anchor_positions(const SceneSpec& spec, int64_t frame);
bool occluder_covers(const SceneSpec& spec, int64_t frame, double x, double y);
FrameRecord render_frame(const SceneSpec& spec, int64_t frame);
std::vector<FrameRecord> generate_scene(const SceneSpec& spec);

/// Random valid scene. With `disocclusion`, an occluder hides part of the sprite
/// in frame 0 and uncovers it later.
SceneSpec random_scene(uint64_t seed, int64_t canvas, int64_t n_frames, bool disocclusion);

/// Anchors hidden in frame 0 but visible in a later regularly spaced source frame
/// (n_sources = 2 or 3, clip capped at `cap` frames).
bool has_disocclusion(const std::vector<std::vector<bool>>& visible, int64_t cap = 180);

struct ClipData {
    std::string name;
    bool eval = false;
    bool disocclusion = false;
    int64_t n_regions = 0;
    torch::Tensor frames;  // [N, 3, H, W] uint8
    torch::Tensor masks;   // [N, H/4, W/4] uint8
    std::vector<std::vector<std::array<double, 2>>> keypoints;
    std::vector<std::vector<bool>> visible;

    int64_t size() const { return frames.size(0); }
    int64_t resolution() const { return frames.size(2); }
    torch::Tensor frame(int64_t i) const;  // [3, H, W] float
    torch::Tensor mask(int64_t i) const;   // [H/4, W/4] int64
};

ClipData clip_from_records(const std::string& name, const std::vector<FrameRecord>& records, int64_t n_regions);

struct Corpus {
    int64_t resolution = 64;
    std::vector<ClipData> clips;

    std::vector<const ClipData*> split(bool eval) const;
    std::vector<const ClipData*> disocclusion_split() const;
};

struct CorpusOptions {
    int64_t n_clips = 232;
    int64_t resolution = 64;
    uint64_t seed = 0;
    double eval_fraction = 32.0 / 232.0;
    int64_t min_frames = 60;
    int64_t max_frames = 180;
    double disocclusion_fraction = 0.5;
};

/// Generates every clip (frame PNGs, label PNGs, gt.json) under `root`.
Corpus build_corpus(const std::filesystem::path& root, const CorpusOptions& options);
Corpus build_corpus_in_memory(const CorpusOptions& options);
void write_clip(const std::filesystem::path& dir, const ClipData& clip, const SceneSpec* spec = nullptr);
ClipData read_clip(const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& root);

enum class SourceStrategy { FirstFrame, RegularlySpaced, Random };

SourceStrategy parse_strategy(const std::string& name);

/// Source frame indices. first-frame: {0}; regularly-spaced: i * L / n with
/// L = min(clip_length, cap); random: distinct uniform frames (needs rng).
std::vector<int64_t> source_indices(int64_t clip_length, int64_t n_sources, SourceStrategy strategy,
                                    std::mt19937_64* rng = nullptr, int64_t cap = 180);

struct Batch {
    std::vector<torch::Tensor> sources;       // n_sources x [B, 3, H, W]
    std::vector<torch::Tensor> source_masks;  // n_sources x [B, h, w] int64
    torch::Tensor driving;                    // [B, 3, H, W]
    torch::Tensor driving_mask;               // [B, h, w]
    std::vector<int64_t> clip;
    std::vector<std::vector<int64_t>> source_frames;
    std::vector<int64_t> driving_frame;
};

/// Per-sample randomness comes from derive_seed(seed, {step, sample}), so the
/// batch is independent of sampling order.
Batch sample_batch(const std::vector<const ClipData*>& clips, int64_t batch_size, int64_t n_sources,
                   SourceStrategy strategy, uint64_t seed, int64_t step);

}  // namespace iwarp
