#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "iwarp/config.hpp"
#include "iwarp/feature_extractor.hpp"
#include "iwarp/generator.hpp"
#include "iwarp/metrics.hpp"
#include "iwarp/synthetic_data.hpp"

namespace iwarp {

struct ClipMetrics {
    std::string clip;
    int64_t n_frames = 0;
    std::vector<int64_t> source_frames;
    double psnr = 0;
    double l1 = 0;
    double feature_distance = 0;
    std::vector<double> akd;  // per threshold, NaN when no anchor matched
    std::vector<double> mkr;  // per threshold
};

/// Per-clip rows and clip-mean aggregates. AKD is in pixels at output resolution.
struct EvalReport {
    int64_t n_sources = 1;
    std::string strategy;
    std::string fuse;
    std::string split;
    int64_t top_k = 0;
    std::vector<double> thresholds;
    std::vector<ClipMetrics> clips;

    double psnr = 0;
    double l1 = 0;
    double feature_distance = 0;
    std::vector<double> akd;
    std::vector<double> mkr;
    std::vector<std::string> akd_excluded;  // clips with no matched anchor at some threshold

    void aggregate();
    bool all_finite() const;
    nlohmann::json to_json() const;
    std::string to_csv() const;
    /// Writes report.json and clips.csv under `dir`.
    void write(const std::filesystem::path& dir) const;
};

struct EvalOptions {
    std::vector<double> thresholds{0.3, 0.5, 0.7};
    AnchorMatchOptions match;
    FeatureExtractorOptions extractor;
    int64_t chunk = 16;  // driving frames per forward pass
};

/// Reconstructs every frame_stride-th frame (up to max_frames) of each clip
/// from n_sources source frames picked by the strategy.
EvalReport evaluate(Generator& generator, const std::vector<const ClipData*>& clips, const EvalConfig& config,
                    const EvalOptions& options = {});

/// Reconstructed frames [N, 3, H, W] of one clip for the given driving frames.
torch::Tensor reconstruct_clip(Generator& generator, const ClipData& clip, const std::vector<int64_t>& source_frames,
                               const std::vector<int64_t>& driving_frames, const GenerateOptions& options,
                               int64_t chunk = 16);

struct ExtraBankUsage {
    double dropped_mass = 0;   // mean extra-bank mass over affected rows with the region removed
    double baseline_mass = 0;  // the same rows without dropout
    int64_t affected_rows = 0;
};

/// Removes every source row labelled `region` and measures how much attention
/// the driving cells of that region put on the extra bank.
ExtraBankUsage extra_bank_usage(Generator& generator, const ClipData& clip, int64_t source_frame,
                                const std::vector<int64_t>& driving_frames, int64_t region);

}  // namespace iwarp
