#include "iwarp/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "iwarp/common.hpp"
#include "iwarp/image_io.hpp"

namespace iwarp {

namespace {

double finite_mean(const std::vector<double>& v) {
    double sum = 0;
    int64_t n = 0;
    for (double x : v) {
        if (std::isfinite(x)) {
            sum += x;
            ++n;
        }
    }
    return n > 0 ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

KeypointSet repeat_kp(const KeypointSet& kp, int64_t times) {
    return {kp.locations.repeat({times, 1, 1}), kp.strengths.repeat({times, 1})};
}

}  // namespace

void EvalReport::aggregate() {
    std::vector<double> p, l, f;
    for (const auto& c : clips) {
        p.push_back(c.psnr);
        l.push_back(c.l1);
        f.push_back(c.feature_distance);
    }
    const auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
    };
    psnr = mean(p);
    l1 = mean(l);
    feature_distance = finite_mean(f);
    akd.assign(thresholds.size(), 0);
    mkr.assign(thresholds.size(), 0);
    akd_excluded.clear();
    for (size_t t = 0; t < thresholds.size(); ++t) {
        std::vector<double> a, m;
        for (const auto& c : clips) {
            a.push_back(c.akd[t]);
            m.push_back(c.mkr[t]);
            if (!std::isfinite(c.akd[t])) akd_excluded.push_back(c.clip);
        }
        akd[t] = finite_mean(a);
        mkr[t] = finite_mean(m);
    }
    std::sort(akd_excluded.begin(), akd_excluded.end());
    akd_excluded.erase(std::unique(akd_excluded.begin(), akd_excluded.end()), akd_excluded.end());
}

bool EvalReport::all_finite() const {
    if (!std::isfinite(psnr) || !std::isfinite(l1) || !std::isfinite(feature_distance)) return false;
    for (const auto& c : clips) {
        if (!std::isfinite(c.psnr) || !std::isfinite(c.l1)) return false;
    }
    // AKD of a clip without matches is excluded, not non-finite
    for (double m : mkr) {
        if (!std::isfinite(m)) return false;
    }
    return true;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    for (const auto& c : clips) {
        nlohmann::json a = nlohmann::json::array(), m = nlohmann::json::array();
        for (size_t t = 0; t < thresholds.size(); ++t) {
            a.push_back(num(c.akd[t]));
            m.push_back(num(c.mkr[t]));
        }
        rows.push_back({{"clip", c.clip},
                        {"n_frames", c.n_frames},
                        {"source_frames", c.source_frames},
                        {"psnr", num(c.psnr)},
                        {"l1", num(c.l1)},
                        {"feature_distance", num(c.feature_distance)},
                        {"akd", a},
                        {"mkr", m}});
    }
    nlohmann::json akd_j = nlohmann::json::array(), mkr_j = nlohmann::json::array();
    for (size_t t = 0; t < thresholds.size(); ++t) {
        akd_j.push_back(num(akd[t]));
        mkr_j.push_back(num(mkr[t]));
    }
    return {{"n_sources", n_sources},
            {"strategy", strategy},
            {"fuse", fuse},
            {"split", split},
            {"top_k", top_k},
            {"akd_units", "pixels"},
            {"l1_psnr_scale", "0-255"},
            {"thresholds", thresholds},
            {"aggregate",
             {{"psnr", num(psnr)},
              {"l1", num(l1)},
              {"feature_distance", num(feature_distance)},
              {"akd", akd_j},
              {"mkr", mkr_j},
              {"n_clips", clips.size()}}},
            {"akd_excluded_clips", akd_excluded},
            {"clips", rows}};
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "clip,fuse,n_sources,strategy,n_frames,psnr,l1,feature_distance";
    for (double t : thresholds) os << ",akd@" << t << ",mkr@" << t;
    os << "\n" << std::setprecision(10);
    for (const auto& c : clips) {
        os << c.clip << "," << fuse << "," << n_sources << "," << strategy << "," << c.n_frames << "," << c.psnr
           << "," << c.l1 << "," << c.feature_distance;
        for (size_t t = 0; t < thresholds.size(); ++t) os << "," << c.akd[t] << "," << c.mkr[t];
        os << "\n";
    }
    return os.str();
}

void EvalReport::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "report.json", to_json().dump(2) + "\n");
    write_file_atomic(dir / "clips.csv", to_csv());
}

torch::Tensor reconstruct_clip(Generator& generator, const ClipData& clip, const std::vector<int64_t>& source_frames,
                               const std::vector<int64_t>& driving_frames, const GenerateOptions& options,
                               int64_t chunk) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> src;
    for (int64_t s : source_frames) src.push_back(clip.frame(s).unsqueeze(0));
    auto src_kp = generator->detector->forward(torch::cat(src, 0));
    std::vector<torch::Tensor> out;
    for (size_t begin = 0; begin < driving_frames.size(); begin += static_cast<size_t>(chunk)) {
        const size_t end = std::min(driving_frames.size(), begin + static_cast<size_t>(chunk));
        const auto b = static_cast<int64_t>(end - begin);
        std::vector<torch::Tensor> drv;
        for (size_t i = begin; i < end; ++i) drv.push_back(clip.frame(driving_frames[i]));
        auto driving = torch::stack(drv);
        std::vector<torch::Tensor> sources;
        std::vector<KeypointSet> kps;
        for (size_t s = 0; s < src.size(); ++s) {
            sources.push_back(src[s].repeat({b, 1, 1, 1}));
            kps.push_back(repeat_kp(src_kp.slice(static_cast<int64_t>(s), static_cast<int64_t>(s) + 1), b));
        }
        auto res = generator->synthesize(sources, kps, generator->detector->forward(driving), options);
        out.push_back(res.image);
    }
    return torch::cat(out, 0);
}

EvalReport evaluate(Generator& generator, const std::vector<const ClipData*>& clips, const EvalConfig& config,
                    const EvalOptions& options) {
    torch::NoGradGuard no_grad;
    generator->eval();
    FeatureExtractor extractor(options.extractor);
    EvalReport report;
    report.n_sources = config.n_sources;
    report.strategy = config.strategy;
    report.fuse = config.fuse;
    report.split = config.split;
    report.top_k = config.top_k;
    report.thresholds = options.thresholds;

    GenerateOptions gen;
    gen.fuse = parse_fuse_mode(config.fuse);
    gen.top_k = config.top_k;
    const auto strategy = parse_strategy(config.strategy);
    const int64_t stride = std::max<int64_t>(config.frame_stride, 1);

    size_t n_clips = clips.size();
    if (config.max_clips > 0) n_clips = std::min(n_clips, static_cast<size_t>(config.max_clips));
    for (size_t ci = 0; ci < n_clips; ++ci) {
        const ClipData& clip = *clips[ci];
        const int64_t length = std::min(clip.size(), config.max_frames);
        ClipMetrics m;
        m.clip = clip.name;
        m.source_frames = source_indices(clip.size(), config.n_sources, strategy, nullptr, config.max_frames);
        std::vector<int64_t> driving;
        for (int64_t f = 0; f < length; f += stride) driving.push_back(f);
        m.n_frames = static_cast<int64_t>(driving.size());

        // outputs are scored as the 8-bit frames `animate` would write
        auto pred = quantize_8bit(reconstruct_clip(generator, clip, m.source_frames, driving, gen, options.chunk));
        std::vector<torch::Tensor> gt_list, pred_list;
        std::vector<std::vector<std::array<double, 2>>> anchors;
        std::vector<std::vector<bool>> visible;
        for (size_t i = 0; i < driving.size(); ++i) {
            gt_list.push_back(clip.frame(driving[i]));
            pred_list.push_back(pred[static_cast<int64_t>(i)]);
            anchors.push_back(clip.keypoints[static_cast<size_t>(driving[i])]);
            visible.push_back(clip.visible[static_cast<size_t>(driving[i])]);
        }
        auto gt = torch::stack(gt_list);
        double psnr_sum = 0, l1_sum = 0;
        for (size_t i = 0; i < driving.size(); ++i) {
            psnr_sum += psnr(pred_list[i], gt_list[i]);
            l1_sum += l1_error(pred_list[i], gt_list[i]);
        }
        m.psnr = psnr_sum / static_cast<double>(driving.size());
        m.l1 = l1_sum / static_cast<double>(driving.size());
        m.feature_distance = driving.size() >= 2
                                 ? feature_distance(extractor->pooled(pred), extractor->pooled(gt))
                                 : std::numeric_limits<double>::quiet_NaN();
        for (const auto& acc : akd_mkr(pred_list, gt_list, anchors, visible, options.thresholds, options.match)) {
            m.akd.push_back(acc.akd());
            m.mkr.push_back(acc.mkr());
        }
        report.clips.push_back(std::move(m));
    }
    report.aggregate();
    return report;
}

ExtraBankUsage extra_bank_usage(Generator& generator, const ClipData& clip, int64_t source_frame,
                                const std::vector<int64_t>& driving_frames, int64_t region) {
    torch::NoGradGuard no_grad;
    generator->eval();
    const auto b = static_cast<int64_t>(driving_frames.size());
    std::vector<torch::Tensor> drv, drv_mask;
    for (int64_t f : driving_frames) {
        drv.push_back(clip.frame(f));
        drv_mask.push_back(clip.mask(f));
    }
    auto driving = torch::stack(drv);
    auto affected = torch::stack(drv_mask).reshape({b, -1}).eq(region);  // [B, q]
    auto source = clip.frame(source_frame).unsqueeze(0).repeat({b, 1, 1, 1});
    auto source_mask = clip.mask(source_frame).unsqueeze(0).repeat({b, 1, 1});

    auto base = generator->forward({source}, driving);
    auto labels = row_region_labels(base.bundle, {source_mask});
    GenerateOptions drop;
    drop.key_mask = labels.ne(region);
    auto dropped = generator->forward({source}, driving, drop);

    std::vector<int64_t> extra_rows;
    for (int64_t i = 0; i < base.bundle.size(); ++i) {
        if (base.bundle.source_id[static_cast<size_t>(i)] == kExtraSource) extra_rows.push_back(i);
    }
    auto extra_index = torch::tensor(extra_rows, torch::kLong);
    auto mass = [&](const GeneratorOutput& out) {
        auto m = out.attention.attention.index_select(2, extra_index).sum(2);  // [B, q]
        return m.masked_select(affected).mean().item<double>();
    };
    ExtraBankUsage usage;
    usage.affected_rows = affected.sum().item<int64_t>();
    if (usage.affected_rows == 0) {
        throw std::invalid_argument("extra_bank_usage: region " + std::to_string(region) +
                                    " is absent from the driving frames");
    }
    usage.baseline_mass = mass(base);
    usage.dropped_mass = mass(dropped);
    return usage;
}

}  // namespace iwarp
