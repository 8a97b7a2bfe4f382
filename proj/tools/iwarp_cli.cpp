// iwarp: datagen / train / animate / evaluate / bench.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "iwarp/common.hpp"
#include "iwarp/config.hpp"
#include "iwarp/evaluation.hpp"
#include "iwarp/image_io.hpp"
#include "iwarp/implicit_attention.hpp"
#include "iwarp/synthetic_data.hpp"
#include "iwarp/training.hpp"

namespace fs = std::filesystem;
using namespace iwarp;

namespace {

struct CommonFlags {
    std::string config;
    std::string preset = "default";
    std::vector<std::string> overrides;
    int64_t seed = -1;
    bool deterministic = false;
    std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_config = true) {
    if (with_config) {
        cmd->add_option("--config", f.config, "Config file (flat 'key = value' lines)");
        cmd->add_option("--preset", f.preset, "Base preset when no config file is given")
            ->check(CLI::IsMember({"default", "tiny"}));
        cmd->add_option("--set", f.overrides, "Override a config key, e.g. --set train.steps=200");
    }
    cmd->add_option("--seed", f.seed, "Random seed");
    cmd->add_flag("--deterministic", f.deterministic, "Single-threaded deterministic kernels");
    cmd->add_option("--out", f.out, "Output directory");
}

RunConfig resolve_config(const CommonFlags& f) {
    RunConfig cfg = f.config.empty() ? preset_config(f.preset) : RunConfig::from_file(f.config);
    for (const auto& kv : f.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump() << std::endl; }

std::vector<fs::path> frame_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a frame directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && e.path().extension() == ".png" && name.rfind("mask_", 0) != 0) {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no PNG frames in " + dir.string());
    return files;
}

torch::Tensor read_frame_checked(const fs::path& path, int64_t resolution) {
    auto img = read_rgb_png(path);
    if (img.size(1) != resolution || img.size(2) != resolution) {
        throw ShapeError("frame " + path.string() + " is " + std::to_string(img.size(2)) + "x" +
                         std::to_string(img.size(1)) + ", model expects " + std::to_string(resolution) + "x" +
                         std::to_string(resolution));
    }
    return img;
}

// ---- datagen ----

struct DatagenFlags {
    CommonFlags common;
    int64_t n_clips = -1;
    int64_t resolution = -1;
    double eval_fraction = -1;
    int64_t min_frames = -1;
    int64_t max_frames = -1;
};

int run_datagen(DatagenFlags& f) {
    auto cfg = resolve_config(f.common);
    CorpusOptions o;
    o.n_clips = f.n_clips > 0 ? f.n_clips : cfg.data.n_clips;
    o.resolution = f.resolution > 0 ? f.resolution : cfg.model.image_size;
    o.seed = static_cast<uint64_t>(f.common.seed >= 0 ? f.common.seed : cfg.data.seed);
    o.eval_fraction = f.eval_fraction >= 0 ? f.eval_fraction : cfg.data.eval_fraction;
    o.min_frames = f.min_frames > 0 ? f.min_frames : cfg.data.min_frames;
    o.max_frames = f.max_frames > 0 ? f.max_frames : cfg.data.max_frames;
    const fs::path out = f.common.out.empty() ? fs::path(cfg.data.root) : fs::path(f.common.out);
    auto corpus = build_corpus(out, o);
    print_json({{"out", out.string()},
                {"clips", corpus.clips.size()},
                {"eval_clips", corpus.split(true).size()},
                {"disocclusion_eval_clips", corpus.disocclusion_split().size()}});
    return 0;
}

// ---- train ----

struct TrainFlags {
    CommonFlags common;
    std::string data;
    int64_t steps = -1;
    int64_t n_sources_train = -1;
    bool resume = false;
    bool quiet = false;
};

int run_train(TrainFlags& f) {
    const fs::path out = f.common.out.empty() ? fs::path("checkpoints") : fs::path(f.common.out);
    std::unique_ptr<Trainer> trainer;
    auto apply_flags = [&](RunConfig& cfg) {
        if (f.common.seed >= 0) cfg.train.seed = f.common.seed;
        if (f.common.deterministic) cfg.train.deterministic = true;
        if (f.steps >= 0) cfg.train.steps = f.steps;
        if (f.n_sources_train >= 0) cfg.train.n_sources_train = f.n_sources_train;
        if (!f.data.empty()) cfg.data.root = f.data;
    };
    if (f.resume) {
        trainer = Trainer::load(out);
        auto& cfg = trainer->mutable_config();
        for (const auto& kv : f.common.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            if (kv.rfind("model.", 0) == 0) throw ConfigError("--resume cannot change model keys");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        apply_flags(cfg);
        cfg.validate();
        configure_determinism(cfg.train.deterministic);
    } else {
        auto cfg = resolve_config(f.common);
        apply_flags(cfg);
        trainer = std::make_unique<Trainer>(cfg);
    }
    const auto& cfg = trainer->config();
    auto corpus = load_corpus(cfg.data.root);
    auto clips = corpus.split(false);
    if (clips.empty()) throw DataError("no training clips under " + cfg.data.root);
    fs::create_directories(out);
    write_file_atomic(out / "config.txt", cfg.to_text());
    const auto start = std::chrono::steady_clock::now();
    trainer->run(clips, out, out / "losses.jsonl", [&](const LossReport& r) {
        if (!f.quiet) print_json(r.to_json());
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    print_json({{"checkpoint", out.string()}, {"step", trainer->step()}, {"seconds", secs}});
    return 0;
}

// ---- animate ----

struct AnimateFlags {
    CommonFlags common;
    std::string checkpoint;
    std::vector<std::string> sources;
    std::string driving;
    int64_t top_k = 0;
    std::string fuse = "attention";
};

int run_animate(AnimateFlags& f) {
    if (f.common.out.empty()) throw CLI::ValidationError("--out", "animate needs an output directory");
    if (f.common.deterministic) configure_determinism(true);
    RunConfig cfg;
    auto generator = load_generator(f.checkpoint, &cfg);
    const int64_t res = cfg.model.image_size;

    std::vector<torch::Tensor> sources;
    for (const auto& s : f.sources) sources.push_back(read_frame_checked(s, res).unsqueeze(0));
    auto driving = frame_files(f.driving);

    GenerateOptions options;
    options.fuse = parse_fuse_mode(f.fuse);
    options.top_k = f.top_k;
    const int64_t cells = cfg.model.grid() * cfg.model.grid();
    const int64_t n_extra = cfg.model.resolved_n_extra();
    const auto n = static_cast<int64_t>(sources.size());
    const int64_t k = options.fuse == FuseMode::Attention ? n * cells + n_extra : cells + n_extra;
    print_json({{"n_sources", n}, {"k", k}, {"k_source_rows", n * cells}, {"n_extra", n_extra},
                {"top_k", f.top_k}, {"fuse", f.fuse}, {"driving_frames", driving.size()}});

    const fs::path out = f.common.out;
    fs::create_directories(out);
    torch::NoGradGuard no_grad;
    auto src_kp = generator->detector->forward(torch::cat(sources, 0));
    std::vector<KeypointSet> kps;
    for (int64_t s = 0; s < n; ++s) kps.push_back(src_kp.slice(s, s + 1));
    for (size_t i = 0; i < driving.size(); ++i) {
        auto frame = read_frame_checked(driving[i], res).unsqueeze(0);
        auto result = generator->synthesize(sources, kps, generator->detector->forward(frame), options);
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%05zu.png", i);
        write_rgb_png(out / name, result.image[0]);
    }
    print_json({{"out", out.string()}, {"frames", driving.size()}});
    return 0;
}

// ---- evaluate ----

struct EvaluateFlags {
    CommonFlags common;
    std::string checkpoint;
    std::string data;
    int64_t n_sources = -1;
    std::string strategy;
    std::string fuse;
    std::string split;
    int64_t max_clips = -1;
    int64_t frame_stride = -1;
    int64_t max_frames = -1;
    int64_t top_k = -1;
};

int run_evaluate(EvaluateFlags& f) {
    if (f.common.deterministic) configure_determinism(true);
    RunConfig cfg;
    auto generator = load_generator(f.checkpoint, &cfg);
    // the eval section comes from the command line / config file, not the checkpoint
    if (!f.common.config.empty() || !f.common.overrides.empty() || f.common.preset != "default") {
        cfg.eval = resolve_config(f.common).eval;
    }
    auto& e = cfg.eval;
    if (f.n_sources > 0) e.n_sources = f.n_sources;
    if (!f.strategy.empty()) e.strategy = f.strategy;
    else if (f.n_sources > 1) e.strategy = "regularly-spaced";
    if (!f.fuse.empty()) e.fuse = f.fuse;
    if (!f.split.empty()) e.split = f.split;
    if (f.max_clips >= 0) e.max_clips = f.max_clips;
    if (f.frame_stride > 0) e.frame_stride = f.frame_stride;
    if (f.max_frames > 0) e.max_frames = f.max_frames;
    if (f.top_k >= 0) e.top_k = f.top_k;
    cfg.validate();

    const std::string root = f.data.empty() ? cfg.data.root : f.data;
    auto corpus = load_corpus(root);
    auto clips = e.split == "disocclusion" ? corpus.disocclusion_split() : corpus.split(true);
    if (clips.empty()) throw DataError("no clips in split '" + e.split + "' under " + root);

    EvalOptions options;
    options.extractor = FeatureExtractorOptions{cfg.train.perceptual_width, cfg.train.perceptual_layers,
                                                static_cast<uint64_t>(cfg.train.perceptual_seed), true};
    auto report = evaluate(generator, clips, e, options);
    const fs::path out = f.common.out.empty() ? fs::path("eval") : fs::path(f.common.out);
    report.write(out);
    auto summary = report.to_json();
    summary.erase("clips");
    print_json(summary);
    if (!report.all_finite()) {
        std::cerr << "evaluate: non-finite metric in report" << std::endl;
        return 2;
    }
    return 0;
}

// ---- bench ----

struct BenchFlags {
    CommonFlags common;
    std::vector<int64_t> q{256};
    std::vector<int64_t> k{282, 538};
    std::vector<int64_t> d{128};
    std::vector<int64_t> dv{256};
    std::vector<int64_t> top_k{1, 8, 32, 128};
    int64_t repeats = 5;
};

int run_bench(BenchFlags& f) {
    if (f.common.deterministic) configure_determinism(true);
    torch::NoGradGuard no_grad;
    const uint64_t seed = static_cast<uint64_t>(f.common.seed >= 0 ? f.common.seed : 0);
    torch::manual_seed(seed);
    std::ostringstream csv;
    csv << "q,k,d,d_prime,mode,top_k,wall_ms,max_abs_err\n";
    auto time_ms = [&](const std::function<torch::Tensor()>& fn, torch::Tensor& result) {
        double best_total = 0;
        for (int64_t r = 0; r < f.repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            result = fn();
            best_total += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        return best_total / static_cast<double>(std::max<int64_t>(f.repeats, 1));
    };
    for (int64_t q : f.q)
        for (int64_t k : f.k)
            for (int64_t d : f.d)
                for (int64_t dv : f.dv) {
                    auto Q = torch::randn({1, q, d});
                    auto K = torch::randn({1, k, d});
                    auto V = torch::randn({1, k, dv});
                    const double scale = std::sqrt(static_cast<double>(d));
                    torch::Tensor dense;
                    const double dense_ms = time_ms([&] { return attend(Q, K, V, scale).warped; }, dense);
                    csv << q << "," << k << "," << d << "," << dv << ",dense," << k << "," << dense_ms << ",0\n";
                    std::vector<int64_t> ks = f.top_k;
                    ks.push_back(k);
                    for (int64_t kk : ks) {
                        if (kk < 1 || kk > k) continue;
                        torch::Tensor sparse;
                        const double ms = time_ms([&] { return topk_attend(Q, K, V, scale, kk).warped; }, sparse);
                        const double err = (sparse - dense).abs().max().item<double>();
                        csv << q << "," << k << "," << d << "," << dv << ",topk," << kk << "," << ms << "," << err
                            << "\n";
                    }
                }
    if (f.common.out.empty()) {
        std::cout << csv.str();
    } else {
        fs::create_directories(f.common.out);
        write_file_atomic(fs::path(f.common.out) / "bench.csv", csv.str());
        std::cout << csv.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Implicit-warping image animation on a synthetic corpus"};
    app.require_subcommand(1);

    DatagenFlags dg;
    auto* datagen = app.add_subcommand("datagen", "Generate the synthetic video corpus");
    add_common(datagen, dg.common);
    datagen->add_option("--n-clips", dg.n_clips, "Number of clips");
    datagen->add_option("--resolution", dg.resolution, "Frame size in pixels");
    datagen->add_option("--eval-fraction", dg.eval_fraction, "Fraction of clips held out for evaluation");
    datagen->add_option("--min-frames", dg.min_frames);
    datagen->add_option("--max-frames", dg.max_frames);

    TrainFlags tr;
    auto* train = app.add_subcommand("train", "Train a model; the checkpoint goes to --out");
    add_common(train, tr.common);
    train->add_option("--data", tr.data, "Corpus directory (default: data.root)");
    train->add_option("--steps", tr.steps, "Total training steps");
    train->add_option("--n-sources-train", tr.n_sources_train, "Sources per sample (0: 1 or 2 at random)");
    train->add_flag("--resume", tr.resume, "Continue from the checkpoint in --out");
    train->add_flag("--quiet", tr.quiet, "Do not echo per-step losses");

    AnimateFlags an;
    auto* animate = app.add_subcommand("animate", "Animate source frame(s) with a driving frame directory");
    add_common(animate, an.common, false);
    animate->add_option("--checkpoint", an.checkpoint, "Checkpoint directory")->required();
    animate->add_option("--source", an.sources, "Source frame PNG (repeat for several sources)")->required();
    animate->add_option("--driving", an.driving, "Directory of driving frame PNGs")->required();
    animate->add_option("--topk", an.top_k, "Keep the top-k attention entries per row (0: dense)")
        ->check(CLI::NonNegativeNumber);
    animate->add_option("--fuse", an.fuse, "attention | average")->check(CLI::IsMember({"attention", "average"}));

    EvaluateFlags ev;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Reconstruction metrics on the held-out clips");
    add_common(evaluate_cmd, ev.common);
    evaluate_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
    evaluate_cmd->add_option("--data", ev.data, "Corpus directory (default: data.root)");
    evaluate_cmd->add_option("--n-sources", ev.n_sources, "Source frames per clip");
    evaluate_cmd->add_option("--strategy", ev.strategy, "first-frame | regularly-spaced");
    evaluate_cmd->add_option("--fuse", ev.fuse, "attention | average");
    evaluate_cmd->add_option("--split", ev.split, "eval | disocclusion");
    evaluate_cmd->add_option("--max-clips", ev.max_clips, "Limit the number of clips (0: all)");
    evaluate_cmd->add_option("--frame-stride", ev.frame_stride, "Score every n-th frame");
    evaluate_cmd->add_option("--max-frames", ev.max_frames, "Clip length cap");
    evaluate_cmd->add_option("--topk", ev.top_k, "Sparse attention at inference (0: dense)");

    BenchFlags bf;
    auto* bench = app.add_subcommand("bench", "Dense vs top-k attention timing and error (CSV)");
    add_common(bench, bf.common, false);
    bench->add_option("--q", bf.q, "Query counts")->delimiter(',');
    bench->add_option("--k", bf.k, "Key counts")->delimiter(',');
    bench->add_option("--d", bf.d, "Key width")->delimiter(',');
    bench->add_option("--dv", bf.dv, "Value width")->delimiter(',');
    bench->add_option("--topk", bf.top_k, "Top-k values")->delimiter(',');
    bench->add_option("--repeats", bf.repeats, "Timing repeats");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*datagen) return run_datagen(dg);
        if (*train) return run_train(tr);
        if (*animate) return run_animate(an);
        if (*evaluate_cmd) return run_evaluate(ev);
        if (*bench) return run_bench(bf);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << std::endl;
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 1;
    } catch (const c10::Error& e) {
        std::cerr << "error: " << e.what_without_backtrace() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 1;
}
