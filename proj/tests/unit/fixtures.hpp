#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "iwarp/config.hpp"
#include "iwarp/synthetic_data.hpp"

namespace testing {

/// Very small model for fast training tests.
inline iwarp::RunConfig micro_config() {
    iwarp::RunConfig c;
    auto& m = c.model;
    m.num_keypoints = 4;
    m.detector_width = 4;
    m.detector_depth = 2;
    m.unet_width = 4;
    m.unet_depth = 2;
    m.d = 8;
    m.d_prime = 8;
    m.value_width = 4;
    m.decoder_width = 8;
    m.decoder_res_blocks = 1;
    auto& t = c.train;
    t.batch_size = 2;
    t.disc_width = 4;
    t.disc_layers = 2;
    t.perceptual_width = 4;
    t.perceptual_layers = 2;
    t.seed = 7;
    return c;
}

inline const iwarp::Corpus& small_corpus() {
    static const iwarp::Corpus corpus = [] {
        iwarp::CorpusOptions o;
        o.n_clips = 6;
        o.eval_fraction = 2.0 / 6.0;
        o.min_frames = 12;
        o.max_frames = 16;
        o.seed = 3;
        return iwarp::build_corpus_in_memory(o);
    }();
    return corpus;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    std::random_device rd;
    auto dir = std::filesystem::temp_directory_path() / ("iwarp_test_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
