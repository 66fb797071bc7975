#pragma once

// File-level plumbing shared by the command-line tool: corpus access,
// simulate-to-disk, manifest-backed training data and per-system estimates.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "config.hpp"
#include "manifest.hpp"
#include "metrics.hpp"
#include "scene.hpp"
#include "separate.hpp"
#include "training.hpp"
#include "wav.hpp"

namespace nbss {

using Logger = std::function<void(const std::string&)>;

// Seed of scene `index` in a corpus generated from `base`.
inline std::uint64_t scene_seed(std::uint64_t base, std::size_t index) {
    std::seed_seq seq{std::uint32_t(base), std::uint32_t(base >> 32), std::uint32_t(index),
                      std::uint32_t(std::uint64_t(index) >> 32)};
    std::uint32_t w[2];
    seq.generate(w, w + 2);
    return (std::uint64_t(w[0]) << 32) | w[1];
}

inline SceneSettings scene_settings(const Config& cfg) {
    SceneSettings s;
    s.n_speakers = cfg.n_speakers;
    s.scene_samples = cfg.scene_samples;
    s.overlap_min = cfg.overlap_min;
    s.overlap_max = cfg.overlap_max;
    s.limits.rt60_min = cfg.rt60_min;
    s.limits.rt60_max = cfg.rt60_max;
    s.rir.fs = cfg.stft.sample_rate;
    return s;
}

// Dry sources drawn from every .wav below `dir` (sorted, so the choice is
// seed-deterministic). Channel 1 of the file is used; short files are
// looped to the requested length.
inline DrySource corpus_dry_source(const std::filesystem::path& dir, int sample_rate) {
    if (!std::filesystem::is_directory(dir)) throw Error("corpus directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
        if (e.is_regular_file() && ext == ".wav") files.push_back(e.path());
    }
    if (files.empty()) throw Error("no .wav files in corpus " + dir.string());
    std::sort(files.begin(), files.end());
    return [files, sample_rate](std::uint64_t seed, std::size_t, std::size_t n) {
        std::mt19937_64 rng(seed);
        const auto& path = files[std::uniform_int_distribution<std::size_t>(0, files.size() - 1)(rng)];
        const auto w = read_wav(path);
        if (w.sample_rate != sample_rate)
            throw Error(path.string() + ": sample rate " + std::to_string(w.sample_rate) + ", expected " +
                        std::to_string(sample_rate));
        if (w.n_samples() == 0) throw Error(path.string() + ": empty file");
        MultichannelWaveform out(1, n, sample_rate);
        for (std::size_t i = 0; i < n; ++i) out.channels[0][i] = w.channels[0][i % w.n_samples()];
        return out;
    };
}

// Rounds every image to a power-of-two grid shared by the whole scene (about
// float32 resolution at the scene's peak) and rebuilds the mixture as their
// sum. Every value is then exact in float32, so stored files keep
// mixture == sum of images sample for sample.
inline void snap_to_float32_grid(MixtureScene& s) {
    double peak = 0.0;
    for (const auto& c : s.mixture.channels)
        for (double v : c) peak = std::max(peak, std::abs(v));
    for (const auto& img : s.images)
        for (const auto& c : img.channels)
            for (double v : c) peak = std::max(peak, std::abs(v));
    if (!(peak > 0.0)) return;
    // 2^e >= 2 peak; multiples of 2^(e-24) below 2^e fit a 24-bit significand
    const double q = std::ldexp(1.0, std::ilogb(peak) + 2 - 24);
    for (auto& img : s.images)
        for (auto& c : img.channels)
            for (double& v : c) v = std::nearbyint(v / q) * q;
    for (std::size_t m = 0; m < s.mixture.n_channels(); ++m)
        for (std::size_t i = 0; i < s.mixture.n_samples(); ++i) {
            double sum = 0.0;
            for (const auto& img : s.images) sum += img.channels[m][i];
            s.mixture.channels[m][i] = sum;
        }
}

// Simulates `cfg.n_scenes` scenes into out_dir/<id>/{mix,spk1..N}.wav and
// writes out_dir/manifest.jsonl.
inline std::vector<ManifestEntry> simulate_to_disk(const Config& cfg, const DrySource& dry,
                                                   const std::filesystem::path& out_dir, const Logger& log = {}) {
    std::filesystem::create_directories(out_dir);
    const auto settings = scene_settings(cfg);
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < cfg.n_scenes; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "scene_%05zu", i);
        const auto seed = scene_seed(cfg.seed, i);
        auto g = generate_scene(seed, settings, dry);
        snap_to_float32_grid(g.scene);
        if (log)
            for (const auto& n : g.notes) log(std::string(id) + ": " + n);
        ManifestEntry e;
        e.id = id;
        e.seed = seed;
        e.scenario = g.scene.scenario;
        e.overlap_ratio = g.scene.overlap_ratio;
        const auto dir = out_dir / id;
        std::filesystem::create_directories(dir);
        e.mix_path = dir / "mix.wav";
        write_wav(e.mix_path, g.scene.mixture);
        for (std::size_t k = 0; k < g.scene.images.size(); ++k) {
            e.image_paths.push_back(dir / ("spk" + std::to_string(k + 1) + ".wav"));
            write_wav(e.image_paths.back(), g.scene.images[k]);
        }
        entries.push_back(std::move(e));
    }
    write_manifest(out_dir / "manifest.jsonl", entries);
    return entries;
}

inline std::vector<MultichannelWaveform> read_images(const ManifestEntry& e) {
    std::vector<MultichannelWaveform> out;
    for (const auto& p : e.image_paths) out.push_back(read_wav(p));
    return out;
}

inline TrainScene load_train_scene(const ManifestEntry& e, std::size_t ref_channel) {
    TrainScene t;
    t.mixture = read_wav(e.mix_path);
    if (ref_channel >= t.mixture.n_channels()) throw Error(e.id + ": reference channel out of range");
    for (const auto& img : read_images(e)) {
        if (img.n_channels() != t.mixture.n_channels()) throw Error(e.id + ": image and mixture channel counts differ");
        t.targets.push_back(img.channels[ref_channel]);
    }
    return t;
}

inline SceneSource manifest_source(std::vector<ManifestEntry> entries, std::size_t ref_channel) {
    auto shared = std::make_shared<std::vector<ManifestEntry>>(std::move(entries));
    return {shared->size(), [shared, ref_channel](std::size_t i) { return load_train_scene((*shared)[i], ref_channel); }};
}

// Oracle MVDR estimate of every speaker of an entry.
inline std::vector<std::vector<double>> mvdr_estimates(const ManifestEntry& e, std::size_t ref_channel,
                                                       const StftConfig& cfg) {
    const auto mix = read_wav(e.mix_path);
    const auto images = read_images(e);
    const auto X = stft(mix, cfg);
    std::vector<std::vector<double>> out;
    for (const auto& img : images) {
        if (img.n_channels() != mix.n_channels() || img.n_samples() != mix.n_samples())
            throw Error(e.id + ": image does not match the mixture shape");
        auto rest = mix;
        for (std::size_t m = 0; m < rest.n_channels(); ++m)
            for (std::size_t i = 0; i < rest.n_samples(); ++i) rest.channels[m][i] -= img.channels[m][i];
        out.push_back(oracle_mvdr(X, stft(img, cfg), stft(rest, cfg), ref_channel, mix.n_samples()).waveform);
    }
    return out;
}

inline void write_estimates(const std::filesystem::path& dir, const std::vector<std::vector<double>>& est, int fs) {
    std::filesystem::create_directories(dir);
    for (std::size_t k = 0; k < est.size(); ++k) {
        MultichannelWaveform w;
        w.sample_rate = fs;
        w.channels = {est[k]};
        write_wav(dir / ("est_spk" + std::to_string(k + 1) + ".wav"), w);
    }
}

// Estimates previously written for `e` under est_dir/<id>/, if complete.
inline std::optional<std::vector<std::vector<double>>> read_estimates(const std::filesystem::path& est_dir,
                                                                      const ManifestEntry& e) {
    std::vector<std::vector<double>> out;
    for (std::size_t k = 0; k < e.image_paths.size(); ++k) {
        const auto p = est_dir / e.id / ("est_spk" + std::to_string(k + 1) + ".wav");
        if (!std::filesystem::exists(p)) return std::nullopt;
        out.push_back(read_wav(p).channels.at(0));
    }
    return out;
}

}  // namespace nbss
