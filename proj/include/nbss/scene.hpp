#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "room_sim.hpp"
#include "synthetic.hpp"

namespace nbss {

struct SceneSettings {
    std::size_t n_speakers = 2;
    std::size_t scene_samples = 64000;
    double overlap_min = 0.1, overlap_max = 1.0;
    ScenarioLimits limits;
    RirOptions rir;
    std::size_t max_attempts = 100;
};

// Dry single-channel source for one speaker slot of a scene.
using DrySource = std::function<MultichannelWaveform(std::uint64_t seed, std::size_t speaker, std::size_t n_samples)>;

inline DrySource surrogate_dry_source() {
    return [](std::uint64_t seed, std::size_t, std::size_t n) { return surrogate_source(seed, n); };
}

struct GeneratedScene {
    MixtureScene scene;   // images[k] belongs to scenario speaker k
    std::vector<std::string> notes;  // resampling events
};

// Fully determined by (seed, settings, dry source). Scenarios whose rt60 the
// room cannot reach are redrawn. Two speakers follow the head/tail overlap
// layout with a fair coin deciding which one leads; other counts overlap
// fully.
inline GeneratedScene generate_scene(std::uint64_t seed, const SceneSettings& s, const DrySource& dry) {
    std::mt19937_64 rng(seed);
    GeneratedScene out;
    RoomScenario scn;
    RirSet rirs;
    for (std::size_t attempt = 0;; ++attempt) {
        if (attempt == s.max_attempts) throw Error("no achievable scenario after repeated resampling");
        scn = sample_scenario(rng(), s.n_speakers, s.limits);
        try {
            rirs = simulate_rir(scn, s.rir);
            break;
        } catch (const Error& e) {
            out.notes.push_back(std::string(e.what()) + " (rt60 " + std::to_string(scn.rt60) + "), resampled");
        }
    }
    const double ratio =
        s.n_speakers == 2 ? std::uniform_real_distribution<double>(s.overlap_min, s.overlap_max)(rng) : 1.0;
    const bool swap = std::bernoulli_distribution(0.5)(rng);
    std::vector<std::uint64_t> src_seeds(s.n_speakers);
    for (auto& v : src_seeds) v = rng();

    const std::size_t L = s.scene_samples;
    std::vector<std::size_t> need(s.n_speakers, L);
    if (s.n_speakers == 2) {
        const auto lay = overlap_layout(ratio, L);
        need[swap ? 1 : 0] = lay.active_a;
        need[swap ? 0 : 1] = lay.active_b;
    }
    std::vector<MultichannelWaveform> images;
    for (std::size_t k = 0; k < s.n_speakers; ++k) {
        const auto d = dry(src_seeds[k], k, need[k]);
        if (d.n_channels() != 1 || d.n_samples() < need[k]) throw Error("dry source too short or not mono");
        images.push_back(spatialize(d, rirs.rirs[k]));
    }

    if (s.n_speakers == 2) {
        const std::size_t a = swap ? 1 : 0, b = 1 - a;
        auto scene = mix_pair(images[a], images[b], ratio, L);
        if (swap) std::swap(scene.images[0], scene.images[1]);
        out.scene = std::move(scene);
    } else {
        const std::size_t M = images.front().n_channels();
        out.scene.mixture = MultichannelWaveform(M, L);
        for (auto& img : images) {
            for (auto& c : img.channels) c.resize(L, 0.0);
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t i = 0; i < L; ++i) out.scene.mixture.channels[m][i] += img.channels[m][i];
        }
        out.scene.images = std::move(images);
        out.scene.overlap_ratio = 1.0;
    }
    out.scene.scenario = scn;
    return out;
}

}  // namespace nbss
