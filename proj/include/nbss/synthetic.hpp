#pragma once

// Surrogate "speakers": broadband filtered noise with a speaker-specific
// spectral shape, gated and amplitude-modulated at syllabic rates so that
// envelopes differ between speakers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "nbss/types.hpp"

namespace nbss {

struct SurrogateVoice {
    double formant_hz = 800.0;   // resonance center
    double formant_q = 2.0;
    double tilt_pole = 0.7;      // one-pole low-pass coefficient of the broadband part
    double syllable_hz = 4.0;    // modulation rate
    double gate_mean_s = 0.35;   // mean duration of voiced / silent segments
};

inline SurrogateVoice random_voice(std::mt19937_64& rng) {
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    SurrogateVoice v;
    v.formant_hz = uni(300.0, 3000.0);
    v.formant_q = uni(1.0, 4.0);
    v.tilt_pole = uni(0.3, 0.9);
    v.syllable_hz = uni(2.5, 7.0);
    v.gate_mean_s = uni(0.2, 0.5);
    return v;
}

// Unit-RMS single-channel surrogate of n_samples.
inline MultichannelWaveform surrogate_source(std::uint64_t seed, std::size_t n_samples, int fs = 16000) {
    std::mt19937_64 rng(seed);
    const SurrogateVoice v = random_voice(rng);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // RBJ band-pass biquad (constant peak gain)
    const double w0 = 2.0 * std::numbers::pi * v.formant_hz / fs;
    const double alpha = std::sin(w0) / (2.0 * v.formant_q);
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0;
    const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;

    // on/off gating with exponential segment lengths, smoothed by a 20 ms ramp
    std::exponential_distribution<double> seg(1.0 / (v.gate_mean_s * fs));
    std::vector<double> gate(n_samples);
    bool on = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.7;
    std::size_t i = 0;
    while (i < n_samples) {
        const std::size_t len = std::max<std::size_t>(1, std::size_t(seg(rng)));
        for (std::size_t k = 0; k < len && i < n_samples; ++k, ++i) gate[i] = on ? 1.0 : 0.05;
        on = !on;
    }
    const double ramp = std::exp(-1.0 / (0.02 * fs));
    double g = gate.empty() ? 0.0 : gate[0];
    const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);

    MultichannelWaveform out(1, n_samples, fs);
    auto& y = out.channels[0];
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0, lp = 0;
    for (std::size_t n = 0; n < n_samples; ++n) {
        const double x = gauss(rng);
        const double bp = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x;
        y2 = y1;
        y1 = bp;
        lp = v.tilt_pole * lp + (1.0 - v.tilt_pole) * x;
        g = ramp * g + (1.0 - ramp) * gate[n];
        const double am = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * v.syllable_hz * double(n) / fs + phase);
        y[n] = (2.0 * bp + lp) * g * am;
    }
    double energy = 0.0;
    for (double s : y) energy += s * s;
    const double rms = std::sqrt(energy / double(std::max<std::size_t>(1, n_samples)));
    if (rms > 0.0)
        for (double& s : y) s /= rms;
    return out;
}

}  // namespace nbss
