#pragma once

// Narrow-band network inputs and outputs. Each (utterance, frequency) pair
// becomes one batch item holding the multichannel STFT sequence of that
// frequency, normalized by the mean reference-channel magnitude and packed
// as real rows (Re ch1, Im ch1, Re ch2, Im ch2, ...).

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "nbss/stft.hpp"

namespace nbss {

inline constexpr double kScaleFloor = 1e-8;

struct NarrowbandBatch {
    std::size_t items = 0;
    std::size_t width = 0;  // 2M
    std::size_t frames = 0;
    std::vector<double> inputs;  // [item][width][frame]
    std::vector<double> scales;  // mean |X_ref| per item, floored
    std::vector<std::pair<std::size_t, std::size_t>> provenance;  // (utterance id, frequency)

    double& at(std::size_t i, std::size_t c, std::size_t t) { return inputs[(i * width + c) * frames + t]; }
    double at(std::size_t i, std::size_t c, std::size_t t) const { return inputs[(i * width + c) * frames + t]; }

    std::span<const double> item(std::size_t i) const {
        return {inputs.data() + i * width * frames, width * frames};
    }

    void append(const NarrowbandBatch& other) {
        if (items != 0 && (other.width != width || other.frames != frames))
            throw Error("cannot append batches with different shapes");
        width = other.width;
        frames = other.frames;
        items += other.items;
        inputs.insert(inputs.end(), other.inputs.begin(), other.inputs.end());
        scales.insert(scales.end(), other.scales.begin(), other.scales.end());
        provenance.insert(provenance.end(), other.provenance.begin(), other.provenance.end());
    }
};

inline NarrowbandBatch pack_input(const ComplexSpectrogram& S, std::size_t ref_channel = 0,
                                  std::size_t utterance_id = 0) {
    if (S.channels == 0) throw Error("spectrogram has no channels");
    if (ref_channel >= S.channels) throw Error("reference channel out of range");
    const std::size_t T = S.frames;
    NarrowbandBatch b;
    b.items = S.freqs;
    b.width = 2 * S.channels;
    b.frames = T;
    b.inputs.assign(b.items * b.width * T, 0.0);
    b.scales.resize(S.freqs);
    for (std::size_t f = 0; f < S.freqs; ++f) {
        double mean_mag = 0.0;
        for (const cplx& v : S.row(ref_channel, f)) mean_mag += std::abs(v);
        mean_mag /= double(T);
        const double scale = std::max(kScaleFloor, mean_mag);
        b.scales[f] = scale;
        b.provenance.emplace_back(utterance_id, f);
        for (std::size_t m = 0; m < S.channels; ++m) {
            const auto row = S.row(m, f);
            for (std::size_t t = 0; t < T; ++t) {
                b.at(f, 2 * m, t) = row[t].real() / scale;
                b.at(f, 2 * m + 1, t) = row[t].imag() / scale;
            }
        }
    }
    return b;
}

// out: [2N][T] real rows -> [N][T] complex, multiplied back by the scale.
inline std::vector<cplx> unpack_output(std::span<const double> out, std::size_t rows, std::size_t frames,
                                       double scale) {
    if (rows % 2 != 0) throw Error("output must have an even number of rows (2N)");
    if (out.size() != rows * frames) throw Error("output size does not match rows x frames");
    const std::size_t n_src = rows / 2;
    std::vector<cplx> y(n_src * frames);
    for (std::size_t n = 0; n < n_src; ++n)
        for (std::size_t t = 0; t < frames; ++t)
            y[n * frames + t] = cplx(out[(2 * n) * frames + t], out[(2 * n + 1) * frames + t]) * scale;
    return y;
}

// Normalized real target rows for one frequency: the inverse of
// unpack_output for a given scale.
inline std::vector<double> pack_target(std::span<const cplx> spectra, std::size_t n_src, std::size_t frames,
                                       double scale) {
    if (spectra.size() != n_src * frames) throw Error("target size does not match N x frames");
    std::vector<double> out(2 * n_src * frames);
    for (std::size_t n = 0; n < n_src; ++n)
        for (std::size_t t = 0; t < frames; ++t) {
            out[(2 * n) * frames + t] = spectra[n * frames + t].real() / scale;
            out[(2 * n + 1) * frames + t] = spectra[n * frames + t].imag() / scale;
        }
    return out;
}

}  // namespace nbss
