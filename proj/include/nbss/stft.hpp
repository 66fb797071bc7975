#pragma once

// Short-time Fourier transform with a periodic Hann window and a
// weighted overlap-add inverse that reconstructs the input exactly.
//
// Framing: the signal is zero-padded by (window_length - hop) samples at the
// head, frame t covers padded samples [t*hop, t*hop + window_length), and
// T = ceil((len + window_length - hop) / hop). Every original sample is then
// covered by window_length/hop full frames, and istft trims the head pad.

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "nbss/types.hpp"

namespace nbss {

struct StftConfig {
    std::size_t window_length = 512;
    std::size_t hop = 256;
    int sample_rate = 16000;

    std::size_t n_freqs() const { return window_length / 2 + 1; }
    std::size_t head_pad() const { return window_length - hop; }

    std::size_t n_frames(std::size_t n_samples) const {
        return (n_samples + head_pad() + hop - 1) / hop;
    }

    // Periodic Hann: w[k] = 0.5 - 0.5 cos(2 pi k / N).
    std::vector<double> window() const {
        std::vector<double> w(window_length);
        for (std::size_t k = 0; k < window_length; ++k)
            w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(k) / double(window_length));
        return w;
    }

    void validate() const {
        if (window_length < 2 || window_length % 2 != 0) throw Error("window_length must be even and >= 2");
        if (hop == 0 || window_length % hop != 0) throw Error("hop must divide window_length");
    }

    bool operator==(const StftConfig&) const = default;
};

// Complex coefficients indexed [channel][frequency][frame], frames contiguous.
struct ComplexSpectrogram {
    std::size_t channels = 0;
    std::size_t freqs = 0;
    std::size_t frames = 0;
    std::vector<cplx> data;
    StftConfig config;

    ComplexSpectrogram() = default;
    ComplexSpectrogram(std::size_t m, std::size_t f, std::size_t t, StftConfig cfg = {})
        : channels(m), freqs(f), frames(t), data(m * f * t), config(cfg) {}

    cplx& at(std::size_t m, std::size_t f, std::size_t t) { return data[(m * freqs + f) * frames + t]; }
    const cplx& at(std::size_t m, std::size_t f, std::size_t t) const {
        return data[(m * freqs + f) * frames + t];
    }

    std::span<cplx> row(std::size_t m, std::size_t f) { return {data.data() + (m * freqs + f) * frames, frames}; }
    std::span<const cplx> row(std::size_t m, std::size_t f) const {
        return {data.data() + (m * freqs + f) * frames, frames};
    }
};

namespace detail {

// irfft of a half spectrum of size N/2+1; imaginary parts of DC and Nyquist
// are ignored, matching a real-output inverse transform.
inline void inverse_real_fft(Eigen::FFT<double>& fft, std::span<const cplx> half, std::vector<cplx>& full,
                             std::vector<cplx>& time, std::size_t n) {
    full.assign(n, cplx{});
    full[0] = cplx(half[0].real(), 0.0);
    full[n / 2] = cplx(half[n / 2].real(), 0.0);
    for (std::size_t f = 1; f < n / 2; ++f) {
        full[f] = half[f];
        full[n - f] = std::conj(half[f]);
    }
    fft.inv(time, full);
}

}  // namespace detail

inline ComplexSpectrogram stft(const MultichannelWaveform& x, const StftConfig& cfg = {}) {
    cfg.validate();
    x.check_rectangular();
    const std::size_t len = x.n_samples();
    if (x.n_channels() == 0 || len < cfg.window_length) throw Error("signal too short");

    const std::size_t n = cfg.window_length;
    const std::size_t n_frames = cfg.n_frames(len);
    const std::size_t pad = cfg.head_pad();
    const auto win = cfg.window();
    ComplexSpectrogram S(x.n_channels(), cfg.n_freqs(), n_frames, cfg);

    Eigen::FFT<double> fft;
    std::vector<cplx> frame(n), spec(n);
    for (std::size_t m = 0; m < x.n_channels(); ++m) {
        const auto& ch = x.channels[m];
        for (std::size_t t = 0; t < n_frames; ++t) {
            for (std::size_t k = 0; k < n; ++k) {
                // padded index p maps to original sample p - pad
                const std::ptrdiff_t i = std::ptrdiff_t(t * cfg.hop + k) - std::ptrdiff_t(pad);
                const double v = (i >= 0 && std::size_t(i) < len) ? ch[std::size_t(i)] : 0.0;
                frame[k] = cplx(v * win[k], 0.0);
            }
            fft.fwd(spec, frame);
            for (std::size_t f = 0; f < S.freqs; ++f) S.at(m, f, t) = spec[f];
        }
    }
    return S;
}

namespace detail {

// Sum of squared windows over the padded timeline.
inline std::vector<double> squared_window_sum(const StftConfig& cfg, std::size_t n_frames) {
    const auto win = cfg.window();
    std::vector<double> d((n_frames - 1) * cfg.hop + cfg.window_length, 0.0);
    for (std::size_t t = 0; t < n_frames; ++t)
        for (std::size_t k = 0; k < cfg.window_length; ++k) d[t * cfg.hop + k] += win[k] * win[k];
    return d;
}

inline constexpr double kMinWindowSum = 1e-10;

inline void check_consistent(const ComplexSpectrogram& S, const StftConfig& cfg) {
    cfg.validate();
    if (S.freqs != cfg.n_freqs()) throw Error("spectrogram frequency count does not match STFT config");
    if (S.frames == 0 || S.data.size() != S.channels * S.freqs * S.frames)
        throw Error("inconsistent spectrogram dimensions");
}

}  // namespace detail

// Inverse of a single channel; out_length samples (zero-padded if the frames
// do not reach that far).
inline std::vector<double> istft_channel(const ComplexSpectrogram& S, std::size_t m, const StftConfig& cfg,
                                         std::size_t out_length) {
    detail::check_consistent(S, cfg);
    if (m >= S.channels) throw Error("channel index out of range");
    const std::size_t n = cfg.window_length;
    const auto win = cfg.window();
    const auto wsum = detail::squared_window_sum(cfg, S.frames);
    std::vector<double> acc(wsum.size(), 0.0);

    Eigen::FFT<double> fft;
    std::vector<cplx> full, time;
    std::vector<cplx> half(S.freqs);
    for (std::size_t t = 0; t < S.frames; ++t) {
        for (std::size_t f = 0; f < S.freqs; ++f) half[f] = S.at(m, f, t);
        detail::inverse_real_fft(fft, half, full, time, n);
        for (std::size_t k = 0; k < n; ++k) acc[t * cfg.hop + k] += win[k] * time[k].real();
    }

    std::vector<double> y(out_length, 0.0);
    const std::size_t pad = cfg.head_pad();
    for (std::size_t i = 0; i < out_length; ++i) {
        const std::size_t p = i + pad;
        if (p >= acc.size()) break;
        y[i] = wsum[p] > detail::kMinWindowSum ? acc[p] / wsum[p] : 0.0;
    }
    return y;
}

inline MultichannelWaveform istft(const ComplexSpectrogram& S, const StftConfig& cfg, std::size_t out_length) {
    MultichannelWaveform out;
    out.sample_rate = cfg.sample_rate;
    out.channels.reserve(S.channels);
    for (std::size_t m = 0; m < S.channels; ++m) out.channels.push_back(istft_channel(S, m, cfg, out_length));
    return out;
}

// Adjoint of istft_channel: maps dL/dy (length out_length) to dL/dS for one
// channel, returned as dL/dRe + i dL/dIm, laid out [frequency][frame].
inline std::vector<cplx> istft_channel_adjoint(std::span<const double> grad_y, const StftConfig& cfg,
                                               std::size_t n_frames) {
    cfg.validate();
    const std::size_t n = cfg.window_length;
    const std::size_t n_freqs = cfg.n_freqs();
    const auto win = cfg.window();
    const auto wsum = detail::squared_window_sum(cfg, n_frames);
    const std::size_t pad = cfg.head_pad();

    std::vector<double> g(wsum.size(), 0.0);
    for (std::size_t i = 0; i < grad_y.size(); ++i) {
        const std::size_t p = i + pad;
        if (p >= g.size()) break;
        if (wsum[p] > detail::kMinWindowSum) g[p] = grad_y[i] / wsum[p];
    }

    std::vector<cplx> out(n_freqs * n_frames);
    Eigen::FFT<double> fft;
    std::vector<cplx> frame(n), spec(n);
    for (std::size_t t = 0; t < n_frames; ++t) {
        for (std::size_t k = 0; k < n; ++k) frame[k] = cplx(win[k] * g[t * cfg.hop + k], 0.0);
        fft.fwd(spec, frame);
        for (std::size_t f = 0; f < n_freqs; ++f) {
            const double weight = (f == 0 || f == n / 2) ? 1.0 : 2.0;
            out[f * n_frames + t] = spec[f] * (weight / double(n));
        }
    }
    return out;
}

}  // namespace nbss
