#pragma once

// Full-band permutation invariant training criterion. The per-frequency
// network outputs at the same output slot are bound into one full-band
// spectrogram per slot, resynthesized, and scored against every reference
// with negative SI-SDR; the loss is the minimum over slot permutations of
// the mean matched loss.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "nbss/features.hpp"
#include "nbss/model.hpp"
#include "nbss/stft.hpp"

namespace nbss {

// Ratio clamp: the SI-SDR ratio is confined to [1e-8, 1e8], i.e. +-80 dB.
inline constexpr double kSiSdrEps = 1e-8;
inline constexpr std::size_t kMaxPermutationSources = 6;

struct SiSdrTerms {
    double loss = 0.0;
    bool saturated = false;
};

namespace detail {

// Negative SI-SDR; when grad is non-empty it receives dloss/dest.
inline SiSdrTerms si_sdr_loss_impl(std::span<const double> ref, std::span<const double> est, std::span<double> grad) {
    if (ref.size() != est.size()) throw Error("SI-SDR inputs differ in length");
    double yy = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        yy += ref[i] * ref[i];
        dot += est[i] * ref[i];
    }
    if (!(yy > 0.0)) throw Error("undefined SI-SDR: zero reference");
    const double alpha = dot / yy;
    const double num = alpha * alpha * yy;
    double den = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double r = alpha * ref[i] - est[i];
        den += r * r;
    }
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);

    const double bound = -10.0 * std::log10(kSiSdrEps);
    if (num <= kSiSdrEps * den || (num == 0.0 && den == 0.0)) return {bound, true};
    if (den <= kSiSdrEps * num) return {-bound, true};

    const double loss = -10.0 * std::log10(num / den);
    if (!grad.empty()) {
        const double k = -10.0 / std::log(10.0);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            const double proj = alpha * ref[i];
            grad[i] = k * (2.0 * proj / num - 2.0 * (est[i] - proj) / den);
        }
    }
    return {loss, false};
}

}  // namespace detail

inline double si_sdr_loss(std::span<const double> ref, std::span<const double> est) {
    return detail::si_sdr_loss_impl(ref, est, {}).loss;
}

// Loss and dloss/dest in one pass.
inline double si_sdr_loss_grad(std::span<const double> ref, std::span<const double> est, std::span<double> grad) {
    if (grad.size() != est.size()) throw Error("gradient buffer size mismatch");
    return detail::si_sdr_loss_impl(ref, est, grad).loss;
}

// All permutations of {0..n-1} in lexicographic order.
inline std::vector<std::vector<std::size_t>> all_permutations(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::vector<std::vector<std::size_t>> out;
    do {
        out.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    return out;
}

struct FullbandEstimate {
    ComplexSpectrogram spectra;  // channels index output slots
    std::vector<std::vector<double>> waveforms;
};

// per_freq[f] is the de-normalized complex output of frequency f, laid out
// [slot][frame].
inline FullbandEstimate assemble_fullband(const std::vector<std::vector<cplx>>& per_freq, std::size_t n_src,
                                          std::size_t frames, const StftConfig& cfg, std::size_t out_length) {
    if (per_freq.size() != cfg.n_freqs()) throw Error("per-frequency outputs do not cover every frequency");
    FullbandEstimate est;
    est.spectra = ComplexSpectrogram(n_src, cfg.n_freqs(), frames, cfg);
    for (std::size_t f = 0; f < per_freq.size(); ++f) {
        if (per_freq[f].size() != n_src * frames) throw Error("inconsistent per-frequency output shape");
        for (std::size_t n = 0; n < n_src; ++n)
            for (std::size_t t = 0; t < frames; ++t) est.spectra.at(n, f, t) = per_freq[f][n * frames + t];
    }
    for (std::size_t n = 0; n < n_src; ++n) est.waveforms.push_back(istft_channel(est.spectra, n, cfg, out_length));
    return est;
}

struct FpitResult {
    double loss = 0.0;
    std::vector<std::size_t> permutation;  // reference n -> prediction slot
    std::vector<std::vector<double>> per_pair_losses;  // [reference][slot]
};

// Minimum over permutations of the mean matched entry of a square loss
// matrix; ties go to the lexicographically smallest permutation.
inline FpitResult best_permutation(const std::vector<std::vector<double>>& pair_losses) {
    const std::size_t n = pair_losses.size();
    if (n == 0) throw Error("no sources");
    if (n > kMaxPermutationSources) throw Error("permutation search too large");
    FpitResult r;
    r.per_pair_losses = pair_losses;
    r.loss = std::numeric_limits<double>::infinity();
    for (const auto& p : all_permutations(n)) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += pair_losses[k][p[k]];
        s /= double(n);
        if (s < r.loss) {
            r.loss = s;
            r.permutation = p;
        }
    }
    return r;
}

inline FpitResult fpit(const std::vector<std::vector<double>>& estimates,
                       const std::vector<std::vector<double>>& targets) {
    const std::size_t n = targets.size();
    if (estimates.size() != n) throw Error("estimate and target counts differ");
    if (n > kMaxPermutationSources) throw Error("permutation search too large");
    std::vector<std::vector<double>> pair(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) pair[i][k] = si_sdr_loss(targets[i], estimates[k]);
    return best_permutation(pair);
}

inline FpitResult fpit(const FullbandEstimate& est, const std::vector<std::vector<double>>& targets) {
    return fpit(est.waveforms, targets);
}

// Gradient of the chosen-permutation loss with respect to each estimate
// waveform; the permutation is held fixed.
inline std::vector<std::vector<double>> fpit_grad_waveforms(const std::vector<std::vector<double>>& estimates,
                                                            const std::vector<std::vector<double>>& targets,
                                                            const FpitResult& r) {
    const std::size_t n = targets.size();
    std::vector<std::vector<double>> grads(n);
    for (std::size_t k = 0; k < n; ++k) grads[k].assign(estimates[k].size(), 0.0);
    std::vector<double> g;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t slot = r.permutation[i];
        g.assign(estimates[slot].size(), 0.0);
        si_sdr_loss_grad(targets[i], estimates[slot], g);
        for (std::size_t s = 0; s < g.size(); ++s) grads[slot][s] += g[s] / double(n);
    }
    return grads;
}

struct FpitObjective {
    FpitResult result;
    FullbandEstimate estimate;
    Tensor3<double> grad_outputs;  // [F][2N][T], empty unless requested
};

// Evaluates the criterion directly from network outputs ([F][2N][T],
// normalized) and the per-frequency scales of one utterance; optionally
// back-propagates through the permutation, SI-SDR, iSTFT and
// de-normalization to the outputs.
inline FpitObjective fpit_objective(const Tensor3<double>& outputs, std::span<const double> scales,
                                    const std::vector<std::vector<double>>& targets, const StftConfig& cfg,
                                    bool with_grad = true) {
    const std::size_t F = outputs.n0, rows = outputs.n1, T = outputs.n2;
    if (F != cfg.n_freqs() || scales.size() != F) throw Error("outputs do not cover every frequency");
    if (rows % 2 != 0) throw Error("output must have an even number of rows (2N)");
    const std::size_t n_src = rows / 2;
    if (targets.size() != n_src) throw Error("target count does not match output slots");
    const std::size_t L = targets.front().size();

    std::vector<std::vector<cplx>> per_freq(F);
    for (std::size_t f = 0; f < F; ++f)
        per_freq[f] = unpack_output(std::span<const double>(outputs.data.data() + f * rows * T, rows * T), rows, T,
                                    scales[f]);

    FpitObjective obj;
    obj.estimate = assemble_fullband(per_freq, n_src, T, cfg, L);
    obj.result = fpit(obj.estimate, targets);
    if (!with_grad) return obj;

    const auto gw = fpit_grad_waveforms(obj.estimate.waveforms, targets, obj.result);
    obj.grad_outputs = Tensor3<double>(F, rows, T);
    for (std::size_t k = 0; k < n_src; ++k) {
        const auto gs = istft_channel_adjoint(gw[k], cfg, T);
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t t = 0; t < T; ++t) {
                const cplx g = gs[f * T + t] * scales[f];
                obj.grad_outputs(f, 2 * k, t) = g.real();
                obj.grad_outputs(f, 2 * k + 1, t) = g.imag();
            }
    }
    return obj;
}

}  // namespace nbss
