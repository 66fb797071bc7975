#pragma once

#include <vector>

#include "baselines.hpp"
#include "features.hpp"
#include "fpit.hpp"
#include "model.hpp"
#include "stft.hpp"

namespace nbss {

struct SeparationOutput {
    std::vector<std::vector<double>> waveforms;     // [N][samples], same length as the input
    std::vector<std::vector<cplx>> per_frequency;   // [F] of [N][T], de-normalized, after any alignment
    FrequencyPermutationMap alignment;              // filled when correlation alignment ran
};

// stft -> normalize/pack -> shared network over every frequency -> unpack ->
// (optional correlation alignment) -> bind slots -> iSTFT.
template <class Scalar>
SeparationOutput separate(const ModelParams<Scalar>& params, const MultichannelWaveform& mix, const StftConfig& cfg,
                          std::size_t ref_channel = 0, bool correlation_alignment = false) {
    mix.check_rectangular();
    if (2 * mix.n_channels() != params.shape.input)
        throw Error("mixture has " + std::to_string(mix.n_channels()) + " channels, model expects " +
                    std::to_string(params.shape.input / 2));
    const std::size_t N = params.shape.output / 2;
    const auto S = stft(mix, cfg);
    const auto b = pack_input(S, ref_channel);
    Tensor3<Scalar> x(b.items, b.width, b.frames);
    for (std::size_t i = 0; i < b.inputs.size(); ++i) x.data[i] = Scalar(b.inputs[i]);
    const auto y = forward(params, x).outputs;

    SeparationOutput out;
    const std::size_t rows = y.n1, T = y.n2;
    std::vector<double> rowbuf(rows * T);
    out.per_frequency.resize(S.freqs);
    for (std::size_t f = 0; f < S.freqs; ++f) {
        for (std::size_t k = 0; k < rows * T; ++k) rowbuf[k] = double(y.data[f * rows * T + k]);
        out.per_frequency[f] = unpack_output(rowbuf, rows, T, b.scales[f]);
    }
    if (correlation_alignment) {
        out.alignment = align_permutations_correlation(out.per_frequency, N);
        out.per_frequency = apply_permutation_map(out.per_frequency, out.alignment, N);
    }
    out.waveforms = assemble_fullband(out.per_frequency, N, T, cfg, mix.n_samples()).waveforms;
    return out;
}

// Fraction of frequencies whose own best assignment against the oracle
// target spectra (per-frequency PIT) equals `global`; frequencies where the
// targets carry less than `floor_db` of the strongest frequency's energy are
// left out, since any assignment is equally good there.
inline double permutation_consistency(const std::vector<std::vector<cplx>>& per_freq,
                                      const std::vector<std::vector<cplx>>& target_per_freq,
                                      const std::vector<std::size_t>& global, std::size_t n_src,
                                      double floor_db = -60.0) {
    const std::size_t F = per_freq.size();
    std::vector<double> energy(F, 0.0);
    double peak = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
        for (const cplx& v : target_per_freq[f]) energy[f] += std::norm(v);
        peak = std::max(peak, energy[f]);
    }
    const double floor = peak * std::pow(10.0, floor_db / 10.0);
    std::size_t used = 0, agree = 0;
    for (std::size_t f = 0; f < F; ++f) {
        if (!(energy[f] > floor)) continue;
        ++used;
        agree += per_frequency_pit(per_freq[f], target_per_freq[f], n_src) == global;
    }
    return used == 0 ? 1.0 : double(agree) / double(used);
}

// Multiplies every output slot by the gain the SI-SDR criterion gives it, the
// projection scale <e, s>/<e, e> onto its matched target. SI-SDR ignores gain
// and sign, so a full-band-trained model's raw slots may come out at, say,
// -20x and +20x; compared per frequency by squared error, the raw slots would
// favour the wrong speaker. `permutation` maps target n -> slot.
inline std::vector<std::vector<cplx>> scale_to_matched_targets(std::vector<std::vector<cplx>> per_freq,
                                                              const std::vector<std::vector<double>>& waveforms,
                                                              const std::vector<std::vector<double>>& targets,
                                                              const std::vector<std::size_t>& permutation) {
    const std::size_t N = targets.size();
    if (waveforms.size() != N || permutation.size() != N) throw Error("slot and target counts differ");
    std::vector<double> gain(N, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        const auto& e = waveforms.at(permutation[n]);
        if (e.size() != targets[n].size()) throw Error("estimate and target lengths differ");
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < e.size(); ++i) {
            num += e[i] * targets[n][i];
            den += e[i] * e[i];
        }
        gain[permutation[n]] = den > 0.0 ? num / den : 0.0;
    }
    for (auto& block : per_freq) {
        if (block.size() % N != 0) throw Error("inconsistent per-frequency output shape");
        const std::size_t T = block.size() / N;
        for (std::size_t k = 0; k < N; ++k)
            for (std::size_t t = 0; t < T; ++t) block[k * T + t] *= gain[k];
    }
    return per_freq;
}

// Reorders a spectrogram [N][F][T] into per-frequency blocks [F] of [N][T].
inline std::vector<std::vector<cplx>> per_frequency_blocks(const ComplexSpectrogram& S) {
    std::vector<std::vector<cplx>> out(S.freqs, std::vector<cplx>(S.channels * S.frames));
    for (std::size_t f = 0; f < S.freqs; ++f)
        for (std::size_t n = 0; n < S.channels; ++n)
            for (std::size_t t = 0; t < S.frames; ++t) out[f][n * S.frames + t] = S.at(n, f, t);
    return out;
}

}  // namespace nbss
