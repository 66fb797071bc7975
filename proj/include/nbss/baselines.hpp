#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fpit.hpp"
#include "model.hpp"
#include "stft.hpp"
#include "types.hpp"

namespace nbss {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

// Sample spatial covariance (1/T) sum_t x x^H of one frequency.
inline CMatrix spatial_covariance(const ComplexSpectrogram& S, std::size_t f) {
    const Eigen::Index M = Eigen::Index(S.channels);
    CMatrix phi = CMatrix::Zero(M, M);
    CVector x(M);
    for (std::size_t t = 0; t < S.frames; ++t) {
        for (Eigen::Index m = 0; m < M; ++m) x(m) = S.at(std::size_t(m), f, t);
        phi.noalias() += x * x.adjoint();
    }
    return phi / double(std::max<std::size_t>(S.frames, 1));
}

struct BeamformerWeights {
    std::vector<CVector> w;         // [F], zero where the target is silent
    std::vector<CVector> steering;  // [F]
    std::vector<bool> active;       // false: target covariance negligible, w = 0
    double loading_used = 0.0;      // largest relative loading applied

    double max_distortionless_error() const {
        double worst = 0.0;
        for (std::size_t f = 0; f < w.size(); ++f)
            if (active[f]) worst = std::max(worst, std::abs(w[f].dot(steering[f]) - 1.0));
        return worst;
    }
};

inline constexpr double kMvdrLoading = 1e-6;

// Relative transfer function: principal eigenvector of the target covariance,
// rotated and scaled so the reference entry is exactly 1.
inline CVector steering_vector(const CMatrix& phi_target, std::size_t ref, bool& ok) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(phi_target);
    const Eigen::Index M = phi_target.rows();
    const double top = es.eigenvalues()(M - 1);
    const double tr = phi_target.trace().real();
    CVector v = es.eigenvectors().col(M - 1);
    ok = std::isfinite(top) && top > 0.0 && tr > 0.0 && std::abs(v(Eigen::Index(ref))) > 1e-8 * v.norm();
    if (!ok) return CVector::Zero(M);
    return v / v(Eigen::Index(ref));
}

// w = Phi_u^-1 d / (d^H Phi_u^-1 d) with diagonal loading delta tr(Phi_u)/M,
// delta starting at 1e-6 and growing tenfold until the solve is well posed.
inline CVector mvdr_weights(const CMatrix& phi_u, const CVector& d, double* loading_used = nullptr) {
    const Eigen::Index M = phi_u.rows();
    const double tr = phi_u.trace().real();
    const double base = tr > 0.0 ? tr / double(M) : 1.0;
    for (double delta = kMvdrLoading; delta <= 1e6; delta *= 10.0) {
        CMatrix loaded = phi_u;
        loaded.diagonal().array() += delta * base;
        Eigen::LLT<CMatrix> llt(loaded);
        if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-13)) continue;
        const CVector num = llt.solve(d);
        const cplx den = d.dot(num);  // d^H Phi^-1 d
        if (!(std::abs(den) > 0.0) || !num.allFinite()) continue;
        if (loading_used) *loading_used = std::max(*loading_used, delta);
        return num / den.real();
    }
    throw Error("covariance could not be regularized");
}

struct MvdrOutput {
    std::vector<double> waveform;
    ComplexSpectrogram spectrum;  // single channel
    BeamformerWeights weights;
};

// Oracle MVDR for one target: covariances from the true target image and
// the true undesired signal (everything except the target).
inline MvdrOutput oracle_mvdr(const ComplexSpectrogram& mix, const ComplexSpectrogram& target_img,
                              const ComplexSpectrogram& undesired, std::size_t ref, std::size_t out_length) {
    const StftConfig& cfg = mix.config;
    detail::check_consistent(mix, cfg);
    for (const auto* S : {&target_img, &undesired})
        if (S->channels != mix.channels || S->freqs != mix.freqs || S->frames != mix.frames)
            throw Error("MVDR inputs have mismatched shapes");
    if (ref >= mix.channels) throw Error("reference channel out of range");

    const std::size_t F = mix.freqs, T = mix.frames, M = mix.channels;
    MvdrOutput out;
    out.spectrum = ComplexSpectrogram(1, F, T, cfg);
    auto& bw = out.weights;
    bw.w.resize(F);
    bw.steering.resize(F);
    bw.active.resize(F);

    double mix_power = 0.0;
    for (const cplx& v : mix.data) mix_power += std::norm(v);
    const double silent = 1e-20 * std::max(mix_power / double(F), 1e-300);

    CVector x(Eigen::Index(M), 1);
    for (std::size_t f = 0; f < F; ++f) {
        const CMatrix phi_s = spatial_covariance(target_img, f);
        bool ok = phi_s.trace().real() > silent;
        CVector d = ok ? steering_vector(phi_s, ref, ok) : CVector::Zero(Eigen::Index(M));
        bw.active[f] = ok;
        bw.steering[f] = d;
        if (!ok) {
            bw.w[f] = CVector::Zero(Eigen::Index(M));
            continue;
        }
        bw.w[f] = mvdr_weights(spatial_covariance(undesired, f), d, &bw.loading_used);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t m = 0; m < M; ++m) x(Eigen::Index(m)) = mix.at(m, f, t);
            out.spectrum.at(0, f, t) = bw.w[f].dot(x);  // w^H x
        }
    }
    out.waveform = istft_channel(out.spectrum, 0, cfg, out_length);
    return out;
}

// ---------------------------------------------------------------------------
// Frequency permutations

// perm[f][k] is the slot at frequency f routed to output k (for PIT: the
// slot matched to reference k).
using FrequencyPermutationMap = std::vector<std::vector<std::size_t>>;

// Permutation minimizing the summed squared error between slots of pred and
// references of target at one frequency; both [N][T] row-major.
inline std::vector<std::size_t> per_frequency_pit(std::span<const cplx> pred, std::span<const cplx> target,
                                                  std::size_t n_src) {
    if (pred.size() != target.size() || n_src == 0 || pred.size() % n_src != 0)
        throw Error("per-frequency PIT shapes do not match");
    const std::size_t T = pred.size() / n_src;
    std::vector<std::vector<double>> cost(n_src, std::vector<double>(n_src, 0.0));
    for (std::size_t i = 0; i < n_src; ++i)
        for (std::size_t k = 0; k < n_src; ++k)
            for (std::size_t t = 0; t < T; ++t) cost[i][k] += std::norm(pred[k * T + t] - target[i * T + t]);
    return best_permutation(cost).permutation;
}

// Over every frequency; pred and target are [F] of [N][T].
inline FrequencyPermutationMap per_frequency_pit(const std::vector<std::vector<cplx>>& pred,
                                                 const std::vector<std::vector<cplx>>& target, std::size_t n_src) {
    if (pred.size() != target.size()) throw Error("per-frequency PIT shapes do not match");
    FrequencyPermutationMap map(pred.size());
    for (std::size_t f = 0; f < pred.size(); ++f) map[f] = per_frequency_pit(pred[f], target[f], n_src);
    return map;
}

struct FreqPitObjective {
    double loss = 0.0;  // mean over frequencies of the per-element squared error
    FrequencyPermutationMap permutation;
    Tensor3<double> grad_outputs;
};

// Training criterion of the correlation-aligned variant: PIT solved
// independently per frequency on normalized network outputs [F][2N][T],
// against normalized target rows [F][2N][T].
inline FreqPitObjective freq_pit_objective(const Tensor3<double>& outputs, const Tensor3<double>& targets,
                                           bool with_grad = true) {
    if (outputs.n0 != targets.n0 || outputs.n1 != targets.n1 || outputs.n2 != targets.n2)
        throw Error("outputs and targets differ in shape");
    if (outputs.n1 % 2 != 0) throw Error("output must have an even number of rows (2N)");
    const std::size_t F = outputs.n0, rows = outputs.n1, T = outputs.n2, N = rows / 2;
    const double norm = double(F * rows * T);
    FreqPitObjective obj;
    obj.permutation.resize(F);
    if (with_grad) obj.grad_outputs = Tensor3<double>(F, rows, T);
    std::vector<std::vector<double>> cost(N, std::vector<double>(N));
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < N; ++k) {
                double c = 0.0;
                for (std::size_t part = 0; part < 2; ++part)
                    for (std::size_t t = 0; t < T; ++t) {
                        const double e = outputs(f, 2 * k + part, t) - targets(f, 2 * i + part, t);
                        c += e * e;
                    }
                cost[i][k] = c;
            }
        const auto best = best_permutation(cost);
        obj.permutation[f] = best.permutation;
        obj.loss += best.loss * double(N) / norm;
        if (!with_grad) continue;
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t k = best.permutation[i];
            for (std::size_t part = 0; part < 2; ++part)
                for (std::size_t t = 0; t < T; ++t)
                    obj.grad_outputs(f, 2 * k + part, t) =
                        2.0 * (outputs(f, 2 * k + part, t) - targets(f, 2 * i + part, t)) / norm;
        }
    }
    return obj;
}

namespace detail {

// Mean-removed, unit-variance copy; all zeros when the input is constant.
inline std::vector<double> standardize(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    if (out.empty()) return out;
    double mean = 0.0;
    for (double x : out) mean += x;
    mean /= double(out.size());
    double var = 0.0;
    for (double& x : out) {
        x -= mean;
        var += x * x;
    }
    var /= double(out.size());
    if (!(var > 1e-24)) {
        std::fill(out.begin(), out.end(), 0.0);
        return out;
    }
    const double inv = 1.0 / std::sqrt(var);
    for (double& x : out) x *= inv;
    return out;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
    const auto za = standardize(a), zb = standardize(b);
    double s = 0.0;
    for (std::size_t i = 0; i < za.size(); ++i) s += za[i] * zb[i];
    return za.empty() ? 0.0 : s / double(za.size());
}

}  // namespace detail

// Correlation-based alignment of frequency-wise separated outputs
// sep [F][N][T]. Frequency 0 is the reference. A greedy pass over
// f = 1..F-1 picks, at each frequency, the slot permutation maximizing the
// summed Pearson correlation between standardized magnitude envelopes and the
// running centroid of each aligned output; a second sweep re-decides every
// frequency against the centroids of all other frequencies. Ties keep the
// lexicographically smaller permutation.
inline FrequencyPermutationMap align_permutations_correlation(const std::vector<std::vector<cplx>>& sep,
                                                              std::size_t n_src) {
    const std::size_t F = sep.size();
    if (F < 2) throw Error("alignment needs at least two frequencies");
    if (n_src == 0 || sep[0].size() % n_src != 0) throw Error("inconsistent separated output shape");
    const std::size_t T = sep[0].size() / n_src;
    if (n_src > kMaxPermutationSources) throw Error("permutation search too large");

    std::vector<std::vector<std::vector<double>>> env(F, std::vector<std::vector<double>>(n_src));
    std::vector<double> mag(T);
    for (std::size_t f = 0; f < F; ++f) {
        if (sep[f].size() != n_src * T) throw Error("inconsistent separated output shape");
        for (std::size_t n = 0; n < n_src; ++n) {
            for (std::size_t t = 0; t < T; ++t) mag[t] = std::abs(sep[f][n * T + t]);
            env[f][n] = detail::standardize(mag);
        }
    }

    const auto perms = all_permutations(n_src);
    FrequencyPermutationMap map(F);
    std::vector<std::vector<double>> centroid(n_src, std::vector<double>(T, 0.0));
    auto accumulate = [&](std::size_t f, double sign) {
        for (std::size_t k = 0; k < n_src; ++k)
            for (std::size_t t = 0; t < T; ++t) centroid[k][t] += sign * env[f][map[f][k]][t];
    };
    auto choose = [&](std::size_t f) {
        double best = -std::numeric_limits<double>::infinity();
        std::vector<std::size_t> arg;
        for (const auto& p : perms) {
            double score = 0.0;
            for (std::size_t k = 0; k < n_src; ++k) score += detail::pearson(env[f][p[k]], centroid[k]);
            if (score > best + 1e-12) {
                best = score;
                arg = p;
            }
        }
        return arg;
    };

    map[0] = perms.front();
    accumulate(0, 1.0);
    for (std::size_t f = 1; f < F; ++f) {
        map[f] = choose(f);
        accumulate(f, 1.0);
    }
    for (std::size_t f = 0; f < F; ++f) {
        accumulate(f, -1.0);
        map[f] = choose(f);
        accumulate(f, 1.0);
    }
    return map;
}

// Applies perm: out[f][k] = in[f][perm[f][k]].
inline std::vector<std::vector<cplx>> apply_permutation_map(const std::vector<std::vector<cplx>>& per_freq,
                                                            const FrequencyPermutationMap& map, std::size_t n_src) {
    if (map.size() != per_freq.size()) throw Error("permutation map does not cover every frequency");
    std::vector<std::vector<cplx>> out(per_freq.size());
    for (std::size_t f = 0; f < per_freq.size(); ++f) {
        const std::size_t T = per_freq[f].size() / n_src;
        out[f].resize(per_freq[f].size());
        for (std::size_t k = 0; k < n_src; ++k)
            std::copy_n(per_freq[f].begin() + std::ptrdiff_t(map[f][k] * T), T, out[f].begin() + std::ptrdiff_t(k * T));
    }
    return out;
}

}  // namespace nbss
