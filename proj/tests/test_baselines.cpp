#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nbss/baselines.hpp"
#include "nbss/separate.hpp"
#include "nbss/synthetic.hpp"
#include "test_support.hpp"

using namespace nbss;
using nbss::testing::white_noise;

namespace {

CVector random_cvector(std::size_t M, std::uint64_t seed) {
    const auto re = white_noise(M, seed), im = white_noise(M, seed + 1000);
    CVector v(static_cast<Eigen::Index>(M));
    for (std::size_t m = 0; m < M; ++m) v(Eigen::Index(m)) = cplx(re[m], im[m]);
    return v;
}

// Random Hermitian positive definite matrix A A^H + I/10.
CMatrix random_hpd(std::size_t M, std::uint64_t seed) {
    CMatrix A{Eigen::Index(M), Eigen::Index(M)};
    for (std::size_t j = 0; j < M; ++j) A.col(Eigen::Index(j)) = random_cvector(M, seed + 17 * j);
    CMatrix out = A * A.adjoint();
    out.diagonal().array() += 0.1;
    return out;
}

ComplexSpectrogram spectrum_of(const std::vector<std::vector<double>>& channels, const StftConfig& cfg) {
    MultichannelWaveform w;
    w.channels = channels;
    return stft(w, cfg);
}

double si_sdr_db(std::span<const double> ref, std::span<const double> est) {
    const double a = nbss::testing::dot(est, ref) / nbss::testing::norm2(ref);
    double s = 0.0, e = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        s += a * ref[i] * a * ref[i];
        e += (a * ref[i] - est[i]) * (a * ref[i] - est[i]);
    }
    return 10.0 * std::log10(s / e);
}

}  // namespace

TEST(SpatialCovariance, MatchesDirectSum) {
    const StftConfig cfg;
    const auto S = spectrum_of({white_noise(4000, 1), white_noise(4000, 2), white_noise(4000, 3)}, cfg);
    const std::size_t f = 40;
    const auto phi = spatial_covariance(S, f);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            cplx acc{};
            for (std::size_t t = 0; t < S.frames; ++t) acc += S.at(i, f, t) * std::conj(S.at(j, f, t));
            acc /= double(S.frames);
            EXPECT_NEAR(std::abs(phi(Eigen::Index(i), Eigen::Index(j)) - acc), 0.0, 1e-9 * std::abs(acc) + 1e-12);
        }
}

TEST(Mvdr, WhiteNoiseClosedForm) {
    // Phi_u = sigma^2 I  ->  w = d / (d^H d); the loading only rescales Phi_u
    const CVector d = random_cvector(6, 3);
    const CMatrix phi = 2.5 * CMatrix::Identity(6, 6);
    const CVector w = mvdr_weights(phi, d);
    const CVector expect = d / d.squaredNorm();
    EXPECT_LT((w - expect).norm(), 1e-12 * expect.norm());
}

TEST(Mvdr, TwoByTwoInverseOracle) {
    const CMatrix phi = random_hpd(2, 11);
    const CVector d = random_cvector(2, 12);
    const double load = kMvdrLoading * phi.trace().real() / 2.0;
    const cplx a = phi(0, 0) + load, b = phi(0, 1), c = phi(1, 1) + load;
    const cplx det = a * c - b * std::conj(b);
    CVector num(2);
    num(0) = (c * d(0) - b * d(1)) / det;
    num(1) = (-std::conj(b) * d(0) + a * d(1)) / det;
    const CVector expect = num / (d.adjoint() * num)(0).real();
    EXPECT_LT((mvdr_weights(phi, d) - expect).norm(), 1e-10 * expect.norm());
}

TEST(Mvdr, DistortionlessAndScaleInvariant) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const CMatrix phi = random_hpd(8, 100 + s);
        const CVector d = random_cvector(8, 200 + s);
        const CVector w = mvdr_weights(phi, d);
        EXPECT_LT(std::abs(w.dot(d) - 1.0), 1e-10);
        const CVector w2 = mvdr_weights(1e4 * phi, d);
        EXPECT_LT((w - w2).norm(), 1e-9 * w.norm());
    }
}

TEST(Mvdr, RankDeficientCovarianceIsLoaded) {
    const CVector u = random_cvector(4, 21);
    const CMatrix phi = u * u.adjoint();  // rank 1
    const CVector d = random_cvector(4, 22);
    double used = 0.0;
    const CVector w = mvdr_weights(phi, d, &used);
    EXPECT_TRUE(w.allFinite());
    EXPECT_GE(used, kMvdrLoading);
    EXPECT_LT(std::abs(w.dot(d) - 1.0), 1e-8);
}

TEST(SteeringVector, RankOneCovariance) {
    const CVector a = random_cvector(5, 31);
    const CMatrix phi = 3.0 * a * a.adjoint();
    bool ok = false;
    const CVector d = steering_vector(phi, 2, ok);
    ASSERT_TRUE(ok);
    const CVector expect = a / a(2);
    EXPECT_LT((d - expect).norm(), 1e-10 * expect.norm());
    EXPECT_NEAR(std::abs(d(2) - 1.0), 0.0, 1e-14);

    steering_vector(CMatrix::Zero(5, 5), 0, ok);
    EXPECT_FALSE(ok);
}

TEST(OracleMvdr, SilentTargetGivesZeroWeights) {
    const StftConfig cfg;
    const std::size_t L = 8000;
    const std::vector<std::vector<double>> zero(3, std::vector<double>(L, 0.0));
    const std::vector<std::vector<double>> noise = {white_noise(L, 1), white_noise(L, 2), white_noise(L, 3)};
    const auto out = oracle_mvdr(spectrum_of(noise, cfg), spectrum_of(zero, cfg), spectrum_of(noise, cfg), 0, L);
    for (std::size_t f = 0; f < out.weights.w.size(); ++f) {
        EXPECT_FALSE(out.weights.active[f]);
        EXPECT_EQ(out.weights.w[f].norm(), 0.0);
    }
    for (double v : out.waveform) EXPECT_EQ(v, 0.0);
}

TEST(OracleMvdr, ImprovesPointSourceInSensorNoise) {
    // target reaches mic m with gain g_m, noise independent per mic
    const StftConfig cfg;
    const std::size_t L = 16000, M = 4;
    const auto s = white_noise(L, 5);
    const double gains[M] = {1.0, 0.8, -0.6, 1.2};
    std::vector<std::vector<double>> img(M), noise(M), mix(M);
    for (std::size_t m = 0; m < M; ++m) {
        noise[m] = white_noise(L, 10 + m);
        img[m].resize(L);
        mix[m].resize(L);
        for (std::size_t i = 0; i < L; ++i) {
            img[m][i] = gains[m] * s[i];
            mix[m][i] = img[m][i] + noise[m][i];
        }
    }
    const auto out = oracle_mvdr(spectrum_of(mix, cfg), spectrum_of(img, cfg), spectrum_of(noise, cfg), 0, L);
    EXPECT_LT(out.weights.max_distortionless_error(), 1e-8);
    // maximum-SNR combination of 4 unit-noise mics: |g|^2 sum / |g_0|^2 = 3.44 -> +5.4 dB
    const double gain_db = si_sdr_db(img[0], out.waveform) - si_sdr_db(img[0], mix[0]);
    const double expect = 10.0 * std::log10(1.0 + 0.64 + 0.36 + 1.44);
    EXPECT_NEAR(gain_db, expect, 0.3);
    EXPECT_EQ(out.waveform.size(), L);
}

TEST(OracleMvdr, ShapeErrors) {
    const StftConfig cfg;
    const auto a = spectrum_of({white_noise(4000, 1), white_noise(4000, 2)}, cfg);
    const auto b = spectrum_of({white_noise(4000, 1)}, cfg);
    EXPECT_THROW(oracle_mvdr(a, b, a, 0, 4000), Error);
    EXPECT_THROW(oracle_mvdr(a, a, a, 2, 4000), Error);
}

TEST(PerFrequencyPit, MatchesExhaustiveSearch) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t N = 3, T = 12;
        std::vector<cplx> pred(N * T), target(N * T);
        for (auto& v : pred) v = {g(rng), g(rng)};
        for (auto& v : target) v = {g(rng), g(rng)};
        std::vector<std::size_t> p(N), best;
        std::iota(p.begin(), p.end(), std::size_t(0));
        double lo = 1e300;
        do {
            double c = 0.0;
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t t = 0; t < T; ++t) c += std::norm(pred[p[i] * T + t] - target[i * T + t]);
            if (c < lo) {
                lo = c;
                best = p;
            }
        } while (std::next_permutation(p.begin(), p.end()));
        EXPECT_EQ(per_frequency_pit(pred, target, N), best);
    }
    EXPECT_THROW(per_frequency_pit(std::vector<cplx>(6), std::vector<cplx>(4), 2), Error);
}

TEST(FreqPitObjective, LossOracleAndGradient) {
    const std::size_t F = 3, N = 2, T = 5;
    Tensor3<double> out(F, 2 * N, T), tgt(F, 2 * N, T);
    out.data = white_noise(out.data.size(), 1);
    tgt.data = white_noise(tgt.data.size(), 2);
    // frequency 1: outputs are the swapped targets plus a little noise
    for (std::size_t r = 0; r < 2 * N; ++r)
        for (std::size_t t = 0; t < T; ++t) out(1, r, t) = tgt(1, (r + 2) % 4, t) + 0.01 * out(1, r, t);

    const auto obj = freq_pit_objective(out, tgt);
    EXPECT_EQ(obj.permutation[1], (std::vector<std::size_t>{1, 0}));

    double expect = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
        double best = 1e300;
        for (const auto& p : {std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{1, 0}}) {
            double c = 0.0;
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t part = 0; part < 2; ++part)
                    for (std::size_t t = 0; t < T; ++t)
                        c += std::pow(out(f, 2 * p[i] + part, t) - tgt(f, 2 * i + part, t), 2);
            best = std::min(best, c);
        }
        expect += best;
    }
    expect /= double(F * 2 * N * T);
    EXPECT_NEAR(obj.loss, expect, 1e-14);

    const double h = 1e-6;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        auto up = out, dn = out;
        up.data[i] += h;
        dn.data[i] -= h;
        const double fd =
            (freq_pit_objective(up, tgt, false).loss - freq_pit_objective(dn, tgt, false).loss) / (2 * h);
        EXPECT_NEAR(obj.grad_outputs.data[i], fd, 1e-7) << i;
    }
}

TEST(Alignment, RecoversScrambledFrequencies) {
    const StftConfig cfg;
    MultichannelWaveform src;
    for (std::uint64_t k = 0; k < 2; ++k) src.channels.push_back(surrogate_source(40 + k, 32000).channels[0]);
    const auto blocks = per_frequency_blocks(stft(src, cfg));
    const std::size_t F = blocks.size();
    std::mt19937_64 rng(3);
    FrequencyPermutationMap scramble(F, {0, 1});
    std::bernoulli_distribution coin(0.4);
    for (auto& p : scramble)
        if (coin(rng)) p = {1, 0};
    const auto map = align_permutations_correlation(apply_permutation_map(blocks, scramble, 2), 2);
    std::size_t agree = 0;
    for (std::size_t f = 0; f < F; ++f) agree += scramble[f][map[f][0]] == scramble[0][map[0][0]];
    EXPECT_GE(double(agree) / double(F), 0.95);
    for (const auto& p : map) {
        auto s = p;
        std::sort(s.begin(), s.end());
        EXPECT_EQ(s, (std::vector<std::size_t>{0, 1}));
    }
}

TEST(Alignment, IdentityAndSingleSwap) {
    // two frequencies with opposite envelopes per slot
    const std::size_t T = 50;
    std::vector<std::vector<cplx>> sep(2, std::vector<cplx>(2 * T));
    for (std::size_t t = 0; t < T; ++t) {
        const double a = 1.0 + std::sin(0.3 * double(t)), b = 1.0 + std::cos(0.17 * double(t));
        sep[0][t] = a;
        sep[0][T + t] = b;
        sep[1][t] = 2.0 * a;
        sep[1][T + t] = 0.5 * b;
    }
    auto map = align_permutations_correlation(sep, 2);
    EXPECT_EQ(map[0], (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(map[1], (std::vector<std::size_t>{0, 1}));

    std::rotate(sep[1].begin(), sep[1].begin() + std::ptrdiff_t(T), sep[1].end());
    map = align_permutations_correlation(sep, 2);
    EXPECT_EQ(map[0], (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(map[1], (std::vector<std::size_t>{1, 0}));

    EXPECT_THROW(align_permutations_correlation({sep[0]}, 2), Error);
}

TEST(ApplyPermutationMap, RoutesSlots) {
    const std::vector<std::vector<cplx>> in = {{1, 2, 3, 4, 5, 6}};
    const auto out = apply_permutation_map(in, {{2, 0, 1}}, 3);
    EXPECT_EQ(out[0], (std::vector<cplx>{5, 6, 1, 2, 3, 4}));
    EXPECT_THROW(apply_permutation_map(in, {}, 3), Error);
}

TEST(PermutationConsistency, CountsAgreeingFrequencies) {
    const std::size_t T = 4;
    std::vector<std::vector<cplx>> target(4, std::vector<cplx>(2 * T));
    for (std::size_t f = 0; f < 4; ++f)
        for (std::size_t i = 0; i < 2 * T; ++i) target[f][i] = cplx(double(i + 1), double(f));
    auto pred = target;
    std::rotate(pred[3].begin(), pred[3].begin() + std::ptrdiff_t(T), pred[3].end());  // swapped
    EXPECT_DOUBLE_EQ(permutation_consistency(pred, target, {0, 1}, 2), 0.75);
    EXPECT_DOUBLE_EQ(permutation_consistency(pred, target, {1, 0}, 2), 0.25);

    // a silent frequency is left out
    std::fill(target[3].begin(), target[3].end(), cplx{});
    EXPECT_DOUBLE_EQ(permutation_consistency(pred, target, {0, 1}, 2), 1.0);
}

TEST(PermutationConsistency, ScalingRestoresSignFlippedSlots) {
    const StftConfig cfg{64, 32};
    const std::size_t L = 2048;
    const std::vector<std::vector<double>> targets = {white_noise(L, 31), white_noise(L, 32)};
    // slot 0 carries speaker 1 and slot 1 speaker 0, both at gain -20
    std::vector<std::vector<double>> est = targets;
    std::swap(est[0], est[1]);
    for (auto& e : est)
        for (double& v : e) v *= -20.0;
    const auto pred = per_frequency_blocks(spectrum_of(est, cfg));
    const auto target = per_frequency_blocks(spectrum_of(targets, cfg));
    const auto global = fpit(est, targets).permutation;
    ASSERT_EQ(global, (std::vector<std::size_t>{1, 0}));

    EXPECT_LT(permutation_consistency(pred, target, global, 2), 0.1);
    const auto scored = scale_to_matched_targets(pred, est, targets, global);
    EXPECT_DOUBLE_EQ(permutation_consistency(scored, target, global, 2), 1.0);
    const std::size_t T = target[5].size() / 2;
    EXPECT_NEAR(std::abs(scored[5][0] - target[5][T]), 0.0, 1e-9);  // slot 0 rescaled onto speaker 1
    EXPECT_THROW(scale_to_matched_targets(pred, est, {targets[0]}, global), Error);
}
