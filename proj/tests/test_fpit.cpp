#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "nbss/fpit.hpp"
#include "test_support.hpp"

using namespace nbss;
using nbss::testing::add_orthogonal_noise;
using nbss::testing::white_noise;

namespace {

StftConfig small_cfg() {
    StftConfig cfg;
    cfg.window_length = 16;
    cfg.hop = 8;
    return cfg;
}

// Brute-force minimum of the mean matched loss, computed without the
// library's permutation search.
double brute_force_min(const std::vector<std::vector<double>>& m, std::vector<std::size_t>& best) {
    const std::size_t n = m.size();
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    double lo = 1e300;
    do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += m[i][p[i]];
        s /= double(n);
        if (s < lo - 1e-15) {
            lo = s;
            best = p;
        }
    } while (std::next_permutation(p.begin(), p.end()));
    return lo;
}

}  // namespace

TEST(SiSdrLoss, ClosedFormValues) {
    const auto y = white_noise(4000, 1);
    std::vector<double> five(y);
    for (double& v : five) v *= 5.0;
    EXPECT_NEAR(si_sdr_loss(y, five), -80.0, 1e-9);

    for (double snr : {20.0, 30.0, 40.0}) EXPECT_NEAR(si_sdr_loss(y, add_orthogonal_noise(y, snr, 3)), -snr, 1e-6);

    const auto ortho = add_orthogonal_noise(std::vector<double>(y.size(), 0.0), 0.0, 5);  // zero + noise
    auto n = white_noise(y.size(), 8);
    const double proj = nbss::testing::dot(n, y) / nbss::testing::norm2(y);
    for (std::size_t i = 0; i < n.size(); ++i) n[i] -= proj * y[i];
    EXPECT_NEAR(si_sdr_loss(y, n), 80.0, 1e-9);
    (void)ortho;
}

TEST(SiSdrLoss, ScaleInvariance) {
    const auto y = white_noise(3000, 2);
    const auto e = add_orthogonal_noise(y, 7.3, 4);
    const double base = si_sdr_loss(y, e);
    for (double c : {1e-3, 1.0, 1e3, -2.0}) {
        std::vector<double> ec(e);
        for (double& v : ec) v *= c;
        EXPECT_NEAR(si_sdr_loss(y, ec), base, 1e-9);
    }
}

TEST(SiSdrLoss, Errors) {
    EXPECT_THROW(si_sdr_loss(std::vector<double>(10, 0.0), white_noise(10, 1)), Error);
    EXPECT_THROW(si_sdr_loss(white_noise(10, 1), white_noise(11, 1)), Error);
    // all-zero estimate: worst score, no NaN
    EXPECT_NEAR(si_sdr_loss(white_noise(10, 1), std::vector<double>(10, 0.0)), 80.0, 1e-12);
}

TEST(SiSdrLoss, GradientMatchesFiniteDifference) {
    const auto y = white_noise(200, 11);
    auto e = add_orthogonal_noise(y, 3.0, 12);
    for (double& v : e) v *= 0.4;
    std::vector<double> g(e.size());
    si_sdr_loss_grad(y, e, g);
    const double h = 1e-6;
    for (std::size_t i = 0; i < e.size(); i += 7) {
        auto up = e, dn = e;
        up[i] += h;
        dn[i] -= h;
        const double fd = (si_sdr_loss(y, up) - si_sdr_loss(y, dn)) / (2 * h);
        EXPECT_NEAR(g[i], fd, 1e-4 * std::max(1e-3, std::abs(fd)));
    }
}

TEST(SiSdrLoss, SaturatedGradientVanishes) {
    const auto y = white_noise(200, 13);
    std::vector<double> e(y);
    for (double& v : e) v *= 2.0;
    std::vector<double> g(e.size(), 1.0);
    si_sdr_loss_grad(y, e, g);
    EXPECT_LT(std::sqrt(nbss::testing::norm2(g)), 1e-3);
}

TEST(BestPermutation, HandEnumeratedCase) {
    const auto r = best_permutation({{-10, -1}, {-2, -12}});
    EXPECT_EQ(r.permutation, (std::vector<std::size_t>{0, 1}));
    EXPECT_DOUBLE_EQ(r.loss, -11.0);
    const auto s = best_permutation({{-1, -10}, {-12, -2}});
    EXPECT_EQ(s.permutation, (std::vector<std::size_t>{1, 0}));
    EXPECT_DOUBLE_EQ(s.loss, -11.0);
}

TEST(BestPermutation, MatchesBruteForceForThreeAndFour) {
    for (std::size_t n : {2u, 3u, 4u})
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto v = white_noise(n * n, seed + 100 * n, 10.0);
            std::vector<std::vector<double>> m(n, std::vector<double>(n));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < n; ++k) m[i][k] = v[i * n + k];
            std::vector<std::size_t> best;
            const double lo = brute_force_min(m, best);
            const auto r = best_permutation(m);
            EXPECT_NEAR(r.loss, lo, 1e-12);
            EXPECT_EQ(r.permutation, best);
        }
    EXPECT_THROW(best_permutation(std::vector<std::vector<double>>(7, std::vector<double>(7, 0.0))), Error);
}

TEST(Fpit, SwappedEstimatesAndTies) {
    const std::vector<std::vector<double>> targets = {white_noise(500, 1), white_noise(500, 2)};
    const auto r = fpit({targets[1], targets[0]}, targets);
    EXPECT_EQ(r.permutation, (std::vector<std::size_t>{1, 0}));
    EXPECT_NEAR(r.loss, -80.0, 1e-9);

    const auto mix = add_orthogonal_noise(targets[0], 0.0, 5);
    const auto tie = fpit({mix, mix}, targets);
    EXPECT_EQ(tie.permutation, (std::vector<std::size_t>{0, 1}));
}

TEST(Fpit, SlotPermutationInvariance) {
    const std::size_t n = 3;
    std::vector<std::vector<double>> targets, est;
    for (std::size_t i = 0; i < n; ++i) {
        targets.push_back(white_noise(400, 10 + i));
        est.push_back(add_orthogonal_noise(targets.back(), 5.0 + 3.0 * double(i), 20 + i));
    }
    const double base = fpit(est, targets).loss;
    for (const auto& p : all_permutations(n)) {
        std::vector<std::vector<double>> shuffled(n);
        for (std::size_t k = 0; k < n; ++k) shuffled[k] = est[p[k]];
        EXPECT_NEAR(fpit(shuffled, targets).loss, base, 1e-10);
    }
}

TEST(Fpit, GradientIgnoresUnmatchedPairs) {
    const std::vector<std::vector<double>> targets = {white_noise(300, 1), white_noise(300, 2)};
    const std::vector<std::vector<double>> est = {add_orthogonal_noise(targets[1], 4.0, 3),
                                                  add_orthogonal_noise(targets[0], 6.0, 4)};
    auto r = fpit(est, targets);
    ASSERT_EQ(r.permutation, (std::vector<std::size_t>{1, 0}));
    const auto g1 = fpit_grad_waveforms(est, targets, r);
    r.per_pair_losses[0][0] = 1e6;
    r.per_pair_losses[1][1] = -1e6;
    const auto g2 = fpit_grad_waveforms(est, targets, r);
    EXPECT_EQ(g1, g2);
}

TEST(AssembleFullband, NormalizedTargetsRoundTrip) {
    const StftConfig cfg;
    const std::size_t L = 8000;
    const std::vector<std::vector<double>> targets = {white_noise(L, 1), white_noise(L, 2)};
    MultichannelWaveform tw;
    tw.channels = targets;
    const auto S = stft(tw, cfg);
    std::vector<std::vector<cplx>> per_freq(S.freqs);
    for (std::size_t f = 0; f < S.freqs; ++f) {
        const double scale = 1.0 + 0.01 * double(f);
        std::vector<cplx> spec(2 * S.frames);
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t t = 0; t < S.frames; ++t) spec[n * S.frames + t] = S.at(n, f, t);
        const auto rows = pack_target(spec, 2, S.frames, scale);
        per_freq[f] = unpack_output(rows, 4, S.frames, scale);
    }
    const auto est = assemble_fullband(per_freq, 2, S.frames, cfg, L);
    for (std::size_t n = 0; n < 2; ++n) {
        double num = 0.0;
        for (std::size_t i = 0; i < L; ++i) num += std::pow(est.waveforms[n][i] - targets[n][i], 2);
        EXPECT_LT(std::sqrt(num / nbss::testing::norm2(targets[n])), 1e-6);
    }

    // swap the slots at every frequency
    auto swapped = per_freq;
    for (auto& v : swapped) std::rotate(v.begin(), v.begin() + std::ptrdiff_t(S.frames), v.end());
    const auto est2 = assemble_fullband(swapped, 2, S.frames, cfg, L);
    EXPECT_EQ(est2.waveforms[0], est.waveforms[1]);
    EXPECT_EQ(est2.waveforms[1], est.waveforms[0]);

    std::vector<std::vector<cplx>> zeros(S.freqs, std::vector<cplx>(2 * S.frames));
    for (const auto& w : assemble_fullband(zeros, 2, S.frames, cfg, L).waveforms)
        for (double v : w) EXPECT_EQ(v, 0.0);
}

TEST(FpitObjective, GradientMatchesFiniteDifference) {
    const auto cfg = small_cfg();
    const std::size_t L = 64, T = cfg.n_frames(L), F = cfg.n_freqs();
    const std::vector<std::vector<double>> targets = {white_noise(L, 1), white_noise(L, 2)};
    Tensor3<double> out(F, 4, T);
    out.data = white_noise(out.data.size(), 3, 0.5);
    std::vector<double> scales(F);
    for (std::size_t f = 0; f < F; ++f) scales[f] = 0.5 + 0.1 * double(f);

    const auto obj = fpit_objective(out, scales, targets, cfg);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        auto up = out, dn = out;
        up.data[i] += h;
        dn.data[i] -= h;
        const double fd =
            (fpit_objective(up, scales, targets, cfg, false).result.loss -
             fpit_objective(dn, scales, targets, cfg, false).result.loss) / (2 * h);
        const double a = obj.grad_outputs.data[i];
        worst = std::max(worst, std::abs(a - fd) / std::max({1e-6, std::abs(a), std::abs(fd)}));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(FpitObjective, Errors) {
    const auto cfg = small_cfg();
    Tensor3<double> out(cfg.n_freqs(), 4, 9);
    std::vector<double> scales(cfg.n_freqs(), 1.0);
    EXPECT_THROW(fpit_objective(out, scales, {white_noise(64, 1)}, cfg), Error);
    EXPECT_THROW(fpit_objective(Tensor3<double>(3, 4, 9), scales, {white_noise(64, 1), white_noise(64, 2)}, cfg),
                 Error);
}
