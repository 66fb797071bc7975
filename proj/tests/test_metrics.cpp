#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "nbss/metrics.hpp"
#include "test_support.hpp"

using namespace nbss;
using nbss::testing::add_orthogonal_noise;
using nbss::testing::white_noise;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("nbss_metrics_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST(SiSdrMetric, ClosedFormAndScale) {
    const auto y = white_noise(8000, 1);
    EXPECT_NEAR(si_sdr_metric(y, add_orthogonal_noise(y, 20.0, 2)), 20.0, 1e-6);
    const auto e = add_orthogonal_noise(y, 9.0, 3);
    for (double c : {-2.0, 1e-3, 1e3}) {
        auto s = e;
        for (double& v : s) v *= c;
        EXPECT_NEAR(si_sdr_metric(y, s), 9.0, 1e-6);
    }
    EXPECT_NEAR(si_sdr_metric(y, y), 80.0, 1e-6);
    EXPECT_EQ(sdr_metric(y, e), si_sdr_metric(y, e));
    EXPECT_THROW(si_sdr_metric(std::vector<double>(10, 0.0), white_noise(10, 4)), Error);
    EXPECT_THROW(sdr_metric(std::vector<double>(10, 0.0), white_noise(10, 4)), Error);
}

TEST(ScoreUtterance, OracleEstimatesAndIdentitySystem) {
    const std::size_t L = 8000;
    const std::vector<std::vector<double>> refs = {white_noise(L, 1), white_noise(L, 2, 0.5)};
    std::vector<double> mix(L);
    for (std::size_t i = 0; i < L; ++i) mix[i] = refs[0][i] + refs[1][i];

    const auto oracle = score_utterance(refs, refs, mix);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_NEAR(oracle.speakers[k].si_sdr, 80.0, 1e-6);
        EXPECT_GT(oracle.speakers[k].si_sdri(), 0.0);
        EXPECT_NEAR(oracle.speakers[k].si_sdri(), 80.0 - si_sdr_metric(refs[k], mix), 1e-9);
    }

    const auto identity = score_utterance(refs, {mix, mix}, mix);
    for (const auto& s : identity.speakers) {
        EXPECT_NEAR(s.si_sdri(), 0.0, 1e-9);
        EXPECT_NEAR(s.sdri(), 0.0, 1e-9);
    }
}

TEST(ScoreUtterance, ResolvesSwappedEstimates) {
    const std::size_t L = 4000;
    const std::vector<std::vector<double>> refs = {white_noise(L, 1), white_noise(L, 2)};
    std::vector<double> mix(L);
    for (std::size_t i = 0; i < L; ++i) mix[i] = refs[0][i] + refs[1][i];
    const std::vector<std::vector<double>> est = {add_orthogonal_noise(refs[1], 10.0, 3),
                                                  add_orthogonal_noise(refs[0], 15.0, 4)};
    const auto u = score_utterance(refs, est, mix);
    EXPECT_EQ(u.permutation, (std::vector<std::size_t>{1, 0}));
    EXPECT_NEAR(u.speakers[0].si_sdr, 15.0, 1e-6);
    EXPECT_NEAR(u.speakers[1].si_sdr, 10.0, 1e-6);
    // never worse than the identity assignment
    const double identity = 0.5 * (si_sdr_metric(refs[0], est[0]) + si_sdr_metric(refs[1], est[1]));
    EXPECT_GE(u.mean(metric::si_sdr), identity);

    EXPECT_THROW(score_utterance(refs, {est[0]}, mix), Error);
    EXPECT_THROW(score_utterance(refs, {est[0], std::vector<double>(10)}, mix), Error);
}

TEST(Buckets, EdgesAreHalfOpenExceptLast) {
    EXPECT_EQ(bucket_index(rt60_buckets(), 0.1), 0u);
    EXPECT_EQ(bucket_index(rt60_buckets(), 0.3), 1u);
    EXPECT_EQ(bucket_index(rt60_buckets(), 1.0), 3u);
    EXPECT_FALSE(bucket_index(rt60_buckets(), 0.05));
    EXPECT_EQ(bucket_index(angle_buckets(), 180.0), 3u);
    EXPECT_EQ(bucket_index(angle_buckets(), 14.999), 0u);
    EXPECT_EQ(bucket_index(overlap_buckets(), 0.95), 4u);
    EXPECT_EQ(bucket_index(overlap_buckets(), 1.0), 4u);
    EXPECT_EQ(bucket_index(overlap_buckets(), 0.7), 3u);
}

TEST(EvalReport, AggregationMatchesIndependentRecomputation) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    EvalReport rep;
    struct Row {
        double rt60, angle, overlap, si_sdri_mean, sdr_mean;
    };
    std::vector<Row> rows;
    for (int i = 0; i < 20; ++i) {
        UtteranceScore s;
        s.rt60 = 0.1 + 0.9 * u01(rng);
        s.angle = 180.0 * u01(rng);
        s.overlap = 0.1 + 0.9 * u01(rng);
        for (int k = 0; k < 2; ++k) {
            SpeakerScore sp;
            sp.si_sdr = 20.0 * u01(rng) - 5.0;
            sp.sdr = sp.si_sdr + 0.5;
            sp.si_sdr_mix = 3.0 * u01(rng) - 1.5;
            sp.sdr_mix = sp.si_sdr_mix;
            s.speakers.push_back(sp);
        }
        rows.push_back({s.rt60, s.angle, s.overlap,
                        0.5 * ((s.speakers[0].si_sdr - s.speakers[0].si_sdr_mix) +
                               (s.speakers[1].si_sdr - s.speakers[1].si_sdr_mix)),
                        0.5 * (s.speakers[0].sdr + s.speakers[1].sdr)});
        rep.utterances.push_back(s);
    }

    auto mean_where = [&](auto pick, double Row::*field) {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : rows)
            if (pick(r)) {
                sum += r.*field;
                ++n;
            }
        return std::make_pair(n, n ? sum / n : 0.0);
    };
    const auto all = rep.overall();
    EXPECT_EQ(all.count, 20u);
    EXPECT_NEAR(all.si_sdri, mean_where([](const Row&) { return true; }, &Row::si_sdri_mean).second, 1e-9);

    const double rt_edges[] = {0.1, 0.3, 0.5, 0.7, 1.0};
    const double angle_edges[] = {0.0, 15.0, 45.0, 90.0, 180.0};
    const double ov_edges[] = {0.1, 0.3, 0.5, 0.7, 0.95, 1.0};
    const auto buckets = rep.buckets();
    std::size_t idx = 0;
    auto check_family = [&](const double* edges, int n, double Row::*key) {
        for (int b = 0; b < n; ++b, ++idx) {
            const double lo = edges[b], hi = edges[b + 1];
            const bool last = b == n - 1;
            auto pick = [&](const Row& r) { return r.*key >= lo && (r.*key < hi || (last && r.*key <= hi)); };
            const auto [count, si] = mean_where(pick, &Row::si_sdri_mean);
            const auto sdr = mean_where(pick, &Row::sdr_mean).second;
            EXPECT_EQ(buckets[idx].count, std::size_t(count));
            EXPECT_NEAR(buckets[idx].si_sdri, si, 1e-9);
            EXPECT_NEAR(buckets[idx].sdr, sdr, 1e-9);
        }
    };
    check_family(rt_edges, 4, &Row::rt60);
    check_family(angle_edges, 4, &Row::angle);
    check_family(ov_edges, 5, &Row::overlap);
    EXPECT_EQ(idx, buckets.size());
}

TEST(EvaluateManifest, ScoresFilesAndSkipsMissing) {
    const auto dir = temp_dir("eval");
    const std::size_t L = 4000;
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < 2; ++i) {
        ManifestEntry e;
        e.id = "u" + std::to_string(i);
        MultichannelWaveform a(2, L), b(2, L), mix(2, L);
        for (std::size_t m = 0; m < 2; ++m) {
            a.channels[m] = white_noise(L, 10 * i + m);
            b.channels[m] = white_noise(L, 10 * i + m + 5);
            for (std::size_t s = 0; s < L; ++s) mix.channels[m][s] = a.channels[m][s] + b.channels[m][s];
        }
        e.mix_path = dir / (e.id + "_mix.wav");
        e.image_paths = {dir / (e.id + "_a.wav"), dir / (e.id + "_b.wav")};
        write_wav(e.mix_path, mix);
        write_wav(e.image_paths[0], a);
        write_wav(e.image_paths[1], b);
        e.scenario.rt60 = 0.2 + 0.4 * i;
        e.scenario.angular_difference = {30.0};
        e.overlap_ratio = 0.6;
        entries.push_back(e);
    }
    std::vector<std::string> warnings;
    const EstimateProvider oracle = [](const ManifestEntry& e) -> std::optional<std::vector<std::vector<double>>> {
        if (e.id == "u1") return std::nullopt;
        return std::vector<std::vector<double>>{read_wav(e.image_paths[1]).channels[1],
                                                read_wav(e.image_paths[0]).channels[1]};
    };
    auto rep = evaluate_manifest(entries, oracle, 1, [&](const std::string& w) { warnings.push_back(w); });
    ASSERT_EQ(rep.utterances.size(), 1u);
    EXPECT_EQ(rep.skipped, (std::vector<std::string>{"u1"}));
    EXPECT_FALSE(warnings.empty());
    EXPECT_EQ(rep.utterances[0].permutation, (std::vector<std::size_t>{1, 0}));
    EXPECT_NEAR(rep.utterances[0].speakers[0].si_sdr, 80.0, 1e-6);
    EXPECT_DOUBLE_EQ(rep.utterances[0].rt60, 0.2);

    rep.system = "oracle";
    write_report(rep, dir / "report");
    std::ifstream csv(dir / "report" / "report.csv");
    std::string header, line;
    std::getline(csv, header);
    EXPECT_EQ(header, "id,speaker,estimate,sdr,si_sdr,sdri,si_sdri,rt60,angle,overlap");
    std::size_t lines = 0;
    while (std::getline(csv, line)) ++lines;
    EXPECT_EQ(lines, 2u);
    std::ifstream txt(dir / "report" / "summary.txt");
    std::getline(txt, line);
    EXPECT_EQ(line, "system: oracle");

    EXPECT_THROW(evaluate_manifest(entries, oracle, 5), Error);
}
