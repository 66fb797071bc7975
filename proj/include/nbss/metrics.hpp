#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fpit.hpp"
#include "manifest.hpp"
#include "wav.hpp"

namespace nbss {

// Positive-is-better SI-SDR in dB, clamped like the training loss.
inline double si_sdr_metric(std::span<const double> ref, std::span<const double> est) {
    return -si_sdr_loss(ref, est);
}

// SDR with a least-squares scale on the reference as the only allowed
// distortion. Numerically equal to SI-SDR; kept as its own entry point so
// reports carry both columns. This is not the BSS-Eval SDR with a 512-tap
// distortion filter.
inline double sdr_metric(std::span<const double> ref, std::span<const double> est) {
    return -si_sdr_loss(ref, est);
}

struct SpeakerScore {
    double sdr = 0.0, si_sdr = 0.0;
    double sdr_mix = 0.0, si_sdr_mix = 0.0;
    double sdri() const { return sdr - sdr_mix; }
    double si_sdri() const { return si_sdr - si_sdr_mix; }
};

struct UtteranceScore {
    std::string id;
    std::vector<SpeakerScore> speakers;       // indexed by reference speaker
    std::vector<std::size_t> permutation;     // reference -> estimate index
    double rt60 = 0.0, angle = 0.0, overlap = 1.0;

    double mean(double (*get)(const SpeakerScore&)) const {
        double s = 0.0;
        for (const auto& k : speakers) s += get(k);
        return speakers.empty() ? 0.0 : s / double(speakers.size());
    }
};

namespace metric {
inline double sdr(const SpeakerScore& s) { return s.sdr; }
inline double si_sdr(const SpeakerScore& s) { return s.si_sdr; }
inline double sdri(const SpeakerScore& s) { return s.sdri(); }
inline double si_sdri(const SpeakerScore& s) { return s.si_sdri(); }
}  // namespace metric

// Scores estimates against reference images (reference channel), resolving
// the speaker assignment by the best mean SI-SDR. Improvements are relative
// to the mixture's reference channel.
inline UtteranceScore score_utterance(const std::vector<std::vector<double>>& refs,
                                      const std::vector<std::vector<double>>& ests, std::span<const double> mixture) {
    const std::size_t n = refs.size();
    if (ests.size() != n) throw Error("estimate count does not match reference count");
    std::vector<std::vector<double>> pair(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (refs[i].size() != mixture.size()) throw Error("reference length differs from the mixture");
        for (std::size_t k = 0; k < n; ++k) {
            if (ests[k].size() != refs[i].size()) throw Error("estimate length differs from the reference");
            pair[i][k] = -si_sdr_metric(refs[i], ests[k]);
        }
    }
    const auto best = best_permutation(pair);
    UtteranceScore u;
    u.permutation = best.permutation;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& est = ests[best.permutation[i]];
        SpeakerScore s;
        s.si_sdr = -pair[i][best.permutation[i]];
        s.sdr = sdr_metric(refs[i], est);
        s.si_sdr_mix = si_sdr_metric(refs[i], mixture);
        s.sdr_mix = sdr_metric(refs[i], mixture);
        u.speakers.push_back(s);
    }
    return u;
}

struct Bucket {
    std::string label;
    double lo, hi;  // [lo, hi), the last bucket of a family is closed
};

inline const std::vector<Bucket>& rt60_buckets() {
    static const std::vector<Bucket> b = {
        {"0.1-0.3", 0.1, 0.3}, {"0.3-0.5", 0.3, 0.5}, {"0.5-0.7", 0.5, 0.7}, {"0.7-1.0", 0.7, 1.0}};
    return b;
}
inline const std::vector<Bucket>& angle_buckets() {
    static const std::vector<Bucket> b = {
        {"0-15", 0.0, 15.0}, {"15-45", 15.0, 45.0}, {"45-90", 45.0, 90.0}, {"90-180", 90.0, 180.0}};
    return b;
}
inline const std::vector<Bucket>& overlap_buckets() {
    static const std::vector<Bucket> b = {{"0.1-0.3", 0.1, 0.3},
                                          {"0.3-0.5", 0.3, 0.5},
                                          {"0.5-0.7", 0.5, 0.7},
                                          {"0.7-0.95", 0.7, 0.95},
                                          {"0.95-1.0", 0.95, 1.0}};
    return b;
}

inline std::optional<std::size_t> bucket_index(const std::vector<Bucket>& family, double v) {
    for (std::size_t i = 0; i < family.size(); ++i) {
        const bool last = i + 1 == family.size();
        if (v >= family[i].lo && (v < family[i].hi || (last && v <= family[i].hi))) return i;
    }
    return std::nullopt;
}

struct BucketMean {
    std::string family, label;
    std::size_t count = 0;
    double sdr = 0, si_sdr = 0, sdri = 0, si_sdri = 0;
};

struct EvalReport {
    std::string system;
    std::vector<UtteranceScore> utterances;
    std::vector<std::string> skipped;

    // Mean over utterances of the per-utterance speaker mean.
    BucketMean overall() const { return mean_of("all", "all", [](const UtteranceScore&) { return true; }); }

    std::vector<BucketMean> buckets() const {
        std::vector<BucketMean> out;
        auto family = [&](const char* name, const std::vector<Bucket>& bs, double UtteranceScore::*field) {
            for (std::size_t i = 0; i < bs.size(); ++i)
                out.push_back(mean_of(name, bs[i].label, [&, i](const UtteranceScore& u) {
                    return bucket_index(bs, u.*field) == i;
                }));
        };
        family("rt60", rt60_buckets(), &UtteranceScore::rt60);
        family("angle", angle_buckets(), &UtteranceScore::angle);
        family("overlap", overlap_buckets(), &UtteranceScore::overlap);
        return out;
    }

private:
    BucketMean mean_of(const std::string& fam, const std::string& label,
                       const std::function<bool(const UtteranceScore&)>& pick) const {
        BucketMean b{fam, label};
        for (const auto& u : utterances) {
            if (!pick(u)) continue;
            ++b.count;
            b.sdr += u.mean(metric::sdr);
            b.si_sdr += u.mean(metric::si_sdr);
            b.sdri += u.mean(metric::sdri);
            b.si_sdri += u.mean(metric::si_sdri);
        }
        if (b.count) {
            const double k = 1.0 / double(b.count);
            b.sdr *= k;
            b.si_sdr *= k;
            b.sdri *= k;
            b.si_sdri *= k;
        }
        return b;
    }
};

// Estimates for one entry, or nothing when they are unavailable.
using EstimateProvider = std::function<std::optional<std::vector<std::vector<double>>>(const ManifestEntry&)>;

// Scores every manifest entry. Missing estimates are listed in
// report.skipped and reported through `warn`.
inline EvalReport evaluate_manifest(const std::vector<ManifestEntry>& entries, const EstimateProvider& estimates,
                                    std::size_t ref_channel,
                                    const std::function<void(const std::string&)>& warn = {}) {
    EvalReport rep;
    for (const auto& e : entries) {
        std::optional<std::vector<std::vector<double>>> est;
        try {
            est = estimates(e);
        } catch (const Error& ex) {
            if (warn) warn(e.id + ": " + ex.what());
        }
        if (!est) {
            rep.skipped.push_back(e.id);
            if (warn) warn("no estimates for " + e.id + ", skipped");
            continue;
        }
        const auto mix = read_wav(e.mix_path);
        if (ref_channel >= mix.n_channels()) throw Error("reference channel out of range for " + e.id);
        std::vector<std::vector<double>> refs;
        for (const auto& p : e.image_paths) {
            const auto img = read_wav(p);
            if (ref_channel >= img.n_channels()) throw Error("reference channel out of range for " + p.string());
            refs.push_back(img.channels[ref_channel]);
        }
        auto u = score_utterance(refs, *est, mix.channels[ref_channel]);
        u.id = e.id;
        u.rt60 = e.scenario.rt60;
        u.angle = e.scenario.angular_difference.empty() ? 0.0 : e.scenario.angular_difference.front();
        u.overlap = e.overlap_ratio;
        rep.utterances.push_back(std::move(u));
    }
    return rep;
}

inline void write_report(const EvalReport& rep, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "report.csv");
    if (!csv) throw Error("cannot write " + (dir / "report.csv").string());
    csv << std::setprecision(10);
    csv << "id,speaker,estimate,sdr,si_sdr,sdri,si_sdri,rt60,angle,overlap\n";
    for (const auto& u : rep.utterances)
        for (std::size_t i = 0; i < u.speakers.size(); ++i) {
            const auto& s = u.speakers[i];
            csv << u.id << ',' << i + 1 << ',' << u.permutation[i] + 1 << ',' << s.sdr << ',' << s.si_sdr << ','
                << s.sdri() << ',' << s.si_sdri() << ',' << u.rt60 << ',' << u.angle << ',' << u.overlap << '\n';
        }

    std::ofstream txt(dir / "summary.txt");
    if (!txt) throw Error("cannot write " + (dir / "summary.txt").string());
    auto row = [&](const BucketMean& b) {
        char line[160];
        if (b.count == 0)
            std::snprintf(line, sizeof line, "%-8s %-9s %6zu %8s %8s %8s %8s\n", b.family.c_str(), b.label.c_str(),
                          b.count, "-", "-", "-", "-");
        else
            std::snprintf(line, sizeof line, "%-8s %-9s %6zu %8.2f %8.2f %8.2f %8.2f\n", b.family.c_str(),
                          b.label.c_str(), b.count, b.sdr, b.si_sdr, b.sdri, b.si_sdri);
        txt << line;
    };
    txt << "system: " << rep.system << '\n';
    txt << "SDR is the scale-projection variant (equal to SI-SDR), not BSS-Eval.\n";
    txt << "Means over utterances of the per-utterance speaker average; dB.\n\n";
    txt << "group    bucket     count      SDR   SI-SDR     SDRi  SI-SDRi\n";
    row(rep.overall());
    for (const auto& b : rep.buckets()) row(b);
    if (!rep.skipped.empty()) {
        txt << "\nskipped (" << rep.skipped.size() << "):";
        for (const auto& id : rep.skipped) txt << ' ' << id;
        txt << '\n';
    }
}

}  // namespace nbss
