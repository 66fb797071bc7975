#pragma once

// Shoebox room simulation with the image-source method: scenario sampling,
// RIR synthesis, spatialization of dry signals and head/tail overlap mixing.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "nbss/types.hpp"

namespace nbss {

using Vec3 = std::array<double, 3>;

inline double distance(const Vec3& a, const Vec3& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
}

inline constexpr double kSpeedOfSound = 343.0;

struct RoomScenario {
    Vec3 room_dims{};  // L, W, H in meters
    double rt60 = 0.0;
    Vec3 array_center{};
    std::vector<Vec3> mic_positions;
    std::vector<Vec3> speaker_positions;
    // direction of speaker k+1 minus direction of speaker 1, seen from the
    // array center, folded to [0, 180] degrees
    std::vector<double> angular_difference;
};

struct ScenarioLimits {
    double length_min = 3.0, length_max = 8.0;
    double width_min = 3.0, width_max = 8.0;
    double height_min = 3.0, height_max = 4.0;
    double rt60_min = 0.1, rt60_max = 1.0;
    double array_square = 1.0;
    double array_radius = 0.05;
    std::size_t n_mics = 8;
    double height = 1.5;
    double wall_margin = 0.5;
    // keeps sources off the array itself so the 1/(4 pi d) law stays finite
    double min_array_distance = 0.1;
};

inline double direction_deg(const Vec3& from, const Vec3& to) {
    return std::atan2(to[1] - from[1], to[0] - from[0]) * 180.0 / std::numbers::pi;
}

inline double angle_between_deg(double a, double b) {
    double d = std::fmod(std::abs(a - b), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

// Empty string when valid, otherwise the first violated constraint.
inline std::string check_scenario(const RoomScenario& s, const ScenarioLimits& lim = {}) {
    const auto& [L, W, H] = s.room_dims;
    constexpr double tol = 1e-9;
    if (L < lim.length_min - tol || L > lim.length_max + tol) return "room length out of range";
    if (W < lim.width_min - tol || W > lim.width_max + tol) return "room width out of range";
    if (H < lim.height_min - tol || H > lim.height_max + tol) return "room height out of range";
    if (s.rt60 < lim.rt60_min - tol || s.rt60 > lim.rt60_max + tol) return "rt60 out of range";
    const double half = lim.array_square / 2.0;
    if (std::abs(s.array_center[0] - L / 2) > half + tol || std::abs(s.array_center[1] - W / 2) > half + tol)
        return "array center outside the central square";
    if (s.mic_positions.size() != lim.n_mics) return "wrong microphone count";
    for (const auto& m : s.mic_positions)
        if (std::abs(distance(m, s.array_center) - lim.array_radius) > 1e-9 || std::abs(m[2] - lim.height) > tol)
            return "microphone off the array circle";
    for (const auto& p : s.speaker_positions) {
        if (std::abs(p[2] - lim.height) > tol) return "speaker height";
        for (int ax = 0; ax < 3; ++ax)
            if (p[ax] < lim.wall_margin - tol || p[ax] > s.room_dims[ax] - lim.wall_margin + tol)
                return "speaker too close to a wall";
    }
    if (s.angular_difference.size() + 1 != s.speaker_positions.size()) return "angular difference count";
    for (double a : s.angular_difference)
        if (a < -tol || a > 180.0 + tol) return "angular difference out of range";
    return {};
}

inline std::vector<Vec3> circular_array(const Vec3& center, double radius, std::size_t n) {
    std::vector<Vec3> mics;
    for (std::size_t m = 0; m < n; ++m) {
        const double phi = 2.0 * std::numbers::pi * double(m) / double(n);
        mics.push_back({center[0] + radius * std::cos(phi), center[1] + radius * std::sin(phi), center[2]});
    }
    return mics;
}

// Draws room, RT60, array placement and speakers. Speaker 1 is uniform over
// the wall-constrained floor area; each further speaker is placed at a
// uniformly drawn angular offset in [0, 180] degrees (random side) and a
// uniform range along that ray. Rejection-samples until constraints hold.
inline RoomScenario sample_scenario(std::uint64_t seed, std::size_t n_speakers, const ScenarioLimits& lim = {}) {
    if (n_speakers < 1) throw Error("n_speakers must be >= 1");
    std::mt19937_64 rng(seed);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

    constexpr int kMaxRejections = 10000;
    for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
        RoomScenario s;
        s.room_dims = {uni(lim.length_min, lim.length_max), uni(lim.width_min, lim.width_max),
                       uni(lim.height_min, lim.height_max)};
        s.rt60 = uni(lim.rt60_min, lim.rt60_max);
        const double half = lim.array_square / 2.0;
        s.array_center = {s.room_dims[0] / 2 + uni(-half, half), s.room_dims[1] / 2 + uni(-half, half), lim.height};
        s.mic_positions = circular_array(s.array_center, lim.array_radius, lim.n_mics);

        const double m = lim.wall_margin;
        auto admissible = [&](const Vec3& p) {
            return p[0] >= m && p[0] <= s.room_dims[0] - m && p[1] >= m && p[1] <= s.room_dims[1] - m &&
                   std::hypot(p[0] - s.array_center[0], p[1] - s.array_center[1]) >= lim.min_array_distance;
        };

        Vec3 first{uni(m, s.room_dims[0] - m), uni(m, s.room_dims[1] - m), lim.height};
        if (!admissible(first)) continue;
        s.speaker_positions.push_back(first);
        const double dir1 = direction_deg(s.array_center, first);

        bool ok = true;
        for (std::size_t k = 1; k < n_speakers && ok; ++k) {
            const double diff = uni(0.0, 180.0);
            const double side = uni(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
            const double dir = (dir1 + side * diff) * std::numbers::pi / 180.0;
            // farthest admissible range along the ray
            const double dx = std::cos(dir), dy = std::sin(dir);
            double r_max = 1e9;
            if (dx > 1e-12) r_max = std::min(r_max, (s.room_dims[0] - m - s.array_center[0]) / dx);
            if (dx < -1e-12) r_max = std::min(r_max, (m - s.array_center[0]) / dx);
            if (dy > 1e-12) r_max = std::min(r_max, (s.room_dims[1] - m - s.array_center[1]) / dy);
            if (dy < -1e-12) r_max = std::min(r_max, (m - s.array_center[1]) / dy);
            if (r_max <= lim.min_array_distance) {
                ok = false;
                break;
            }
            const double r = uni(lim.min_array_distance, r_max);
            Vec3 p{s.array_center[0] + r * dx, s.array_center[1] + r * dy, lim.height};
            if (!admissible(p)) {
                ok = false;
                break;
            }
            s.speaker_positions.push_back(p);
            s.angular_difference.push_back(angle_between_deg(direction_deg(s.array_center, p), dir1));
        }
        if (!ok) continue;
        if (check_scenario(s, lim).empty()) return s;
    }
    throw Error("scenario sampling exceeded 10000 rejected draws");
}

struct RirOptions {
    int fs = 16000;
    double c = kSpeedOfSound;
    // negative: include every image within c * rt60 of the microphone
    int max_order = -1;
    std::size_t sinc_taps = 81;
    // 100 Hz high-pass on each response; without it the all-positive image
    // pulses pile up at low frequency and stretch the measured decay
    bool high_pass = true;
    // fit the wall absorption to the image-source decay instead of Sabine
    bool calibrate = true;
};

struct RirSet {
    std::vector<std::vector<std::vector<double>>> rirs;  // [speaker][mic][tap]
    RoomScenario scenario;
};

inline double room_volume(const Vec3& d) { return d[0] * d[1] * d[2]; }
inline double room_surface(const Vec3& d) { return 2.0 * (d[0] * d[1] + d[0] * d[2] + d[1] * d[2]); }

// Uniform energy absorption for the six walls from Sabine's formula
// T60 = 24 ln(10) V / (c S a).
inline double sabine_absorption(const Vec3& dims, double rt60, double c = kSpeedOfSound) {
    if (rt60 <= 0.0) throw Error("rt60 must be positive");
    return 24.0 * std::log(10.0) * room_volume(dims) / (c * room_surface(dims) * rt60);
}

// Adds amplitude * windowed-sinc(k - delay) into h. Taps before index 0 are
// dropped.
inline void add_fractional_impulse(std::vector<double>& h, double delay, double amplitude, std::size_t taps) {
    const std::ptrdiff_t half = std::ptrdiff_t(taps / 2);
    const std::ptrdiff_t base = std::ptrdiff_t(std::floor(delay));
    const double frac = delay - double(base);
    const double sin_pi_delay = std::sin(std::numbers::pi * frac);
    const double wscale = std::numbers::pi / double(half + 1);
    for (std::ptrdiff_t j = -half; j <= half; ++j) {
        const std::ptrdiff_t k = base + j;
        if (k < 0 || k >= std::ptrdiff_t(h.size())) continue;
        const double x = double(j) - frac;
        double s;
        if (std::abs(x) < 1e-12) {
            s = 1.0;
        } else {
            // sin(pi (j - frac)) = -(-1)^j sin(pi frac)
            const double sgn = (j % 2 == 0) ? -1.0 : 1.0;
            s = sgn * sin_pi_delay / (std::numbers::pi * x);
        }
        const double w = 0.5 * (1.0 + std::cos(wscale * x));
        h[std::size_t(k)] += amplitude * w * s;
    }
}

// Tabulated 81-tap Hann-windowed sinc, sampled at `steps` fractional
// delays in [0, 1]. Rows are linearly interpolated at lookup.
class FractionalDelayTable {
public:
    explicit FractionalDelayTable(std::size_t taps = 81, std::size_t steps = 1024) : taps_(taps), steps_(steps) {
        if (taps % 2 == 0) throw Error("sinc_taps must be odd");
        table_.assign((steps + 1) * taps, 0.0);
        for (std::size_t s = 0; s <= steps; ++s) {
            // reuse the exact routine with a delay of (taps/2 + frac)
            std::vector<double> h(taps, 0.0);
            add_fractional_impulse(h, double(taps / 2) + double(s) / double(steps), 1.0, taps);
            std::copy(h.begin(), h.end(), table_.begin() + std::ptrdiff_t(s * taps));
        }
    }

    std::size_t taps() const { return taps_; }

    void add(std::vector<double>& h, double delay, double amplitude) const {
        const std::ptrdiff_t half = std::ptrdiff_t(taps_ / 2);
        const std::ptrdiff_t base = std::ptrdiff_t(std::floor(delay));
        const double pos = (delay - double(base)) * double(steps_);
        const std::size_t s = std::min(std::size_t(pos), steps_ - 1);
        const double w1 = pos - double(s), w0 = 1.0 - w1;
        const double* r0 = table_.data() + s * taps_;
        const double* r1 = r0 + taps_;
        const std::ptrdiff_t first = base - half;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -first);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(std::ptrdiff_t(taps_), std::ptrdiff_t(h.size()) - first);
        const double a0 = amplitude * w0, a1 = amplitude * w1;
        for (std::ptrdiff_t j = lo; j < hi; ++j) h[std::size_t(first + j)] += a0 * r0[j] + a1 * r1[j];
    }

private:
    std::size_t taps_, steps_;
    std::vector<double> table_;  // [step][tap], tap 0 is offset -taps/2
};

namespace detail {

inline double image_coord(const Vec3& dims, const Vec3& src, int ax, int n) {
    const double L = dims[ax];
    return double(n) * L + ((n % 2 == 0) ? src[ax] : L - src[ax]);
}

// Visits every image within max_distance of mic (and at most max_order
// reflections when max_order >= 0) as fn(distance, order).
template <class Fn>
void for_each_image(const Vec3& dims, const Vec3& src, const Vec3& mic, double max_distance, int max_order, Fn&& fn) {
    std::array<int, 3> range{};
    for (int ax = 0; ax < 3; ++ax) {
        const int by_dist = int(std::ceil(max_distance / dims[ax])) + 1;
        range[ax] = max_order >= 0 ? std::min(max_order, by_dist) : by_dist;
    }
    const double r2 = max_distance * max_distance;
    for (int nx = -range[0]; nx <= range[0]; ++nx) {
        const double dx = image_coord(dims, src, 0, nx) - mic[0];
        if (dx * dx > r2) continue;
        for (int ny = -range[1]; ny <= range[1]; ++ny) {
            const double dy = image_coord(dims, src, 1, ny) - mic[1];
            const double dxy2 = dx * dx + dy * dy;
            if (dxy2 > r2) continue;
            for (int nz = -range[2]; nz <= range[2]; ++nz) {
                const int order = std::abs(nx) + std::abs(ny) + std::abs(nz);
                if (max_order >= 0 && order > max_order) continue;
                const double dz = image_coord(dims, src, 2, nz) - mic[2];
                const double d2 = dxy2 + dz * dz;
                if (d2 > r2) continue;
                fn(std::sqrt(d2), order);
            }
        }
    }
}

}  // namespace detail

inline std::vector<double> image_method_rir(const Vec3& dims, const Vec3& src, const Vec3& mic, double beta,
                                            double max_distance, int max_order, const RirOptions& opt,
                                            const FractionalDelayTable& table) {
    const std::size_t half = opt.sinc_taps / 2;
    const std::size_t length = std::size_t(std::ceil(max_distance / opt.c * opt.fs)) + half + 2;
    std::vector<double> h(length, 0.0);
    const double inv_4pi = 1.0 / (4.0 * std::numbers::pi);
    const double samples_per_meter = opt.fs / opt.c;
    // beta^order by table lookup; orders are bounded by the search box
    std::vector<double> beta_pow(1, 1.0);
    detail::for_each_image(dims, src, mic, max_distance, max_order, [&](double d, int order) {
        while (beta_pow.size() <= std::size_t(order)) beta_pow.push_back(beta_pow.back() * beta);
        const double gain = beta_pow[std::size_t(order)] * inv_4pi / d;
        if (gain == 0.0) return;
        table.add(h, d * samples_per_meter, gain);
    });
    return h;
}

inline std::vector<double> image_method_rir(const Vec3& dims, const Vec3& src, const Vec3& mic, double beta,
                                            double max_distance, int max_order, const RirOptions& opt) {
    return image_method_rir(dims, src, mic, beta, max_distance, max_order, opt,
                            FractionalDelayTable(opt.sinc_taps));
}

// Broadband decay time from the Schroeder backward integral: linear fit of
// the energy-decay curve between -5 and -25 dB, extrapolated to -60 dB.
// Integration starts at sample `start`; passing the end of the direct-path
// pulse keeps a close source from masking the reverberant decay.
inline double schroeder_t60(std::span<const double> h, int fs, std::size_t start = 0) {
    if (start >= h.size()) throw Error("decay start beyond the impulse response");
    h = h.subspan(start);
    std::vector<double> edc(h.size() + 1, 0.0);
    for (std::size_t i = h.size(); i-- > 0;) edc[i] = edc[i + 1] + h[i] * h[i];
    if (edc[0] <= 0.0) throw Error("empty impulse response");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double db = 10.0 * std::log10(edc[i] / edc[0]);
        if (db > -5.0) continue;
        if (db < -25.0) break;
        const double t = double(i) / fs;
        sx += t;
        sy += db;
        sxx += t * t;
        sxy += t * db;
        ++n;
    }
    if (n < 2) throw Error("decay curve too short to fit");
    const double slope = (double(n) * sxy - sx * sy) / (double(n) * sxx - sx * sx);
    return -60.0 / slope;
}

// First sample after the direct-path pulse from src to mic.
inline std::size_t direct_path_end(const Vec3& src, const Vec3& mic, const RirOptions& opt = {}) {
    return std::size_t(std::floor(distance(src, mic) / opt.c * opt.fs)) + opt.sinc_taps / 2 + 1;
}

namespace detail {

// Reflection energy of a source/receiver pair binned by arrival time and
// reflection count, so the decay can be re-evaluated for any absorption.
struct ImageEnergyProfile {
    std::size_t bins = 0, orders = 0, gate = 0;
    double bin_seconds = 1e-3;
    std::vector<double> energy;  // [bin][order] sum of 1/d^2

    ImageEnergyProfile(const Vec3& dims, const Vec3& src, const Vec3& mic, double horizon, const RirOptions& opt) {
        bins = std::size_t(horizon / opt.c / bin_seconds) + 1;
        for (int ax = 0; ax < 3; ++ax) orders += std::size_t(std::ceil(horizon / dims[ax])) + 2;
        gate = std::size_t(std::ceil(double(direct_path_end(src, mic, opt)) / opt.fs / bin_seconds));
        energy.assign(bins * orders, 0.0);
        for_each_image(dims, src, mic, horizon, -1, [&](double d, int order) {
            const std::size_t b = std::min(bins - 1, std::size_t(d / opt.c / bin_seconds));
            energy[b * orders + std::size_t(order)] += 1.0 / (d * d);
        });
    }

    // Gated Schroeder T60 for energy reflection coefficient r = 1 - absorption;
    // infinity when no usable decay exists.
    double t60(double r) const {
        std::vector<double> rp(orders);
        rp[0] = 1.0;
        for (std::size_t k = 1; k < orders; ++k) rp[k] = rp[k - 1] * r;
        std::vector<double> e(bins, 0.0);
        for (std::size_t b = gate; b < bins; ++b) {
            double acc = 0.0;
            const double* row = energy.data() + b * orders;
            for (std::size_t k = 0; k < orders; ++k) acc += row[k] * rp[k];
            e[b] = acc;
        }
        std::vector<double> edc(bins + 1, 0.0);
        for (std::size_t b = bins; b-- > gate;) edc[b] = edc[b + 1] + e[b];
        if (gate >= bins || edc[gate] <= 0.0) return 0.0;
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        std::size_t n = 0;
        for (std::size_t b = gate; b < bins; ++b) {
            if (edc[b] <= 0.0) break;
            const double db = 10.0 * std::log10(edc[b] / edc[gate]);
            if (db > -5.0) continue;
            if (db < -25.0) break;
            const double t = double(b) * bin_seconds;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
            ++n;
        }
        if (n < 2) return n == 0 && edc[gate] > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        const double slope = (double(n) * sxy - sx * sy) / (double(n) * sxx - sx * sx);
        return slope < 0.0 ? -60.0 / slope : std::numeric_limits<double>::infinity();
    }
};

}  // namespace detail

// Wall absorption whose image-source decay, measured like schroeder_t60 with
// a direct-path gate, matches the target rt60. Sabine's value is only the
// starting point: a uniform-absorption shoebox decays more slowly than
// Sabine predicts. Throws when even full absorption is too reverberant.
inline double calibrated_absorption(const RoomScenario& scn, const RirOptions& opt = {}) {
    const double sabine = sabine_absorption(scn.room_dims, scn.rt60, opt.c);
    if (sabine > 1.0 + 1e-9) throw Error("unachievable rt60");
    if (scn.speaker_positions.empty()) return std::min(1.0, sabine);
    const double horizon = 1.5 * opt.c * scn.rt60;
    std::vector<detail::ImageEnergyProfile> profiles;
    for (const auto& s : scn.speaker_positions)
        profiles.emplace_back(scn.room_dims, s, scn.array_center, horizon, opt);
    auto measured = [&](double a) {
        double acc = 0.0;
        for (const auto& p : profiles) acc += std::log(std::max(p.t60(1.0 - a), 1e-6));
        return std::exp(acc / double(profiles.size()));
    };
    // decay time falls as absorption rises: bisect in [0, 1]
    double lo = 0.0, hi = 1.0;
    if (measured(hi) > scn.rt60) return 1.0;
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        (measured(mid) > scn.rt60 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Allen and Berkley's second-order 100 Hz high-pass, in place.
inline void high_pass_100hz(std::vector<double>& h, double fs) {
    const double w = 2.0 * std::numbers::pi * 100.0 / fs;
    const double r1 = std::exp(-w), b1 = 2.0 * r1 * std::cos(w), b2 = -r1 * r1, a1 = -(1.0 + r1);
    double y0 = 0.0, y1 = 0.0, y2 = 0.0;
    for (double& v : h) {
        y2 = y1;
        y1 = y0;
        y0 = b1 * y1 + b2 * y2 + v;
        v = y0 + a1 * y1 + r1 * y2;
    }
}

inline RirSet simulate_rir(const RoomScenario& scn, const RirOptions& opt = {}) {
    double absorption = sabine_absorption(scn.room_dims, scn.rt60, opt.c);
    if (absorption > 1.0 + 1e-9) throw Error("unachievable rt60");
    if (opt.calibrate) absorption = calibrated_absorption(scn, opt);
    const double beta = std::sqrt(std::max(0.0, 1.0 - absorption));

    double farthest_direct = 0.0;
    for (const auto& s : scn.speaker_positions)
        for (const auto& m : scn.mic_positions) farthest_direct = std::max(farthest_direct, distance(s, m));

    double max_distance = std::max(opt.c * scn.rt60, farthest_direct + 1e-6);
    if (opt.max_order >= 0) {
        // every image of that order fits in the room diagonal times (order + 1)
        const double diag = std::hypot(scn.room_dims[0], scn.room_dims[1], scn.room_dims[2]);
        max_distance = diag * (opt.max_order + 1) + farthest_direct;
    }

    const FractionalDelayTable table(opt.sinc_taps);
    RirSet out;
    out.scenario = scn;
    for (const auto& s : scn.speaker_positions) {
        auto& per_mic = out.rirs.emplace_back();
        for (const auto& m : scn.mic_positions) {
            per_mic.push_back(image_method_rir(scn.room_dims, s, m, beta, max_distance, opt.max_order, opt, table));
            if (opt.high_pass) high_pass_100hz(per_mic.back(), opt.fs);
        }
    }
    return out;
}

// Full linear convolution via zero-padded FFT.
inline std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) return {};
    const std::size_t out_len = a.size() + b.size() - 1;
    std::size_t nfft = 1;
    while (nfft < out_len) nfft <<= 1;
    Eigen::FFT<double> fft;
    std::vector<double> pa(nfft, 0.0), pb(nfft, 0.0);
    std::copy(a.begin(), a.end(), pa.begin());
    std::copy(b.begin(), b.end(), pb.begin());
    std::vector<cplx> fa, fb;
    fft.fwd(fa, pa);
    fft.fwd(fb, pb);
    for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
    std::vector<double> out;
    fft.inv(out, fa);
    out.resize(out_len);
    return out;
}

inline MultichannelWaveform spatialize(const MultichannelWaveform& dry,
                                       const std::vector<std::vector<double>>& rirs_for_speaker) {
    if (dry.n_channels() != 1) throw Error("spatialize expects a single-channel dry signal");
    MultichannelWaveform out;
    out.sample_rate = dry.sample_rate;
    for (const auto& rir : rirs_for_speaker) out.channels.push_back(convolve(dry.channels[0], rir));
    return out;
}

struct MixtureScene {
    MultichannelWaveform mixture;
    std::vector<MultichannelWaveform> images;
    double overlap_ratio = 1.0;
    RoomScenario scenario;
};

// Active spans of the head/tail layout: A occupies [0, a), B occupies
// [target - b, target) and the two overlap by round(ratio * target) samples.
struct OverlapLayout {
    std::size_t active_a = 0;
    std::size_t active_b = 0;
    std::size_t overlap = 0;
};

inline OverlapLayout overlap_layout(double overlap_ratio, std::size_t target_len) {
    if (!(overlap_ratio >= 0.1 - 1e-12 && overlap_ratio <= 1.0 + 1e-12))
        throw Error("overlap_ratio must lie in [0.1, 1.0]");
    OverlapLayout l;
    l.overlap = std::min(target_len, std::size_t(std::llround(overlap_ratio * double(target_len))));
    const std::size_t total = target_len + l.overlap;
    l.active_a = (total + 1) / 2;
    l.active_b = total - l.active_a;
    return l;
}

inline MixtureScene mix_pair(const MultichannelWaveform& img_a, const MultichannelWaveform& img_b,
                             double overlap_ratio, std::size_t target_len = 64000) {
    img_a.check_rectangular();
    img_b.check_rectangular();
    if (img_a.n_channels() != img_b.n_channels() || img_a.n_channels() == 0)
        throw Error("images must have the same nonzero channel count");
    const auto layout = overlap_layout(overlap_ratio, target_len);
    if (img_a.n_samples() < layout.active_a || img_b.n_samples() < layout.active_b)
        throw Error("source shorter than its required active span");

    const std::size_t M = img_a.n_channels();
    MixtureScene scene;
    scene.overlap_ratio = overlap_ratio;
    MultichannelWaveform a(M, target_len, img_a.sample_rate), b(M, target_len, img_b.sample_rate);
    const std::size_t b_start = target_len - layout.active_b;
    for (std::size_t m = 0; m < M; ++m) {
        std::copy_n(img_a.channels[m].begin(), layout.active_a, a.channels[m].begin());
        std::copy_n(img_b.channels[m].begin(), layout.active_b, b.channels[m].begin() + std::ptrdiff_t(b_start));
    }
    scene.mixture = MultichannelWaveform(M, target_len, img_a.sample_rate);
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t i = 0; i < target_len; ++i) scene.mixture.channels[m][i] = a.channels[m][i] + b.channels[m][i];
    scene.images = {std::move(a), std::move(b)};
    return scene;
}

}  // namespace nbss
