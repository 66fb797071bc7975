#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "features.hpp"
#include "fpit.hpp"
#include "model.hpp"
#include "stft.hpp"

namespace nbss {

enum class Criterion { fpit, freq_pit };

inline Criterion parse_criterion(const std::string& s) {
    if (s == "fpit") return Criterion::fpit;
    if (s == "freq-pit") return Criterion::freq_pit;
    throw Error("unknown criterion '" + s + "' (expected fpit or freq-pit)");
}

inline std::string criterion_name(Criterion c) { return c == Criterion::fpit ? "fpit" : "freq-pit"; }

struct TrainConfig {
    double lr_init = 1e-3;
    double lr_min = 1e-4;
    std::size_t plateau_epochs = 10;
    double lr_factor = 0.5;
    double clip_threshold = 5.0;
    std::size_t utterances_per_batch = 30;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t max_epochs = 100;
    Criterion criterion = Criterion::fpit;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr_min > 0.0 && lr_min <= lr_init)) throw Error("need 0 < lr_min <= lr_init");
        if (!(clip_threshold > 0.0)) throw Error("clip_threshold must be positive");
        if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw Error("lr_halving must lie in (0, 1)");
        if (utterances_per_batch == 0) throw Error("utterances_per_batch must be positive");
        if (plateau_epochs == 0) throw Error("plateau_epochs must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0))
            throw Error("invalid Adam hyper-parameters");
    }
};

template <class Scalar>
struct TrainState {
    ModelParams<Scalar> params;
    std::vector<Scalar> m, v;  // Adam moments, shaped like params
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    double lr = 1e-3;
    double best_val = std::numeric_limits<double>::infinity();
    std::uint64_t since_improve = 0;

    TrainState() = default;
    TrainState(ModelParams<Scalar> p, double lr0)
        : params(std::move(p)), m(params.size(), Scalar(0)), v(params.size(), Scalar(0)), lr(lr0) {}
};

// Standard bias-corrected Adam. Rejects non-finite gradients before touching
// the state.
template <class Scalar>
void adam_step(TrainState<Scalar>& s, std::span<const Scalar> grads, double lr, const TrainConfig& cfg = {}) {
    if (grads.size() != s.params.size()) throw Error("gradient size does not match parameters");
    for (Scalar g : grads)
        if (!std::isfinite(double(g))) throw Error("non-finite gradient");
    ++s.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, double(s.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(s.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const double g = double(grads[i]);
        const double m = cfg.beta1 * double(s.m[i]) + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * double(s.v[i]) + (1.0 - cfg.beta2) * g * g;
        s.m[i] = Scalar(m);
        s.v[i] = Scalar(v);
        s.params.flat[i] = Scalar(double(s.params.flat[i]) - lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps));
    }
}

// Global L2-norm clipping in place; returns the norm before clipping.
template <class Scalar>
double clip_gradients(std::span<Scalar> grads, double threshold) {
    double sq = 0.0;
    for (Scalar g : grads) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (norm > threshold) {
        const double k = threshold / norm;
        for (Scalar& g : grads) g = Scalar(double(g) * k);
    }
    return norm;
}

// Once per epoch. A strict improvement resets the plateau counter; after
// plateau_epochs epochs without one the rate is multiplied by lr_factor,
// never going below lr_min.
template <class Scalar>
void lr_schedule_update(TrainState<Scalar>& s, double val_loss, const TrainConfig& cfg) {
    if (val_loss < s.best_val) {
        s.best_val = val_loss;
        s.since_improve = 0;
        return;
    }
    if (++s.since_improve >= cfg.plateau_epochs) {
        s.lr = std::max(s.lr * cfg.lr_factor, cfg.lr_min);
        s.since_improve = 0;
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian
//   "NBSSCKPT" u32 version u32 scalar_bytes u32 n_dims u64[n_dims] shape
//   u64 count, Scalar[count] params,
//   u8 has_state [u64 step u64 epoch f64 lr f64 best_val u64 since_improve
//                 Scalar[count] m Scalar[count] v]

inline constexpr char kCheckpointMagic[8] = {'N', 'B', 'S', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

template <class T>
void put_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get_raw(std::istream& in, const std::string& what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error("checkpoint truncated while reading " + what);
    return v;
}

template <class Stored, class Vector>
void read_array(std::istream& in, Vector& out, std::size_t n, const std::string& what) {
    using Scalar = typename Vector::value_type;
    std::vector<Stored> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n * sizeof(Stored)));
    if (!in) throw Error("checkpoint truncated while reading " + what);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = Scalar(raw[i]);
}

}  // namespace detail

template <class Scalar>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<Scalar>& p,
                     const TrainState<Scalar>* state = nullptr) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(kCheckpointMagic, 8);
    detail::put_raw(out, kCheckpointVersion);
    detail::put_raw(out, std::uint32_t(sizeof(Scalar)));
    detail::put_raw(out, std::uint32_t(4));
    for (std::size_t d : {p.shape.input, p.shape.hidden1, p.shape.hidden2, p.shape.output})
        detail::put_raw(out, std::uint64_t(d));
    detail::put_raw(out, std::uint64_t(p.size()));
    out.write(reinterpret_cast<const char*>(p.flat.data()), std::streamsize(p.size() * sizeof(Scalar)));
    detail::put_raw(out, std::uint8_t(state ? 1 : 0));
    if (state) {
        detail::put_raw(out, std::uint64_t(state->step));
        detail::put_raw(out, std::uint64_t(state->epoch));
        detail::put_raw(out, state->lr);
        detail::put_raw(out, state->best_val);
        detail::put_raw(out, std::uint64_t(state->since_improve));
        out.write(reinterpret_cast<const char*>(state->m.data()), std::streamsize(p.size() * sizeof(Scalar)));
        out.write(reinterpret_cast<const char*>(state->v.data()), std::streamsize(p.size() * sizeof(Scalar)));
    }
    if (!out) throw Error("write failed: " + path.string());
}

template <class Scalar>
struct Checkpoint {
    ModelParams<Scalar> params;
    std::optional<TrainState<Scalar>> state;
};

// Loads a checkpoint written with either float or double parameters.
template <class Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error(path.string() + ": not a checkpoint");
    if (detail::get_raw<std::uint32_t>(in, "version") != kCheckpointVersion)
        throw Error(path.string() + ": unsupported checkpoint version");
    const auto bytes = detail::get_raw<std::uint32_t>(in, "scalar size");
    if (bytes != 4 && bytes != 8) throw Error(path.string() + ": unsupported scalar size");
    if (detail::get_raw<std::uint32_t>(in, "shape rank") != 4) throw Error(path.string() + ": bad shape table");
    ModelShape shape;
    shape.input = detail::get_raw<std::uint64_t>(in, "shape");
    shape.hidden1 = detail::get_raw<std::uint64_t>(in, "shape");
    shape.hidden2 = detail::get_raw<std::uint64_t>(in, "shape");
    shape.output = detail::get_raw<std::uint64_t>(in, "shape");
    const auto count = detail::get_raw<std::uint64_t>(in, "parameter count");
    Checkpoint<Scalar> ck{ModelParams<Scalar>(shape), std::nullopt};
    if (count != ck.params.size()) throw Error(path.string() + ": parameter count does not match shape");
    auto read = [&](auto& dst, const char* what) {
        if (bytes == 4)
            detail::read_array<float>(in, dst, count, what);
        else
            detail::read_array<double>(in, dst, count, what);
    };
    read(ck.params.flat, "parameters");
    if (detail::get_raw<std::uint8_t>(in, "state flag")) {
        TrainState<Scalar> s;
        s.params = ck.params;
        s.step = detail::get_raw<std::uint64_t>(in, "step");
        s.epoch = detail::get_raw<std::uint64_t>(in, "epoch");
        s.lr = detail::get_raw<double>(in, "lr");
        s.best_val = detail::get_raw<double>(in, "best loss");
        s.since_improve = detail::get_raw<std::uint64_t>(in, "plateau counter");
        read(s.m, "first moments");
        read(s.v, "second moments");
        ck.state = std::move(s);
    }
    if (!ck.params.all_finite()) throw Error(path.string() + ": non-finite parameters");
    return ck;
}

// ---------------------------------------------------------------------------
// Data and the training loop

// One training utterance: the multichannel mixture and the reference-channel
// spatial image of every speaker.
struct TrainScene {
    MultichannelWaveform mixture;
    std::vector<std::vector<double>> targets;
};

struct SceneSource {
    std::size_t count = 0;
    std::function<TrainScene(std::size_t)> load;

    static SceneSource from_vector(std::vector<TrainScene> scenes) {
        auto shared = std::make_shared<std::vector<TrainScene>>(std::move(scenes));
        return {shared->size(), [shared](std::size_t i) { return (*shared)[i]; }};
    }
};

// Network-ready form of a scene.
struct PreparedScene {
    Tensor3<float> inputs;         // [F][2M][T]
    std::vector<double> scales;    // [F]
    std::vector<std::vector<double>> targets;
    Tensor3<double> target_rows;   // [F][2N][T] normalized, for the per-frequency criterion
};

inline PreparedScene prepare_scene(const TrainScene& scene, const StftConfig& cfg, std::size_t ref_channel,
                                   bool with_target_rows) {
    if (scene.targets.empty()) throw Error("scene has no targets");
    for (const auto& t : scene.targets)
        if (t.size() != scene.mixture.n_samples()) throw Error("target length differs from the mixture");
    const auto S = stft(scene.mixture, cfg);
    const auto b = pack_input(S, ref_channel);
    PreparedScene p;
    p.inputs = Tensor3<float>(b.items, b.width, b.frames);
    for (std::size_t i = 0; i < b.inputs.size(); ++i) p.inputs.data[i] = float(b.inputs[i]);
    p.scales = b.scales;
    p.targets = scene.targets;
    if (with_target_rows) {
        MultichannelWaveform tw;
        tw.channels = scene.targets;
        const auto St = stft(tw, cfg);
        const std::size_t N = scene.targets.size(), T = S.frames;
        p.target_rows = Tensor3<double>(S.freqs, 2 * N, T);
        std::vector<cplx> spec(N * T);
        for (std::size_t f = 0; f < S.freqs; ++f) {
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t t = 0; t < T; ++t) spec[n * T + t] = St.at(n, f, t);
            const auto rows = pack_target(spec, N, T, p.scales[f]);
            std::copy(rows.begin(), rows.end(), p.target_rows.data.begin() + std::ptrdiff_t(f * 2 * N * T));
        }
    }
    return p;
}

struct SceneLoss {
    double loss = 0.0;
    Tensor3<double> grad_outputs;  // empty unless requested
};

template <class Scalar>
SceneLoss scene_objective(const PreparedScene& p, const Tensor3<Scalar>& outputs, const StftConfig& cfg,
                          Criterion criterion, bool with_grad) {
    Tensor3<double> out(outputs.n0, outputs.n1, outputs.n2);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = double(outputs.data[i]);
    if (criterion == Criterion::fpit) {
        auto obj = fpit_objective(out, p.scales, p.targets, cfg, with_grad);
        return {obj.result.loss, std::move(obj.grad_outputs)};
    }
    auto obj = freq_pit_objective(out, p.target_rows, with_grad);
    return {obj.loss, std::move(obj.grad_outputs)};
}

// One optimizer step over a group of utterances: the mean loss of the group
// is differentiated utterance by utterance (all frequencies of an utterance
// form one forward batch), gradients are summed, clipped and applied.
// Returns the mean loss before the update.
template <class Scalar>
double train_step(TrainState<Scalar>& s, const std::vector<PreparedScene>& group, const StftConfig& stft_cfg,
                  const TrainConfig& cfg) {
    if (group.empty()) throw Error("empty batch");
    std::vector<Scalar> grad(s.params.size(), Scalar(0));
    double loss = 0.0;
    const double w = 1.0 / double(group.size());
    for (const auto& p : group) {
        Tensor3<Scalar> x(p.inputs.n0, p.inputs.n1, p.inputs.n2);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = Scalar(p.inputs.data[i]);
        auto fw = forward(s.params, x);
        const auto obj = scene_objective(p, fw.outputs, stft_cfg, cfg.criterion, true);
        loss += w * obj.loss;
        Tensor3<Scalar> g(obj.grad_outputs.n0, obj.grad_outputs.n1, obj.grad_outputs.n2);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = Scalar(w * obj.grad_outputs.data[i]);
        const auto bw = backward(s.params, fw.trace, g);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += bw.grad.flat[i];
    }
    clip_gradients<Scalar>(grad, cfg.clip_threshold);
    adam_step<Scalar>(s, grad, s.lr, cfg);
    return loss;
}

// Mean criterion over a set of scenes, without gradients.
template <class Scalar>
double evaluate_loss(const ModelParams<Scalar>& params, const SceneSource& src, const StftConfig& stft_cfg,
                     const TrainConfig& cfg, std::size_t ref_channel) {
    if (src.count == 0) throw Error("empty dataset");
    double total = 0.0;
    for (std::size_t i = 0; i < src.count; ++i) {
        const auto p = prepare_scene(src.load(i), stft_cfg, ref_channel, cfg.criterion == Criterion::freq_pit);
        Tensor3<Scalar> x(p.inputs.n0, p.inputs.n1, p.inputs.n2);
        for (std::size_t k = 0; k < x.data.size(); ++k) x.data[k] = Scalar(p.inputs.data[k]);
        total += scene_objective(p, forward(params, x).outputs, stft_cfg, cfg.criterion, false).loss;
    }
    return total / double(src.count);
}

struct EpochRecord {
    std::uint64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

// Seeded shuffle of the utterance order of one epoch; depends only on
// (seed, epoch) so a resumed run sees the same order.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

struct TrainOptions {
    std::filesystem::path out_dir;   // checkpoints and train_log.csv; empty: keep nothing on disk
    std::size_t ref_channel = 0;
    bool cache_scenes = true;        // keep prepared scenes in memory between epochs
    std::function<void(const EpochRecord&)> on_epoch;
};

// Runs epochs state.epoch+1 .. cfg.max_epochs. The validation set drives the
// learning-rate schedule; without one, the epoch-mean training loss does.
// A fresh state first measures the untrained model so that the plateau
// counter starts from a real reference.
template <class Scalar>
std::vector<EpochRecord> train(TrainState<Scalar>& state, const SceneSource& train_set, const SceneSource& val_set,
                               const StftConfig& stft_cfg, const TrainConfig& cfg, const TrainOptions& opt = {}) {
    cfg.validate();
    if (train_set.count == 0) throw Error("empty dataset");
    const bool want_rows = cfg.criterion == Criterion::freq_pit;

    std::vector<std::optional<PreparedScene>> cache(opt.cache_scenes ? train_set.count : 0);
    auto get = [&](std::size_t i) -> PreparedScene {
        if (!opt.cache_scenes) return prepare_scene(train_set.load(i), stft_cfg, opt.ref_channel, want_rows);
        if (!cache[i]) cache[i] = prepare_scene(train_set.load(i), stft_cfg, opt.ref_channel, want_rows);
        return *cache[i];
    };

    std::ofstream log;
    if (!opt.out_dir.empty()) {
        std::filesystem::create_directories(opt.out_dir);
        const auto log_path = opt.out_dir / "train_log.csv";
        const bool fresh = !std::filesystem::exists(log_path) || state.epoch == 0;
        log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
        if (!log) throw Error("cannot open " + log_path.string());
        if (fresh) log << "epoch,train_loss,val_loss,lr\n";
    }

    if (state.epoch == 0 && !std::isfinite(state.best_val)) {
        const auto& ref_set = val_set.count > 0 ? val_set : train_set;
        state.best_val = evaluate_loss(state.params, ref_set, stft_cfg, cfg, opt.ref_channel);
    }

    std::vector<EpochRecord> records;
    for (std::uint64_t epoch = state.epoch + 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto order = epoch_order(train_set.count, cfg.seed, epoch);
        double sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.utterances_per_batch) {
            const std::size_t stop = std::min(order.size(), start + cfg.utterances_per_batch);
            std::vector<PreparedScene> group;
            for (std::size_t k = start; k < stop; ++k) group.push_back(get(order[k]));
            sum += train_step(state, group, stft_cfg, cfg) * double(stop - start);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = sum / double(order.size());
        rec.val_loss = val_set.count > 0 ? evaluate_loss(state.params, val_set, stft_cfg, cfg, opt.ref_channel)
                                         : rec.train_loss;
        lr_schedule_update(state, rec.val_loss, cfg);
        state.epoch = epoch;
        rec.lr = state.lr;
        records.push_back(rec);
        if (!opt.out_dir.empty()) {
            save_checkpoint(opt.out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), state.params, &state);
            log << rec.epoch << ',' << rec.train_loss << ',' << rec.val_loss << ',' << rec.lr << '\n';
            log.flush();
        }
        if (opt.on_epoch) opt.on_epoch(rec);
    }
    return records;
}

}  // namespace nbss
