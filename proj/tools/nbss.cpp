// nbss: simulate, train, separate and evaluate from the command line.
// Exit codes: 0 ok, 1 user error, 2 internal error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nbss/pipeline.hpp"

namespace fs = std::filesystem;
using namespace nbss;

namespace {

void warn(const std::string& msg) { std::cerr << "nbss: " << msg << '\n'; }

// Options every subcommand accepts; they override the config file.
struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> ref_channel;
    std::string out;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "Config file (key = value lines)")->check(CLI::ExistingFile);
        app->add_option("--seed", seed, "Base seed");
        app->add_option("--ref-channel", ref_channel, "Reference microphone, 0-based");
        app->add_option("--out", out, "Output directory");
    }

    Config resolve() const {
        Config cfg = config.empty() ? Config{} : load_config(config);
        if (seed) cfg.seed = *seed;
        if (ref_channel) cfg.ref_channel = *ref_channel;
        if (!out.empty()) cfg.out_dir = out;
        cfg.train.seed = cfg.seed;
        return cfg;
    }
};

enum class System { mvdr, nbss, nbss_corr };

const std::map<std::string, System> kSystems = {
    {"mvdr", System::mvdr}, {"nbss", System::nbss}, {"nbss-corr", System::nbss_corr}};

std::string system_name(System s) {
    for (const auto& [name, v] : kSystems)
        if (v == s) return name;
    return "?";
}

ModelParams<float> load_model(const std::string& path) { return load_checkpoint<float>(path).params; }

int cmd_simulate(const Common& c, std::optional<std::size_t> n_scenes, bool synthetic, const std::string& corpus) {
    Config cfg = c.resolve();
    if (n_scenes) cfg.n_scenes = *n_scenes;
    if (!corpus.empty()) cfg.corpus_dir = corpus;
    DrySource dry;
    if (synthetic) {
        dry = surrogate_dry_source();
    } else {
        if (cfg.corpus_dir.empty()) throw Error("simulate needs --synthetic or a corpus (--corpus or corpus_dir)");
        dry = corpus_dry_source(cfg.corpus_dir, cfg.stft.sample_rate);
    }
    const auto entries = simulate_to_disk(cfg, dry, cfg.out_dir, warn);
    std::cout << "wrote " << entries.size() << " scenes and " << (fs::path(cfg.out_dir) / "manifest.jsonl").string()
              << '\n';
    return 0;
}

int cmd_train(const Common& c, const std::string& manifest, const std::string& val_manifest,
              const std::string& resume) {
    const Config cfg = c.resolve();
    const auto entries = read_manifest(manifest);
    if (entries.empty()) throw Error("empty dataset: " + manifest);
    const auto first = load_train_scene(entries.front(), cfg.ref_channel);
    const ModelShape shape{2 * first.mixture.n_channels(), cfg.model.hidden1, cfg.model.hidden2,
                           2 * first.targets.size()};

    TrainState<float> state;
    if (!resume.empty()) {
        auto ck = load_checkpoint<float>(resume);
        if (!(ck.params.shape == shape)) throw Error(resume + ": model shape does not match the data and config");
        state = ck.state ? std::move(*ck.state) : TrainState<float>(std::move(ck.params), cfg.train.lr_init);
        std::cout << "resuming after epoch " << state.epoch << '\n';
    } else {
        state = TrainState<float>(init_params<float>(cfg.seed, shape), cfg.train.lr_init);
    }

    const auto train_set = manifest_source(entries, cfg.ref_channel);
    const auto val_set = val_manifest.empty() ? SceneSource{} : manifest_source(read_manifest(val_manifest), cfg.ref_channel);
    TrainOptions opt;
    opt.out_dir = cfg.out_dir;
    opt.ref_channel = cfg.ref_channel;
    // prepared scenes take about 4 MB each at the default sizes
    opt.cache_scenes = entries.size() <= 256;
    opt.on_epoch = [](const EpochRecord& r) {
        std::printf("epoch %llu train %.4f val %.4f lr %.3g\n", (unsigned long long)r.epoch, r.train_loss,
                    r.val_loss, r.lr);
        std::fflush(stdout);
    };
    train(state, train_set, val_set, cfg.stft, cfg.train, opt);
    return 0;
}

SeparationOutput run_model(const ModelParams<float>& model, const MultichannelWaveform& mix, const Config& cfg,
                           System sys) {
    return separate(model, mix, cfg.stft, cfg.ref_channel, sys == System::nbss_corr);
}

int cmd_separate(const Common& c, const std::string& checkpoint, const std::string& mix_path,
                 const std::string& manifest, System sys) {
    if (sys == System::mvdr) throw Error("separate runs the network; use eval --system mvdr for the beamformer");
    if (mix_path.empty() == manifest.empty()) throw Error("give exactly one of --mix or --manifest");
    const Config cfg = c.resolve();
    const auto model = load_model(checkpoint);
    if (!mix_path.empty()) {
        const auto mix = read_wav(mix_path);
        write_estimates(cfg.out_dir, run_model(model, mix, cfg, sys).waveforms, mix.sample_rate);
        return 0;
    }
    for (const auto& e : read_manifest(manifest)) {
        const auto mix = read_wav(e.mix_path);
        write_estimates(fs::path(cfg.out_dir) / e.id, run_model(model, mix, cfg, sys).waveforms, mix.sample_rate);
    }
    return 0;
}

int cmd_eval(const Common& c, System sys, const std::string& manifest, const std::string& est_dir,
             const std::string& checkpoint) {
    const Config cfg = c.resolve();
    const auto entries = read_manifest(manifest);
    EstimateProvider provider;
    if (!est_dir.empty()) {
        provider = [est_dir](const ManifestEntry& e) { return read_estimates(est_dir, e); };
    } else if (sys == System::mvdr) {
        provider = [&](const ManifestEntry& e) {
            return std::optional(mvdr_estimates(e, cfg.ref_channel, cfg.stft));
        };
    } else {
        if (checkpoint.empty()) throw Error("eval of a network system needs --checkpoint or --est-dir");
        auto model = std::make_shared<ModelParams<float>>(load_model(checkpoint));
        provider = [model, &cfg, sys](const ManifestEntry& e) {
            return std::optional(run_model(*model, read_wav(e.mix_path), cfg, sys).waveforms);
        };
    }
    auto report = evaluate_manifest(entries, provider, cfg.ref_channel, warn);
    report.system = system_name(sys);
    write_report(report, cfg.out_dir);
    const auto all = report.overall();
    std::printf("%s: %zu utterances, SDR %.2f SI-SDR %.2f SDRi %.2f SI-SDRi %.2f dB\n", report.system.c_str(),
                all.count, all.sdr, all.si_sdr, all.sdri, all.si_sdri);
    if (!report.skipped.empty()) warn(std::to_string(report.skipped.size()) + " utterances skipped");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Narrow-band multichannel speech separation"};
    app.require_subcommand(1);

    Common c_sim, c_train, c_sep, c_eval;

    auto* sim = app.add_subcommand("simulate", "Simulate reverberant multichannel mixtures");
    c_sim.attach(sim);
    std::optional<std::size_t> n_scenes;
    bool synthetic = false;
    std::string corpus;
    sim->add_option("--n-scenes", n_scenes, "Number of scenes");
    sim->add_flag("--synthetic", synthetic, "Use synthetic surrogate speakers instead of a WAV corpus");
    sim->add_option("--corpus", corpus, "Directory of dry speech WAV files");

    auto* tr = app.add_subcommand("train", "Train the separator");
    c_train.attach(tr);
    std::string train_manifest, val_manifest, resume;
    tr->add_option("--manifest", train_manifest, "Training manifest")->required()->check(CLI::ExistingFile);
    tr->add_option("--val-manifest", val_manifest, "Validation manifest")->check(CLI::ExistingFile);
    tr->add_option("--checkpoint", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

    auto* sep = app.add_subcommand("separate", "Separate mixtures with a trained model");
    c_sep.attach(sep);
    std::string sep_ckpt, sep_mix, sep_manifest;
    System sep_system = System::nbss;
    sep->add_option("--checkpoint", sep_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    sep->add_option("--mix", sep_mix, "Multichannel mixture WAV")->check(CLI::ExistingFile);
    sep->add_option("--manifest", sep_manifest, "Manifest of mixtures")->check(CLI::ExistingFile);
    sep->add_option("--system", sep_system, "nbss or nbss-corr")->transform(CLI::CheckedTransformer(kSystems));

    auto* ev = app.add_subcommand("eval", "Score a system on a manifest");
    c_eval.attach(ev);
    std::string ev_manifest, ev_est, ev_ckpt;
    System ev_system = System::nbss;
    ev->add_option("--system", ev_system, "mvdr, nbss or nbss-corr")
        ->required()
        ->transform(CLI::CheckedTransformer(kSystems));
    ev->add_option("--manifest", ev_manifest, "Test manifest")->required()->check(CLI::ExistingFile);
    ev->add_option("--est-dir", ev_est, "Directory with <id>/est_spk<k>.wav estimates");
    ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint (network systems)")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sim->parsed()) return cmd_simulate(c_sim, n_scenes, synthetic, corpus);
        if (tr->parsed()) return cmd_train(c_train, train_manifest, val_manifest, resume);
        if (sep->parsed()) return cmd_separate(c_sep, sep_ckpt, sep_mix, sep_manifest, sep_system);
        if (ev->parsed()) return cmd_eval(c_eval, ev_system, ev_manifest, ev_est, ev_ckpt);
    } catch (const Error& e) {
        warn(e.what());
        return 1;
    } catch (const std::exception& e) {
        warn(std::string("internal error: ") + e.what());
        return 2;
    }
    return 1;
}
