#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "stft.hpp"
#include "training.hpp"

namespace nbss {

// Every tunable of the toolkit. File format: one `key = value` per line,
// `#` starts a comment, unknown keys are rejected.
struct Config {
    StftConfig stft;
    TrainConfig train;
    ModelShape model;
    std::size_t ref_channel = 0;
    std::size_t n_speakers = 2;
    std::size_t n_scenes = 100;
    std::size_t scene_samples = 64000;
    double overlap_min = 0.1;
    double overlap_max = 1.0;
    double rt60_min = 0.1;
    double rt60_max = 1.0;
    std::uint64_t seed = 0;
    std::string corpus_dir;
    std::string out_dir = ".";
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T out{};
    in >> out;
    if (!in || !(in >> std::ws).eof()) throw Error("config key '" + key + "': cannot parse '" + v + "'");
    return out;
}

}  // namespace detail

inline std::map<std::string, std::function<void(Config&, const std::string&)>> config_setters() {
    using detail::parse_value;
    std::map<std::string, std::function<void(Config&, const std::string&)>> s;
#define NBSS_KEY(name, field, type) \
    s[name] = [](Config& c, const std::string& v) { c.field = parse_value<type>(name, v); }
    NBSS_KEY("window_length", stft.window_length, std::size_t);
    NBSS_KEY("hop", stft.hop, std::size_t);
    NBSS_KEY("sample_rate", stft.sample_rate, int);
    NBSS_KEY("lr_init", train.lr_init, double);
    NBSS_KEY("lr_min", train.lr_min, double);
    NBSS_KEY("plateau_epochs", train.plateau_epochs, std::size_t);
    NBSS_KEY("lr_halving", train.lr_factor, double);
    NBSS_KEY("clip_threshold", train.clip_threshold, double);
    NBSS_KEY("utterances_per_batch", train.utterances_per_batch, std::size_t);
    NBSS_KEY("adam_beta1", train.beta1, double);
    NBSS_KEY("adam_beta2", train.beta2, double);
    NBSS_KEY("adam_eps", train.eps, double);
    NBSS_KEY("max_epochs", train.max_epochs, std::size_t);
    NBSS_KEY("hidden1", model.hidden1, std::size_t);
    NBSS_KEY("hidden2", model.hidden2, std::size_t);
    NBSS_KEY("ref_channel", ref_channel, std::size_t);
    NBSS_KEY("n_speakers", n_speakers, std::size_t);
    NBSS_KEY("n_scenes", n_scenes, std::size_t);
    NBSS_KEY("scene_samples", scene_samples, std::size_t);
    NBSS_KEY("overlap_min", overlap_min, double);
    NBSS_KEY("overlap_max", overlap_max, double);
    NBSS_KEY("rt60_min", rt60_min, double);
    NBSS_KEY("rt60_max", rt60_max, double);
    NBSS_KEY("seed", seed, std::uint64_t);
#undef NBSS_KEY
    s["criterion"] = [](Config& c, const std::string& v) { c.train.criterion = parse_criterion(v); };
    s["corpus_dir"] = [](Config& c, const std::string& v) { c.corpus_dir = v; };
    s["out_dir"] = [](Config& c, const std::string& v) { c.out_dir = v; };
    return s;
}

inline void apply_config_text(Config& cfg, const std::string& text, const std::string& origin = "config") {
    const auto setters = config_setters();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw Error(where + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) throw Error(where + ": unknown key '" + key + "'");
        try {
            it->second(cfg, value);
        } catch (const Error& e) {
            throw Error(where + ": " + e.what());
        }
    }
    cfg.stft.validate();
    cfg.train.validate();
    if (cfg.n_speakers < 1 || cfg.n_speakers > kMaxPermutationSources) throw Error("n_speakers out of range");
    if (!(cfg.overlap_min >= 0.1 && cfg.overlap_min <= cfg.overlap_max && cfg.overlap_max <= 1.0))
        throw Error("overlap range must lie in [0.1, 1]");
    if (!(cfg.rt60_min > 0.0 && cfg.rt60_min <= cfg.rt60_max)) throw Error("invalid rt60 range");
}

inline Config load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    Config cfg;
    apply_config_text(cfg, ss.str(), path.string());
    return cfg;
}

}  // namespace nbss
