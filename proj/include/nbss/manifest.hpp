#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "room_sim.hpp"

namespace nbss {

struct ManifestEntry {
    std::string id;
    std::filesystem::path mix_path;
    std::vector<std::filesystem::path> image_paths;
    RoomScenario scenario;
    double overlap_ratio = 1.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline nlohmann::json vec3_json(const Vec3& v) { return nlohmann::json::array({v[0], v[1], v[2]}); }

inline Vec3 json_vec3(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw Error("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline std::vector<Vec3> json_vec3_list(const nlohmann::json& j) {
    std::vector<Vec3> out;
    for (const auto& v : j) out.push_back(json_vec3(v));
    return out;
}

}  // namespace detail

// Paths are written relative to the manifest directory when possible.
inline std::string manifest_line(const ManifestEntry& e, const std::filesystem::path& base) {
    auto rel = [&](const std::filesystem::path& p) {
        return base.empty() ? p.generic_string() : std::filesystem::relative(p, base).generic_string();
    };
    nlohmann::json j;
    j["id"] = e.id;
    j["mix_path"] = rel(e.mix_path);
    j["image_paths"] = nlohmann::json::array();
    for (const auto& p : e.image_paths) j["image_paths"].push_back(rel(p));
    const auto& s = e.scenario;
    nlohmann::json scn;
    scn["dims"] = detail::vec3_json(s.room_dims);
    scn["rt60"] = s.rt60;
    scn["array_center"] = detail::vec3_json(s.array_center);
    scn["mic_positions"] = nlohmann::json::array();
    for (const auto& m : s.mic_positions) scn["mic_positions"].push_back(detail::vec3_json(m));
    scn["speaker_positions"] = nlohmann::json::array();
    for (const auto& p : s.speaker_positions) scn["speaker_positions"].push_back(detail::vec3_json(p));
    scn["angular_difference"] = s.angular_difference;
    scn["overlap_ratio"] = e.overlap_ratio;
    j["scenario"] = scn;
    j["seed"] = e.seed;
    return j.dump();
}

inline ManifestEntry parse_manifest_line(const std::string& line, const std::filesystem::path& base) {
    ManifestEntry e;
    try {
        const auto j = nlohmann::json::parse(line);
        e.id = j.at("id").get<std::string>();
        auto resolve = [&](const std::string& p) {
            const std::filesystem::path path(p);
            return path.is_absolute() ? path : base / path;
        };
        e.mix_path = resolve(j.at("mix_path").get<std::string>());
        for (const auto& p : j.at("image_paths")) e.image_paths.push_back(resolve(p.get<std::string>()));
        e.seed = j.value("seed", std::uint64_t(0));
        if (j.contains("scenario")) {
            const auto& s = j["scenario"];
            e.scenario.room_dims = detail::json_vec3(s.at("dims"));
            e.scenario.rt60 = s.at("rt60").get<double>();
            if (s.contains("array_center")) e.scenario.array_center = detail::json_vec3(s["array_center"]);
            if (s.contains("mic_positions")) e.scenario.mic_positions = detail::json_vec3_list(s["mic_positions"]);
            if (s.contains("speaker_positions"))
                e.scenario.speaker_positions = detail::json_vec3_list(s["speaker_positions"]);
            if (s.contains("angular_difference"))
                e.scenario.angular_difference = s["angular_difference"].get<std::vector<double>>();
            e.overlap_ratio = s.value("overlap_ratio", 1.0);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw Error(std::string("malformed manifest line: ") + ex.what());
    }
    return e;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::vector<ManifestEntry> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse_manifest_line(line, base));
        } catch (const Error& ex) {
            throw Error(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        if (!ids.insert(out.back().id).second) throw Error("duplicate manifest id " + out.back().id);
    }
    return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    for (const auto& e : entries) f << manifest_line(e, path.parent_path()) << '\n';
    if (!f) throw Error("write failed: " + path.string());
}

}  // namespace nbss
