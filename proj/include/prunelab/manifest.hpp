#pragma once

// Subset manifests: the resolved output of a pruning decision. JSON on disk,
// sorted keys and sorted ids, byte-stable across identical runs.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace prunelab {

struct SubsetManifest {
    std::vector<std::int64_t> kept_ids;  // sorted ascending, no duplicates
    double pruning_ratio = 0.0;          // in [0,1)
    std::string method_tag;
    std::uint64_t seed = 0;

    bool operator==(const SubsetManifest&) const = default;
};

inline void validate_manifest(const SubsetManifest& m) {
    if (m.pruning_ratio < 0.0 || m.pruning_ratio >= 1.0)
        throw std::invalid_argument("manifest: pruning_ratio must lie in [0,1)");
    if (!std::is_sorted(m.kept_ids.begin(), m.kept_ids.end()))
        throw std::invalid_argument("manifest: kept_ids must be sorted");
    if (std::adjacent_find(m.kept_ids.begin(), m.kept_ids.end()) != m.kept_ids.end())
        throw std::invalid_argument("manifest: kept_ids contains duplicates");
    if (!m.kept_ids.empty() && m.kept_ids.front() < 0)
        throw std::invalid_argument("manifest: negative id");
}

inline nlohmann::json manifest_to_json(const SubsetManifest& m) {
    return nlohmann::json{{"kept_ids", m.kept_ids},
                          {"method_tag", m.method_tag},
                          {"pruning_ratio", m.pruning_ratio},
                          {"seed", m.seed}};
}

inline SubsetManifest manifest_from_json(const nlohmann::json& j) {
    SubsetManifest m;
    m.kept_ids = j.at("kept_ids").get<std::vector<std::int64_t>>();
    m.method_tag = j.at("method_tag").get<std::string>();
    m.pruning_ratio = j.at("pruning_ratio").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    validate_manifest(m);
    return m;
}

inline void save_manifest(const SubsetManifest& m, const std::filesystem::path& path) {
    validate_manifest(m);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << manifest_to_json(m).dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

inline SubsetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
    }
    return manifest_from_json(j);
}

}  // namespace prunelab
