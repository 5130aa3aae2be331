#pragma once

#include <filesystem>
#include <map>
#include <set>

#include "eovae/data/tile_io.hpp"

namespace eovae::data {

enum class Split { TRAIN, VAL, TEST, UNASSIGNED };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::TRAIN: return "TRAIN";
    case Split::VAL: return "VAL";
    case Split::TEST: return "TEST";
    case Split::UNASSIGNED: return "UNASSIGNED";
  }
  return "UNASSIGNED";
}

inline Split parse_split(std::string_view s) {
  for (auto v : {Split::TRAIN, Split::VAL, Split::TEST, Split::UNASSIGNED})
    if (to_string(v) == s) return v;
  throw DomainError("unknown split '" + std::string(s) + "'");
}

/// Per-channel z-score statistics.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::string source_corpus_id;
  std::int64_t channel_count = 0;

  void validate() const {
    if (channel_count != static_cast<std::int64_t>(mean.size()) ||
        channel_count != static_cast<std::int64_t>(std.size()))
      throw ShapeError("normalization stats: channel_count does not match mean/std lengths");
    for (double s : std)
      if (!(s > 0.0)) throw DomainError("normalization stats: std must be positive");
  }
};

struct ManifestEntry {
  std::string tile_path;
  Modality modality = Modality::OTHER;
  std::optional<Date> acquisition_date;
  std::optional<double> lon;
  std::optional<double> lat;
  Split split = Split::UNASSIGNED;
  std::optional<std::string> pair_id;
};

/// File-backed tile index. Relative tile paths resolve against base_dir.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::map<Modality, NormalizationStats> stats_by_modality;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestEntry& e) const {
    std::filesystem::path p(e.tile_path);
    return p.is_absolute() ? p : base_dir / p;
  }

  MultispectralImage load(const ManifestEntry& e) const { return load_tile(resolve(e)); }

  std::vector<const ManifestEntry*> select(std::optional<Modality> modality, std::optional<Split> split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if ((!modality || e.modality == *modality) && (!split || e.split == *split)) out.push_back(&e);
    return out;
  }

  const NormalizationStats& stats_for(Modality m) const {
    auto it = stats_by_modality.find(m);
    if (it == stats_by_modality.end())
      throw ConfigError("manifest has no normalization stats for " + std::string(to_string(m)) +
                        " (run `data stats` first)");
    return it->second;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries)
      if (!seen.insert(e.tile_path).second) throw ManifestError("duplicate tile path '" + e.tile_path + "'");
    for (const auto& [m, s] : stats_by_modality) s.validate();
  }
};

inline nlohmann::json to_json(const NormalizationStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"source_corpus_id", s.source_corpus_id},
          {"channel_count", s.channel_count}};
}

inline NormalizationStats stats_from_json(const nlohmann::json& j) {
  NormalizationStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  s.source_corpus_id = j.value("source_corpus_id", "");
  s.channel_count = j.at("channel_count").get<std::int64_t>();
  s.validate();
  return s;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json j = {
        {"tile_path", e.tile_path},
        {"modality", std::string(to_string(e.modality))},
        {"acquisition_date", e.acquisition_date ? nlohmann::json(format_date(*e.acquisition_date)) : nlohmann::json()},
        {"lon", e.lon ? nlohmann::json(*e.lon) : nlohmann::json()},
        {"lat", e.lat ? nlohmann::json(*e.lat) : nlohmann::json()},
        {"split", std::string(to_string(e.split))},
    };
    if (e.pair_id) j["pair_id"] = *e.pair_id;
    entries.push_back(std::move(j));
  }
  nlohmann::json stats = nlohmann::json::object();
  for (const auto& [mod, s] : m.stats_by_modality) stats[std::string(to_string(mod))] = to_json(s);
  return {{"format_version", 1}, {"entries", entries}, {"stats_by_modality", stats}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir = {}) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  try {
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.tile_path = je.at("tile_path").get<std::string>();
      e.modality = parse_modality(je.at("modality").get<std::string>());
      if (je.contains("acquisition_date") && !je["acquisition_date"].is_null())
        e.acquisition_date = parse_date(je["acquisition_date"].get<std::string>());
      if (je.contains("lon") && !je["lon"].is_null()) e.lon = je["lon"].get<double>();
      if (je.contains("lat") && !je["lat"].is_null()) e.lat = je["lat"].get<double>();
      e.split = parse_split(je.value("split", "UNASSIGNED"));
      if (je.contains("pair_id") && !je["pair_id"].is_null()) e.pair_id = je["pair_id"].get<std::string>();
      m.entries.push_back(std::move(e));
    }
    if (j.contains("stats_by_modality"))
      for (const auto& [key, value] : j["stats_by_modality"].items())
        m.stats_by_modality[parse_modality(key)] = stats_from_json(value);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("cannot parse manifest '" + path.string() + "': " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

/// Writes the manifest with tile paths re-expressed relative to its new location.
inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  m.validate();
  namespace fs = std::filesystem;
  const fs::path target_dir = fs::absolute(path).parent_path().lexically_normal();
  DatasetManifest out = m;
  for (auto& e : out.entries) {
    const fs::path abs = fs::absolute(m.resolve(e)).lexically_normal();
    e.tile_path = abs.lexically_relative(target_dir).generic_string();
    if (e.tile_path.empty()) e.tile_path = abs.generic_string();
  }
  write_file_atomic(path, to_json(out).dump(2));
}

}  // namespace eovae::data
