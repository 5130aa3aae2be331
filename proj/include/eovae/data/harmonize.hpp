#pragma once

// Sentinel-2 processing-baseline harmonization. Tiles processed under the
// 2022 baseline carry a -1000 DN offset population; they are detected by
// their per-tile minimum and shifted back onto the [0, 10000] convention.

#include <filesystem>
#include <unordered_map>

#include "eovae/data/manifest.hpp"

namespace eovae::data {

inline constexpr double kDefaultBaselineThreshold = -50.0;
inline constexpr double kBaselineOffset = 1000.0;

struct BaselineReport {
  std::string tile_path;
  std::optional<Date> acquisition_date;
  double min_value = 0.0;
  bool flagged_post_baseline = false;
  double offset_applied = 0.0;
};

inline BaselineReport inspect_baseline(const MultispectralImage& img, std::string tile_path,
                                       double threshold = kDefaultBaselineThreshold) {
  if (img.modality() != Modality::S2L2A)
    throw UnsupportedModalityError("baseline detection supports S2L2A only, got " +
                                   std::string(to_string(img.modality())));
  if (img.value_space() != ValueSpace::RAW) throw StateError("baseline detection expects RAW tiles");
  if (!(threshold < 0.0)) throw DomainError("baseline threshold must be negative");
  BaselineReport r;
  r.tile_path = std::move(tile_path);
  r.acquisition_date = img.acquisition_date();
  r.min_value = img.pixels().min();
  r.flagged_post_baseline = r.min_value < threshold;
  return r;
}

/// One report per S2L2A tile in manifest order; other modalities are skipped.
inline std::vector<BaselineReport> detect_baseline_shift(const DatasetManifest& manifest,
                                                         double threshold = kDefaultBaselineThreshold) {
  std::vector<BaselineReport> reports;
  for (const auto* e : manifest.select(Modality::S2L2A, std::nullopt))
    reports.push_back(inspect_baseline(manifest.load(*e), e->tile_path, threshold));
  return reports;
}

/// (date, minimum) pairs sorted by date, for plotting minima over time.
inline std::vector<std::pair<std::string, double>> minimum_series(const std::vector<BaselineReport>& reports) {
  std::vector<std::pair<std::string, double>> series;
  for (const auto& r : reports)
    series.emplace_back(r.acquisition_date ? format_date(*r.acquisition_date) : std::string{}, r.min_value);
  std::stable_sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return series;
}

/// Shifts a flagged tile by +1000 DN and clips at 0.
inline MultispectralImage remove_baseline_offset(const MultispectralImage& img) {
  Tensor<float> px = img.pixels();
  for (auto& v : px.values()) v = std::max(v + static_cast<float>(kBaselineOffset), 0.0f);
  return img.with_pixels(std::move(px));
}

struct HarmonizeResult {
  DatasetManifest manifest;
  std::vector<BaselineReport> reports;
};

/// Writes a harmonized copy of the corpus into out_dir. Flagged S2L2A tiles
/// are offset-corrected; every other tile is copied byte for byte. The
/// S2L2A normalization stats are dropped and must be recomputed.
inline HarmonizeResult harmonize_corpus(const DatasetManifest& manifest, const std::vector<BaselineReport>& reports,
                                        const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::unordered_map<std::string, std::size_t> by_path;
  for (std::size_t i = 0; i < reports.size(); ++i) by_path[reports[i].tile_path] = i;
  std::size_t s2_count = 0;
  for (const auto& e : manifest.entries) {
    if (e.modality != Modality::S2L2A) continue;
    ++s2_count;
    if (!by_path.count(e.tile_path)) throw ConsistencyError("no baseline report for tile '" + e.tile_path + "'");
  }
  if (s2_count != reports.size() || by_path.size() != reports.size())
    throw ConsistencyError("baseline reports do not match the S2L2A tiles of the manifest");

  fs::create_directories(out_dir / "tiles");
  HarmonizeResult result;
  result.manifest = manifest;
  result.manifest.base_dir = out_dir;
  result.manifest.stats_by_modality.erase(Modality::S2L2A);
  result.reports = reports;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& src = manifest.entries[i];
    auto& dst = result.manifest.entries[i];
    const auto src_path = manifest.resolve(src);
    dst.tile_path = "tiles/" + std::to_string(i) + "_" + src_path.filename().string();
    const auto dst_path = out_dir / dst.tile_path;
    auto it = by_path.find(src.tile_path);
    if (src.modality == Modality::S2L2A && reports[it->second].flagged_post_baseline) {
      save_tile(remove_baseline_offset(load_tile(src_path)), dst_path);
      result.reports[it->second].offset_applied = kBaselineOffset;
      result.reports[it->second].tile_path = dst.tile_path;
    } else {
      write_file_atomic(dst_path, detail::read_file(src_path));
      if (it != by_path.end()) result.reports[it->second].tile_path = dst.tile_path;
    }
  }
  return result;
}

}  // namespace eovae::data
