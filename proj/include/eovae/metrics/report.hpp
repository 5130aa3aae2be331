#pragma once

#include <functional>
#include <iomanip>
#include <sstream>

#include "eovae/data/normalize.hpp"
#include "eovae/metrics/metrics.hpp"

namespace eovae::metrics {

enum class MetricSpace { RAW, NORMALIZED };

inline MetricSpace parse_metric_space(std::string_view s) {
  if (s == "raw" || s == "RAW") return MetricSpace::RAW;
  if (s == "normalized" || s == "NORMALIZED") return MetricSpace::NORMALIZED;
  throw ConfigError("unknown metric space '" + std::string(s) + "' (expected raw|normalized)");
}

inline std::string_view to_string(MetricSpace s) { return s == MetricSpace::RAW ? "raw" : "normalized"; }

struct ImageMetrics {
  std::string tile_path;
  double rmse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  std::optional<double> sam_rad;
  std::optional<double> ndvi_mae;
};

struct MetricSummary {
  double rmse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  std::optional<double> sam_rad;
  std::optional<double> ndvi_mae;
};

struct MetricReport {
  data::Modality modality = data::Modality::OTHER;
  MetricSpace space = MetricSpace::RAW;
  std::vector<ImageMetrics> images;
  MetricSummary summary;

  std::size_t image_count() const { return images.size(); }
};

/// Unweighted means over images; optional columns only when every image has them.
inline MetricSummary summarize(const std::vector<ImageMetrics>& images) {
  if (images.empty()) throw EmptyMetricError("no images to summarize");
  MetricSummary s;
  const double n = static_cast<double>(images.size());
  bool has_sam = true, has_ndvi = true;
  double sam_acc = 0.0, ndvi_acc = 0.0;
  for (const auto& m : images) {
    s.rmse += m.rmse;
    s.psnr_db += m.psnr_db;
    s.ssim += m.ssim;
    s.ms_ssim += m.ms_ssim;
    has_sam = has_sam && m.sam_rad.has_value();
    has_ndvi = has_ndvi && m.ndvi_mae.has_value();
    if (m.sam_rad) sam_acc += *m.sam_rad;
    if (m.ndvi_mae) ndvi_acc += *m.ndvi_mae;
  }
  s.rmse /= n;
  s.psnr_db /= n;
  s.ssim /= n;
  s.ms_ssim /= n;
  if (has_sam) s.sam_rad = sam_acc / n;
  if (has_ndvi) s.ndvi_mae = ndvi_acc / n;
  return s;
}

/// All applicable metrics for one reference/candidate pair in a common value space.
inline ImageMetrics image_metrics(const data::MultispectralImage& reference, const data::MultispectralImage& candidate,
                                  Diagnostics* diag = nullptr) {
  const auto& x = reference.pixels();
  const auto& y = candidate.pixels();
  ImageMetrics m;
  m.rmse = rmse(x, y);
  m.psnr_db = psnr(x, y);
  m.ssim = ssim(x, y);
  m.ms_ssim = ms_ssim(x, y, 5, diag);
  if (reference.channels() >= 2) m.sam_rad = sam(x, y);
  if (reference.value_space() == data::ValueSpace::RAW && data::has_ndvi_bands(reference.wavelengths()))
    m.ndvi_mae = ndvi_mae(reference, candidate);
  return m;
}

/// Maps a NORMALIZED image to its NORMALIZED reconstruction.
using Reconstructor = std::function<data::MultispectralImage(const data::MultispectralImage&)>;

/// Reconstructs every tile of (modality, split), denormalizes, and scores it.
inline MetricReport evaluate_dataset(const data::DatasetManifest& manifest, data::Split split, data::Modality modality,
                                     const Reconstructor& reconstruct, MetricSpace space = MetricSpace::RAW,
                                     Diagnostics* diag = nullptr) {
  const auto tiles = manifest.select(modality, split);
  if (tiles.empty())
    throw EmptyCorpusError("no " + std::string(data::to_string(split)) + " tiles for " +
                           std::string(data::to_string(modality)));
  const auto& stats = manifest.stats_for(modality);
  MetricReport report;
  report.modality = modality;
  report.space = space;
  Diagnostics local;
  for (const auto* entry : tiles) {
    const auto raw = manifest.load(*entry);
    const auto norm = data::normalize(raw, stats);
    const auto rec = reconstruct(norm);
    if (rec.value_space() != data::ValueSpace::NORMALIZED) throw StateError("reconstructor must return NORMALIZED images");
    ImageMetrics m = space == MetricSpace::RAW ? image_metrics(raw, data::denormalize(rec, stats), &local)
                                               : image_metrics(norm, rec, &local);
    m.tile_path = entry->tile_path;
    report.images.push_back(std::move(m));
  }
  if (diag != nullptr && !local.empty()) diag->warn(local.warnings.front());
  report.summary = summarize(report.images);
  return report;
}

inline nlohmann::json to_json(const ImageMetrics& m) {
  nlohmann::json j = {{"tile_path", m.tile_path}, {"rmse", m.rmse}, {"psnr_db", m.psnr_db},
                      {"ssim", m.ssim},           {"ms_ssim", m.ms_ssim}};
  if (m.sam_rad) j["sam_rad"] = *m.sam_rad;
  if (m.ndvi_mae) j["ndvi_mae"] = *m.ndvi_mae;
  return j;
}

inline nlohmann::json to_json(const MetricSummary& s) {
  nlohmann::json j = {{"rmse", s.rmse}, {"psnr_db", s.psnr_db}, {"ssim", s.ssim}, {"ms_ssim", s.ms_ssim}};
  if (s.sam_rad) j["sam_rad"] = *s.sam_rad;
  if (s.ndvi_mae) j["ndvi_mae"] = *s.ndvi_mae;
  return j;
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& m : r.images) images.push_back(to_json(m));
  return {{"modality", std::string(data::to_string(r.modality))},
          {"space", std::string(to_string(r.space))},
          {"image_count", r.image_count()},
          {"summary", to_json(r.summary)},
          {"images", images}};
}

/// One JSON object per line, one line per image.
inline std::string per_image_jsonl(const MetricReport& r) {
  std::string out;
  for (const auto& m : r.images) {
    auto j = to_json(m);
    j["modality"] = std::string(data::to_string(r.modality));
    out += j.dump() + "\n";
  }
  return out;
}

namespace detail {
inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}
}  // namespace detail

/// Aligned text table: one row per model, a column group per modality with
/// RMSE, PSNR, SSIM, SAM and (where available) NDVI-MAE.
inline std::string reconstruction_table(const std::vector<std::pair<std::string, std::vector<MetricReport>>>& rows) {
  if (rows.empty()) throw EmptyMetricError("reconstruction_table: no rows");
  struct Group {
    data::Modality modality;
    bool ndvi;
  };
  std::vector<Group> groups;
  for (const auto& report : rows.front().second)
    groups.push_back({report.modality, report.summary.ndvi_mae.has_value()});

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Model"}, super{""};
  for (const auto& g : groups) {
    const std::vector<std::string> cols =
        g.ndvi ? std::vector<std::string>{"RMSE", "PSNR", "SSIM", "SAM", "NDVI-MAE"}
               : std::vector<std::string>{"RMSE", "PSNR", "SSIM", "SAM"};
    for (std::size_t i = 0; i < cols.size(); ++i) {
      header.push_back(cols[i]);
      super.push_back(i == 0 ? std::string(data::to_string(g.modality)) : "");
    }
  }
  cells.push_back(super);
  cells.push_back(header);
  for (const auto& [name, reports] : rows) {
    if (reports.size() != groups.size()) throw ShapeError("reconstruction_table: rows cover different modalities");
    std::vector<std::string> line{name};
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& s = reports[g].summary;
      line.push_back(detail::fixed(s.rmse, 4));
      line.push_back(detail::fixed(s.psnr_db, 2));
      line.push_back(detail::fixed(s.ssim, 4));
      line.push_back(s.sam_rad ? detail::fixed(*s.sam_rad, 4) : "-");
      if (groups[g].ndvi) line.push_back(s.ndvi_mae ? detail::fixed(*s.ndvi_mae, 4) : "-");
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream os;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i == 0)
        os << std::left << std::setw(static_cast<int>(width[i])) << line[i];
      else
        os << "  " << std::right << std::setw(static_cast<int>(width[i])) << line[i];
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace eovae::metrics
