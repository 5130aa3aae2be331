#pragma once

#include "eovae/data/manifest.hpp"

namespace eovae::data {

inline constexpr double kStdFloor = 1e-6;

/// Population per-channel mean/std over every TRAIN tile of a modality.
inline NormalizationStats compute_stats(const DatasetManifest& manifest, Modality modality,
                                        Diagnostics* diag = nullptr) {
  const auto tiles = manifest.select(modality, Split::TRAIN);
  if (tiles.empty())
    throw EmptyCorpusError("no TRAIN tiles for modality " + std::string(to_string(modality)));
  std::vector<double> sum, sumsq;
  double count = 0.0;
  for (const auto* entry : tiles) {
    const auto img = manifest.load(*entry);
    if (img.value_space() != ValueSpace::RAW)
      throw StateError("compute_stats expects RAW tiles, got NORMALIZED '" + entry->tile_path + "'");
    const auto c = static_cast<std::size_t>(img.channels());
    if (sum.empty()) {
      sum.assign(c, 0.0);
      sumsq.assign(c, 0.0);
    } else if (sum.size() != c) {
      throw ShapeError("tile '" + entry->tile_path + "' has " + std::to_string(c) + " channels, expected " +
                       std::to_string(sum.size()));
    }
    const auto plane = static_cast<std::size_t>(img.height() * img.width());
    const float* p = img.pixels().data();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = p[ch * plane + i];
        sum[ch] += v;
        sumsq[ch] += v * v;
      }
    count += static_cast<double>(plane);
  }
  NormalizationStats stats;
  stats.channel_count = static_cast<std::int64_t>(sum.size());
  stats.source_corpus_id = std::string(to_string(modality)) + ":TRAIN:" + std::to_string(tiles.size());
  for (std::size_t ch = 0; ch < sum.size(); ++ch) {
    const double mean = sum[ch] / count;
    const double var = std::max(sumsq[ch] / count - mean * mean, 0.0);
    double sd = std::sqrt(var);
    if (sd < kStdFloor) {
      warn(diag, "channel " + std::to_string(ch) + " of " + std::string(to_string(modality)) +
                     " is constant; std floored to 1e-6");
      sd = kStdFloor;
    }
    stats.mean.push_back(mean);
    stats.std.push_back(sd);
  }
  return stats;
}

namespace detail {
inline void check_channels(const MultispectralImage& img, const NormalizationStats& stats) {
  stats.validate();
  if (img.channels() != stats.channel_count)
    throw ShapeError("image has " + std::to_string(img.channels()) + " channels, stats have " +
                     std::to_string(stats.channel_count));
}
}  // namespace detail

inline MultispectralImage normalize(const MultispectralImage& img, const NormalizationStats& stats) {
  if (img.value_space() != ValueSpace::RAW) throw StateError("normalize expects a RAW image");
  detail::check_channels(img, stats);
  Tensor<float> out = img.pixels();
  const auto plane = static_cast<std::size_t>(img.height() * img.width());
  for (std::size_t c = 0; c < static_cast<std::size_t>(img.channels()); ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = static_cast<float>((static_cast<double>(out[c * plane + i]) - stats.mean[c]) / stats.std[c]);
  return with_value_space(img, std::move(out), ValueSpace::NORMALIZED);
}

inline MultispectralImage denormalize(const MultispectralImage& img, const NormalizationStats& stats) {
  if (img.value_space() != ValueSpace::NORMALIZED) throw StateError("denormalize expects a NORMALIZED image");
  detail::check_channels(img, stats);
  Tensor<float> out = img.pixels();
  const auto plane = static_cast<std::size_t>(img.height() * img.width());
  for (std::size_t c = 0; c < static_cast<std::size_t>(img.channels()); ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = static_cast<float>(static_cast<double>(out[c * plane + i]) * stats.std[c] + stats.mean[c]);
  return with_value_space(img, std::move(out), ValueSpace::RAW);
}

}  // namespace eovae::data
