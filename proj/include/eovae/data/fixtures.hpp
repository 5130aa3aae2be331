#pragma once

// Synthetic scenes and corpora so every pipeline runs without downloads.
// Scenes follow a linear mixing model: a few materials with distinct
// spectra, blended by smooth spatial abundance fields.

#include <cmath>
#include <filesystem>
#include <numbers>

#include "eovae/core/random.hpp"
#include "eovae/data/manifest.hpp"
#include "eovae/data/resample.hpp"
#include "eovae/data/split.hpp"

namespace eovae::data {

struct SceneOptions {
  int materials = 3;
  int waves_per_field = 3;
  double max_cycles = 2.0;  // spatial frequency of abundance fields, cycles per tile
  double sharpness = 3.0;   // softmax temperature on abundance fields
  double texture = 0.01;    // amplitude of fine per-pixel texture (reflectance units)
};

namespace detail {

/// Reflectance of a material archetype at a wavelength (nm).
inline double archetype_reflectance(int kind, double nm) {
  const double um = nm / 1000.0;
  switch (kind % 4) {
    case 0:  // vegetation: red edge around 700 nm
      return 0.04 + 0.05 * std::exp(-std::pow((um - 0.55) / 0.04, 2)) +
             0.38 / (1.0 + std::exp(-(um - 0.71) / 0.015)) * (um < 1.3 ? 1.0 : 0.55);
    case 1:  // bare soil: rising slowly
      return 0.10 + 0.18 * std::log1p(std::max(um - 0.4, 0.0) * 2.0);
    case 2:  // water: dark, falling
      return 0.08 * std::exp(-(um - 0.44) * 4.0) + 0.005;
    default:  // built-up: flat and bright
      return 0.22 + 0.03 * std::sin(um * 3.0);
  }
}

inline std::vector<double> smooth_field(Rng& rng, std::int64_t h, std::int64_t w, const SceneOptions& o) {
  std::vector<double> f(static_cast<std::size_t>(h * w), 0.0);
  for (int k = 0; k < o.waves_per_field; ++k) {
    const double fu = rng.uniform(-o.max_cycles, o.max_cycles);
    const double fv = rng.uniform(-o.max_cycles, o.max_cycles);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = rng.uniform(0.5, 1.0);
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        f[y * w + x] += amp * std::sin(2.0 * std::numbers::pi * (fu * x / w + fv * y / h) + phase);
  }
  return f;
}

}  // namespace detail

/// Reflectance-valued [C, H, W] scene for an optical wavelength profile.
inline Tensor<float> synthetic_reflectance(Rng& rng, const WavelengthProfile& profile, std::int64_t h, std::int64_t w,
                                           const SceneOptions& opts = {}) {
  const auto c = static_cast<std::int64_t>(profile.size());
  const int m = std::max(opts.materials, 1);
  std::vector<std::vector<double>> spectra(m), fields(m);
  const int first_kind = static_cast<int>(rng.below(4));
  for (int k = 0; k < m; ++k) {
    const double gain = rng.uniform(0.8, 1.2);
    for (std::int64_t ch = 0; ch < c; ++ch)
      spectra[k].push_back(gain * detail::archetype_reflectance(first_kind + k, profile[static_cast<std::size_t>(ch)]));
    fields[k] = detail::smooth_field(rng, h, w, opts);
  }
  const auto texture = detail::smooth_field(rng, h, w, SceneOptions{1, 4, std::max<double>(h, w) / 6.0, 1.0, 0.0});
  Tensor<float> out({c, h, w});
  std::vector<double> weights(m);
  for (std::int64_t p = 0; p < h * w; ++p) {
    double mx = -1e300, total = 0.0;
    for (int k = 0; k < m; ++k) mx = std::max(mx, opts.sharpness * fields[k][p]);
    for (int k = 0; k < m; ++k) total += weights[k] = std::exp(opts.sharpness * fields[k][p] - mx);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double v = 0.0;
      for (int k = 0; k < m; ++k) v += weights[k] / total * spectra[k][ch];
      v *= 1.0 + opts.texture * texture[p];
      out[static_cast<std::size_t>(ch * h * w + p)] = static_cast<float>(std::max(v, 0.0));
    }
  }
  return out;
}

/// Sentinel-1 style backscatter in dB (VV, VH).
inline Tensor<float> synthetic_backscatter(Rng& rng, std::int64_t h, std::int64_t w, const SceneOptions& opts = {}) {
  const auto field = detail::smooth_field(rng, h, w, opts);
  const auto rough = detail::smooth_field(rng, h, w, opts);
  Tensor<float> out({2, h, w});
  for (std::int64_t p = 0; p < h * w; ++p) {
    const double vv = -12.0 + 4.0 * field[p] + 1.0 * rough[p];
    out[static_cast<std::size_t>(p)] = static_cast<float>(vv);
    out[static_cast<std::size_t>(h * w + p)] = static_cast<float>(vv - 6.5 + 0.8 * rough[p]);
  }
  return out;
}

/// Sentinel-2 L2A digital numbers. Post-baseline tiles carry the -1000
/// offset; every tile has a small zero-reflectance (NoData) patch so that
/// offset tiles reach about -1000 and pre-baseline tiles sit at 0.
inline MultispectralImage synthetic_s2_tile(Rng& rng, std::int64_t h, std::int64_t w, bool post_baseline, Date date,
                                            const SceneOptions& opts = {}) {
  const auto profile = s2l2a_wavelengths();
  Tensor<float> px = synthetic_reflectance(rng, profile, h, w, opts);
  const auto c = px.dim(0);
  for (auto& v : px.values()) v = std::round(v * 10000.0f);
  const std::int64_t py = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - 1)));
  const std::int64_t pxx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - 1)));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    px.at(ch, py, pxx) = 0.0f;
    px.at(ch, py, pxx + 1) = 1.0f;
  }
  if (post_baseline)
    for (auto& v : px.values()) v -= 1000.0f;
  return MultispectralImage(std::move(px), profile, Modality::S2L2A, date);
}

inline constexpr Date kBaselineChangeDate{std::chrono::year{2022}, std::chrono::January, std::chrono::day{25}};

struct CorpusOptions {
  std::int64_t size = 64;
  int s2_tiles = 8;
  int s1_tiles = 6;
  int rgbn_tiles = 6;
  double post_baseline_fraction = 0.5;
  double cell_size_deg = 0.5;
  std::uint64_t seed = 0;
};

/// Writes tiles/ and manifest.json under dir; splits are pre-assigned.
inline DatasetManifest make_fixture_corpus(const std::filesystem::path& dir, const CorpusOptions& opts) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "tiles");
  Rng rng(opts.seed);
  DatasetManifest m;
  m.base_dir = dir;
  auto add = [&](const MultispectralImage& img, const std::string& name) {
    save_tile(img, dir / "tiles" / name);
    ManifestEntry e;
    e.tile_path = "tiles/" + name;
    e.modality = img.modality();
    e.acquisition_date = img.acquisition_date();
    e.lon = rng.uniform(10.0, 14.0);
    e.lat = rng.uniform(45.0, 48.0);
    m.entries.push_back(std::move(e));
  };
  const int post_count = static_cast<int>(std::round(opts.post_baseline_fraction * opts.s2_tiles));
  for (int i = 0; i < opts.s2_tiles; ++i) {
    const bool post = i >= opts.s2_tiles - post_count;
    const auto base = std::chrono::sys_days(kBaselineChangeDate);
    const auto days = std::chrono::days(static_cast<int>(rng.uniform(20.0, 600.0)));
    const Date date = post ? Date(base + days) : Date(base - days);
    add(synthetic_s2_tile(rng, opts.size, opts.size, post, date), "s2_" + std::to_string(i) + ".eovt");
  }
  for (int i = 0; i < opts.s1_tiles; ++i)
    add(MultispectralImage(synthetic_backscatter(rng, opts.size, opts.size), s1rtc_wavelengths(), Modality::S1RTC),
        "s1_" + std::to_string(i) + ".eovt");
  for (int i = 0; i < opts.rgbn_tiles; ++i)
    add(MultispectralImage(synthetic_reflectance(rng, rgbn_wavelengths(), opts.size, opts.size), rgbn_wavelengths(),
                           Modality::RGBN),
        "rgbn_" + std::to_string(i) + ".eovt");
  // Split each modality separately so every modality has TRAIN/VAL/TEST tiles.
  for (auto modality : {Modality::S2L2A, Modality::S1RTC, Modality::RGBN}) {
    DatasetManifest sub;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      if (m.entries[i].modality == modality) {
        sub.entries.push_back(m.entries[i]);
        index.push_back(i);
      }
    if (sub.entries.empty()) continue;
    sub = checkerboard_split(sub, opts.cell_size_deg, SplitRatios{0.6, 0.2, 0.2}, opts.seed);
    for (std::size_t k = 0; k < index.size(); ++k) m.entries[index[k]].split = sub.entries[k].split;
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

struct PairOptions {
  int pairs = 8;
  std::int64_t lr_size = 32;
  int scale = 4;
  std::uint64_t seed = 0;
  SceneOptions scene{3, 3, 3.0, 6.0, 0.02};
};

/// Paired RGBN LR/HR tiles sharing a pair_id; LR is the box-downsampled HR.
inline DatasetManifest make_sr_pairs(const std::filesystem::path& dir, const PairOptions& opts) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "pairs");
  Rng rng(opts.seed);
  DatasetManifest m;
  m.base_dir = dir;
  const auto hr_size = opts.lr_size * opts.scale;
  for (int i = 0; i < opts.pairs; ++i) {
    Tensor<float> hr = synthetic_reflectance(rng, rgbn_wavelengths(), hr_size, hr_size, opts.scene);
    Tensor<float> lr = downsample_area(hr, opts.scale);
    const double lon = rng.uniform(-100.0, -90.0), lat = rng.uniform(30.0, 40.0);
    const std::string id = "pair" + std::to_string(i);
    for (const auto& [tensor, tag] : {std::pair{&hr, "hr"}, std::pair{&lr, "lr"}}) {
      const std::string name = id + "_" + tag + ".eovt";
      save_tile(MultispectralImage(*tensor, rgbn_wavelengths(), Modality::RGBN), dir / "pairs" / name);
      ManifestEntry e;
      e.tile_path = "pairs/" + name;
      e.modality = Modality::RGBN;
      e.lon = lon;
      e.lat = lat;
      e.split = Split::TRAIN;
      e.pair_id = id;
      m.entries.push_back(std::move(e));
    }
  }
  save_manifest(m, dir / "pairs.json");
  return m;
}

}  // namespace eovae::data
