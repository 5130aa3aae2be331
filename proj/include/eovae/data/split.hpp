#pragma once

#include <array>
#include <cmath>
#include <map>

#include "eovae/core/random.hpp"
#include "eovae/data/manifest.hpp"

namespace eovae::data {

/// Target TRAIN/VAL/TEST fractions.
struct SplitRatios {
  double train = 2417.0 / 2851.0;
  double val = 288.0 / 2851.0;
  double test = 146.0 / 2851.0;

  std::array<double, 3> normalized() const {
    const double total = train + val + test;
    if (!(train >= 0 && val >= 0 && test >= 0) || !(total > 0))
      throw DomainError("split ratios must be nonnegative with a positive sum");
    return {train / total, val / total, test / total};
  }
};

using GridCell = std::pair<std::int64_t, std::int64_t>;  // (row, col) = (floor(lat/s), floor(lon/s))

inline GridCell grid_cell(double lon, double lat, double cell_size_deg) {
  return {static_cast<std::int64_t>(std::floor(lat / cell_size_deg)),
          static_cast<std::int64_t>(std::floor(lon / cell_size_deg))};
}

/// Geospatial block split. Occupied grid cells are enumerated row-major,
/// shuffled with the seed, and each cell (with all its tiles) goes to the
/// split currently furthest below its target tile count.
inline DatasetManifest checkerboard_split(const DatasetManifest& manifest, double cell_size_deg,
                                          const SplitRatios& ratios, std::uint64_t seed) {
  if (!(cell_size_deg > 0.0)) throw DomainError("cell size must be positive");
  const auto frac = ratios.normalized();
  std::map<GridCell, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (!e.lon || !e.lat) throw ManifestError("tile '" + e.tile_path + "' has no coordinates");
    cells[grid_cell(*e.lon, *e.lat, cell_size_deg)].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> order;
  for (const auto& [cell, members] : cells) order.push_back(&members);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  const double n = static_cast<double>(manifest.entries.size());
  std::array<double, 3> assigned{0, 0, 0};
  constexpr std::array<Split, 3> kSplits{Split::TRAIN, Split::VAL, Split::TEST};
  DatasetManifest out = manifest;
  for (const auto* members : order) {
    std::size_t best = 0;
    double best_deficit = -1e300;
    for (std::size_t s = 0; s < 3; ++s) {
      if (frac[s] <= 0.0) continue;
      const double deficit = frac[s] * n - assigned[s];
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    assigned[best] += static_cast<double>(members->size());
    for (auto idx : *members) out.entries[idx].split = kSplits[best];
  }
  return out;
}

}  // namespace eovae::data
