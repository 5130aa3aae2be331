#pragma once

#include "eovae/data/image.hpp"

namespace eovae::data {

inline constexpr double kRedCenterNm = 665.0;
inline constexpr double kNirCenterNm = 842.0;
inline constexpr double kBandToleranceNm = 50.0;
inline constexpr double kNdviEpsilon = 1e-8;

struct NdviBands {
  std::size_t red;
  std::size_t nir;
};

inline NdviBands find_ndvi_bands(const WavelengthProfile& profile) {
  const auto red = profile.nearest(kRedCenterNm, kBandToleranceNm);
  const auto nir = profile.nearest(kNirCenterNm, kBandToleranceNm);
  if (!red || !nir) throw MissingBandError("no red (~665 nm) or NIR (~842 nm) band within 50 nm");
  return {*red, *nir};
}

inline bool has_ndvi_bands(const WavelengthProfile& profile) {
  return profile.nearest(kRedCenterNm, kBandToleranceNm) && profile.nearest(kNirCenterNm, kBandToleranceNm);
}

/// (NIR - Red) / (NIR + Red + eps) per pixel, as an [H, W] tensor.
inline Tensor<double> ndvi(const MultispectralImage& img) {
  const auto bands = find_ndvi_bands(img.wavelengths());
  const auto h = img.height(), w = img.width();
  Tensor<double> out({h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const double red = img.pixels().at(static_cast<std::int64_t>(bands.red), y, x);
      const double nir = img.pixels().at(static_cast<std::int64_t>(bands.nir), y, x);
      out[static_cast<std::size_t>(y * w + x)] = (nir - red) / (nir + red + kNdviEpsilon);
    }
  return out;
}

}  // namespace eovae::data
