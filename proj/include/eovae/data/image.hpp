#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eovae/core/tensor.hpp"

namespace eovae::data {

enum class Modality { S2L2A, S1RTC, RGBN, RGB, OTHER };
enum class ValueSpace { RAW, NORMALIZED };

inline std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::S2L2A: return "S2L2A";
    case Modality::S1RTC: return "S1RTC";
    case Modality::RGBN: return "RGBN";
    case Modality::RGB: return "RGB";
    case Modality::OTHER: return "OTHER";
  }
  return "OTHER";
}

inline Modality parse_modality(std::string_view s) {
  for (auto m : {Modality::S2L2A, Modality::S1RTC, Modality::RGBN, Modality::RGB, Modality::OTHER})
    if (to_string(m) == s) return m;
  throw DomainError("unknown modality '" + std::string(s) + "'");
}

inline std::string_view to_string(ValueSpace v) { return v == ValueSpace::RAW ? "RAW" : "NORMALIZED"; }

inline ValueSpace parse_value_space(std::string_view s) {
  if (s == "RAW") return ValueSpace::RAW;
  if (s == "NORMALIZED") return ValueSpace::NORMALIZED;
  throw DomainError("unknown value space '" + std::string(s) + "'");
}

using Date = std::chrono::year_month_day;

inline std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

inline Date parse_date(const std::string& s) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (std::sscanf(s.c_str(), "%d-%u-%u", &y, &m, &d) != 3) throw DomainError("bad date '" + s + "'");
  Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) throw DomainError("invalid date '" + s + "'");
  return date;
}

/// Ordered channel center wavelengths in nanometers.
class WavelengthProfile {
 public:
  WavelengthProfile() = default;
  WavelengthProfile(std::vector<double> centers) : centers_(std::move(centers)) {  // NOLINT
    for (double c : centers_)
      if (!(c > 0.0) || !std::isfinite(c))
        throw DomainError("wavelength centers must be finite and positive, got " + std::to_string(c));
  }
  WavelengthProfile(std::initializer_list<double> centers) : WavelengthProfile(std::vector<double>(centers)) {}

  std::size_t size() const noexcept { return centers_.size(); }
  double operator[](std::size_t i) const { return centers_[i]; }
  const std::vector<double>& centers() const noexcept { return centers_; }

  /// Index of the center closest to target, if within tolerance_nm.
  std::optional<std::size_t> nearest(double target, double tolerance_nm) const {
    std::optional<std::size_t> best;
    double best_d = tolerance_nm;
    for (std::size_t i = 0; i < centers_.size(); ++i) {
      const double d = std::abs(centers_[i] - target);
      if (d <= best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  friend bool operator==(const WavelengthProfile&, const WavelengthProfile&) = default;

 private:
  std::vector<double> centers_;
};

/// Sentinel-2 L2A band centers (B01..B12, without B10).
inline WavelengthProfile s2l2a_wavelengths() {
  return {443, 490, 560, 665, 705, 740, 783, 842, 865, 945, 1610, 2190};
}

/// SAR has no optical center; these are fixed C-band sentinels for VV and VH.
inline constexpr double kSarVvWavelengthNm = 5'500'000.0;
inline constexpr double kSarVhWavelengthNm = 5'700'000.0;

inline WavelengthProfile s1rtc_wavelengths() { return {kSarVvWavelengthNm, kSarVhWavelengthNm}; }
inline WavelengthProfile rgbn_wavelengths() { return {665, 560, 490, 842}; }
inline WavelengthProfile rgb_wavelengths() { return {665, 560, 490}; }

/// A C x H x W raster with spectral metadata.
class MultispectralImage {
 public:
  MultispectralImage() = default;

  MultispectralImage(Tensor<float> pixels, WavelengthProfile wavelengths, Modality modality,
                     std::optional<Date> acquisition_date = std::nullopt, ValueSpace value_space = ValueSpace::RAW)
      : pixels_(std::move(pixels)),
        wavelengths_(std::move(wavelengths)),
        modality_(modality),
        date_(acquisition_date),
        value_space_(value_space) {
    if (pixels_.rank() != 3) throw ShapeError("image pixels must be [C,H,W], got " + shape_str(pixels_.shape()));
    if (channels() < 1 || height() < 1 || width() < 1) throw ShapeError("image dimensions must be >= 1");
    if (static_cast<std::size_t>(channels()) != wavelengths_.size())
      throw ShapeError("channel count " + std::to_string(channels()) + " != wavelength count " +
                       std::to_string(wavelengths_.size()));
    if (!pixels_.all_finite()) throw DomainError("image contains non-finite pixel values");
  }

  std::int64_t channels() const { return pixels_.dim(0); }
  std::int64_t height() const { return pixels_.dim(1); }
  std::int64_t width() const { return pixels_.dim(2); }

  const Tensor<float>& pixels() const noexcept { return pixels_; }
  const WavelengthProfile& wavelengths() const noexcept { return wavelengths_; }
  Modality modality() const noexcept { return modality_; }
  const std::optional<Date>& acquisition_date() const noexcept { return date_; }
  ValueSpace value_space() const noexcept { return value_space_; }

  /// Same metadata and value space, different pixels of identical channel count.
  MultispectralImage with_pixels(Tensor<float> pixels) const {
    return MultispectralImage(std::move(pixels), wavelengths_, modality_, date_, value_space_);
  }

 private:
  friend MultispectralImage with_value_space(const MultispectralImage&, Tensor<float>, ValueSpace);

  Tensor<float> pixels_;
  WavelengthProfile wavelengths_;
  Modality modality_ = Modality::OTHER;
  std::optional<Date> date_;
  ValueSpace value_space_ = ValueSpace::RAW;
};

/// Used only by normalize/denormalize to switch value spaces.
inline MultispectralImage with_value_space(const MultispectralImage& img, Tensor<float> pixels, ValueSpace space) {
  MultispectralImage out = img.with_pixels(std::move(pixels));
  out.value_space_ = space;
  return out;
}

}  // namespace eovae::data
