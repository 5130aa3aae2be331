#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "eovae/data/ndvi.hpp"

namespace eovae::metrics {

inline constexpr double kPsnrCapDb = 100.0;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSamEpsilon = 1e-12;
inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

namespace detail {

template <typename T>
void check_pair(const Tensor<T>& x, const Tensor<T>& y, const char* what) {
  if (x.shape() != y.shape())
    throw ShapeError(std::string(what) + ": shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()) +
                     " differ");
  if (x.size() == 0) throw EmptyMetricError(std::string(what) + ": empty input");
}

template <typename T>
void check_image(const Tensor<T>& x, const char* what) {
  if (x.rank() != 3) throw ShapeError(std::string(what) + " expects [C, H, W], got " + shape_str(x.shape()));
}

template <typename T>
Tensor<double> as_double(const Tensor<T>& t) {
  return t.template cast<double>();
}

}  // namespace detail

/// Normalized 1-D Gaussian taps.
inline std::vector<double> gaussian_window(int size = kSsimWindow, double sigma = kSsimSigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    total += w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  for (auto& v : w) v /= total;
  return w;
}

template <typename T>
double mse(const Tensor<T>& x, const Tensor<T>& y) {
  detail::check_pair(x, y, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

template <typename T>
double rmse(const Tensor<T>& x, const Tensor<T>& y) {
  return std::sqrt(mse(x, y));
}

/// max - min of the reference.
template <typename T>
double auto_peak(const Tensor<T>& reference) {
  const double peak = static_cast<double>(reference.max()) - static_cast<double>(reference.min());
  if (!(peak > 0.0)) throw UndefinedPeakError("reference image is constant; dynamic range is zero");
  return peak;
}

/// PSNR in dB against `reference`, capped at 100 dB (identical inputs give the cap).
template <typename T>
double psnr(const Tensor<T>& reference, const Tensor<T>& candidate, std::optional<double> peak = std::nullopt) {
  const double e = mse(reference, candidate);
  const double p = peak ? *peak : auto_peak(reference);
  if (!(p > 0.0)) throw UndefinedPeakError("PSNR peak must be positive");
  if (e == 0.0) return kPsnrCapDb;
  return std::min(10.0 * std::log10(p * p / e), kPsnrCapDb);
}

struct SsimComponents {
  double ssim = 0.0;  // mean of the full SSIM map
  double cs = 0.0;    // mean of the contrast-structure map
};

/// Channel-averaged SSIM terms over the valid Gaussian-filtered region.
template <typename T>
SsimComponents ssim_components(const Tensor<T>& x, const Tensor<T>& y, double dynamic_range) {
  detail::check_pair(x, y, "ssim");
  detail::check_image(x, "ssim");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < kSsimWindow || w < kSsimWindow)
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                     std::to_string(kSsimWindow) + "-pixel window");
  const auto win = gaussian_window();
  const double c1 = std::pow(kSsimK1 * dynamic_range, 2), c2 = std::pow(kSsimK2 * dynamic_range, 2);
  const auto oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  // Separable filtering: rows first into tmp, then columns.
  auto filter = [&](const std::vector<double>& plane) {
    std::vector<double> tmp(static_cast<std::size_t>(h * ow)), out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t q = 0; q < ow; ++q) {
        double acc = 0.0;
        for (int k = 0; k < kSsimWindow; ++k) acc += win[k] * plane[r * w + q + k];
        tmp[r * ow + q] = acc;
      }
    for (std::int64_t r = 0; r < oh; ++r)
      for (std::int64_t q = 0; q < ow; ++q) {
        double acc = 0.0;
        for (int k = 0; k < kSsimWindow; ++k) acc += win[k] * tmp[(r + k) * ow + q];
        out[r * ow + q] = acc;
      }
    return out;
  };
  SsimComponents total;
  const auto plane = static_cast<std::size_t>(h * w);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    std::vector<double> px(plane), py(plane), pxx(plane), pyy(plane), pxy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      px[i] = x[ch * plane + i];
      py[i] = y[ch * plane + i];
      pxx[i] = px[i] * px[i];
      pyy[i] = py[i] * py[i];
      pxy[i] = px[i] * py[i];
    }
    const auto mx = filter(px), my = filter(py), sxx = filter(pxx), syy = filter(pyy), sxy = filter(pxy);
    double s_acc = 0.0, cs_acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      const double cs = (2.0 * cov + c2) / (vx + vy + c2);
      cs_acc += cs;
      s_acc += (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1) * cs;
    }
    total.ssim += s_acc / static_cast<double>(mx.size());
    total.cs += cs_acc / static_cast<double>(mx.size());
  }
  total.ssim /= static_cast<double>(c);
  total.cs /= static_cast<double>(c);
  return total;
}

/// Gaussian-window SSIM averaged over channels; L defaults to the reference's range.
template <typename T>
double ssim(const Tensor<T>& reference, const Tensor<T>& candidate, std::optional<double> dynamic_range = std::nullopt) {
  return ssim_components(reference, candidate, dynamic_range ? *dynamic_range : auto_peak(reference)).ssim;
}

/// Number of MS-SSIM scales usable for an h x w image (at most `requested`).
inline int ms_ssim_scales(std::int64_t h, std::int64_t w, int requested = 5) {
  int scales = 0;
  std::int64_t hh = h, ww = w;
  while (scales < requested && hh >= kSsimWindow && ww >= kSsimWindow) {
    ++scales;
    hh /= 2;
    ww /= 2;
  }
  return scales;
}

/// First `scales` standard weights rescaled to sum to one.
inline std::vector<double> ms_ssim_weights(int scales) {
  if (scales < 1 || scales > static_cast<int>(kMsSsimWeights.size())) throw DomainError("ms_ssim: bad scale count");
  std::vector<double> w(kMsSsimWeights.begin(), kMsSsimWeights.begin() + scales);
  double total = 0.0;
  for (double v : w) total += v;
  for (auto& v : w) v /= total;
  return w;
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  const auto c = x.dim(0), oh = x.dim(1) / 2, ow = x.dim(2) / 2;
  Tensor<T> out({c, oh, ow});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t r = 0; r < oh; ++r)
      for (std::int64_t q = 0; q < ow; ++q)
        out.at(ch, r, q) = static_cast<T>(0.25 * (static_cast<double>(x.at(ch, 2 * r, 2 * q)) + x.at(ch, 2 * r, 2 * q + 1) +
                                                  x.at(ch, 2 * r + 1, 2 * q) + x.at(ch, 2 * r + 1, 2 * q + 1)));
  return out;
}

/// Multi-scale SSIM: prod_{j<M} relu(cs_j)^w_j * relu(ssim_M)^w_M. Images too
/// small for all scales use fewer scales with renormalized weights.
template <typename T>
double ms_ssim(const Tensor<T>& reference, const Tensor<T>& candidate, int scales = 5, Diagnostics* diag = nullptr,
               std::optional<double> dynamic_range = std::nullopt) {
  detail::check_pair(reference, candidate, "ms_ssim");
  detail::check_image(reference, "ms_ssim");
  const int usable = ms_ssim_scales(reference.dim(1), reference.dim(2), scales);
  if (usable < 1) throw ShapeError("ms_ssim: image smaller than the SSIM window");
  if (usable < scales)
    warn(diag, "ms_ssim: " + std::to_string(reference.dim(1)) + "x" + std::to_string(reference.dim(2)) +
                   " image supports " + std::to_string(usable) + " of " + std::to_string(scales) +
                   " scales; weights renormalized");
  const auto weights = ms_ssim_weights(usable);
  const double range = dynamic_range ? *dynamic_range : auto_peak(reference);
  Tensor<double> x = detail::as_double(reference), y = detail::as_double(candidate);
  double result = 1.0;
  for (int j = 0; j < usable; ++j) {
    const auto comp = ssim_components(x, y, range);
    const double term = j + 1 == usable ? comp.ssim : comp.cs;
    result *= std::pow(std::max(term, 0.0), weights[j]);
    if (j + 1 < usable) {
      x = avg_pool2(x);
      y = avg_pool2(y);
    }
  }
  return result;
}

struct SamResult {
  double mean_rad = 0.0;
  std::size_t skipped = 0;
};

/// Mean spectral angle; pixels where either spectrum is zero are skipped.
template <typename T>
SamResult sam_detailed(const Tensor<T>& reference, const Tensor<T>& candidate) {
  detail::check_pair(reference, candidate, "sam");
  detail::check_image(reference, "sam");
  const auto c = reference.dim(0);
  if (c < 2) throw ShapeError("sam needs at least two channels");
  const auto plane = static_cast<std::size_t>(reference.dim(1) * reference.dim(2));
  SamResult r;
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    double nx = 0.0, ny = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double a = reference[ch * plane + p], b = candidate[ch * plane + p];
      nx += a * a;
      ny += b * b;
    }
    if (nx == 0.0 || ny == 0.0) {
      ++r.skipped;
      continue;
    }
    // Half-angle form: 2 atan2(|u - v|, |u + v|) for unit u, v. Same angle as
    // arccos of the cosine, without its loss of precision near 0 and pi.
    nx = std::sqrt(nx) + kSamEpsilon;
    ny = std::sqrt(ny) + kSamEpsilon;
    double diff = 0.0, sum = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double u = reference[ch * plane + p] / nx, v = candidate[ch * plane + p] / ny;
      diff += (u - v) * (u - v);
      sum += (u + v) * (u + v);
    }
    acc += 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
    ++used;
  }
  if (used == 0) throw EmptyMetricError("sam: every pixel has a zero spectrum");
  r.mean_rad = acc / static_cast<double>(used);
  return r;
}

template <typename T>
double sam(const Tensor<T>& reference, const Tensor<T>& candidate) {
  return sam_detailed(reference, candidate).mean_rad;
}

/// Mean |NDVI(x) - NDVI(y)|; both images must be in RAW space.
inline double ndvi_mae(const data::MultispectralImage& reference, const data::MultispectralImage& candidate) {
  if (reference.value_space() != data::ValueSpace::RAW || candidate.value_space() != data::ValueSpace::RAW)
    throw StateError("ndvi_mae expects RAW images; denormalize first");
  const auto a = data::ndvi(reference), b = data::ndvi(candidate);
  detail::check_pair(a, b, "ndvi_mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace eovae::metrics
