#pragma once

#include <cmath>

#include "eovae/core/tensor.hpp"

namespace eovae::data {

/// Box-filter downsampling of a [C, H, W] tensor by an integer factor.
inline Tensor<float> downsample_area(const Tensor<float>& x, int factor) {
  if (x.rank() != 3 || factor < 1 || x.dim(1) % factor != 0 || x.dim(2) % factor != 0)
    throw ShapeError("downsample_area: size " + shape_str(x.shape()) + " not divisible by " + std::to_string(factor));
  const auto c = x.dim(0), oh = x.dim(1) / factor, ow = x.dim(2) / factor;
  Tensor<float> out({c, oh, ow});
  const double inv = 1.0 / (factor * factor);
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += x.at(ch, y * factor + dy, xx * factor + dx);
        out.at(ch, y, xx) = static_cast<float>(acc * inv);
      }
  return out;
}

namespace detail {
// Keys cubic convolution kernel with a = -0.5.
inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}
}  // namespace detail

/// Bicubic upsampling of a [C, H, W] tensor (half-pixel centers, clamped borders).
inline Tensor<float> upsample_bicubic(const Tensor<float>& x, int factor) {
  if (x.rank() != 3 || factor < 1) throw ShapeError("upsample_bicubic expects [C,H,W]");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto oh = h * factor, ow = w * factor;
  Tensor<float> out({c, oh, ow});
  auto clampi = [](std::int64_t v, std::int64_t n) { return std::clamp<std::int64_t>(v, 0, n - 1); };
  for (std::int64_t y = 0; y < oh; ++y) {
    const double sy = (y + 0.5) / factor - 0.5;
    const auto y0 = static_cast<std::int64_t>(std::floor(sy));
    const double fy = sy - static_cast<double>(y0);
    for (std::int64_t xx = 0; xx < ow; ++xx) {
      const double sx = (xx + 0.5) / factor - 0.5;
      const auto x0 = static_cast<std::int64_t>(std::floor(sx));
      const double fx = sx - static_cast<double>(x0);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int j = -1; j <= 2; ++j) {
          const double wy = detail::cubic_weight(j - fy);
          for (int i = -1; i <= 2; ++i)
            acc += wy * detail::cubic_weight(i - fx) * x.at(ch, clampi(y0 + j, h), clampi(x0 + i, w));
        }
        out.at(ch, y, xx) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace eovae::data
