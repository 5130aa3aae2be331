#pragma once

#include "eovae/core/nn_ops.hpp"
#include "eovae/core/ops.hpp"
#include "eovae/metrics/metrics.hpp"

namespace eovae::train {

/// mean(sqrt((x - y)^2 + eps^2)), evaluated as eps + mean(hypot(d, eps) - eps)
/// so a zero residual gives eps exactly.
template <typename T>
Var<T> charbonnier(const Var<T>& x, const Var<T>& y, double eps = 1e-3) {
  ops::detail::require_same_shape(x, y, "charbonnier");
  const T e = static_cast<T>(eps);
  const Var<T> excess = ops::detail::unary(
      ops::sub(x, y),
      [e](T d) {
        const T h = std::hypot(d, e);
        return d == T{0} ? T{0} : d * d / (h + e);
      },
      [e](T d, T) {
        const T h = std::hypot(d, e);
        return h > T{0} ? d / h : T{0};
      });
  return ops::add_scalar(ops::mean(excess), e);
}

namespace detail {

template <typename T>
struct SsimTerms {
  Var<T> ssim;  // [N]
  Var<T> cs;    // [N]
};

// Per-sample constant broadcast over [N, ...].
template <typename T>
Var<T> per_sample_constant(const Shape& shape, const std::vector<double>& values) {
  Tensor<T> t(shape);
  const auto per = t.size() / values.size();
  for (std::size_t s = 0; s < values.size(); ++s)
    for (std::size_t i = 0; i < per; ++i) t[s * per + i] = static_cast<T>(values[s]);
  return Var<T>(std::move(t));
}

template <typename T>
SsimTerms<T> ssim_terms(const Var<T>& x, const Var<T>& y, const std::vector<double>& ranges, bool need_ssim) {
  using namespace ops;
  const auto taps64 = metrics::gaussian_window();
  const std::vector<T> taps(taps64.begin(), taps64.end());
  auto f = [&](const Var<T>& v) { return filter_valid(v, taps); };
  const Var<T> mx = f(x), my = f(y);
  const Var<T> sxx = f(mul(x, x)), syy = f(mul(y, y)), sxy = f(mul(x, y));
  const Var<T> mx2 = square(mx), my2 = square(my), mxy = mul(mx, my);
  std::vector<double> c1(ranges.size()), c2(ranges.size());
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    c1[i] = std::pow(metrics::kSsimK1 * ranges[i], 2);
    c2[i] = std::pow(metrics::kSsimK2 * ranges[i], 2);
  }
  const Var<T> C2 = per_sample_constant<T>(mx.shape(), c2);
  const Var<T> var_sum = add(sub(sxx, mx2), sub(syy, my2));
  const Var<T> cs_map = div(add(scale(sub(sxy, mxy), T{2}), C2), add(var_sum, C2));
  SsimTerms<T> out;
  out.cs = mean_per_sample(cs_map);
  if (need_ssim) {
    const Var<T> C1 = per_sample_constant<T>(mx.shape(), c1);
    const Var<T> lum = div(add(scale(mxy, T{2}), C1), add(add(mx2, my2), C1));
    out.ssim = mean_per_sample(mul(lum, cs_map));
  }
  return out;
}

// max - min of each sample of the reference, detached.
template <typename T>
std::vector<double> sample_ranges(const Tensor<T>& ref) {
  const auto n = ref.dim(0);
  const auto per = ref.size() / static_cast<std::size_t>(n);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < n; ++s) {
    double lo = ref[s * per], hi = lo;
    for (std::size_t i = 0; i < per; ++i) {
      lo = std::min<double>(lo, ref[s * per + i]);
      hi = std::max<double>(hi, ref[s * per + i]);
    }
    out[s] = hi > lo ? hi - lo : 1.0;
  }
  return out;
}

template <typename T>
Var<T> clamped_pow(const Var<T>& v, double w) {
  return ops::pow_scalar(ops::clamp(v, T{1e-6}, T{1e6}), static_cast<T>(w));
}

}  // namespace detail

/// Batch-mean SSIM of [N, C, H, W] tensors; L per sample from the reference's range.
template <typename T>
Var<T> ssim_value(const Var<T>& reference, const Var<T>& candidate) {
  ops::detail::require_same_shape(reference, candidate, "ssim");
  const auto terms = detail::ssim_terms(reference, candidate, detail::sample_ranges(reference.value()), true);
  return ops::mean(terms.ssim);
}

/// Batch-mean MS-SSIM matching metrics::ms_ssim per sample (terms floored at
/// 1e-6 instead of 0 so the power stays differentiable). Fewer than two
/// usable scales fall back to single-scale SSIM with a warning.
template <typename T>
Var<T> ms_ssim_value(const Var<T>& reference, const Var<T>& candidate, Diagnostics* diag = nullptr, int scales = 5) {
  ops::detail::require_same_shape(reference, candidate, "ms_ssim");
  if (reference.value().rank() != 4) throw ShapeError("ms_ssim loss expects [N, C, H, W]");
  const auto h = reference.dim(2), w = reference.dim(3);
  const int usable = metrics::ms_ssim_scales(h, w, scales);
  if (usable < 1) throw ShapeError("ms_ssim: image smaller than the SSIM window");
  if (usable < 2) {
    warn(diag, "ms_ssim loss: " + std::to_string(h) + "x" + std::to_string(w) +
                   " is too small for multi-scale SSIM; using single-scale SSIM");
    return ssim_value(reference, candidate);
  }
  if (usable < scales)
    warn(diag, "ms_ssim loss: " + std::to_string(h) + "x" + std::to_string(w) + " supports " +
                   std::to_string(usable) + " of " + std::to_string(scales) + " scales; weights renormalized");
  const auto weights = metrics::ms_ssim_weights(usable);
  const auto ranges = detail::sample_ranges(reference.value());
  Var<T> x = reference, y = candidate, prod;
  for (int j = 0; j < usable; ++j) {
    const bool last = j + 1 == usable;
    const auto terms = detail::ssim_terms(x, y, ranges, last);
    const Var<T> factor = detail::clamped_pow(last ? terms.ssim : terms.cs, weights[j]);
    prod = j == 0 ? factor : ops::mul(prod, factor);
    if (!last) {
      x = ops::avg_pool2(x);
      y = ops::avg_pool2(y);
    }
  }
  return ops::mean(prod);
}

struct LossWeights {
  double w_char = 0.5;
  double w_msssim = 0.5;
  double charbonnier_eps = 1e-3;
};

template <typename T>
struct ReconstructionLoss {
  Var<T> total;
  double charbonnier = 0.0;
  double ms_ssim = 1.0;  // similarity, not the loss term
};

/// w_char * Charbonnier + w_msssim * (1 - MS-SSIM) on [N, C, H, W] tensors.
template <typename T>
ReconstructionLoss<T> reconstruction_loss(const Var<T>& x, const Var<T>& x_hat, const LossWeights& w,
                                          Diagnostics* diag = nullptr) {
  ops::detail::require_same_shape(x, x_hat, "reconstruction_loss");
  ReconstructionLoss<T> out;
  const Var<T> ch = charbonnier(x, x_hat, w.charbonnier_eps);
  out.charbonnier = static_cast<double>(ch.item());
  out.total = ops::scale(ch, static_cast<T>(w.w_char));
  if (w.w_msssim != 0.0) {
    const Var<T> ms = ms_ssim_value(x, x_hat, diag);
    out.ms_ssim = static_cast<double>(ms.item());
    out.total = ops::add(out.total, ops::scale(ops::add_scalar(ops::neg(ms), T{1}), static_cast<T>(w.w_msssim)));
  }
  return out;
}

}  // namespace eovae::train
