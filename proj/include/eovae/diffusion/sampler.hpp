#pragma once

#include <functional>

#include "eovae/core/random.hpp"
#include "eovae/diffusion/schedule.hpp"
#include "eovae/diffusion/unet.hpp"

namespace eovae::diffusion {

/// x0-prediction: (x_t, conditioning or nullptr, per-sample t) -> estimate of x0.
template <typename T>
using Denoiser = std::function<Var<T>(const Var<T>&, const Var<T>*, const std::vector<double>&)>;

/// Wraps a UNet with EDM-style preconditioning on the VP scaled variable
/// y = x_t / alpha, whose noise level is s = sigma / alpha:
///   D = c_skip(s) y + c_out(s) F(c_in(s) y ++ cond, log(s) / 4).
template <typename T>
struct PreconditionedDenoiser {
  const UNet<T>* net = nullptr;
  VPSchedule schedule;
  double sigma_data = 1.0;

  Var<T> operator()(const Var<T>& x_t, const Var<T>* cond, const std::vector<double>& t) const {
    const auto n = static_cast<std::size_t>(x_t.dim(0));
    if (t.size() != n) throw ShapeError("denoiser: one t per sample expected");
    std::vector<T> inv_alpha(n), c_skip(n), c_out(n), c_in(n);
    std::vector<double> c_noise(n);
    const double sd2 = sigma_data * sigma_data;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = schedule.alpha(t[i]), s = schedule.sigma(t[i]) / a;
      inv_alpha[i] = static_cast<T>(1.0 / a);
      c_skip[i] = static_cast<T>(sd2 / (s * s + sd2));
      c_out[i] = static_cast<T>(s * sigma_data / std::sqrt(s * s + sd2));
      c_in[i] = static_cast<T>(1.0 / std::sqrt(s * s + sd2));
      c_noise[i] = 0.25 * std::log(s);
    }
    const Var<T> y = ops::scale_per_sample(x_t, inv_alpha);
    Var<T> in = ops::scale_per_sample(y, c_in);
    if (cond != nullptr) in = ops::concat_channels(in, *cond);
    const Var<T> f = (*net)(in, c_noise);
    return ops::add(ops::scale_per_sample(y, c_skip), ops::scale_per_sample(f, c_out));
  }
};

/// Draws eps, forms x_t = alpha x0 + sigma eps and returns the batch mean of
/// w(t_i) * mean((D(x_t) - x0)^2) with w = (alpha^2 + sigma^2) / sigma^2.
template <typename T>
Var<T> edm_loss(const Denoiser<T>& denoiser, const Var<T>& x0, const Var<T>* cond, const std::vector<double>& t,
                const VPSchedule& schedule, Rng& rng) {
  const auto n = x0.dim(0);
  if (static_cast<std::int64_t>(t.size()) != n) throw ShapeError("edm_loss: one t per sample expected");
  if (cond != nullptr && (cond->dim(0) != n || cond->value().rank() != x0.value().rank()))
    throw ShapeError("edm_loss: conditioning " + shape_str(cond->shape()) + " does not match " + shape_str(x0.shape()));
  std::vector<T> alpha(t.size()), sigma(t.size()), weight(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    weight[i] = static_cast<T>(schedule.edm_weight(t[i]));
    alpha[i] = static_cast<T>(schedule.alpha(t[i]));
    sigma[i] = static_cast<T>(schedule.sigma(t[i]));
  }
  const Var<T> eps(rng.normal_tensor<T>(x0.shape()));
  const Var<T> x_t = ops::add(ops::scale_per_sample(x0.detach(), alpha), ops::scale_per_sample(eps, sigma));
  const Var<T> err = ops::square(ops::sub(denoiser(x_t, cond, t), x0.detach()));
  const Var<T> per_sample = ops::mean_per_sample(err);
  std::vector<T> w(weight.begin(), weight.end());
  for (auto& v : w) v /= static_cast<T>(n);
  return ops::weighted_sum(per_sample, w);
}

/// Uniform t in [t_min, t_max] per sample.
inline std::vector<double> sample_times(std::int64_t n, const VPSchedule& schedule, Rng& rng) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (auto& v : t) v = rng.uniform(schedule.t_min, schedule.t_max);
  return t;
}

/// Deterministic DDIM (eta = 0). Starts from N(0, I) at t_max, visits
/// `steps` evaluation times down to t_min and finishes on the last x0 estimate.
template <typename T>
Tensor<T> ddim_sample(const Denoiser<T>& denoiser, const Shape& shape, const Tensor<T>* cond, int steps, Rng& rng,
                      const VPSchedule& schedule = {}) {
  schedule.validate();
  const auto ts = schedule.sampling_grid(steps);
  NoGradGuard guard;
  Tensor<T> x = rng.normal_tensor<T>(shape);
  std::optional<Var<T>> c;
  if (cond != nullptr) c.emplace(*cond);
  const auto n = static_cast<std::size_t>(shape.at(0));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double t = ts[i];
    const Tensor<T> x0 = denoiser(Var<T>(x), c ? &*c : nullptr, std::vector<double>(n, t)).value();
    if (x0.shape() != x.shape()) throw ShapeError("denoiser changed the sample shape");
    if (i + 1 == ts.size()) {
      x = x0;
    } else {
      const double a = schedule.alpha(t), s = schedule.sigma(t);
      const double a2 = schedule.alpha(ts[i + 1]), s2 = schedule.sigma(ts[i + 1]);
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double eps = (static_cast<double>(x[k]) - a * x0[k]) / s;
        x[k] = static_cast<T>(a2 * x0[k] + s2 * eps);
      }
    }
    for (T v : x.values())
      if (!std::isfinite(static_cast<double>(v)))
        throw SamplerDivergenceError("non-finite sample at step " + std::to_string(i + 1) + " (t=" +
                                     std::to_string(t) + ")");
  }
  return x;
}

}  // namespace eovae::diffusion
