#pragma once

#include <cmath>
#include <numbers>

#include "eovae/nn/layers.hpp"

namespace eovae::nn {

/// Cosine decay from base_lr to min_lr over total_steps; flat afterwards.
struct CosineSchedule {
  double base_lr = 1e-3;
  double min_lr = 0.0;
  std::int64_t total_steps = 1;
  std::int64_t warmup_steps = 0;

  double at(std::int64_t step) const {
    if (warmup_steps > 0 && step < warmup_steps)
      return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    if (step >= total_steps) return min_lr;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(std::max<std::int64_t>(total_steps - warmup_steps, 1));
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

/// Adam with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(ParamList<T> params, CosineSchedule schedule, Options options)
      : params_(std::move(params)), schedule_(schedule), options_(options) {
    for (const auto& p : params_) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }
  AdamW(ParamList<T> params, CosineSchedule schedule) : AdamW(std::move(params), schedule, Options{}) {}

  /// Applies one update from the accumulated gradients, then clears them.
  void step() {
    const double lr = schedule_.at(step_);
    ++step_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto var = params_[i].var;
      if (!var.has_grad()) continue;
      auto& w = var.mutable_value();
      const auto& g = var.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        m[k] = static_cast<T>(options_.beta1 * m[k] + (1.0 - options_.beta1) * gk);
        v[k] = static_cast<T>(options_.beta2 * v[k] + (1.0 - options_.beta2) * gk * gk);
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        double wk = static_cast<double>(w[k]);
        wk -= lr * options_.weight_decay * wk;
        wk -= lr * mhat / (std::sqrt(vhat) + options_.eps);
        w[k] = static_cast<T>(wk);
      }
      var.zero_grad();
    }
  }

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }
  double current_lr() const { return schedule_.at(step_); }
  const ParamList<T>& params() const { return params_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  ParamList<T> params_;
  CosineSchedule schedule_;
  Options options_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::int64_t step_ = 0;
};

}  // namespace eovae::nn
