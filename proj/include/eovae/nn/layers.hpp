#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "eovae/core/nn_ops.hpp"
#include "eovae/core/random.hpp"

namespace eovae::nn {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::int64_t count_parameters(const ParamList<T>& params) {
  std::int64_t total = 0;
  for (const auto& p : params) total += static_cast<std::int64_t>(p.var.value().size());
  return total;
}

template <typename T>
void zero_grad(const ParamList<T>& params) {
  for (auto p : params) p.var.zero_grad();
}

/// Uniform(-b, b) with b = gain / sqrt(fan_in).
template <typename T>
Tensor<T> fan_in_uniform(Rng& rng, Shape shape, std::int64_t fan_in, double gain = 1.0) {
  const double bound = gain / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  return rng.uniform_tensor<T>(std::move(shape), static_cast<T>(-bound), static_cast<T>(bound));
}

template <typename T>
struct Linear {
  Var<T> weight;
  Var<T> bias;

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng, double gain = 1.0)
      : weight(Var<T>::parameter(fan_in_uniform<T>(rng, {out, in}, in, gain))),
        bias(Var<T>::parameter(fan_in_uniform<T>(rng, {out}, in, gain))) {}

  std::int64_t in_features() const { return weight.dim(1); }
  std::int64_t out_features() const { return weight.dim(0); }

  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, int kernel, Rng& rng, int stride_ = 1, double gain = 1.0)
      : weight(Var<T>::parameter(fan_in_uniform<T>(rng, {out, in, kernel, kernel}, in * kernel * kernel, gain))),
        bias(Var<T>::parameter(fan_in_uniform<T>(rng, {out}, in * kernel * kernel, gain))),
        stride(stride_),
        pad(kernel / 2) {}

  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t out_channels() const { return weight.dim(0); }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

/// Largest group count <= preferred that divides channels.
inline int group_count(std::int64_t channels, int preferred) {
  int g = std::min<int>(preferred, static_cast<int>(channels));
  while (g > 1 && channels % g != 0) --g;
  return std::max(g, 1);
}

template <typename T>
struct GroupNorm {
  Var<T> gamma;
  Var<T> beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(std::int64_t channels, int preferred_groups)
      : gamma(Var<T>::parameter(Tensor<T>({channels}, T{1}))),
        beta(Var<T>::parameter(Tensor<T>({channels}, T{0}))),
        groups(group_count(channels, preferred_groups)) {}

  Var<T> operator()(const Var<T>& x) const { return ops::group_norm(x, gamma, beta, groups); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

/// GN -> SiLU -> conv -> [+ per-channel embedding] -> GN -> SiLU -> conv,
/// plus identity or 1x1 shortcut.
template <typename T>
struct ResBlock {
  GroupNorm<T> norm1, norm2;
  Conv2d<T> conv1, conv2;
  Conv2d<T> shortcut;
  bool has_shortcut = false;
  Linear<T> emb_proj;
  bool has_emb = false;

  ResBlock() = default;
  ResBlock(std::int64_t in, std::int64_t out, int groups, Rng& rng, std::int64_t emb_dim = 0)
      : norm1(in, groups), norm2(out, groups), conv1(in, out, 3, rng), conv2(out, out, 3, rng) {
    if (in != out) {
      shortcut = Conv2d<T>(in, out, 1, rng);
      has_shortcut = true;
    }
    if (emb_dim > 0) {
      emb_proj = Linear<T>(emb_dim, out, rng);
      has_emb = true;
    }
  }

  Var<T> operator()(const Var<T>& x, const Var<T>* emb = nullptr) const {
    Var<T> h = conv1(ops::silu(norm1(x)));
    if (has_emb && emb != nullptr) h = ops::add_channel_offset(h, emb_proj(ops::silu(*emb)));
    h = conv2(ops::silu(norm2(h)));
    return ops::add(has_shortcut ? shortcut(x) : x, h);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    conv1.collect(out, prefix + ".conv1");
    norm2.collect(out, prefix + ".norm2");
    conv2.collect(out, prefix + ".conv2");
    if (has_shortcut) shortcut.collect(out, prefix + ".shortcut");
    if (has_emb) emb_proj.collect(out, prefix + ".emb_proj");
  }
};

}  // namespace eovae::nn
