#pragma once

#include <numbers>

#include <json.hpp>

#include "eovae/nn/layers.hpp"

namespace eovae::diffusion {

struct UNetConfig {
  std::int64_t in_channels = 32;
  std::int64_t out_channels = 16;
  std::vector<std::int64_t> widths{64, 128, 256};
  int blocks_per_stage = 2;
  int norm_groups = 32;

  std::int64_t time_dim() const { return 4 * widths.front(); }
  int levels() const { return static_cast<int>(widths.size()); }

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0) throw ConfigError("unet channel counts must be positive");
    if (widths.empty() || blocks_per_stage < 1 || norm_groups < 1) throw ConfigError("bad unet layout");
    for (auto w : widths)
      if (w <= 0 || w % 2 != 0) throw ConfigError("unet widths must be positive and even");
  }

  /// "default": widths 64/128/256; "tiny": 32/64/128 for tests and desk runs.
  static UNetConfig preset(const std::string& name, std::int64_t in, std::int64_t out) {
    UNetConfig c;
    c.in_channels = in;
    c.out_channels = out;
    if (name == "tiny") {
      c.widths = {32, 64, 128};
      c.norm_groups = 8;
    } else if (name != "default") {
      throw ConfigError("unknown unet preset '" + name + "' (expected default|tiny)");
    }
    return c;
  }
};

inline nlohmann::json to_json(const UNetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"out_channels", c.out_channels},
          {"widths", c.widths},
          {"blocks_per_stage", c.blocks_per_stage},
          {"norm_groups", c.norm_groups}};
}

inline UNetConfig unet_config_from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.in_channels = j.at("in_channels").get<std::int64_t>();
  c.out_channels = j.at("out_channels").get<std::int64_t>();
  c.widths = j.at("widths").get<std::vector<std::int64_t>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  c.norm_groups = j.at("norm_groups").get<int>();
  c.validate();
  return c;
}

/// [N] scalars -> [N, dim] sin/cos features.
template <typename T>
Tensor<T> timestep_features(const std::vector<double>& c_noise, std::int64_t dim) {
  const std::int64_t half = dim / 2;
  Tensor<T> out({static_cast<std::int64_t>(c_noise.size()), dim});
  for (std::size_t n = 0; n < c_noise.size(); ++n)
    for (std::int64_t k = 0; k < half; ++k) {
      const double f = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double a = 1000.0 * c_noise[n] * f;
      out[n * dim + k] = static_cast<T>(std::sin(a));
      out[n * dim + half + k] = static_cast<T>(std::cos(a));
    }
  return out;
}

/// Encoder/decoder UNet with concatenated skips and a timestep embedding
/// added inside every residual block.
template <typename T>
class UNet {
 public:
  UNet() = default;
  UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const auto w0 = cfg_.widths.front(), td = cfg_.time_dim();
    const int g = cfg_.norm_groups;
    time1_ = nn::Linear<T>(w0, td, rng);
    time2_ = nn::Linear<T>(td, td, rng);
    conv_in_ = nn::Conv2d<T>(cfg_.in_channels, w0, 3, rng);
    std::vector<std::int64_t> skips{w0};
    std::int64_t ch = w0;
    for (int l = 0; l < cfg_.levels(); ++l) {
      for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
        down_.emplace_back(ch, cfg_.widths[l], g, rng, td);
        ch = cfg_.widths[l];
        skips.push_back(ch);
      }
      if (l + 1 < cfg_.levels()) {
        downsample_.emplace_back(ch, ch, 3, rng, 2);
        skips.push_back(ch);
      }
    }
    mid1_ = nn::ResBlock<T>(ch, ch, g, rng, td);
    mid2_ = nn::ResBlock<T>(ch, ch, g, rng, td);
    for (int l = cfg_.levels(); l-- > 0;) {
      for (int b = 0; b <= cfg_.blocks_per_stage; ++b) {
        up_.emplace_back(ch + skips.back(), cfg_.widths[l], g, rng, td);
        skips.pop_back();
        ch = cfg_.widths[l];
      }
      if (l > 0) upsample_.emplace_back(ch, ch, 3, rng);
    }
    norm_out_ = nn::GroupNorm<T>(ch, g);
    conv_out_ = nn::Conv2d<T>(ch, cfg_.out_channels, 3, rng);
  }

  const UNetConfig& config() const { return cfg_; }

  /// x [N, in, H, W], c_noise [N] -> [N, out, H, W].
  Var<T> operator()(const Var<T>& x, const std::vector<double>& c_noise) const {
    check_input(x.shape());
    if (static_cast<std::int64_t>(c_noise.size()) != x.dim(0))
      throw ShapeError("unet: one noise level per sample expected");
    const Var<T> emb = time2_(ops::silu(time1_(Var<T>(timestep_features<T>(c_noise, cfg_.widths.front())))));
    Var<T> h = conv_in_(x);
    std::vector<Var<T>> skips{h};
    std::size_t di = 0;
    for (int l = 0; l < cfg_.levels(); ++l) {
      for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
        h = down_[di++](h, &emb);
        skips.push_back(h);
      }
      if (l + 1 < cfg_.levels()) {
        h = downsample_[static_cast<std::size_t>(l)](h);
        skips.push_back(h);
      }
    }
    h = mid2_(mid1_(h, &emb), &emb);
    std::size_t ui = 0, si = 0;
    for (int l = cfg_.levels(); l-- > 0;) {
      for (int b = 0; b <= cfg_.blocks_per_stage; ++b) {
        h = up_[ui++](ops::concat_channels(h, skips.back()), &emb);
        skips.pop_back();
      }
      if (l > 0) h = upsample_[si++](ops::upsample_nearest(h, 2));
    }
    return conv_out_(ops::silu(norm_out_(h)));
  }

  nn::ParamList<T> parameters() const {
    nn::ParamList<T> out;
    time1_.collect(out, "time.fc1");
    time2_.collect(out, "time.fc2");
    conv_in_.collect(out, "conv_in");
    for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(out, "down" + std::to_string(i));
    for (std::size_t i = 0; i < downsample_.size(); ++i) downsample_[i].collect(out, "downsample" + std::to_string(i));
    mid1_.collect(out, "mid1");
    mid2_.collect(out, "mid2");
    for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect(out, "up" + std::to_string(i));
    for (std::size_t i = 0; i < upsample_.size(); ++i) upsample_[i].collect(out, "upsample" + std::to_string(i));
    norm_out_.collect(out, "norm_out");
    conv_out_.collect(out, "conv_out");
    return out;
  }

  std::int64_t parameter_count() const { return nn::count_parameters(parameters()); }

  /// Multiply-add FLOPs (2 per MAC) of one forward pass on an h x w input,
  /// counted from layer shapes: convolutions and linear layers only.
  double flops(std::int64_t h, std::int64_t w) const {
    check_input({1, cfg_.in_channels, h, w});
    auto conv = [](std::int64_t cin, std::int64_t cout, int k, std::int64_t oh, std::int64_t ow) {
      return 2.0 * static_cast<double>(cin) * static_cast<double>(cout) * k * k * static_cast<double>(oh * ow);
    };
    const auto td = cfg_.time_dim();
    double total = 2.0 * static_cast<double>(cfg_.widths.front() * td + td * td);
    auto block = [&](const nn::ResBlock<T>& b, std::int64_t hh, std::int64_t ww) {
      const auto cin = b.conv1.in_channels(), cout = b.conv1.out_channels();
      double f = conv(cin, cout, 3, hh, ww) + conv(cout, cout, 3, hh, ww) + 2.0 * static_cast<double>(td * cout);
      if (b.has_shortcut) f += conv(cin, cout, 1, hh, ww);
      return f;
    };
    total += conv(cfg_.in_channels, cfg_.widths.front(), 3, h, w);
    std::int64_t hh = h, ww = w;
    std::size_t di = 0;
    for (int l = 0; l < cfg_.levels(); ++l) {
      for (int b = 0; b < cfg_.blocks_per_stage; ++b) total += block(down_[di++], hh, ww);
      if (l + 1 < cfg_.levels()) {
        const auto& d = downsample_[static_cast<std::size_t>(l)];
        hh /= 2;
        ww /= 2;
        total += conv(d.in_channels(), d.out_channels(), 3, hh, ww);
      }
    }
    total += block(mid1_, hh, ww) + block(mid2_, hh, ww);
    std::size_t ui = 0, si = 0;
    for (int l = cfg_.levels(); l-- > 0;) {
      for (int b = 0; b <= cfg_.blocks_per_stage; ++b) total += block(up_[ui++], hh, ww);
      if (l > 0) {
        hh *= 2;
        ww *= 2;
        const auto& u = upsample_[si++];
        total += conv(u.in_channels(), u.out_channels(), 3, hh, ww);
      }
    }
    total += conv(conv_out_.in_channels(), cfg_.out_channels, 3, hh, ww);
    return total;
  }

 private:
  void check_input(const Shape& s) const {
    if (s.size() != 4 || s[1] != cfg_.in_channels)
      throw ShapeError("unet expects [N, " + std::to_string(cfg_.in_channels) + ", H, W], got " + shape_str(s));
    const std::int64_t m = std::int64_t{1} << (cfg_.levels() - 1);
    if (s[2] % m != 0 || s[3] % m != 0)
      throw ShapeError("unet input " + std::to_string(s[2]) + "x" + std::to_string(s[3]) + " is not divisible by " +
                       std::to_string(m));
  }

  UNetConfig cfg_;
  nn::Linear<T> time1_, time2_;
  nn::Conv2d<T> conv_in_;
  std::vector<nn::ResBlock<T>> down_;
  std::vector<nn::Conv2d<T>> downsample_;
  nn::ResBlock<T> mid1_, mid2_;
  std::vector<nn::ResBlock<T>> up_;
  std::vector<nn::Conv2d<T>> upsample_;
  nn::GroupNorm<T> norm_out_;
  nn::Conv2d<T> conv_out_;
};

}  // namespace eovae::diffusion
