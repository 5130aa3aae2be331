#pragma once

// Wavelength-conditioned weight generation for the dynamic stem and head
// convolutions. Each channel's wavelength is embedded with Fourier features
// of log10(lambda / 1 um), and a small MLP maps the embedding to that
// channel's kernel slice.

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "eovae/data/image.hpp"
#include "eovae/nn/layers.hpp"

namespace eovae::vae {

struct HypernetConfig {
  int kernel_size = 3;
  std::int64_t base_channels = 32;
  std::int64_t embed_dim = 64;
  std::int64_t hidden_dim = 128;
  int fourier_bands = 16;

  void validate() const {
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("hypernet kernel_size must be odd and >= 1");
    if (base_channels < 1 || embed_dim < 1 || hidden_dim < 1 || fourier_bands < 1)
      throw ConfigError("hypernet dimensions must be >= 1");
  }
};

inline nlohmann::json to_json(const HypernetConfig& c) {
  return {{"kernel_size", c.kernel_size}, {"base_channels", c.base_channels}, {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim}, {"fourier_bands", c.fourier_bands}};
}

inline HypernetConfig hypernet_config_from_json(const nlohmann::json& j) {
  HypernetConfig c;
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.fourier_bands = j.value("fourier_bands", c.fourier_bands);
  c.validate();
  return c;
}

/// Angular frequencies pi * 2^(7k/(F-1)), k = 0..F-1.
inline std::vector<double> fourier_frequencies(int bands) {
  std::vector<double> f;
  for (int k = 0; k < bands; ++k)
    f.push_back(std::numbers::pi * std::exp2(bands > 1 ? 7.0 * k / (bands - 1) : 0.0));
  return f;
}

/// [C, 2F] sin/cos features of log10(lambda / 1000 nm).
template <typename T>
Tensor<T> fourier_features(const data::WavelengthProfile& profile, const HypernetConfig& cfg) {
  const auto freqs = fourier_frequencies(cfg.fourier_bands);
  const auto c = static_cast<std::int64_t>(profile.size());
  const std::int64_t width = 2 * cfg.fourier_bands;
  Tensor<T> out({c, width});
  for (std::int64_t i = 0; i < c; ++i) {
    const double lambda = profile[static_cast<std::size_t>(i)];
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("wavelengths must be positive and finite");
    const double u = std::log10(lambda / 1000.0);
    for (int k = 0; k < cfg.fourier_bands; ++k) {
      out[i * width + k] = static_cast<T>(std::sin(freqs[k] * u));
      out[i * width + cfg.fourier_bands + k] = static_cast<T>(std::cos(freqs[k] * u));
    }
  }
  return out;
}

template <typename T>
struct GeneratedConvWeights {
  Var<T> kernel;  // stem [base, C, k, k]; head [C, base, k, k]
  Var<T> bias;    // stem [base]; head [C]
};

enum class ConvRole { Stem, Head };

/// Hypernetwork for one dynamic convolution.
template <typename T>
struct WeightGenerator {
  ConvRole role = ConvRole::Stem;
  HypernetConfig cfg;
  nn::Linear<T> embed_proj;  // 2F -> embed_dim
  nn::Linear<T> fc1;         // embed_dim -> hidden
  nn::Linear<T> fc2;         // hidden -> base * k * k
  nn::Linear<T> bias_fc;     // stem: embed_dim -> base; head: hidden -> 1

  WeightGenerator() = default;
  WeightGenerator(ConvRole role_, const HypernetConfig& c, Rng& rng) : role(role_), cfg(c) {
    cfg.validate();
    const std::int64_t kk = static_cast<std::int64_t>(c.kernel_size) * c.kernel_size;
    embed_proj = nn::Linear<T>(2 * c.fourier_bands, c.embed_dim, rng);
    fc1 = nn::Linear<T>(c.embed_dim, c.hidden_dim, rng);
    // Output scale roughly matches a fan-in initialized convolution.
    const double gain = role == ConvRole::Stem ? 1.0 : 1.0 / std::sqrt(static_cast<double>(c.base_channels));
    fc2 = nn::Linear<T>(c.hidden_dim, c.base_channels * kk, rng, gain);
    bias_fc = role == ConvRole::Stem ? nn::Linear<T>(c.embed_dim, c.base_channels, rng, 0.1)
                                     : nn::Linear<T>(c.hidden_dim, 1, rng, 0.1);
  }

  /// [C, embed_dim] wavelength embeddings.
  Var<T> embed(const data::WavelengthProfile& profile) const {
    return embed_proj(Var<T>(fourier_features<T>(profile, cfg)));
  }

  GeneratedConvWeights<T> generate(const data::WavelengthProfile& profile) const {
    const auto c = static_cast<std::int64_t>(profile.size());
    const std::int64_t k = cfg.kernel_size;
    const Var<T> e = embed(profile);
    const Var<T> hidden = ops::silu(fc1(e));
    const Var<T> slices = fc2(hidden);  // [C, base*k*k]
    GeneratedConvWeights<T> out;
    if (role == ConvRole::Stem) {
      // Input-channel slices; 1/sqrt(C) keeps the stem response comparable across C.
      Var<T> kernel = ops::transpose01(ops::reshape(slices, {c, cfg.base_channels, k * k}));
      kernel = ops::scale(kernel, static_cast<T>(1.0 / std::sqrt(static_cast<double>(c))));
      out.kernel = ops::reshape(kernel, {cfg.base_channels, c, k, k});
      out.bias = ops::reshape(bias_fc(ops::reshape(ops::mean_rows(e), {1, cfg.embed_dim})), {cfg.base_channels});
    } else {
      out.kernel = ops::reshape(slices, {c, cfg.base_channels, k, k});
      out.bias = ops::reshape(bias_fc(hidden), {c});
    }
    return out;
  }

  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    embed_proj.collect(out, prefix + ".embed_proj");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
    bias_fc.collect(out, prefix + ".bias_fc");
  }
};

template <typename T>
Var<T> embed_wavelengths(const data::WavelengthProfile& profile, const WeightGenerator<T>& generator) {
  return generator.embed(profile);
}

template <typename T>
GeneratedConvWeights<T> generate_stem_weights(const data::WavelengthProfile& profile,
                                              const WeightGenerator<T>& generator) {
  if (generator.role != ConvRole::Stem) throw ConfigError("generator is not a stem hypernetwork");
  return generator.generate(profile);
}

template <typename T>
GeneratedConvWeights<T> generate_head_weights(const data::WavelengthProfile& profile,
                                              const WeightGenerator<T>& generator) {
  if (generator.role != ConvRole::Head) throw ConfigError("generator is not a head hypernetwork");
  return generator.generate(profile);
}

}  // namespace eovae::vae
