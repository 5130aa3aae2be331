#pragma once

#include <optional>

#include "eovae/vae/hypernet.hpp"

namespace eovae::vae {

struct VAEConfig {
  int downsample_factor = 8;
  std::int64_t latent_channels = 16;
  std::vector<std::int64_t> widths{128, 256, 512, 512};
  int blocks_per_stage = 2;
  double kl_weight = 1e-6;
  int norm_groups = 32;

  void validate() const {
    if (widths.empty()) throw ConfigError("VAE widths must be nonempty");
    for (auto w : widths)
      if (w < 1) throw ConfigError("VAE widths must be positive");
    if (downsample_factor != (1 << (widths.size() - 1)))
      throw ConfigError("downsample_factor must equal 2^(number of stages - 1)");
    if (latent_channels < 1 || blocks_per_stage < 1 || norm_groups < 1) throw ConfigError("invalid VAE config");
    if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be >= 0");
  }
};

inline nlohmann::json to_json(const VAEConfig& c) {
  return {{"downsample_factor", c.downsample_factor}, {"latent_channels", c.latent_channels},
          {"widths", c.widths},  {"blocks_per_stage", c.blocks_per_stage},
          {"kl_weight", c.kl_weight}, {"norm_groups", c.norm_groups}};
}

inline VAEConfig vae_config_from_json(const nlohmann::json& j) {
  VAEConfig c;
  c.downsample_factor = j.value("downsample_factor", c.downsample_factor);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.widths = j.value("widths", c.widths);
  c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
  c.kl_weight = j.value("kl_weight", c.kl_weight);
  c.norm_groups = j.value("norm_groups", c.norm_groups);
  c.validate();
  return c;
}

struct ModelConfig {
  VAEConfig vae;
  HypernetConfig hypernet;

  /// Desk-scale preset: base 32, f 8, latent 16.
  static ModelConfig tiny() {
    ModelConfig m;
    m.vae.widths = {32, 32, 64, 64};
    m.vae.blocks_per_stage = 1;
    m.vae.norm_groups = 8;
    m.hypernet.base_channels = 32;
    return m;
  }

  static ModelConfig standard() {
    ModelConfig m;
    m.hypernet.base_channels = m.vae.widths.front();
    return m;
  }

  static ModelConfig preset(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "standard" || name == "default") return standard();
    throw ConfigError("unknown model preset '" + name + "'");
  }

  void validate() const {
    vae.validate();
    hypernet.validate();
    if (hypernet.base_channels != vae.widths.front())
      throw ConfigError("hypernet base_channels must equal the first backbone width");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) { return {{"vae", to_json(c.vae)}, {"hypernet", to_json(c.hypernet)}}; }

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vae = vae_config_from_json(j.at("vae"));
  c.hypernet = hypernet_config_from_json(j.at("hypernet"));
  c.validate();
  return c;
}

/// Posterior of one image: mean and log-variance [latent, H/f, W/f].
template <typename T>
struct LatentCode {
  Tensor<T> mean;
  Tensor<T> log_variance;
  std::optional<Tensor<T>> sample;
};

enum class ReconstructMode { Sample, Mean };

template <typename T>
struct Posterior {
  Var<T> mean;
  Var<T> log_variance;
};

/// Mean KL(N(mu, sigma^2) || N(0, 1)) per latent element.
template <typename T>
Var<T> kl_loss(const Posterior<T>& p) {
  using namespace ops;
  const Var<T> terms = sub(add(square(p.mean), exp(p.log_variance)), add_scalar(p.log_variance, T{1}));
  return scale(mean(terms), T{0.5});
}

template <typename T>
double kl_divergence(const LatentCode<T>& z) {
  z.mean.check_same_shape(z.log_variance, "kl_divergence");
  double acc = 0.0;
  for (std::size_t i = 0; i < z.mean.size(); ++i) {
    const double mu = z.mean[i], lv = z.log_variance[i];
    acc += mu * mu + std::exp(lv) - 1.0 - lv;
  }
  return 0.5 * acc / static_cast<double>(z.mean.size());
}

/// Stacks same-shaped images into an [N, C, H, W] tensor.
template <typename T>
Tensor<T> to_batch(const std::vector<data::MultispectralImage>& images) {
  if (images.empty()) throw ShapeError("to_batch: empty batch");
  const auto& first = images.front();
  const std::int64_t c = first.channels(), h = first.height(), w = first.width();
  Tensor<T> out({static_cast<std::int64_t>(images.size()), c, h, w});
  const auto per = static_cast<std::size_t>(c * h * w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& px = images[i].pixels();
    if (px.shape() != first.pixels().shape()) throw ShapeError("to_batch: images differ in shape");
    for (std::size_t k = 0; k < per; ++k) out[i * per + k] = static_cast<T>(px[k]);
  }
  return out;
}

/// Channel-flexible convolutional VAE whose first and last convolutions are
/// generated from the channel wavelengths.
template <typename T>
class VAEModel {
 public:
  VAEModel() = default;
  VAEModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const auto& v = cfg_.vae;
    const int g = v.norm_groups;
    const auto stages = v.widths.size();
    stem_ = WeightGenerator<T>(ConvRole::Stem, cfg_.hypernet, rng);
    std::int64_t ch = v.widths.front();
    for (std::size_t s = 0; s < stages; ++s) {
      for (int b = 0; b < v.blocks_per_stage; ++b) {
        enc_blocks_.emplace_back(ch, v.widths[s], g, rng);
        ch = v.widths[s];
      }
      if (s + 1 < stages) enc_down_.emplace_back(ch, ch, 3, rng, 2);
    }
    enc_mid_ = nn::ResBlock<T>(ch, ch, g, rng);
    enc_norm_ = nn::GroupNorm<T>(ch, g);
    enc_out_ = nn::Conv2d<T>(ch, 2 * v.latent_channels, 3, rng);

    dec_in_ = nn::Conv2d<T>(v.latent_channels, ch, 3, rng);
    dec_mid_ = nn::ResBlock<T>(ch, ch, g, rng);
    for (std::size_t s = stages; s-- > 0;) {
      for (int b = 0; b < v.blocks_per_stage; ++b) {
        dec_blocks_.emplace_back(ch, v.widths[s], g, rng);
        ch = v.widths[s];
      }
      if (s > 0) dec_up_.emplace_back(ch, ch, 3, rng);
    }
    dec_norm_ = nn::GroupNorm<T>(ch, g);
    head_ = WeightGenerator<T>(ConvRole::Head, cfg_.hypernet, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  int downsample_factor() const { return cfg_.vae.downsample_factor; }
  std::int64_t latent_channels() const { return cfg_.vae.latent_channels; }
  const WeightGenerator<T>& stem_generator() const { return stem_; }
  const WeightGenerator<T>& head_generator() const { return head_; }

  /// Posterior moments for an [N, C, H, W] batch.
  Posterior<T> encode_batch(const Var<T>& x, const data::WavelengthProfile& profile) const {
    check_input(x.shape(), profile);
    const int pad = cfg_.hypernet.kernel_size / 2;
    const auto w = stem_.generate(profile);
    Var<T> h = ops::conv2d(x, w.kernel, w.bias, 1, pad);
    const auto stages = cfg_.vae.widths.size();
    std::size_t bi = 0;
    for (std::size_t s = 0; s < stages; ++s) {
      for (int b = 0; b < cfg_.vae.blocks_per_stage; ++b) h = enc_blocks_[bi++](h);
      if (s + 1 < stages) h = enc_down_[s](h);
    }
    h = enc_mid_(h);
    const Var<T> moments = enc_out_(ops::silu(enc_norm_(h)));
    const auto l = cfg_.vae.latent_channels;
    return {ops::slice_channels(moments, 0, l),
            ops::clamp(ops::slice_channels(moments, l, l), T{-30}, T{20})};
  }

  /// mean + exp(logvar / 2) * eps with eps drawn from rng.
  Var<T> sample_latent(const Posterior<T>& p, Rng& rng) const {
    const Var<T> eps(rng.normal_tensor<T>(p.mean.shape()));
    return ops::add(p.mean, ops::mul(ops::exp(ops::scale(p.log_variance, T{0.5})), eps));
  }

  /// [N, latent, h, w] -> [N, C, h*f, w*f] for the given profile.
  Var<T> decode_batch(const Var<T>& z, const data::WavelengthProfile& profile) const {
    if (z.value().rank() != 4 || z.dim(1) != cfg_.vae.latent_channels)
      throw ShapeError("decode expects [N, " + std::to_string(cfg_.vae.latent_channels) + ", h, w], got " +
                       shape_str(z.shape()));
    if (profile.size() == 0) throw ShapeError("decode needs at least one wavelength");
    Var<T> h = dec_mid_(dec_in_(z));
    const auto stages = cfg_.vae.widths.size();
    std::size_t bi = 0, ui = 0;
    for (std::size_t s = stages; s-- > 0;) {
      for (int b = 0; b < cfg_.vae.blocks_per_stage; ++b) h = dec_blocks_[bi++](h);
      if (s > 0) h = dec_up_[ui++](ops::upsample_nearest(h, 2));
    }
    h = ops::silu(dec_norm_(h));
    const auto w = head_.generate(profile);
    return ops::conv2d(h, w.kernel, w.bias, 1, cfg_.hypernet.kernel_size / 2);
  }

  struct Forward {
    Var<T> reconstruction;
    Posterior<T> posterior;
  };

  Forward forward(const Var<T>& x, const data::WavelengthProfile& profile, ReconstructMode mode, Rng* rng) const {
    auto post = encode_batch(x, profile);
    Var<T> z = post.mean;
    if (mode == ReconstructMode::Sample) {
      if (rng == nullptr) throw ConfigError("sample-mode reconstruction needs an rng");
      z = sample_latent(post, *rng);
    }
    return {decode_batch(z, profile), post};
  }

  LatentCode<T> encode(const data::MultispectralImage& x, Rng& rng) const {
    auto code = deterministic_encode(x);
    NoGradGuard guard;
    Posterior<T> p{Var<T>(batch_of(code.mean)), Var<T>(batch_of(code.log_variance))};
    code.sample = sample_latent(p, rng).value().reshaped(code.mean.shape());
    return code;
  }

  /// Posterior mean only; no randomness.
  LatentCode<T> deterministic_encode(const data::MultispectralImage& x) const {
    require_normalized(x);
    NoGradGuard guard;
    const auto p = encode_batch(Var<T>(to_batch<T>({x})), x.wavelengths());
    const Shape s{p.mean.dim(1), p.mean.dim(2), p.mean.dim(3)};
    return {p.mean.value().reshaped(s), p.log_variance.value().reshaped(s), std::nullopt};
  }

  /// Decodes a [latent, h, w] code into a NORMALIZED image.
  data::MultispectralImage decode(const Tensor<T>& z, const data::WavelengthProfile& profile,
                                  data::Modality modality = data::Modality::OTHER) const {
    if (z.rank() != 3) throw ShapeError("decode expects a [latent, h, w] code");
    NoGradGuard guard;
    const auto out = decode_batch(Var<T>(batch_of(z)), profile).value();
    return data::MultispectralImage(out.reshaped({out.dim(1), out.dim(2), out.dim(3)}).template cast<float>(),
                                    profile, modality, std::nullopt, data::ValueSpace::NORMALIZED);
  }

  data::MultispectralImage decode(const LatentCode<T>& z, const data::WavelengthProfile& profile,
                                  data::Modality modality = data::Modality::OTHER) const {
    return decode(z.sample ? *z.sample : z.mean, profile, modality);
  }

  data::MultispectralImage reconstruct(const data::MultispectralImage& x, ReconstructMode mode,
                                       Rng* rng = nullptr) const {
    if (mode == ReconstructMode::Sample) {
      if (rng == nullptr) throw ConfigError("sample-mode reconstruction needs an rng");
      return with_metadata(decode(encode(x, *rng), x.wavelengths(), x.modality()), x);
    }
    return with_metadata(decode(deterministic_encode(x), x.wavelengths(), x.modality()), x);
  }

  nn::ParamList<T> parameters() const {
    nn::ParamList<T> out;
    hypernet_parameters(out);
    backbone_parameters(out);
    return out;
  }

  /// Only the stem/head weight generators.
  nn::ParamList<T> hypernet_parameters() const {
    nn::ParamList<T> out;
    hypernet_parameters(out);
    return out;
  }

  nn::ParamList<T> backbone_parameters() const {
    nn::ParamList<T> out;
    backbone_parameters(out);
    return out;
  }

  std::int64_t parameter_count() const { return nn::count_parameters(parameters()); }

 private:
  void hypernet_parameters(nn::ParamList<T>& out) const {
    stem_.collect(out, "hyper.stem");
    head_.collect(out, "hyper.head");
  }

  void backbone_parameters(nn::ParamList<T>& out) const {
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i) enc_blocks_[i].collect(out, "enc.block" + std::to_string(i));
    for (std::size_t i = 0; i < enc_down_.size(); ++i) enc_down_[i].collect(out, "enc.down" + std::to_string(i));
    enc_mid_.collect(out, "enc.mid");
    enc_norm_.collect(out, "enc.norm_out");
    enc_out_.collect(out, "enc.conv_out");
    dec_in_.collect(out, "dec.conv_in");
    dec_mid_.collect(out, "dec.mid");
    for (std::size_t i = 0; i < dec_blocks_.size(); ++i) dec_blocks_[i].collect(out, "dec.block" + std::to_string(i));
    for (std::size_t i = 0; i < dec_up_.size(); ++i) dec_up_[i].collect(out, "dec.up" + std::to_string(i));
    dec_norm_.collect(out, "dec.norm_out");
  }

  void check_input(const Shape& s, const data::WavelengthProfile& profile) const {
    if (s.size() != 4) throw ShapeError("encode expects [N, C, H, W], got " + shape_str(s));
    if (s[1] != static_cast<std::int64_t>(profile.size()))
      throw ShapeError("input has " + std::to_string(s[1]) + " channels but profile has " +
                       std::to_string(profile.size()));
    const int f = cfg_.vae.downsample_factor;
    if (s[2] % f != 0 || s[3] % f != 0)
      throw ShapeError("spatial size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                       " is not divisible by f=" + std::to_string(f));
  }

  static void require_normalized(const data::MultispectralImage& x) {
    if (x.value_space() != data::ValueSpace::NORMALIZED) throw StateError("the VAE expects NORMALIZED images");
  }

  static Tensor<T> batch_of(const Tensor<T>& t) {
    Shape s{1};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    return t.reshaped(s);
  }

  static data::MultispectralImage with_metadata(const data::MultispectralImage& out,
                                                const data::MultispectralImage& like) {
    return data::MultispectralImage(out.pixels(), like.wavelengths(), like.modality(), like.acquisition_date(),
                                    data::ValueSpace::NORMALIZED);
  }

  ModelConfig cfg_;
  WeightGenerator<T> stem_, head_;
  std::vector<nn::ResBlock<T>> enc_blocks_, dec_blocks_;
  std::vector<nn::Conv2d<T>> enc_down_, dec_up_;
  nn::ResBlock<T> enc_mid_, dec_mid_;
  nn::GroupNorm<T> enc_norm_, dec_norm_;
  nn::Conv2d<T> enc_out_, dec_in_;
};

}  // namespace eovae::vae
