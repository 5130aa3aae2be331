#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <set>

#include "eovae/data/normalize.hpp"
#include "eovae/diffusion/sampler.hpp"
#include "eovae/nn/optim.hpp"
#include "eovae/vae/checkpoint.hpp"

namespace eovae::diffusion {

enum class SRSpace { Latent, Pixel };

inline std::string_view to_string(SRSpace s) { return s == SRSpace::Latent ? "latent" : "pixel"; }

inline SRSpace parse_sr_space(std::string_view s) {
  if (s == "latent") return SRSpace::Latent;
  if (s == "pixel") return SRSpace::Pixel;
  throw ConfigError("unknown SR space '" + std::string(s) + "' (expected latent|pixel)");
}

struct SRConfig {
  int scale = 4;
  std::int64_t lr_size = 32;
  std::int64_t hr_size = 128;
  int sampler_steps = 50;
  std::uint64_t seed = 0;
  std::int64_t train_steps = 5000;
  std::int64_t batch_size = 8;
  double learning_rate = 2e-4;
  std::string unet_preset = "tiny";
  std::int64_t val_every = 500;  // 0 disables
  std::int64_t checkpoint_every = 1000;
  std::string out_dir = "runs/sr";
  VPSchedule schedule;

  void validate() const {
    if (scale < 1 || lr_size <= 0) throw ConfigError("scale and lr_size must be positive");
    if (hr_size != lr_size * scale)
      throw ConfigError("hr_size (" + std::to_string(hr_size) + ") must equal lr_size * scale (" +
                        std::to_string(lr_size * scale) + ")");
    if (sampler_steps < 1) throw ConfigError("sampler_steps must be >= 1");
    if (train_steps <= 0 || batch_size <= 0 || checkpoint_every <= 0 || val_every < 0)
      throw ConfigError("train_steps, batch_size and checkpoint_every must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    schedule.validate();
  }
};

inline nlohmann::json to_json(const SRConfig& c) {
  return {{"scale", c.scale},
          {"lr_size", c.lr_size},
          {"hr_size", c.hr_size},
          {"sampler_steps", c.sampler_steps},
          {"seed", c.seed},
          {"train_steps", c.train_steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"unet_preset", c.unet_preset},
          {"val_every", c.val_every},
          {"checkpoint_every", c.checkpoint_every},
          {"out_dir", c.out_dir},
          {"schedule",
           {{"beta_min", c.schedule.beta_min},
            {"beta_max", c.schedule.beta_max},
            {"t_min", c.schedule.t_min},
            {"t_max", c.schedule.t_max}}}};
}

inline SRConfig sr_config_from_json(const nlohmann::json& j, SRConfig c = {}) {
  if (!j.is_object()) throw ConfigError("SR config must be a JSON object");
  static const std::set<std::string> known{"scale",       "lr_size",   "hr_size",        "sampler_steps",
                                           "seed",        "train_steps", "batch_size",   "learning_rate",
                                           "unet_preset", "val_every", "checkpoint_every", "out_dir",
                                           "schedule"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown SR config key '" + k + "'");
  try {
    if (j.contains("scale")) c.scale = j["scale"].get<int>();
    if (j.contains("lr_size")) c.lr_size = j["lr_size"].get<std::int64_t>();
    if (j.contains("hr_size")) c.hr_size = j["hr_size"].get<std::int64_t>();
    if (j.contains("sampler_steps")) c.sampler_steps = j["sampler_steps"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("train_steps")) c.train_steps = j["train_steps"].get<std::int64_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::int64_t>();
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("unet_preset")) c.unet_preset = j["unet_preset"].get<std::string>();
    if (j.contains("val_every")) c.val_every = j["val_every"].get<std::int64_t>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j["checkpoint_every"].get<std::int64_t>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      c.schedule.beta_min = s.value("beta_min", c.schedule.beta_min);
      c.schedule.beta_max = s.value("beta_max", c.schedule.beta_max);
      c.schedule.t_min = s.value("t_min", c.schedule.t_min);
      c.schedule.t_max = s.value("t_max", c.schedule.t_max);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad SR config value: ") + e.what());
  }
  c.validate();
  return c;
}

/// RAW LR/HR tiles sharing a pair_id.
struct SRPair {
  std::string pair_id;
  data::MultispectralImage lr;
  data::MultispectralImage hr;
};

/// Pairs of `split`; the smaller tile of each pair is the LR one.
inline std::vector<SRPair> load_pairs(const data::DatasetManifest& manifest, data::Split split) {
  std::map<std::string, std::vector<const data::ManifestEntry*>> groups;
  for (const auto* e : manifest.select(std::nullopt, split)) {
    if (!e->pair_id) throw ManifestError("tile '" + e->tile_path + "' has no pair_id");
    groups[*e->pair_id].push_back(e);
  }
  std::vector<SRPair> out;
  for (const auto& [id, entries] : groups) {
    if (entries.size() != 2)
      throw ManifestError("pair '" + id + "' has " + std::to_string(entries.size()) + " tiles, expected 2");
    auto a = manifest.load(*entries[0]), b = manifest.load(*entries[1]);
    if (a.height() * a.width() > b.height() * b.width()) std::swap(a, b);
    if (a.wavelengths() != b.wavelengths()) throw ManifestError("pair '" + id + "' mixes wavelength profiles");
    out.push_back({id, std::move(a), std::move(b)});
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  if (x.rank() != 3) throw ShapeError("upsample_nearest expects [C, H, W]");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, h * factor, w * factor});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h * factor; ++y)
      for (std::int64_t xx = 0; xx < w * factor; ++xx) out.at(ch, y, xx) = x.at(ch, y / factor, xx / factor);
  return out;
}

/// Denoiser network plus everything needed to map RAW LR tiles to RAW HR tiles.
template <typename T>
struct SRModel {
  SRSpace space = SRSpace::Latent;
  SRConfig cfg;
  UNet<T> net;
  data::NormalizationStats stats;
  data::Modality modality = data::Modality::OTHER;
  data::WavelengthProfile profile;
  double latent_shift = 0.0;
  double latent_scale = 1.0;

  Denoiser<T> denoiser() const {
    PreconditionedDenoiser<T> d{&net, cfg.schedule, 1.0};
    return d;
  }

  /// Channels of the diffused variable.
  std::int64_t target_channels() const { return net.config().out_channels; }
};

namespace detail {

template <typename T>
void require_vae(const vae::VAEModel<T>* vae, SRSpace space) {
  if (space == SRSpace::Latent && vae == nullptr) throw ConfigError("latent SR needs a VAE");
}

// Conditioning for one LR tile, in the diffused variable's units.
template <typename T>
Tensor<T> conditioning(const SRModel<T>& m, const vae::VAEModel<T>* vae, const data::MultispectralImage& lr_raw) {
  if (lr_raw.height() != m.cfg.lr_size || lr_raw.width() != m.cfg.lr_size)
    throw ShapeError("LR tile is " + std::to_string(lr_raw.height()) + "x" + std::to_string(lr_raw.width()) +
                     ", config expects " + std::to_string(m.cfg.lr_size));
  const auto lr = data::normalize(lr_raw, m.stats);
  if (m.space == SRSpace::Pixel) return upsample_nearest(lr.pixels().template cast<T>(), m.cfg.scale);
  require_vae(vae, m.space);
  Tensor<T> z = upsample_nearest(vae->deterministic_encode(lr).mean, m.cfg.scale);
  for (auto& v : z.values()) v = static_cast<T>((v - m.latent_shift) / m.latent_scale);
  return z;
}

template <typename T>
Tensor<T> target(const SRModel<T>& m, const vae::VAEModel<T>* vae, const data::MultispectralImage& hr_raw) {
  if (hr_raw.height() != m.cfg.hr_size || hr_raw.width() != m.cfg.hr_size)
    throw ShapeError("HR tile is " + std::to_string(hr_raw.height()) + "x" + std::to_string(hr_raw.width()) +
                     ", config expects " + std::to_string(m.cfg.hr_size));
  const auto hr = data::normalize(hr_raw, m.stats);
  if (m.space == SRSpace::Pixel) return hr.pixels().template cast<T>();
  Tensor<T> z = vae->deterministic_encode(hr).mean;
  for (auto& v : z.values()) v = static_cast<T>((v - m.latent_shift) / m.latent_scale);
  return z;
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items, const std::vector<std::size_t>& idx) {
  Shape s{static_cast<std::int64_t>(idx.size())};
  s.insert(s.end(), items.front().shape().begin(), items.front().shape().end());
  Tensor<T> out(s);
  const auto per = items.front().size();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(items[idx[i]].data(), items[idx[i]].data() + per, out.data() + i * per);
  return out;
}

inline std::vector<std::size_t> draw(std::size_t n, std::int64_t batch, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const auto b = static_cast<std::size_t>(batch);
  if (b >= n) return idx;
  for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(b);
  return idx;
}

}  // namespace detail

/// Fresh model sized for `pairs` (latent statistics come from the HR latents).
template <typename T>
SRModel<T> make_sr_model(const std::vector<SRPair>& pairs, const data::NormalizationStats& stats,
                         const vae::VAEModel<T>* vae, const SRConfig& cfg, SRSpace space) {
  cfg.validate();
  detail::require_vae(vae, space);
  if (pairs.empty()) throw EmptyCorpusError("no SR pairs");
  SRModel<T> m;
  m.space = space;
  m.cfg = cfg;
  m.stats = stats;
  m.modality = pairs.front().hr.modality();
  m.profile = pairs.front().hr.wavelengths();
  std::int64_t ch = static_cast<std::int64_t>(m.profile.size());
  if (space == SRSpace::Latent) {
    const int f = vae->downsample_factor();
    if (cfg.lr_size % f != 0)
      throw ShapeError("lr_size " + std::to_string(cfg.lr_size) + " is not divisible by the VAE factor " +
                       std::to_string(f));
    ch = vae->latent_channels();
    double sum = 0.0, sq = 0.0, count = 0.0;
    for (const auto& p : pairs) {
      const auto z = detail::target(m, vae, p.hr);  // shift 0, scale 1 at this point
      for (T v : z.values()) {
        sum += v;
        sq += static_cast<double>(v) * v;
        count += 1.0;
      }
    }
    m.latent_shift = sum / count;
    m.latent_scale = std::max(std::sqrt(std::max(sq / count - m.latent_shift * m.latent_shift, 0.0)), 1e-6);
  }
  m.net = UNet<T>(UNetConfig::preset(cfg.unet_preset, 2 * ch, ch), cfg.seed);
  return m;
}

template <typename T>
void save_sr_model(const SRModel<T>& m, const std::filesystem::path& path, nn::CheckpointWriter w = nn::CheckpointWriter()) {
  w.meta()["kind"] = "sr";
  w.meta()["space"] = std::string(to_string(m.space));
  w.meta()["sr_config"] = to_json(m.cfg);
  w.meta()["unet"] = to_json(m.net.config());
  w.meta()["stats"] = data::to_json(m.stats);
  w.meta()["modality"] = std::string(data::to_string(m.modality));
  w.meta()["wavelengths"] = m.profile.centers();
  w.meta()["latent_shift"] = m.latent_shift;
  w.meta()["latent_scale"] = m.latent_scale;
  w.add_params(m.net.parameters(), "unet.");
  w.write(path);
}

template <typename T>
SRModel<T> sr_model_from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "sr") throw ConfigError("checkpoint does not hold an SR denoiser");
  SRModel<T> m;
  m.space = parse_sr_space(ck.meta.at("space").get<std::string>());
  m.cfg = sr_config_from_json(ck.meta.at("sr_config"));
  m.net = UNet<T>(unet_config_from_json(ck.meta.at("unet")), 0);
  ck.load_params(m.net.parameters(), "unet.");
  m.stats = data::stats_from_json(ck.meta.at("stats"));
  m.modality = data::parse_modality(ck.meta.at("modality").get<std::string>());
  m.profile = data::WavelengthProfile(ck.meta.at("wavelengths").get<std::vector<double>>());
  m.latent_shift = ck.meta.at("latent_shift").get<double>();
  m.latent_scale = ck.meta.at("latent_scale").get<double>();
  return m;
}

template <typename T>
SRModel<T> load_sr_model(const std::filesystem::path& path) {
  return sr_model_from_checkpoint<T>(nn::read_checkpoint(path));
}

struct SRTrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  double last_loss = 0.0;
  std::optional<double> last_val_loss;
};

/// Trains the denoiser on TRAIN pairs; the VAE (latent space only) stays frozen.
template <typename T>
SRTrainResult train_sr(const data::DatasetManifest& manifest, const vae::VAEModel<T>* vae, const SRConfig& cfg,
                       SRSpace space, SRModel<T>& model_out, Diagnostics* diag = nullptr) {
  namespace fs = std::filesystem;
  cfg.validate();
  detail::require_vae(vae, space);
  const auto pairs = load_pairs(manifest, data::Split::TRAIN);
  if (pairs.empty()) throw EmptyCorpusError("manifest has no TRAIN pairs");
  const auto val_pairs = cfg.val_every > 0 ? load_pairs(manifest, data::Split::VAL) : std::vector<SRPair>{};
  const auto modality = pairs.front().hr.modality();
  data::NormalizationStats stats;
  if (manifest.stats_by_modality.count(modality)) {
    stats = manifest.stats_for(modality);
  } else {
    warn(diag, "no stored normalization stats for " + std::string(data::to_string(modality)) +
                   "; computing them from the TRAIN tiles");
    stats = data::compute_stats(manifest, modality, diag);
  }

  SRModel<T> m = make_sr_model(pairs, stats, vae, cfg, space);
  std::vector<Tensor<T>> targets, conds, val_targets, val_conds;
  for (const auto& p : pairs) {
    targets.push_back(detail::target(m, vae, p.hr));
    conds.push_back(detail::conditioning(m, vae, p.lr));
  }
  for (const auto& p : val_pairs) {
    val_targets.push_back(detail::target(m, vae, p.hr));
    val_conds.push_back(detail::conditioning(m, vae, p.lr));
  }

  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  SRTrainResult result;
  const std::string tag = std::string(to_string(space));
  result.log = out_dir / ("sr_" + tag + "_log.jsonl");
  std::ofstream log(result.log, std::ios::trunc);
  if (!log) throw IoError("cannot open " + result.log.string());

  nn::AdamW<T> opt(m.net.parameters(), nn::CosineSchedule{cfg.learning_rate, 0.0, cfg.train_steps, 0});
  const auto denoise = m.denoiser();
  Rng rng(cfg.seed + 1);
  for (std::int64_t step = 1; step <= cfg.train_steps; ++step) {
    const auto idx = detail::draw(targets.size(), cfg.batch_size, rng);
    const Var<T> x0(detail::stack(targets, idx));
    const Var<T> c(detail::stack(conds, idx));
    const auto t = sample_times(x0.dim(0), cfg.schedule, rng);
    Var<T> loss = edm_loss<T>(denoise, x0, &c, t, cfg.schedule, rng);
    result.last_loss = static_cast<double>(loss.item());
    if (!std::isfinite(result.last_loss))
      throw DivergenceError("non-finite SR loss at step " + std::to_string(step),
                            result.checkpoint.empty() ? "" : result.checkpoint.string());
    loss.backward();
    opt.step();
    log << nlohmann::json{{"record", "TRAIN"}, {"step", step}, {"space", tag}, {"loss", result.last_loss}}.dump()
        << "\n";
    if (cfg.val_every > 0 && step % cfg.val_every == 0 && !val_targets.empty()) {
      NoGradGuard guard;
      Rng vrng(cfg.seed + 7);
      std::vector<std::size_t> all(val_targets.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const Var<T> vx(detail::stack(val_targets, all)), vc(detail::stack(val_conds, all));
      const auto vt = sample_times(vx.dim(0), cfg.schedule, vrng);
      result.last_val_loss = static_cast<double>(edm_loss<T>(denoise, vx, &vc, vt, cfg.schedule, vrng).item());
      log << nlohmann::json{{"record", "VAL"}, {"step", step}, {"space", tag}, {"loss", *result.last_val_loss}}.dump()
          << "\n";
    }
    if (step % cfg.checkpoint_every == 0 || step == cfg.train_steps) {
      result.checkpoint = out_dir / ("sr_" + tag + "_step" + std::to_string(step) + ".eock");
      save_sr_model(m, result.checkpoint);
    }
  }
  log.flush();
  const auto final_path = out_dir / ("sr_" + tag + "_final.eock");
  save_sr_model(m, final_path);
  result.checkpoint = final_path;
  model_out = std::move(m);
  return result;
}

/// Wall-clock split of one sr_sample call.
struct SRPhaseTimes {
  double encode_ms = 0.0;
  double sample_ms = 0.0;
  double decode_ms = 0.0;

  double total_ms() const { return encode_ms + sample_ms + decode_ms; }
};

/// RAW LR tile -> RAW HR tile of size lr * scale.
template <typename T>
data::MultispectralImage sr_sample(const SRModel<T>& m, const vae::VAEModel<T>* vae, const data::MultispectralImage& lr_raw,
                                   std::uint64_t seed, std::optional<int> steps = std::nullopt,
                                   SRPhaseTimes* phases = nullptr) {
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };
  detail::require_vae(vae, m.space);
  if (lr_raw.wavelengths() != m.profile) throw ShapeError("LR tile wavelengths do not match the SR model");
  const auto t0 = clock::now();
  const Tensor<T> cond = detail::conditioning(m, vae, lr_raw);
  Shape batch{1};
  batch.insert(batch.end(), cond.shape().begin(), cond.shape().end());
  const Tensor<T> c = cond.reshaped(batch);
  Shape target_shape{1, m.target_channels(), cond.dim(1), cond.dim(2)};
  const auto t1 = clock::now();
  Rng rng(seed);
  Tensor<T> x = ddim_sample<T>(m.denoiser(), target_shape, &c, steps.value_or(m.cfg.sampler_steps), rng, m.cfg.schedule);
  const auto t2 = clock::now();
  data::MultispectralImage out_norm;
  if (m.space == SRSpace::Latent) {
    for (auto& v : x.values()) v = static_cast<T>(v * m.latent_scale + m.latent_shift);
    out_norm = vae->decode(x.reshaped({x.dim(1), x.dim(2), x.dim(3)}), m.profile, m.modality);
  } else {
    out_norm = data::MultispectralImage(x.reshaped({x.dim(1), x.dim(2), x.dim(3)}).template cast<float>(), m.profile,
                                        m.modality, lr_raw.acquisition_date(), data::ValueSpace::NORMALIZED);
  }
  auto out = data::denormalize(out_norm, m.stats);
  if (phases != nullptr) *phases = {ms(t0, t1), ms(t1, t2), ms(t2, clock::now())};
  return out;
}

/// Per-step FLOPs of the denoiser core on this model's diffused resolution.
template <typename T>
double denoiser_flops(const SRModel<T>& m, const vae::VAEModel<T>* vae) {
  std::int64_t side = m.cfg.hr_size;
  if (m.space == SRSpace::Latent) {
    detail::require_vae(vae, m.space);
    side /= vae->downsample_factor();
  }
  return m.net.flops(side, side);
}

}  // namespace eovae::diffusion
