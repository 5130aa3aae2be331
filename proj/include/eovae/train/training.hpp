#pragma once

#include <fstream>
#include <set>

#include "eovae/data/normalize.hpp"
#include "eovae/metrics/report.hpp"
#include "eovae/nn/optim.hpp"
#include "eovae/train/losses.hpp"
#include "eovae/vae/checkpoint.hpp"

namespace eovae::train {

enum class Stage { DISTILL, FINETUNE };

inline std::string_view to_string(Stage s) { return s == Stage::DISTILL ? "DISTILL" : "FINETUNE"; }

inline Stage parse_stage(std::string_view s) {
  if (s == "DISTILL" || s == "distill") return Stage::DISTILL;
  if (s == "FINETUNE" || s == "finetune") return Stage::FINETUNE;
  throw ConfigError("unknown training stage '" + std::string(s) + "' (expected DISTILL|FINETUNE)");
}

struct TrainConfig {
  Stage stage = Stage::FINETUNE;
  std::optional<double> learning_rate;  // 1e-3 for DISTILL, 1e-4 for FINETUNE when unset
  std::int64_t steps = 1000;
  std::int64_t batch_size = 4;
  LossWeights loss;
  std::optional<double> kl_weight;  // falls back to the model config
  std::uint64_t seed = 0;
  std::uint64_t teacher_seed = 1234;
  std::int64_t checkpoint_every = 500;
  std::int64_t val_every = 250;  // 0 disables validation
  std::int64_t warmup_steps = 0;
  double weight_decay = 0.0;
  bool requires_distill = true;
  std::vector<data::Modality> modalities;  // empty: every modality with TRAIN tiles
  std::string out_dir = "runs/train";
  std::optional<std::string> init_checkpoint;
  std::optional<std::string> resume_from;

  double lr() const { return learning_rate.value_or(stage == Stage::DISTILL ? 1e-3 : 1e-4); }

  void validate() const {
    if (steps <= 0) throw ConfigError("steps must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (checkpoint_every <= 0) throw ConfigError("checkpoint_every must be positive");
    if (val_every < 0 || warmup_steps < 0) throw ConfigError("val_every and warmup_steps must be >= 0");
    if (!(lr() > 0.0)) throw ConfigError("learning rate must be positive");
    if (loss.w_char < 0.0 || loss.w_msssim < 0.0 || !(loss.w_char + loss.w_msssim > 0.0))
      throw ConfigError("loss weights must be >= 0 and not both zero");
    if (!(loss.charbonnier_eps >= 0.0)) throw ConfigError("charbonnier_eps must be >= 0");
    if (kl_weight && *kl_weight < 0.0) throw ConfigError("kl_weight must be >= 0");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json mods = nlohmann::json::array();
  for (auto m : c.modalities) mods.push_back(std::string(data::to_string(m)));
  nlohmann::json j = {{"stage", std::string(to_string(c.stage))},
                      {"learning_rate", c.lr()},
                      {"steps", c.steps},
                      {"batch_size", c.batch_size},
                      {"w_char", c.loss.w_char},
                      {"w_msssim", c.loss.w_msssim},
                      {"charbonnier_eps", c.loss.charbonnier_eps},
                      {"seed", c.seed},
                      {"teacher_seed", c.teacher_seed},
                      {"checkpoint_every", c.checkpoint_every},
                      {"val_every", c.val_every},
                      {"warmup_steps", c.warmup_steps},
                      {"weight_decay", c.weight_decay},
                      {"requires_distill", c.requires_distill},
                      {"modalities", mods},
                      {"out_dir", c.out_dir}};
  if (c.kl_weight) j["kl_weight"] = *c.kl_weight;
  if (c.init_checkpoint) j["init_checkpoint"] = *c.init_checkpoint;
  if (c.resume_from) j["resume_from"] = *c.resume_from;
  return j;
}

/// Unknown keys are rejected so typos do not silently fall back to defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const std::set<std::string> known{"stage",          "learning_rate", "steps",        "batch_size",
                                           "w_char",         "w_msssim",      "charbonnier_eps", "kl_weight",
                                           "seed",           "teacher_seed",  "checkpoint_every", "val_every",
                                           "warmup_steps",   "weight_decay",  "requires_distill", "modalities",
                                           "out_dir",        "init_checkpoint", "resume_from"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown training config key '" + k + "'");
  try {
    if (j.contains("stage")) c.stage = parse_stage(j["stage"].get<std::string>());
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("steps")) c.steps = j["steps"].get<std::int64_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::int64_t>();
    if (j.contains("w_char")) c.loss.w_char = j["w_char"].get<double>();
    if (j.contains("w_msssim")) c.loss.w_msssim = j["w_msssim"].get<double>();
    if (j.contains("charbonnier_eps")) c.loss.charbonnier_eps = j["charbonnier_eps"].get<double>();
    if (j.contains("kl_weight")) c.kl_weight = j["kl_weight"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("teacher_seed")) c.teacher_seed = j["teacher_seed"].get<std::uint64_t>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j["checkpoint_every"].get<std::int64_t>();
    if (j.contains("val_every")) c.val_every = j["val_every"].get<std::int64_t>();
    if (j.contains("warmup_steps")) c.warmup_steps = j["warmup_steps"].get<std::int64_t>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("requires_distill")) c.requires_distill = j["requires_distill"].get<bool>();
    if (j.contains("modalities")) {
      c.modalities.clear();
      for (const auto& m : j["modalities"]) c.modalities.push_back(data::parse_modality(m.get<std::string>()));
    }
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("init_checkpoint")) c.init_checkpoint = j["init_checkpoint"].get<std::string>();
    if (j.contains("resume_from")) c.resume_from = j["resume_from"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config value: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Stage 1: weight distillation

/// Frozen RGB stem/head weights the hypernetworks are distilled towards.
template <typename T>
struct TeacherConvWeights {
  Tensor<T> stem_kernel;  // [base, C, k, k]
  Tensor<T> stem_bias;    // [base]
  Tensor<T> head_kernel;  // [C, base, k, k]
  Tensor<T> head_bias;    // [C]
  bool frozen = true;

  std::int64_t channels() const { return stem_kernel.dim(1); }

  /// Fan-in uniform init, like a freshly constructed convolution.
  static TeacherConvWeights random(const vae::HypernetConfig& cfg, std::uint64_t seed, std::int64_t channels = 3) {
    cfg.validate();
    Rng rng(seed);
    const std::int64_t k = cfg.kernel_size, base = cfg.base_channels;
    const T stem_bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels * k * k)));
    const T head_bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(base * k * k)));
    TeacherConvWeights t;
    t.stem_kernel = rng.uniform_tensor<T>({base, channels, k, k}, -stem_bound, stem_bound);
    t.stem_bias = rng.uniform_tensor<T>({base}, -stem_bound, stem_bound);
    t.head_kernel = rng.uniform_tensor<T>({channels, base, k, k}, -head_bound, head_bound);
    t.head_bias = rng.uniform_tensor<T>({channels}, -head_bound, head_bound);
    return t;
  }

  /// Snapshot of what a model currently generates for `profile`.
  static TeacherConvWeights from_model(const vae::VAEModel<T>& model, const data::WavelengthProfile& profile) {
    NoGradGuard guard;
    const auto stem = model.stem_generator().generate(profile);
    const auto head = model.head_generator().generate(profile);
    return {stem.kernel.value(), stem.bias.value(), head.kernel.value(), head.bias.value(), true};
  }

  void check(const vae::HypernetConfig& cfg, std::size_t profile_channels) const {
    const std::int64_t k = cfg.kernel_size, base = cfg.base_channels;
    const auto c = static_cast<std::int64_t>(profile_channels);
    if (stem_kernel.shape() != Shape{base, c, k, k} || stem_bias.shape() != Shape{base} ||
        head_kernel.shape() != Shape{c, base, k, k} || head_bias.shape() != Shape{c})
      throw ShapeError("teacher weights " + shape_str(stem_kernel.shape()) + "/" + shape_str(head_kernel.shape()) +
                       " do not match base_channels=" + std::to_string(base) + ", kernel_size=" +
                       std::to_string(k) + ", channels=" + std::to_string(c));
  }

  double squared_norm() const {
    double acc = 0.0;
    for (const auto* t : {&stem_kernel, &stem_bias, &head_kernel, &head_bias})
      for (T v : t->values()) acc += static_cast<double>(v) * v;
    return acc;
  }

  void add_to(nn::CheckpointWriter& w) const {
    w.add("teacher.stem.kernel", stem_kernel);
    w.add("teacher.stem.bias", stem_bias);
    w.add("teacher.head.kernel", head_kernel);
    w.add("teacher.head.bias", head_bias);
  }

  static TeacherConvWeights from_checkpoint(const nn::Checkpoint& ck) {
    return {ck.at("teacher.stem.kernel").as<T>(), ck.at("teacher.stem.bias").as<T>(),
            ck.at("teacher.head.kernel").as<T>(), ck.at("teacher.head.bias").as<T>(), true};
  }
};

/// Sum of the Frobenius norms of the four teacher-student differences.
template <typename T>
Var<T> distill_loss(const TeacherConvWeights<T>& teacher, const vae::VAEModel<T>& model,
                    const data::WavelengthProfile& rgb_profile) {
  if (rgb_profile.size() != 3 || teacher.channels() != 3)
    throw ShapeError("distillation expects a 3-channel RGB profile and teacher, got " +
                     std::to_string(rgb_profile.size()) + " and " + std::to_string(teacher.channels()));
  teacher.check(model.config().hypernet, rgb_profile.size());
  const auto stem = model.stem_generator().generate(rgb_profile);
  const auto head = model.head_generator().generate(rgb_profile);
  auto diff = [](const Tensor<T>& t, const Var<T>& s) { return ops::frobenius_norm(ops::sub(Var<T>(t), s)); };
  return ops::add(ops::add(diff(teacher.stem_kernel, stem.kernel), diff(teacher.stem_bias, stem.bias)),
                  ops::add(diff(teacher.head_kernel, head.kernel), diff(teacher.head_bias, head.bias)));
}

/// ||W_T - W_S|| / ||W_T|| over all four tensors stacked.
template <typename T>
double relative_distill_error(const TeacherConvWeights<T>& teacher, const vae::VAEModel<T>& model,
                              const data::WavelengthProfile& rgb_profile) {
  const auto student = TeacherConvWeights<T>::from_model(model, rgb_profile);
  teacher.check(model.config().hypernet, rgb_profile.size());
  double num = 0.0;
  auto acc = [&](const Tensor<T>& a, const Tensor<T>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      num += d * d;
    }
  };
  acc(teacher.stem_kernel, student.stem_kernel);
  acc(teacher.stem_bias, student.stem_bias);
  acc(teacher.head_kernel, student.head_kernel);
  acc(teacher.head_bias, student.head_bias);
  return std::sqrt(num / teacher.squared_norm());
}

/// One optimizer step on the hypernetworks; `opt` should hold hypernet parameters only.
template <typename T>
double distill_step(const TeacherConvWeights<T>& teacher, const vae::VAEModel<T>& model,
                    const data::WavelengthProfile& rgb_profile, nn::AdamW<T>& opt) {
  Var<T> loss = distill_loss(teacher, model, rgb_profile);
  const double value = static_cast<double>(loss.item());
  loss.backward();
  opt.step();
  return value;
}

// ---------------------------------------------------------------------------
// Stage 2: finetuning

struct LossBreakdown {
  double charbonnier = 0.0;
  double ms_ssim = 0.0;  // 1 - MS-SSIM
  double kl = 0.0;
  double total = 0.0;
};

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"charbonnier", l.charbonnier}, {"ms_ssim", l.ms_ssim}, {"kl", l.kl}, {"total", l.total}};
}

template <typename T>
struct FinetuneLoss {
  Var<T> total;
  LossBreakdown parts;
};

template <typename T>
double effective_kl_weight(const TrainConfig& cfg, const vae::VAEModel<T>& model) {
  return cfg.kl_weight.value_or(model.config().vae.kl_weight);
}

/// Reconstruction loss plus weighted KL for an [N, C, H, W] batch.
template <typename T>
FinetuneLoss<T> finetune_loss(const vae::VAEModel<T>& model, const Var<T>& x, const data::WavelengthProfile& profile,
                              const TrainConfig& cfg, Rng& rng, Diagnostics* diag = nullptr) {
  const auto fwd = model.forward(x, profile, vae::ReconstructMode::Sample, &rng);
  const auto rec = reconstruction_loss(x, fwd.reconstruction, cfg.loss, diag);
  FinetuneLoss<T> out;
  out.total = rec.total;
  out.parts.charbonnier = rec.charbonnier;
  out.parts.ms_ssim = 1.0 - rec.ms_ssim;
  const double klw = effective_kl_weight(cfg, model);
  const Var<T> kl = vae::kl_loss(fwd.posterior);
  out.parts.kl = static_cast<double>(kl.item());
  if (klw != 0.0) out.total = ops::add(out.total, ops::scale(kl, static_cast<T>(klw)));
  out.parts.total = static_cast<double>(out.total.item());
  return out;
}

template <typename T>
Tensor<T> batch_tensor(const std::vector<data::MultispectralImage>& batch) {
  if (batch.empty()) throw ShapeError("empty training batch");
  for (const auto& img : batch) {
    if (img.value_space() != data::ValueSpace::NORMALIZED) throw StateError("training expects NORMALIZED images");
    if (img.wavelengths() != batch.front().wavelengths())
      throw ShapeError("all images in a batch must share one wavelength profile");
  }
  return vae::to_batch<T>(batch);
}

/// One optimizer step on every parameter `opt` holds.
template <typename T>
LossBreakdown finetune_step(const std::vector<data::MultispectralImage>& batch, const vae::VAEModel<T>& model,
                            const TrainConfig& cfg, nn::AdamW<T>& opt, Rng& rng, Diagnostics* diag = nullptr,
                            const std::string& last_good_checkpoint = "") {
  const Var<T> x(batch_tensor<T>(batch));
  auto loss = finetune_loss(model, x, batch.front().wavelengths(), cfg, rng, diag);
  if (!std::isfinite(loss.parts.total))
    throw DivergenceError("non-finite training loss (" + std::to_string(loss.parts.total) + ")",
                          last_good_checkpoint);
  loss.total.backward();
  opt.step();
  return loss.parts;
}

// ---------------------------------------------------------------------------
// Driver

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::int64_t last_step = 0;
  LossBreakdown last_losses;
  double last_distill_loss = 0.0;
};

namespace detail {

struct Source {
  data::Modality modality;
  std::vector<data::MultispectralImage> images;  // NORMALIZED
};

inline std::vector<Source> training_sources(const data::DatasetManifest& manifest, const TrainConfig& cfg) {
  std::vector<data::Modality> mods = cfg.modalities;
  const bool explicit_mods = !mods.empty();
  if (!explicit_mods)
    for (auto m : {data::Modality::S2L2A, data::Modality::S1RTC, data::Modality::RGBN, data::Modality::RGB,
                   data::Modality::OTHER})
      if (!manifest.select(m, data::Split::TRAIN).empty()) mods.push_back(m);
  std::vector<Source> out;
  for (auto m : mods) {
    const auto tiles = manifest.select(m, data::Split::TRAIN);
    if (tiles.empty())
      throw EmptyCorpusError("no TRAIN tiles for " + std::string(data::to_string(m)));
    if (cfg.val_every > 0 && manifest.select(m, data::Split::VAL).empty())
      throw EmptyCorpusError("no VAL tiles for " + std::string(data::to_string(m)) +
                             " (set val_every=0 to train without validation)");
    const auto& stats = manifest.stats_for(m);
    Source s{m, {}};
    for (const auto* e : tiles) s.images.push_back(data::normalize(manifest.load(*e), stats));
    out.push_back(std::move(s));
  }
  if (out.empty()) throw EmptyCorpusError("manifest has no TRAIN tiles");
  return out;
}

// Whole set when it fits, else a partial Fisher-Yates draw.
inline std::vector<std::size_t> draw_batch(std::size_t n, std::int64_t batch, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const auto b = static_cast<std::size_t>(batch);
  if (b >= n) return idx;
  for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(b);
  return idx;
}

}  // namespace detail

/// Runs one stage. DISTILL needs no data; FINETUNE round-robins over the
/// TRAIN tiles of each modality, logging JSON lines and writing checkpoints.
template <typename T>
TrainResult run_training(const data::DatasetManifest& manifest, const TrainConfig& cfg, vae::VAEModel<T>& model,
                         Diagnostics* diag = nullptr) {
  namespace fs = std::filesystem;
  cfg.validate();
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  TrainResult result;
  result.log = out_dir / "train_log.jsonl";

  Rng rng(cfg.seed);
  std::int64_t start = 0;
  bool distilled = false;
  std::optional<nn::Checkpoint> resume;
  if (cfg.resume_from) {
    resume = nn::read_checkpoint(*cfg.resume_from);
    const auto& tm = resume->meta.at("train");
    if (parse_stage(tm.at("stage").get<std::string>()) != cfg.stage)
      throw ConfigError("cannot resume a " + tm.at("stage").get<std::string>() + " checkpoint as " +
                        std::string(to_string(cfg.stage)));
    resume->load_params(model.parameters());
    start = tm.at("step").get<std::int64_t>();
    rng.set_state(tm.at("rng").get<std::string>());
    distilled = tm.value("distilled", false);
  } else if (cfg.init_checkpoint) {
    const auto ck = nn::read_checkpoint(*cfg.init_checkpoint);
    ck.load_params(model.parameters());
    distilled = ck.meta.contains("train") && ck.meta["train"].value("distilled", false);
  }
  if (cfg.stage == Stage::FINETUNE && cfg.requires_distill && !distilled)
    throw ConfigError("FINETUNE requires a distilled checkpoint as init_checkpoint (run the DISTILL stage first, or "
                      "set requires_distill=false)");

  const auto params = cfg.stage == Stage::DISTILL ? model.hypernet_parameters() : model.parameters();
  nn::AdamW<T> opt(params, nn::CosineSchedule{cfg.lr(), 0.0, cfg.steps, cfg.warmup_steps},
                   typename nn::AdamW<T>::Options{0.9, 0.999, 1e-8, cfg.weight_decay});
  if (resume) resume->load_optimizer(opt);

  std::optional<TeacherConvWeights<T>> teacher;
  std::vector<detail::Source> sources;
  const auto rgb = data::rgb_wavelengths();
  if (cfg.stage == Stage::DISTILL) {
    teacher = resume && resume->contains("teacher.stem.kernel")
                  ? TeacherConvWeights<T>::from_checkpoint(*resume)
                  : TeacherConvWeights<T>::random(model.config().hypernet, cfg.teacher_seed);
    teacher->check(model.config().hypernet, rgb.size());
  } else {
    sources = detail::training_sources(manifest, cfg);
  }

  std::ofstream log(result.log, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open training log " + result.log.string());
  std::set<std::string> warned;
  std::string last_good = cfg.resume_from.value_or(cfg.init_checkpoint.value_or(""));
  const std::string stage_tag = cfg.stage == Stage::DISTILL ? "distill" : "finetune";

  auto save = [&](std::int64_t step, const fs::path& path) {
    nn::CheckpointWriter w;
    const bool done = cfg.stage == Stage::DISTILL ? step >= cfg.steps : distilled;
    w.meta()["train"] = {{"stage", std::string(to_string(cfg.stage))},
                         {"step", step},
                         {"rng", rng.state()},
                         {"distilled", done},
                         {"config", to_json(cfg)}};
    w.add_optimizer(opt);
    if (teacher) teacher->add_to(w);
    vae::save_model(model, path, std::move(w));
  };

  for (std::int64_t step = start + 1; step <= cfg.steps; ++step) {
    nlohmann::json rec = {{"record", "TRAIN"}, {"step", step}, {"stage", std::string(to_string(cfg.stage))},
                          {"lr", opt.current_lr()}};
    if (cfg.stage == Stage::DISTILL) {
      const double loss = distill_step(*teacher, model, rgb, opt);
      if (!std::isfinite(loss)) throw DivergenceError("non-finite distillation loss", last_good);
      result.last_distill_loss = loss;
      rec["losses"] = {{"frobenius", loss}};
    } else {
      const auto& src = sources[static_cast<std::size_t>((step - 1) % static_cast<std::int64_t>(sources.size()))];
      std::vector<data::MultispectralImage> batch;
      for (auto i : detail::draw_batch(src.images.size(), cfg.batch_size, rng)) batch.push_back(src.images[i]);
      Diagnostics local;
      result.last_losses = finetune_step(batch, model, cfg, opt, rng, &local, last_good);
      for (const auto& w : local.warnings)
        if (warned.insert(w).second) warn(diag, w);
      rec["modality"] = std::string(data::to_string(src.modality));
      rec["losses"] = to_json(result.last_losses);
    }
    log << rec.dump() << "\n";

    if (cfg.stage == Stage::FINETUNE && cfg.val_every > 0 && step % cfg.val_every == 0) {
      nlohmann::json val = nlohmann::json::object();
      for (const auto& src : sources) {
        const auto report = metrics::evaluate_dataset(
            manifest, data::Split::VAL, src.modality,
            [&](const data::MultispectralImage& x) { return model.reconstruct(x, vae::ReconstructMode::Mean); });
        val[std::string(data::to_string(src.modality))] = metrics::to_json(report.summary);
      }
      log << nlohmann::json{{"record", "VAL"},
                            {"step", step},
                            {"stage", std::string(to_string(cfg.stage))},
                            {"val_metrics", val}}
                 .dump()
          << "\n";
    }
    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      const auto path = out_dir / (stage_tag + "_step" + std::to_string(step) + ".eock");
      save(step, path);
      last_good = path.string();
      result.checkpoint = path;
    }
    log.flush();
    result.last_step = step;
  }
  const auto final_path = out_dir / (stage_tag + "_final.eock");
  save(std::max(start, cfg.steps), final_path);
  result.checkpoint = final_path;
  return result;
}

}  // namespace eovae::train
