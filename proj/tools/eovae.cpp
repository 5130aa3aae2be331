#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "eovae/bench/bench.hpp"
#include "eovae/data/fixtures.hpp"
#include "eovae/data/harmonize.hpp"
#include "eovae/data/split.hpp"
#include "eovae/metrics/report.hpp"
#include "eovae/train/training.hpp"

namespace fs = std::filesystem;
using namespace eovae;
using nlohmann::json;

namespace {

enum class Level { error, warn, info, debug };
Level g_level = Level::info;

Level parse_level(const std::string& s) {
  if (s == "error") return Level::error;
  if (s == "warn") return Level::warn;
  if (s == "info") return Level::info;
  if (s == "debug") return Level::debug;
  throw ConfigError("unknown log level '" + s + "'");
}

void log(Level l, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (l <= g_level) std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << "\n";
}

void report_warnings(const Diagnostics& d) {
  std::map<std::string, int> seen;
  std::vector<std::string> order;
  for (const auto& w : d.warnings)
    if (seen[w]++ == 0) order.push_back(w);
  for (const auto& w : order) log(Level::warn, seen[w] > 1 ? w + " (x" + std::to_string(seen[w]) + ")" : w);
}

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  std::string log_level = "info";
};

// Section `key` of the --config JSON document, or an empty object.
json config_section(const Globals& g, const std::string& key) {
  if (g.config.empty()) return json::object();
  std::ifstream in(g.config);
  if (!in) throw ConfigError("cannot read config file " + g.config);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + g.config + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  const auto it = j.find(key);
  return it == j.end() ? json::object() : *it;
}

data::Split split_arg(const std::string& s) {
  try {
    return data::parse_split(s);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

data::DatasetManifest read_manifest(const std::string& path) {
  if (path.empty()) throw ConfigError("--manifest is required");
  return data::load_manifest(path);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::write_file_atomic(path, j.dump(2));
}

void write_text(const fs::path& path, const std::string& s) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::write_file_atomic(path, s);
}

json split_counts(const data::DatasetManifest& m) {
  json out = json::object();
  for (const auto& e : m.entries) {
    auto& slot = out[std::string(data::to_string(e.modality))][std::string(data::to_string(e.split))];
    slot = slot.is_null() ? 1 : slot.get<int>() + 1;
  }
  return out;
}

std::vector<data::Modality> modalities_with_train(const data::DatasetManifest& m) {
  std::vector<data::Modality> out;
  for (const auto& e : m.entries)
    if (e.split == data::Split::TRAIN && std::find(out.begin(), out.end(), e.modality) == out.end())
      out.push_back(e.modality);
  return out;
}

// ---- data ----

int cmd_inspect(const Globals& g, bool make_fixtures, std::int64_t size, int pairs, const std::string& manifest_path,
                double threshold) {
  if (make_fixtures) {
    const fs::path out(g.out_dir);
    data::CorpusOptions co;
    co.size = size;
    co.seed = g.seed;
    const auto corpus = data::make_fixture_corpus(out / "corpus", co);
    data::PairOptions po;
    po.pairs = pairs;
    po.seed = g.seed;
    const auto sr = data::make_sr_pairs(out / "pairs", po);
    std::cout << json{{"corpus_manifest", (out / "corpus" / "manifest.json").string()},
                      {"corpus_tiles", corpus.entries.size()},
                      {"pairs_manifest", (out / "pairs" / "pairs.json").string()},
                      {"pair_tiles", sr.entries.size()}}
                     .dump(2)
              << "\n";
    return 0;
  }
  const auto m = read_manifest(manifest_path);
  json summary{{"tiles", m.entries.size()}, {"splits", split_counts(m)}};
  json stats = json::object();
  for (const auto& [mod, s] : m.stats_by_modality) stats[std::string(data::to_string(mod))] = data::to_json(s);
  summary["stats"] = stats;
  std::set<std::string> pair_ids;
  for (const auto& e : m.entries)
    if (e.pair_id) pair_ids.insert(*e.pair_id);
  summary["pairs"] = pair_ids.size();
  if (!m.select(data::Modality::S2L2A, std::nullopt).empty()) {
    json minima = json::array();
    int flagged = 0;
    for (const auto& r : data::detect_baseline_shift(m, threshold)) {
      minima.push_back({{"tile", r.tile_path}, {"min", r.min_value}, {"flagged", r.flagged_post_baseline}});
      flagged += r.flagged_post_baseline;
    }
    summary["s2_baseline"] = {{"threshold", threshold}, {"flagged", flagged}, {"tiles", minima}};
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_stats(const Globals& g, const std::string& manifest_path) {
  auto m = read_manifest(manifest_path);
  Diagnostics diag;
  json printed = json::object();
  for (auto mod : modalities_with_train(m)) {
    m.stats_by_modality[mod] = data::compute_stats(m, mod, &diag);
    printed[std::string(data::to_string(mod))] = data::to_json(m.stats_by_modality[mod]);
  }
  report_warnings(diag);
  const auto out = fs::path(g.out_dir) / "manifest.json";
  fs::create_directories(g.out_dir);
  data::save_manifest(m, out);
  std::cout << json{{"manifest", out.string()}, {"stats", printed}}.dump(2) << "\n";
  return 0;
}

int cmd_harmonize(const Globals& g, const std::string& manifest_path, double threshold) {
  const auto m = read_manifest(manifest_path);
  const auto reports = data::detect_baseline_shift(m, threshold);
  auto res = data::harmonize_corpus(m, reports, g.out_dir);
  if (!res.manifest.select(data::Modality::S2L2A, data::Split::TRAIN).empty())
    res.manifest.stats_by_modality[data::Modality::S2L2A] = data::compute_stats(res.manifest, data::Modality::S2L2A);
  const auto out = fs::path(g.out_dir) / "manifest.json";
  data::save_manifest(res.manifest, out);
  json rep = json::array();
  int flagged = 0;
  for (const auto& r : res.reports) {
    rep.push_back({{"tile", r.tile_path},
                   {"date", r.acquisition_date ? json(data::format_date(*r.acquisition_date)) : json()},
                   {"min", r.min_value},
                   {"flagged", r.flagged_post_baseline},
                   {"offset_applied", r.offset_applied}});
    flagged += r.flagged_post_baseline;
  }
  json series = json::array();
  for (const auto& [date, v] : data::minimum_series(reports)) series.push_back({{"date", date}, {"min", v}});
  write_json(fs::path(g.out_dir) / "harmonize_report.json",
             {{"threshold", threshold}, {"reports", rep}, {"minimum_series", series}});
  std::cout << json{{"manifest", out.string()}, {"s2_tiles", reports.size()}, {"flagged", flagged}}.dump(2) << "\n";
  return 0;
}

int cmd_split(const Globals& g, const std::string& manifest_path, double cell_size) {
  const auto m = read_manifest(manifest_path);
  const auto out_m = data::checkerboard_split(m, cell_size, data::SplitRatios{}, g.seed);
  const auto out = fs::path(g.out_dir) / "manifest.json";
  fs::create_directories(g.out_dir);
  data::save_manifest(out_m, out);
  std::cout << json{{"manifest", out.string()}, {"splits", split_counts(out_m)}}.dump(2) << "\n";
  return 0;
}

// ---- VAE training and evaluation ----

struct TrainFlags {
  std::string preset = "tiny";
  std::optional<std::int64_t> steps;
  std::optional<std::int64_t> batch_size;
  std::optional<double> lr;
  std::string manifest;
  std::string init;
  std::string resume;
};

train::TrainConfig train_config(const Globals& g, const TrainFlags& f, train::Stage stage) {
  auto cfg = train::train_config_from_json(config_section(g, stage == train::Stage::DISTILL ? "distill" : "train"));
  cfg.stage = stage;
  cfg.seed = g.seed;
  cfg.out_dir = (fs::path(g.out_dir) / (stage == train::Stage::DISTILL ? "distill" : "train")).string();
  if (f.steps) cfg.steps = *f.steps;
  if (f.batch_size) cfg.batch_size = *f.batch_size;
  if (f.lr) cfg.learning_rate = *f.lr;
  if (!f.init.empty()) cfg.init_checkpoint = f.init;
  if (!f.resume.empty()) cfg.resume_from = f.resume;
  cfg.validate();
  return cfg;
}

vae::VAEModel<float> initial_model(const Globals& g, const TrainFlags& f) {
  const std::string from = !f.resume.empty() ? f.resume : f.init;
  if (!from.empty()) return vae::load_model<float>(from);
  auto mc = vae::ModelConfig::preset(f.preset);
  mc.validate();
  return vae::VAEModel<float>(mc, g.seed);
}

int cmd_train(const Globals& g, const TrainFlags& f, train::Stage stage) {
  const auto cfg = train_config(g, f, stage);
  const auto manifest = stage == train::Stage::DISTILL ? data::DatasetManifest{} : read_manifest(f.manifest);
  auto model = initial_model(g, f);
  Diagnostics diag;
  log(Level::info, std::string(train::to_string(stage)) + ": " + std::to_string(cfg.steps) + " steps, " +
                       std::to_string(nn::count_parameters(model.parameters())) + " parameters");
  const auto res = train::run_training(manifest, cfg, model, &diag);
  report_warnings(diag);
  json out{{"checkpoint", res.checkpoint.string()}, {"log", res.log.string()}, {"last_step", res.last_step}};
  if (stage == train::Stage::DISTILL)
    out["distill_loss"] = res.last_distill_loss;
  else
    out["losses"] = train::to_json(res.last_losses);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& manifest_path,
             const std::string& split, const std::string& space, const std::string& mode, const std::string& out_path) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const auto m = read_manifest(manifest_path);
  const auto sp = split_arg(split);
  const auto ms = metrics::parse_metric_space(space);
  vae::ReconstructMode rm;
  if (mode == "mean")
    rm = vae::ReconstructMode::Mean;
  else if (mode == "sample")
    rm = vae::ReconstructMode::Sample;
  else
    throw ConfigError("unknown --mode '" + mode + "' (expected mean|sample)");
  const auto model = vae::load_model<float>(checkpoint);
  Rng rng(g.seed);
  Diagnostics diag;
  std::vector<metrics::MetricReport> reports;
  for (const auto& [mod, stats] : m.stats_by_modality) {
    if (m.select(mod, sp).empty()) continue;
    reports.push_back(metrics::evaluate_dataset(
        m, sp, mod, [&](const data::MultispectralImage& x) { return model.reconstruct(x, rm, &rng); }, ms, &diag));
  }
  if (reports.empty()) throw EmptyCorpusError("no " + split + " tiles with normalization stats to evaluate");
  report_warnings(diag);
  json j = json::array();
  std::string jsonl;
  for (const auto& r : reports) {
    j.push_back(metrics::to_json(r));
    jsonl += metrics::per_image_jsonl(r);
  }
  const fs::path out = out_path.empty() ? fs::path(g.out_dir) / "eval" / "report.json" : fs::path(out_path);
  const auto table = metrics::reconstruction_table({{"EO-VAE", reports}});
  write_json(out, {{"checkpoint", checkpoint}, {"split", split}, {"space", space}, {"reports", j}});
  write_text(fs::path(out).replace_extension(".jsonl"), jsonl);
  write_text(fs::path(out).replace_extension(".txt"), table);
  std::cout << table;
  return 0;
}

// ---- super-resolution ----

struct SrFlags {
  std::string manifest;
  std::string vae;
  std::string checkpoint;
  std::string split = "TRAIN";
  std::string input;
  std::string output;
  std::string preset;
  std::optional<std::int64_t> steps;
  std::optional<std::int64_t> batch_size;
  std::optional<double> lr;
};

int cmd_sr_train(const Globals& g, const SrFlags& f, diffusion::SRSpace space) {
  auto cfg = diffusion::sr_config_from_json(config_section(g, "sr"));
  cfg.seed = g.seed;
  cfg.out_dir = (fs::path(g.out_dir) / (space == diffusion::SRSpace::Latent ? "sr" : "sr_baseline")).string();
  if (f.steps) cfg.train_steps = *f.steps;
  if (f.batch_size) cfg.batch_size = *f.batch_size;
  if (f.lr) cfg.learning_rate = *f.lr;
  if (!f.preset.empty()) cfg.unet_preset = f.preset;
  cfg.validate();
  diffusion::UNetConfig::preset(cfg.unet_preset, 1, 1);
  if (space == diffusion::SRSpace::Latent && f.vae.empty()) throw ConfigError("--vae is required for latent SR");
  const auto manifest = read_manifest(f.manifest);
  std::optional<vae::VAEModel<float>> v;
  if (space == diffusion::SRSpace::Latent) v = vae::load_model<float>(f.vae);
  Diagnostics diag;
  diffusion::SRModel<float> model;
  const auto res = diffusion::train_sr(manifest, v ? &*v : nullptr, cfg, space, model, &diag);
  report_warnings(diag);
  json out{{"checkpoint", res.checkpoint.string()}, {"log", res.log.string()}, {"last_loss", res.last_loss},
           {"unet_parameters", model.net.parameter_count()}};
  if (res.last_val_loss) out["last_val_loss"] = *res.last_val_loss;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_sr_sample(const Globals& g, const SrFlags& f, diffusion::SRSpace space) {
  if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const auto model = diffusion::load_sr_model<float>(f.checkpoint);
  if (model.space != space)
    throw ConfigError("checkpoint holds a " + std::string(diffusion::to_string(model.space)) + "-space model");
  if (space == diffusion::SRSpace::Latent && f.vae.empty()) throw ConfigError("--vae is required for latent SR");
  std::optional<vae::VAEModel<float>> v;
  if (space == diffusion::SRSpace::Latent) v = vae::load_model<float>(f.vae);
  const auto* vp = v ? &*v : nullptr;
  std::optional<int> steps;
  if (f.steps) steps = static_cast<int>(*f.steps);

  if (!f.input.empty()) {
    if (f.output.empty()) throw ConfigError("--output is required with --input");
    const auto out = diffusion::sr_sample(model, vp, data::load_tile(f.input), g.seed, steps);
    if (fs::path(f.output).has_parent_path()) fs::create_directories(fs::path(f.output).parent_path());
    data::save_tile(out, f.output);
    std::cout << json{{"output", f.output}, {"height", out.height()}, {"width", out.width()}}.dump(2) << "\n";
    return 0;
  }
  const auto manifest = read_manifest(f.manifest);
  const auto pairs = diffusion::load_pairs(manifest, split_arg(f.split));
  if (pairs.empty()) throw EmptyCorpusError("no " + f.split + " pairs to sample");
  const std::string tag(diffusion::to_string(space));
  const fs::path dir = fs::path(g.out_dir) / ("sr_" + tag + "_samples");
  fs::create_directories(dir);
  Diagnostics diag;
  std::vector<metrics::ImageMetrics> sr_scores, bicubic_scores;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto out = diffusion::sr_sample(model, vp, pairs[i].lr, g.seed + i, steps);
    data::save_tile(out, dir / (pairs[i].pair_id + "_sr.eovt"));
    auto s = metrics::image_metrics(pairs[i].hr, out, &diag);
    s.tile_path = pairs[i].pair_id;
    sr_scores.push_back(s);
    const auto bic = pairs[i].hr.with_pixels(data::upsample_bicubic(pairs[i].lr.pixels(), model.cfg.scale));
    auto b = metrics::image_metrics(pairs[i].hr, bic, &diag);
    b.tile_path = pairs[i].pair_id;
    bicubic_scores.push_back(b);
  }
  report_warnings(diag);
  metrics::MetricReport sr_rep{model.modality, metrics::MetricSpace::RAW, sr_scores, metrics::summarize(sr_scores)};
  metrics::MetricReport bic_rep{model.modality, metrics::MetricSpace::RAW, bicubic_scores,
                                metrics::summarize(bicubic_scores)};
  const auto table = metrics::reconstruction_table({{tag + " SR", {sr_rep}}, {"bicubic", {bic_rep}}});
  write_json(dir / "report.json", {{"sr", metrics::to_json(sr_rep)}, {"bicubic", metrics::to_json(bic_rep)}});
  write_text(dir / "report.txt", table);
  std::cout << table;
  return 0;
}

// ---- bench ----

struct BenchFlags {
  std::string systems = "latent,pixel";
  std::string latent;
  std::string pixel;
  std::string vae;
  std::string manifest;
  std::string split = "TRAIN";
  int iterations = 50;
  int warmup = 5;
  std::optional<int> steps;
  std::string out;
};

int cmd_bench(const Globals& g, const BenchFlags& f) {
  std::vector<std::string> systems;
  std::stringstream ss(f.systems);
  for (std::string s; std::getline(ss, s, ',');)
    if (!s.empty()) systems.push_back(s);
  if (systems.empty()) throw ConfigError("--systems lists no systems");
  for (const auto& s : systems) {
    if (s != "latent" && s != "pixel") throw ConfigError("unknown bench system '" + s + "' (expected latent|pixel)");
    if (s == "latent" && (f.latent.empty() || f.vae.empty()))
      throw ConfigError("the latent system needs --latent and --vae checkpoints");
    if (s == "pixel" && f.pixel.empty()) throw ConfigError("the pixel system needs a --pixel checkpoint");
  }
  if (f.iterations < 1 || f.warmup < 0) throw ConfigError("--iterations must be >= 1 and --warmup >= 0");
  const auto manifest = read_manifest(f.manifest);
  const auto pairs = diffusion::load_pairs(manifest, split_arg(f.split));
  std::optional<vae::VAEModel<float>> v;
  if (!f.vae.empty()) v = vae::load_model<float>(f.vae);
  bench::BenchReport report;
  report.iterations = f.iterations;
  report.warmup = f.warmup;
  report.hardware = bench::hardware_descriptor();
  Diagnostics diag;
  for (const auto& s : systems) {
    const auto model = diffusion::load_sr_model<float>(s == "latent" ? f.latent : f.pixel);
    report.sampler_steps = f.steps.value_or(model.cfg.sampler_steps);
    const std::string name = s == "latent" ? "EO-VAE latent" : "Pixel diffusion";
    log(Level::info, "bench " + name + ": " + std::to_string(f.iterations) + " iterations");
    auto row = bench::bench_system(name, model, v ? &*v : nullptr, pairs, f.iterations, f.warmup, g.seed, f.steps, &diag);
    log(Level::info, name + " phases (ms): encode " + std::to_string(row.phases.encode_ms) + ", sample " +
                         std::to_string(row.phases.sample_ms) + ", decode " + std::to_string(row.phases.decode_ms));
    report.rows.push_back(std::move(row));
  }
  report_warnings(diag);
  const fs::path out = f.out.empty() ? fs::path(g.out_dir) / "bench.json" : fs::path(f.out);
  const auto table = bench::emit_table(report);
  write_json(out, bench::to_json(report));
  write_text(fs::path(out).replace_extension(".txt"), table);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wavelength-conditioned multispectral VAE toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config file with per-command sections");
  app.add_option("--seed", g.seed, "Seed for all randomness");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs");
  app.add_option("--log-level", g.log_level, "error|warn|info|debug");

  std::function<int()> action;

  auto* data_cmd = app.add_subcommand("data", "Corpus preparation");
  data_cmd->require_subcommand(1);
  std::string manifest;
  double threshold = data::kDefaultBaselineThreshold;
  double cell_size = 0.5;
  bool make_fixtures = false;
  std::int64_t fixture_size = 64;
  int fixture_pairs = 8;

  auto* stats = data_cmd->add_subcommand("stats", "Compute per-modality normalization stats from TRAIN tiles");
  stats->add_option("--manifest", manifest)->required();
  stats->callback([&] { action = [&] { return cmd_stats(g, manifest); }; });

  auto* harm = data_cmd->add_subcommand("harmonize", "Detect and remove the S2 processing-baseline offset");
  harm->add_option("--manifest", manifest)->required();
  harm->add_option("--threshold", threshold, "Per-tile minimum below which a tile is flagged (DN)");
  harm->callback([&] { action = [&] { return cmd_harmonize(g, manifest, threshold); }; });

  auto* split = data_cmd->add_subcommand("split", "Geospatial block split into TRAIN/VAL/TEST");
  split->add_option("--manifest", manifest)->required();
  split->add_option("--cell-size", cell_size, "Grid cell size in degrees");
  split->callback([&] { action = [&] { return cmd_split(g, manifest, cell_size); }; });

  auto* inspect = data_cmd->add_subcommand("inspect", "Summarize a manifest, or write synthetic fixtures");
  inspect->add_option("--manifest", manifest);
  inspect->add_flag("--make-fixtures", make_fixtures, "Write a synthetic corpus and SR pairs under --out-dir");
  inspect->add_option("--size", fixture_size, "Fixture tile size");
  inspect->add_option("--pairs", fixture_pairs, "Number of fixture SR pairs");
  inspect->add_option("--threshold", threshold, "Baseline detection threshold (DN)");
  inspect->callback([&] {
    action = [&] { return cmd_inspect(g, make_fixtures, fixture_size, fixture_pairs, manifest, threshold); };
  });

  TrainFlags tf;
  auto add_train_flags = [&](CLI::App* c) {
    c->add_option("--preset", tf.preset, "Model preset for a fresh model (tiny|standard)");
    c->add_option("--steps", tf.steps);
    c->add_option("--batch-size", tf.batch_size);
    c->add_option("--lr", tf.lr);
    c->add_option("--init", tf.init, "Checkpoint to start from");
    c->add_option("--resume", tf.resume, "Checkpoint of the same stage to resume");
  };
  auto* distill = app.add_subcommand("distill", "Stage 1: match hypernetwork weights to an RGB teacher");
  add_train_flags(distill);
  distill->callback([&] { action = [&] { return cmd_train(g, tf, train::Stage::DISTILL); }; });
  auto* trn = app.add_subcommand("train", "Stage 2: finetune on the multi-modal corpus");
  add_train_flags(trn);
  trn->add_option("--manifest", tf.manifest)->required();
  trn->callback([&] { action = [&] { return cmd_train(g, tf, train::Stage::FINETUNE); }; });

  std::string checkpoint, eval_split = "TEST", space = "raw", mode = "mean", out;
  auto* ev = app.add_subcommand("eval", "Reconstruction metrics on a split");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--manifest", manifest)->required();
  ev->add_option("--split", eval_split);
  ev->add_option("--space", space, "raw|normalized");
  ev->add_option("--mode", mode, "mean|sample");
  ev->add_option("--out", out, "Report JSON path");
  ev->callback([&] { action = [&] { return cmd_eval(g, checkpoint, manifest, eval_split, space, mode, out); }; });

  SrFlags sf;
  auto* sr = app.add_subcommand("sr", "Super-resolution diffusion");
  sr->require_subcommand(1);
  auto add_sr_train = [&](CLI::App* c) {
    c->add_option("--manifest", sf.manifest, "Paired LR/HR manifest")->required();
    c->add_option("--steps", sf.steps, "Training steps");
    c->add_option("--preset", sf.preset, "UNet preset (default|tiny)");
    c->add_option("--batch-size", sf.batch_size);
    c->add_option("--lr", sf.lr);
  };
  auto add_sr_sample = [&](CLI::App* c) {
    c->add_option("--checkpoint", sf.checkpoint)->required();
    c->add_option("--manifest", sf.manifest, "Paired manifest to sample and score");
    c->add_option("--split", sf.split);
    c->add_option("--input", sf.input, "Single LR tile");
    c->add_option("--output", sf.output, "Output HR tile for --input");
    c->add_option("--steps", sf.steps, "Sampler steps");
    c->add_option("--preset", sf.preset, "Ignored; the preset comes from the checkpoint");
  };
  auto* sr_train = sr->add_subcommand("train", "Train the latent denoiser (frozen VAE)");
  add_sr_train(sr_train);
  sr_train->add_option("--vae", sf.vae)->required();
  sr_train->callback([&] { action = [&] { return cmd_sr_train(g, sf, diffusion::SRSpace::Latent); }; });
  auto* sr_sample = sr->add_subcommand("sample", "Sample HR tiles with the latent denoiser");
  add_sr_sample(sr_sample);
  sr_sample->add_option("--vae", sf.vae)->required();
  sr_sample->callback([&] { action = [&] { return cmd_sr_sample(g, sf, diffusion::SRSpace::Latent); }; });
  auto* bl_train = sr->add_subcommand("baseline-train", "Train the pixel-space baseline");
  add_sr_train(bl_train);
  bl_train->callback([&] { action = [&] { return cmd_sr_train(g, sf, diffusion::SRSpace::Pixel); }; });
  auto* bl_sample = sr->add_subcommand("baseline-sample", "Sample with the pixel-space baseline");
  add_sr_sample(bl_sample);
  bl_sample->callback([&] { action = [&] { return cmd_sr_sample(g, sf, diffusion::SRSpace::Pixel); }; });

  BenchFlags bf;
  auto* bench_cmd = app.add_subcommand("bench", "Inference benchmarks");
  bench_cmd->require_subcommand(1);
  auto* run = bench_cmd->add_subcommand("run", "Latency, throughput, memory and parameter table");
  run->add_option("--systems", bf.systems, "Comma-separated: latent,pixel");
  run->add_option("--latent", bf.latent, "Latent SR checkpoint");
  run->add_option("--pixel", bf.pixel, "Pixel baseline checkpoint");
  run->add_option("--vae", bf.vae, "VAE checkpoint for the latent system");
  run->add_option("--manifest", bf.manifest, "Paired manifest")->required();
  run->add_option("--split", bf.split);
  run->add_option("--iterations", bf.iterations);
  run->add_option("--warmup", bf.warmup);
  run->add_option("--steps", bf.steps, "Sampler steps (default: from checkpoint)");
  run->add_option("--out", bf.out, "Report JSON path");
  run->callback([&] { action = [&] { return cmd_bench(g, bf); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    g_level = parse_level(g.log_level);
    return action();
  } catch (const ConfigError& e) {
    log(Level::error, std::string("config error: ") + e.what());
    return 3;
  } catch (const std::exception& e) {
    log(Level::error, e.what());
    return 1;
  }
}
