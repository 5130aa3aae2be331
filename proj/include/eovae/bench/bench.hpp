#pragma once

#include <fstream>
#include <thread>

#include "eovae/diffusion/sr.hpp"
#include "eovae/metrics/report.hpp"

namespace eovae::bench {

struct ParamCounts {
  std::int64_t total = 0;
  std::int64_t diffusion = 0;

  double total_m() const { return static_cast<double>(total) / 1e6; }
  double diffusion_m() const { return static_cast<double>(diffusion) / 1e6; }
};

/// Diffusion core plus the autoencoder when there is one.
template <typename T>
ParamCounts count_params(const diffusion::UNet<T>& net, const vae::VAEModel<T>* vae = nullptr) {
  ParamCounts c;
  c.diffusion = net.parameter_count();
  c.total = c.diffusion + (vae != nullptr ? nn::count_parameters(vae->parameters()) : 0);
  return c;
}

/// Process resident-set high-water mark in GiB, from /proc/self/status.
inline std::optional<double> peak_rss_gb() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("VmHWM:", 0) == 0) return std::stod(line.substr(6)) / (1024.0 * 1024.0);
  return std::nullopt;
}

/// Restarts the high-water mark at the current RSS where the kernel allows it.
inline bool reset_peak_rss() {
  std::ofstream out("/proc/self/clear_refs");
  if (!out) return false;
  out << "5";
  return static_cast<bool>(out.flush());
}

inline std::string hardware_descriptor() {
  std::ifstream in("/proc/cpuinfo");
  std::string line, model = "unknown CPU";
  while (std::getline(in, line))
    if (line.rfind("model name", 0) == 0) {
      model = line.substr(line.find(':') + 2);
      break;
    }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads, 1 used";
}

struct Timing {
  double mean_ms = 0.0;
  double throughput = 0.0;  // images per second at batch 1
  std::optional<double> peak_memory_gb;
  diffusion::SRPhaseTimes phases;  // means
  int iterations = 0;
  int warmup = 0;
};

/// Runs `run_once` warmup + iterations times; statistics cover the timed iterations only.
inline Timing measure_inference(const std::function<diffusion::SRPhaseTimes()>& run_once, int iterations = 50,
                                int warmup = 5) {
  if (iterations < 1) throw ConfigError("bench needs at least one iteration");
  if (warmup < 0) throw ConfigError("warmup must be >= 0");
  reset_peak_rss();
  for (int i = 0; i < warmup; ++i) run_once();
  Timing t;
  t.iterations = iterations;
  t.warmup = warmup;
  double total = 0.0;
  for (int i = 0; i < iterations; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const auto p = run_once();
    total += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    t.phases.encode_ms += p.encode_ms / iterations;
    t.phases.sample_ms += p.sample_ms / iterations;
    t.phases.decode_ms += p.decode_ms / iterations;
  }
  t.mean_ms = total / iterations;
  t.throughput = 1000.0 / t.mean_ms;
  t.peak_memory_gb = peak_rss_gb();
  return t;
}

struct BenchRow {
  std::string name;
  std::string bands;
  std::optional<metrics::MetricSummary> quality;
  double time_ms = 0.0;
  double throughput = 0.0;
  std::optional<double> peak_memory_gb;
  ParamCounts params;
  diffusion::SRPhaseTimes phases;
  std::optional<double> denoiser_gflops;  // per sampler step
};

struct BenchReport {
  std::vector<BenchRow> rows;
  int iterations = 0;
  int warmup = 0;
  int sampler_steps = 0;
  std::string hardware;

  /// Pixel over latent denoiser FLOPs when both rows are present.
  std::optional<double> flop_ratio() const {
    std::optional<double> lat, pix;
    for (const auto& r : rows) {
      if (!r.denoiser_gflops) continue;
      if (r.params.total == r.params.diffusion)
        pix = r.denoiser_gflops;
      else
        lat = r.denoiser_gflops;
    }
    if (!lat || !pix) return std::nullopt;
    return *pix / *lat;
  }
};

inline std::string bands_label(const data::WavelengthProfile& p) {
  if (p == data::rgbn_wavelengths()) return "RGB+NIR";
  if (p == data::rgb_wavelengths()) return "RGB";
  return std::to_string(p.size()) + " bands";
}

/// Times end-to-end sampling on the first pair and scores every pair.
template <typename T>
BenchRow bench_system(const std::string& name, const diffusion::SRModel<T>& model, const vae::VAEModel<T>* vae,
                      const std::vector<diffusion::SRPair>& pairs, int iterations, int warmup, std::uint64_t seed,
                      std::optional<int> steps = std::nullopt, Diagnostics* diag = nullptr) {
  if (pairs.empty()) throw EmptyCorpusError("bench needs at least one LR/HR pair");
  BenchRow row;
  row.name = name;
  row.bands = bands_label(model.profile);
  row.params = count_params(model.net, model.space == diffusion::SRSpace::Latent ? vae : nullptr);
  row.denoiser_gflops = diffusion::denoiser_flops(model, vae) / 1e9;
  std::vector<metrics::ImageMetrics> scored;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto out = diffusion::sr_sample(model, vae, pairs[i].lr, seed + i, steps);
    auto m = metrics::image_metrics(pairs[i].hr, out, diag);
    m.tile_path = pairs[i].pair_id;
    scored.push_back(std::move(m));
  }
  row.quality = metrics::summarize(scored);
  const auto& lr = pairs.front().lr;
  const auto t = measure_inference(
      [&] {
        diffusion::SRPhaseTimes p;
        diffusion::sr_sample(model, vae, lr, seed, steps, &p);
        return p;
      },
      iterations, warmup);
  row.time_ms = t.mean_ms;
  row.throughput = t.throughput;
  row.peak_memory_gb = t.peak_memory_gb;
  row.phases = t.phases;
  return row;
}

inline nlohmann::json to_json(const BenchRow& r) {
  nlohmann::json j = {{"name", r.name},
                      {"bands", r.bands},
                      {"time_ms", r.time_ms},
                      {"throughput_img_per_s", r.throughput},
                      {"params_total", r.params.total},
                      {"params_diffusion", r.params.diffusion},
                      {"params_total_m", r.params.total_m()},
                      {"params_diffusion_m", r.params.diffusion_m()},
                      {"phases_ms",
                       {{"encode", r.phases.encode_ms}, {"sample", r.phases.sample_ms}, {"decode", r.phases.decode_ms}}}};
  if (r.quality) j["quality"] = metrics::to_json(*r.quality);
  if (r.peak_memory_gb) j["peak_memory_gb"] = *r.peak_memory_gb;
  if (r.denoiser_gflops) j["denoiser_gflops_per_step"] = *r.denoiser_gflops;
  return j;
}

inline nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  nlohmann::json j = {{"rows", rows},
                      {"iterations", r.iterations},
                      {"warmup", r.warmup},
                      {"sampler_steps", r.sampler_steps},
                      {"hardware", r.hardware}};
  if (auto f = r.flop_ratio()) j["denoiser_flop_ratio"] = *f;
  return j;
}

inline metrics::MetricSummary summary_from_json(const nlohmann::json& j) {
  metrics::MetricSummary s;
  s.rmse = j.at("rmse").get<double>();
  s.psnr_db = j.at("psnr_db").get<double>();
  s.ssim = j.at("ssim").get<double>();
  s.ms_ssim = j.at("ms_ssim").get<double>();
  if (j.contains("sam_rad")) s.sam_rad = j["sam_rad"].get<double>();
  if (j.contains("ndvi_mae")) s.ndvi_mae = j["ndvi_mae"].get<double>();
  return s;
}

inline BenchReport bench_report_from_json(const nlohmann::json& j) {
  BenchReport r;
  r.iterations = j.at("iterations").get<int>();
  r.warmup = j.at("warmup").get<int>();
  r.sampler_steps = j.value("sampler_steps", 0);
  r.hardware = j.at("hardware").get<std::string>();
  for (const auto& x : j.at("rows")) {
    BenchRow row;
    row.name = x.at("name").get<std::string>();
    row.bands = x.at("bands").get<std::string>();
    row.time_ms = x.at("time_ms").get<double>();
    row.throughput = x.at("throughput_img_per_s").get<double>();
    row.params.total = x.at("params_total").get<std::int64_t>();
    row.params.diffusion = x.at("params_diffusion").get<std::int64_t>();
    const auto& ph = x.at("phases_ms");
    row.phases = {ph.at("encode").get<double>(), ph.at("sample").get<double>(), ph.at("decode").get<double>()};
    if (x.contains("quality")) row.quality = summary_from_json(x["quality"]);
    if (x.contains("peak_memory_gb")) row.peak_memory_gb = x["peak_memory_gb"].get<double>();
    if (x.contains("denoiser_gflops_per_step")) row.denoiser_gflops = x["denoiser_gflops_per_step"].get<double>();
    r.rows.push_back(std::move(row));
  }
  return r;
}

/// Aligned text table in the column order Model, Bands, PSNR, SSIM, RMSE, SAM,
/// [NDVI-MAE], Time, Throughput, Peak Memory, Params.
inline std::string emit_table(const BenchReport& report) {
  if (report.rows.empty()) throw EmptyMetricError("emit_table: no rows");
  using metrics::detail::fixed;
  bool ndvi = false;
  for (const auto& r : report.rows) ndvi = ndvi || (r.quality && r.quality->ndvi_mae);
  std::vector<std::string> header{"Model", "Bands", "PSNR", "SSIM", "RMSE", "SAM"};
  if (ndvi) header.push_back("NDVI-MAE");
  for (const char* h : {"Time (ms)", "Throughput (img/s)", "Peak Memory (GB)", "Params (M) Total (Diffusion)"})
    header.push_back(h);
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& r : report.rows) {
    std::vector<std::string> line{r.name, r.bands};
    const auto& q = r.quality;
    line.push_back(q ? fixed(q->psnr_db, 2) : "-");
    line.push_back(q ? fixed(q->ssim, 4) : "-");
    line.push_back(q ? fixed(q->rmse, 4) : "-");
    line.push_back(q && q->sam_rad ? fixed(*q->sam_rad, 4) : "-");
    if (ndvi) line.push_back(q && q->ndvi_mae ? fixed(*q->ndvi_mae, 4) : "-");
    line.push_back(fixed(r.time_ms, 1));
    line.push_back(fixed(r.throughput, 2));
    line.push_back(r.peak_memory_gb ? fixed(*r.peak_memory_gb, 2) : "-");
    line.push_back(fixed(r.params.total_m(), 2) + " (" + fixed(r.params.diffusion_m(), 2) + ")");
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream os;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i < 2)
        os << (i ? "  " : "") << std::left << std::setw(static_cast<int>(width[i])) << line[i];
      else
        os << "  " << std::right << std::setw(static_cast<int>(width[i])) << line[i];
    }
    os << "\n";
  }
  os << "iterations: " << report.iterations << " (warmup " << report.warmup << "), sampler steps "
     << report.sampler_steps << ", batch 1\n";
  os << "hardware: " << report.hardware << "\n";
  if (auto f = report.flop_ratio()) os << "denoiser FLOP ratio (pixel / latent): " << fixed(*f, 2) << "\n";
  return os.str();
}

}  // namespace eovae::bench
