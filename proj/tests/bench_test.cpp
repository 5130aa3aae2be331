#include <gtest/gtest.h>

#include "eovae/bench/bench.hpp"
#include "eovae/data/fixtures.hpp"
#include "test_util.hpp"

using namespace eovae;
using namespace eovae::bench;

namespace {

diffusion::UNetConfig micro_unet(std::int64_t in, std::int64_t out) {
  diffusion::UNetConfig c;
  c.in_channels = in;
  c.out_channels = out;
  c.widths = {4, 8};
  c.blocks_per_stage = 1;
  c.norm_groups = 2;
  return c;
}

BenchRow row(const std::string& name, double ms, std::int64_t total, std::int64_t diffusion) {
  BenchRow r;
  r.name = name;
  r.bands = "RGB+NIR";
  r.time_ms = ms;
  r.throughput = 1000.0 / ms;
  r.peak_memory_gb = 0.25;
  r.params = {total, diffusion};
  metrics::MetricSummary q;
  q.psnr_db = 24.5;
  q.ssim = 0.8;
  q.rmse = 0.01;
  q.sam_rad = 0.02;
  r.quality = q;
  r.denoiser_gflops = total == diffusion ? 6.4 : 0.1;
  return r;
}

}  // namespace

TEST(CountParams, PixelTotalEqualsDiffusion) {
  diffusion::UNet<float> net(micro_unet(8, 4), 1);
  const auto c = count_params(net);
  EXPECT_EQ(c.total, c.diffusion);
  EXPECT_EQ(c.diffusion, net.parameter_count());
  vae::ModelConfig vc = vae::ModelConfig::tiny();
  vae::VAEModel<float> v(vc, 1);
  const auto l = count_params(net, &v);
  EXPECT_EQ(l.total, l.diffusion + nn::count_parameters(v.parameters()));
}

TEST(CountParams, ConvAndReconstructionInvariance) {
  Rng rng(1);
  nn::ParamList<float> ps;
  nn::Conv2d<float>(16, 16, 3, rng).collect(ps, "c");
  EXPECT_EQ(nn::count_parameters(ps), 2320);
  diffusion::UNet<float> a(diffusion::UNetConfig::preset("tiny", 32, 16), 1);
  diffusion::UNet<float> b(diffusion::UNetConfig::preset("tiny", 32, 16), 99);
  EXPECT_EQ(count_params(a).total, count_params(b).total);
}

TEST(MeasureInference, WarmupExcludedAndThroughputDefinition) {
  int calls = 0;
  const auto t = measure_inference(
      [&] {
        ++calls;
        volatile double acc = 0.0;
        for (int i = 0; i < 20000; ++i) acc = acc + std::sqrt(static_cast<double>(i));
        return diffusion::SRPhaseTimes{0.0, 1.0, 0.0};
      },
      7, 3);
  EXPECT_EQ(calls, 10);
  EXPECT_EQ(t.iterations, 7);
  EXPECT_EQ(t.warmup, 3);
  EXPECT_GT(t.mean_ms, 0.0);
  EXPECT_NEAR(t.throughput, 1000.0 / t.mean_ms, 0.05 * t.throughput);
  EXPECT_DOUBLE_EQ(t.phases.sample_ms, 1.0);
  if (t.peak_memory_gb) EXPECT_GT(*t.peak_memory_gb, 0.0);
  EXPECT_THROW(measure_inference([] { return diffusion::SRPhaseTimes{}; }, 0), ConfigError);
}

TEST(MeasureInference, RepeatedRunsAreStable) {
  diffusion::UNet<float> net(diffusion::UNetConfig::preset("tiny", 8, 4), 2);
  Rng rng(3);
  const Var<float> x(rng.normal_tensor<float>({1, 8, 32, 32}));
  auto once = [&] {
    NoGradGuard g;
    net(x, {0.1});
    return diffusion::SRPhaseTimes{};
  };
  const auto a = measure_inference(once, 10, 2);
  const auto b = measure_inference(once, 10, 2);
  EXPECT_LT(std::abs(a.mean_ms - b.mean_ms) / std::min(a.mean_ms, b.mean_ms), 0.2);
}

TEST(EmitTable, ColumnOrderAndOptionalNdvi) {
  BenchReport r;
  r.rows = {row("EO-VAE latent", 40.0, 2'000'000, 1'000'000), row("Pixel", 900.0, 1'000'000, 1'000'000)};
  r.iterations = 50;
  r.warmup = 5;
  r.sampler_steps = 50;
  r.hardware = "test cpu";
  const auto text = emit_table(r);
  const std::vector<std::string> order{"Model", "Bands", "PSNR", "SSIM", "RMSE", "SAM", "Time (ms)",
                                       "Throughput (img/s)", "Peak Memory (GB)", "Params (M) Total (Diffusion)"};
  const auto header = text.substr(0, text.find('\n'));
  std::size_t pos = 0;
  for (const auto& col : order) {
    const auto at = header.find(col, pos);
    ASSERT_NE(at, std::string::npos) << col;
    pos = at + col.size();
  }
  EXPECT_EQ(header.find("NDVI"), std::string::npos);
  EXPECT_NE(text.find("1.00 (1.00)"), std::string::npos);
  EXPECT_NE(text.find("2.00 (1.00)"), std::string::npos);
  ASSERT_TRUE(r.flop_ratio().has_value());
  EXPECT_DOUBLE_EQ(*r.flop_ratio(), 64.0);

  r.rows[0].quality->ndvi_mae = 0.03;
  const auto with = emit_table(r);
  EXPECT_NE(with.substr(0, with.find('\n')).find("NDVI-MAE"), std::string::npos);
  EXPECT_THROW(emit_table(BenchReport{}), EmptyMetricError);
}

TEST(EmitTable, JsonRoundTripsToIdenticalTable) {
  BenchReport r;
  r.rows = {row("a", 12.5, 300, 100), row("b", 70.25, 100, 100)};
  r.rows[1].quality.reset();
  r.rows[1].peak_memory_gb.reset();
  r.iterations = 3;
  r.warmup = 1;
  r.sampler_steps = 4;
  r.hardware = "x";
  const auto j = to_json(r);
  const auto back = bench_report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(emit_table(back), emit_table(r));
  EXPECT_EQ(to_json(back), j);
}

TEST(BenchSystem, ScoresAndTimesATinyPipeline) {
  const auto dir = eovae::testing::scratch_dir("bench_system");
  data::PairOptions o;
  o.pairs = 2;
  o.lr_size = 8;
  auto man = data::make_sr_pairs(dir, o);
  man.stats_by_modality[data::Modality::RGBN] = data::compute_stats(man, data::Modality::RGBN);
  const auto pairs = diffusion::load_pairs(man, data::Split::TRAIN);
  diffusion::SRConfig cfg;
  cfg.lr_size = 8;
  cfg.hr_size = 32;
  cfg.sampler_steps = 2;
  const auto m = diffusion::make_sr_model<float>(pairs, man.stats_for(data::Modality::RGBN), nullptr, cfg,
                                                 diffusion::SRSpace::Pixel);
  const auto r = bench_system<float>("pixel", m, nullptr, pairs, 2, 1, 0);
  EXPECT_EQ(r.bands, "RGB+NIR");
  EXPECT_GT(r.time_ms, 0.0);
  ASSERT_TRUE(r.quality.has_value());
  EXPECT_TRUE(r.quality->sam_rad.has_value());
  EXPECT_EQ(r.params.total, r.params.diffusion);
  EXPECT_GT(r.phases.sample_ms, 0.0);
}
