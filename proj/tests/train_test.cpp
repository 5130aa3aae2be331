#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "eovae/data/fixtures.hpp"
#include "eovae/train/training.hpp"
#include "test_util.hpp"

using namespace eovae;
using namespace eovae::train;
using vae::ModelConfig;
using vae::VAEModel;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.vae.widths = {8, 8};
  c.vae.downsample_factor = 2;
  c.vae.latent_channels = 4;
  c.vae.blocks_per_stage = 1;
  c.vae.norm_groups = 4;
  c.hypernet.base_channels = 8;
  c.hypernet.embed_dim = 8;
  c.hypernet.hidden_dim = 12;
  c.hypernet.fourier_bands = 4;
  return c;
}

data::MultispectralImage normalized(Rng& rng, const data::WavelengthProfile& p, std::int64_t h, std::int64_t w) {
  return data::MultispectralImage(rng.normal_tensor<float>({static_cast<std::int64_t>(p.size()), h, w}), p,
                                  data::Modality::OTHER, std::nullopt, data::ValueSpace::NORMALIZED);
}

// Slice sample s out of a [N, C, H, W] tensor.
Tensor<double> sample_of(const Tensor<double>& t, std::int64_t s) {
  Tensor<double> out({t.dim(1), t.dim(2), t.dim(3)});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[s * out.size() + i];
  return out;
}

std::vector<nlohmann::json> read_log(const std::filesystem::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

data::DatasetManifest corpus_with_stats(const std::filesystem::path& dir) {
  data::CorpusOptions o;
  o.size = 32;
  o.seed = 5;
  auto m = data::make_fixture_corpus(dir, o);
  for (auto mod : {data::Modality::S2L2A, data::Modality::S1RTC, data::Modality::RGBN})
    m.stats_by_modality[mod] = data::compute_stats(m, mod);
  return m;
}

}  // namespace

// --- losses -----------------------------------------------------------------

TEST(Losses, IdenticalInputsGiveWeightedEpsilon) {
  Rng rng(1);
  Var<double> x(rng.normal_tensor<double>({2, 3, 16, 16}));
  LossWeights w;
  const auto l = reconstruction_loss(x, x, w);
  EXPECT_DOUBLE_EQ(l.total.item(), w.w_char * w.charbonnier_eps);
  EXPECT_DOUBLE_EQ(l.ms_ssim, 1.0);

  w.w_char = 1.0;
  w.w_msssim = 0.0;
  w.charbonnier_eps = 0.25;
  EXPECT_EQ(reconstruction_loss(x, x, w).total.item(), 0.25);
}

TEST(Losses, CharbonnierApproachesL1) {
  Rng rng(2);
  Var<double> x(rng.normal_tensor<double>({1, 3, 8, 8})), y(rng.normal_tensor<double>({1, 3, 8, 8}));
  double l1 = 0.0;
  for (std::size_t i = 0; i < x.value().size(); ++i) l1 += std::abs(x.value()[i] - y.value()[i]);
  l1 /= static_cast<double>(x.value().size());
  EXPECT_NEAR(charbonnier(x, y, 1e-8).item(), l1, 1e-6);
}

TEST(Losses, SymmetricCharbonnierAndLowerBound) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const double scale = rng.uniform(0.01, 3.0);
    Var<double> x(rng.normal_tensor<double>({1, 2, 12, 12}, scale)), y(rng.normal_tensor<double>({1, 2, 12, 12}));
    const double eps = rng.uniform(1e-4, 1e-1);
    EXPECT_EQ(charbonnier(x, y, eps).item(), charbonnier(y, x, eps).item());
    LossWeights w{0.5, 0.5, eps};
    const double l = reconstruction_loss(x, y, w).total.item();
    EXPECT_GT(l, w.w_char * eps);
    EXPECT_GE(l, 0.0);
  }
}

TEST(Losses, MsSsimMatchesMetric) {
  Rng rng(4);
  for (std::int64_t size : {44, 64}) {
    Tensor<double> ref = rng.uniform_tensor<double>({2, 3, size, size}, 0.0, 1.0);
    Tensor<double> cand = ref;
    for (auto& v : cand.values()) v += 0.1 * rng.normal();
    Diagnostics diag;
    const double ours = ms_ssim_value(Var<double>(ref), Var<double>(cand), &diag).item();
    const double expected =
        0.5 * (metrics::ms_ssim(sample_of(ref, 0), sample_of(cand, 0)) + metrics::ms_ssim(sample_of(ref, 1), sample_of(cand, 1)));
    EXPECT_NEAR(ours, expected, 1e-9) << size;
    EXPECT_FALSE(diag.empty());
    const double s = ssim_value(Var<double>(ref), Var<double>(cand)).item();
    EXPECT_NEAR(s, 0.5 * (metrics::ssim(sample_of(ref, 0), sample_of(cand, 0)) +
                          metrics::ssim(sample_of(ref, 1), sample_of(cand, 1))),
                1e-9);
  }
}

TEST(Losses, SmallImagesFallBackToSsim) {
  Rng rng(5);
  Tensor<double> ref = rng.uniform_tensor<double>({1, 2, 16, 16}, 0.0, 1.0);
  Tensor<double> cand = rng.uniform_tensor<double>({1, 2, 16, 16}, 0.0, 1.0);
  Diagnostics diag;
  const double v = ms_ssim_value(Var<double>(ref), Var<double>(cand), &diag).item();
  ASSERT_EQ(diag.warnings.size(), 1u);
  EXPECT_NE(diag.warnings[0].find("single-scale"), std::string::npos);
  EXPECT_NEAR(v, metrics::ssim(sample_of(ref, 0), sample_of(cand, 0)), 1e-12);
  EXPECT_THROW(ms_ssim_value(Var<double>(Tensor<double>({1, 1, 8, 8})), Var<double>(Tensor<double>({1, 1, 8, 8}))),
               ShapeError);
  EXPECT_THROW(reconstruction_loss(Var<double>(Tensor<double>({1, 1, 16, 16})),
                                   Var<double>(Tensor<double>({1, 2, 16, 16})), LossWeights{}),
               ShapeError);
}

TEST(Losses, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  Var<double> x(rng.uniform_tensor<double>({2, 2, 24, 24}, 0.0, 1.0));
  Tensor<double> init = x.value();
  for (auto& v : init.values()) v += 0.2 * rng.normal();
  auto y = Var<double>::parameter(init);
  const auto r = eovae::testing::gradient_check([&] { return reconstruction_loss(x, y, LossWeights{}).total; }, {y}, 30);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

// --- distillation -----------------------------------------------------------

TEST(Distill, ExactStudentHasZeroLoss) {
  VAEModel<double> model(micro_config(), 3);
  const auto rgb = data::rgb_wavelengths();
  const auto teacher = TeacherConvWeights<double>::from_model(model, rgb);
  EXPECT_EQ(distill_loss(teacher, model, rgb).item(), 0.0);
  EXPECT_EQ(relative_distill_error(teacher, model, rgb), 0.0);
}

TEST(Distill, ShapeMismatchesThrow) {
  VAEModel<double> model(micro_config(), 3);
  auto other = micro_config().hypernet;
  other.base_channels = 16;
  const auto wrong = TeacherConvWeights<double>::random(other, 1);
  EXPECT_THROW(distill_loss(wrong, model, data::rgb_wavelengths()), ShapeError);
  const auto teacher = TeacherConvWeights<double>::random(micro_config().hypernet, 1);
  EXPECT_THROW(distill_loss(teacher, model, data::rgbn_wavelengths()), ShapeError);
  const auto four = TeacherConvWeights<double>::random(micro_config().hypernet, 1, 4);
  EXPECT_THROW(distill_loss(four, model, data::rgbn_wavelengths()), ShapeError);
}

TEST(Distill, TouchesOnlyHypernetworks) {
  VAEModel<float> model(micro_config(), 3);
  const auto rgb = data::rgb_wavelengths();
  const auto teacher = TeacherConvWeights<float>::random(micro_config().hypernet, 9);
  std::vector<Tensor<float>> backbone, hyper;
  for (const auto& p : model.backbone_parameters()) backbone.push_back(p.var.value());
  for (const auto& p : model.hypernet_parameters()) hyper.push_back(p.var.value());
  nn::AdamW<float> opt(model.hypernet_parameters(), nn::CosineSchedule{1e-3, 0.0, 300, 0});
  std::vector<double> losses;
  for (int s = 0; s < 300; ++s) losses.push_back(distill_step(teacher, model, rgb, opt));
  const auto after = model.backbone_parameters();
  for (std::size_t i = 0; i < after.size(); ++i)
    EXPECT_EQ(std::memcmp(after[i].var.value().data(), backbone[i].data(), backbone[i].size() * sizeof(float)), 0)
        << after[i].name;
  bool changed = false;
  const auto hp = model.hypernet_parameters();
  for (std::size_t i = 0; i < hp.size(); ++i) changed = changed || !(hp[i].var.value() == hyper[i]);
  EXPECT_TRUE(changed);
  EXPECT_LT(losses.back(), 0.2 * losses.front());
}

// --- finetuning -------------------------------------------------------------

TEST(Finetune, GradientMatchesFiniteDifferences) {
  VAEModel<double> model(micro_config(), 5);
  Rng data_rng(7);
  const data::WavelengthProfile p({490.0, 665.0, 842.0});
  Var<double> x(data_rng.uniform_tensor<double>({2, 3, 24, 24}, -1.0, 1.0));
  TrainConfig cfg;
  cfg.kl_weight = 0.0;
  auto loss = [&] {
    Rng rng(21);
    return finetune_loss(model, x, p, cfg, rng).total;
  };
  std::vector<Var<double>> params;
  for (const auto& np : model.parameters())
    if (np.name.find("fc2.weight") != std::string::npos || np.name.find("block0.conv1.weight") != std::string::npos)
      params.push_back(np.var);
  ASSERT_GE(params.size(), 3u);
  const auto r = eovae::testing::gradient_check(loss, params, 6);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Finetune, BreakdownAndWeightedEpsilonOnIdentity) {
  VAEModel<double> model(micro_config(), 5);
  Rng rng(8);
  const auto img = normalized(rng, data::rgbn_wavelengths(), 24, 24);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  nn::AdamW<double> opt(model.parameters(), nn::CosineSchedule{1e-3, 0.0, 10, 0});
  const auto l = finetune_step({img, img}, model, cfg, opt, rng);
  EXPECT_NEAR(l.total, 0.5 * l.charbonnier + 0.5 * l.ms_ssim + 1e-6 * l.kl, 1e-12);
  EXPECT_GT(l.kl, 0.0);

  cfg.kl_weight = 0.0;
  cfg.loss = {1.0, 0.0, 1e-3};
  Var<double> x(vae::to_batch<double>({img}));
  EXPECT_EQ(reconstruction_loss(x, x, cfg.loss).total.item(), 1e-3);
}

TEST(Finetune, DeterministicUnderSeed) {
  auto run = [] {
    VAEModel<float> model(micro_config(), 5);
    Rng data_rng(9);
    std::vector<data::MultispectralImage> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(normalized(data_rng, data::rgbn_wavelengths(), 16, 16));
    TrainConfig cfg;
    nn::AdamW<float> opt(model.parameters(), nn::CosineSchedule{1e-3, 0.0, 5, 0});
    Rng rng(10);
    std::vector<double> out;
    for (int s = 0; s < 5; ++s) out.push_back(finetune_step(batch, model, cfg, opt, rng).total);
    return out;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Finetune, BatchErrors) {
  VAEModel<float> model(micro_config(), 5);
  Rng rng(11);
  TrainConfig cfg;
  nn::AdamW<float> opt(model.parameters(), nn::CosineSchedule{});
  const auto a = normalized(rng, data::rgbn_wavelengths(), 16, 16);
  const auto b = normalized(rng, data::rgb_wavelengths(), 16, 16);
  EXPECT_THROW(finetune_step({a, b}, model, cfg, opt, rng), ShapeError);
  const auto raw = data::MultispectralImage(rng.normal_tensor<float>({4, 16, 16}), data::rgbn_wavelengths(), data::Modality::RGBN);
  EXPECT_THROW(finetune_step({raw}, model, cfg, opt, rng), StateError);
  for (auto p : model.backbone_parameters())
    if (p.name == "dec.conv_in.weight") p.var.mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    finetune_step({a}, model, cfg, opt, rng, nullptr, "runs/x/last.eock");
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.last_good_checkpoint(), "runs/x/last.eock");
  }
}

// --- config -----------------------------------------------------------------

TEST(TrainConfigTest, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.stage = Stage::DISTILL;
  c.steps = 77;
  c.loss.w_char = 1.0;
  c.loss.w_msssim = 1.0;
  c.modalities = {data::Modality::RGBN};
  c.init_checkpoint = "a.eock";
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(back.stage, Stage::DISTILL);
  EXPECT_EQ(back.steps, 77);
  EXPECT_DOUBLE_EQ(back.lr(), 1e-3);
  EXPECT_EQ(back.modalities, c.modalities);
  EXPECT_EQ(back.init_checkpoint, c.init_checkpoint);
  EXPECT_DOUBLE_EQ(TrainConfig{}.lr(), 1e-4);
  EXPECT_THROW(train_config_from_json({{"stepz", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"steps", 0}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"w_char", 0.0}, {"w_msssim", 0.0}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"stage", "PRETRAIN"}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"steps", "many"}}), ConfigError);
}

// --- driver -----------------------------------------------------------------

TEST(RunTraining, StagesLogsAndResume) {
  const auto dir = eovae::testing::scratch_dir("run_training");
  const auto manifest = corpus_with_stats(dir / "corpus");
  VAEModel<float> model(micro_config(), 13);

  TrainConfig d;
  d.stage = Stage::DISTILL;
  d.steps = 40;
  d.checkpoint_every = 20;
  d.out_dir = (dir / "distill").string();
  const auto before = model.backbone_parameters();
  std::vector<Tensor<float>> backbone;
  for (const auto& p : before) backbone.push_back(p.var.value());
  const auto dres = run_training(manifest, d, model);
  const auto dck = nn::read_checkpoint(dres.checkpoint);
  EXPECT_TRUE(dck.meta["train"]["distilled"].get<bool>());
  EXPECT_TRUE(dck.contains("teacher.stem.kernel"));
  const auto after = model.backbone_parameters();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_TRUE(after[i].var.value() == backbone[i]);
  EXPECT_EQ(read_log(dres.log).size(), 40u);
  EXPECT_FALSE(nn::read_checkpoint(dir / "distill" / "distill_step20.eock").meta["train"]["distilled"].get<bool>());

  TrainConfig f;
  f.steps = 6;
  f.batch_size = 2;
  f.val_every = 2;
  f.checkpoint_every = 3;
  f.learning_rate = 1e-3;
  f.out_dir = (dir / "ft").string();
  {
    VAEModel<float> fresh(micro_config(), 13);
    EXPECT_THROW(run_training(manifest, f, fresh), ConfigError);
    f.init_checkpoint = (dir / "distill" / "distill_step20.eock").string();
    EXPECT_THROW(run_training(manifest, f, fresh), ConfigError);
  }
  f.init_checkpoint = dres.checkpoint.string();
  VAEModel<float> a(micro_config(), 99);
  const auto full = run_training(manifest, f, a);
  const auto log = read_log(full.log);
  std::vector<double> train_losses;
  int val = 0;
  for (const auto& r : log) {
    if (r["record"] == "VAL") {
      ++val;
      EXPECT_EQ(r["val_metrics"].size(), 3u);
      EXPECT_TRUE(r["val_metrics"]["RGBN"].contains("psnr_db"));
    } else {
      train_losses.push_back(r["losses"]["total"].get<double>());
    }
  }
  EXPECT_EQ(val, 3);
  ASSERT_EQ(train_losses.size(), 6u);
  EXPECT_EQ(log[0]["modality"], "S2L2A");
  EXPECT_EQ(log[1]["modality"], "S1RTC");

  TrainConfig r = f;
  r.init_checkpoint.reset();
  r.resume_from = (dir / "ft" / "finetune_step3.eock").string();
  r.out_dir = (dir / "ft_resume").string();
  VAEModel<float> b(micro_config(), 1234);
  const auto resumed = run_training(manifest, r, b);
  std::vector<double> resumed_losses;
  for (const auto& rec : read_log(resumed.log))
    if (rec["record"] == "TRAIN") resumed_losses.push_back(rec["losses"]["total"].get<double>());
  ASSERT_EQ(resumed_losses.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(resumed_losses[i], train_losses[3 + i], 1e-6);
  EXPECT_EQ(resumed_losses[0], train_losses[3]);

  TrainConfig wrong = r;
  wrong.stage = Stage::DISTILL;
  EXPECT_THROW(run_training(manifest, wrong, b), ConfigError);
}

TEST(RunTraining, MissingSplitsAndStats) {
  const auto dir = eovae::testing::scratch_dir("run_training_errors");
  auto manifest = corpus_with_stats(dir / "corpus");
  VAEModel<float> model(micro_config(), 1);
  TrainConfig f;
  f.requires_distill = false;
  f.steps = 1;
  f.out_dir = (dir / "out").string();
  f.modalities = {data::Modality::RGB};
  EXPECT_THROW(run_training(manifest, f, model), EmptyCorpusError);
  f.modalities = {data::Modality::RGBN};
  for (auto& e : manifest.entries)
    if (e.modality == data::Modality::RGBN && e.split == data::Split::VAL) e.split = data::Split::TEST;
  EXPECT_THROW(run_training(manifest, f, model), EmptyCorpusError);
  f.val_every = 0;
  EXPECT_NO_THROW(run_training(manifest, f, model));
  manifest.stats_by_modality.clear();
  EXPECT_THROW(run_training(manifest, f, model), ConfigError);
}
