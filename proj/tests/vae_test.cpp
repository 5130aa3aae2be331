#include <gtest/gtest.h>

#include "eovae/data/fixtures.hpp"
#include "eovae/vae/checkpoint.hpp"
#include "test_util.hpp"

using namespace eovae;
using namespace eovae::vae;
using data::WavelengthProfile;

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

data::MultispectralImage normalized_image(Rng& rng, const WavelengthProfile& p, std::int64_t h, std::int64_t w) {
  return data::MultispectralImage(rng.normal_tensor<float>({static_cast<std::int64_t>(p.size()), h, w}), p,
                                  data::Modality::OTHER, std::nullopt, data::ValueSpace::NORMALIZED);
}

WavelengthProfile profile_with(std::size_t channels) {
  std::vector<double> nm;
  for (std::size_t i = 0; i < channels; ++i) nm.push_back(440.0 + 130.0 * static_cast<double>(i));
  return WavelengthProfile(nm);
}

double row_norm(const Tensor<double>& t, std::int64_t row) {
  double acc = 0.0;
  for (std::int64_t k = 0; k < t.dim(1); ++k) acc += t[row * t.dim(1) + k] * t[row * t.dim(1) + k];
  return std::sqrt(acc);
}

}  // namespace

TEST(Embedding, RowsFollowWavelengths) {
  Rng rng(1);
  WeightGenerator<double> gen(ConvRole::Stem, HypernetConfig{}, rng);
  auto e = embed_wavelengths(WavelengthProfile({490.0, 842.0, 490.0}), gen).value();
  ASSERT_EQ(e.shape(), (Shape{3, 64}));
  for (std::int64_t k = 0; k < 64; ++k) EXPECT_EQ(e[k], e[2 * 64 + k]);
  EXPECT_GT(std::abs(row_norm(e, 0) - row_norm(e, 1)), 0.0);

  auto swapped = embed_wavelengths(WavelengthProfile({842.0, 490.0, 490.0}), gen).value();
  for (std::int64_t k = 0; k < 64; ++k) {
    EXPECT_EQ(swapped[k], e[64 + k]);
    EXPECT_EQ(swapped[64 + k], e[k]);
  }
}

TEST(Embedding, SmallLogSeparationStaysDistinct) {
  HypernetConfig cfg;
  // Sweep the optical and SAR ranges in steps of 1e-3 decades.
  for (double u = -0.5; u < 4.0; u += 0.05) {
    const double a = 1000.0 * std::pow(10.0, u), b = 1000.0 * std::pow(10.0, u + 1e-3);
    auto f = fourier_features<double>(WavelengthProfile({a, b}), cfg);
    double diff = 0.0;
    for (int k = 0; k < 2 * cfg.fourier_bands; ++k) diff = std::max(diff, std::abs(f[k] - f[2 * cfg.fourier_bands + k]));
    EXPECT_GT(diff, 1e-4) << u;
  }
}

TEST(Embedding, RejectsNonpositiveWavelength) {
  EXPECT_THROW(WavelengthProfile({490.0, 0.0}), DomainError);
  EXPECT_THROW(WavelengthProfile({-3.0}), DomainError);
}

TEST(Generator, ShapeContract) {
  Rng rng(2);
  WeightGenerator<float> stem(ConvRole::Stem, HypernetConfig{}, rng);
  WeightGenerator<float> head(ConvRole::Head, HypernetConfig{}, rng);
  auto s = generate_stem_weights(data::rgb_wavelengths(), stem);
  EXPECT_EQ(s.kernel.shape(), (Shape{32, 3, 3, 3}));
  EXPECT_EQ(s.bias.shape(), (Shape{32}));
  auto h = generate_head_weights(data::rgb_wavelengths(), head);
  EXPECT_EQ(h.kernel.shape(), (Shape{3, 32, 3, 3}));
  EXPECT_EQ(h.bias.shape(), (Shape{3}));
  EXPECT_THROW(generate_head_weights(data::rgb_wavelengths(), stem), ConfigError);
  EXPECT_TRUE(s.kernel.value().all_finite());
}

TEST(Generator, DuplicatedWavelengthDuplicatesSlice) {
  Rng rng(3);
  WeightGenerator<double> stem(ConvRole::Stem, HypernetConfig{}, rng);
  WeightGenerator<double> head(ConvRole::Head, HypernetConfig{}, rng);
  const WavelengthProfile p({560.0, 842.0, 560.0});
  auto s = stem.generate(p).kernel.value();
  for (std::int64_t o = 0; o < 32; ++o)
    for (std::int64_t k = 0; k < 9; ++k) EXPECT_EQ(s[(o * 3 + 0) * 9 + k], s[(o * 3 + 2) * 9 + k]);
  auto h = head.generate(p);
  for (std::int64_t k = 0; k < 32 * 9; ++k) EXPECT_EQ(h.kernel.value()[k], h.kernel.value()[2 * 32 * 9 + k]);
  EXPECT_EQ(h.bias.value()[0], h.bias.value()[2]);
}

// Changing one wavelength only changes that channel's kernel slices.
TEST(Generator, PerChannelLocality) {
  Rng rng(4);
  WeightGenerator<double> stem(ConvRole::Stem, HypernetConfig{}, rng);
  WeightGenerator<double> head(ConvRole::Head, HypernetConfig{}, rng);
  const WavelengthProfile a({490.0, 665.0, 842.0, 1610.0});
  const WavelengthProfile b({490.0, 705.0, 842.0, 1610.0});
  auto sa = stem.generate(a).kernel.value(), sb = stem.generate(b).kernel.value();
  for (std::int64_t o = 0; o < 32; ++o)
    for (std::int64_t c = 0; c < 4; ++c)
      for (std::int64_t k = 0; k < 9; ++k) {
        const auto i = static_cast<std::size_t>((o * 4 + c) * 9 + k);
        if (c == 1) continue;
        EXPECT_EQ(sa[i], sb[i]);
      }
  auto ha = head.generate(a).kernel.value(), hb = head.generate(b).kernel.value();
  bool changed = false;
  for (std::int64_t c = 0; c < 4; ++c)
    for (std::int64_t k = 0; k < 32 * 9; ++k) {
      const auto i = static_cast<std::size_t>(c * 32 * 9 + k);
      if (c == 1)
        changed |= ha[i] != hb[i];
      else
        EXPECT_EQ(ha[i], hb[i]);
    }
  EXPECT_TRUE(changed);
}

TEST(Generator, KernelGradientMatchesFiniteDifferences) {
  Rng rng(5);
  HypernetConfig cfg;
  cfg.base_channels = 6;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 10;
  cfg.fourier_bands = 4;
  for (auto role : {ConvRole::Stem, ConvRole::Head}) {
    WeightGenerator<double> gen(role, cfg, rng);
    const WavelengthProfile p({490.0, 842.0, 2190.0});
    auto probe_shape = gen.generate(p).kernel.shape();
    std::vector<double> wk, wb;
    for (std::int64_t i = 0; i < shape_numel(probe_shape); ++i) wk.push_back(rng.normal());
    for (std::int64_t i = 0; i < (role == ConvRole::Stem ? 6 : 3); ++i) wb.push_back(rng.normal());
    nn::ParamList<double> params;
    gen.collect(params, "g");
    std::vector<Var<double>> inputs;
    for (const auto& np : params) inputs.push_back(np.var);
    auto loss = [&] {
      auto w = gen.generate(p);
      return ops::add(ops::weighted_sum(w.kernel, wk), ops::weighted_sum(w.bias, wb));
    };
    auto r = eovae::testing::gradient_check(loss, inputs, 8, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}

TEST(Model, EncodeShapesAndDeterminism) {
  VAEModel<float> model(ModelConfig::tiny(), 7);
  Rng data_rng(1);
  auto x = normalized_image(data_rng, data::rgbn_wavelengths(), 64, 64);
  Rng a(99), b(99);
  auto za = model.encode(x, a), zb = model.encode(x, b);
  EXPECT_EQ(za.mean.shape(), (Shape{16, 8, 8}));
  EXPECT_EQ(za.log_variance.shape(), (Shape{16, 8, 8}));
  ASSERT_TRUE(za.sample && zb.sample);
  EXPECT_EQ(*za.sample, *zb.sample);
  EXPECT_FALSE(model.deterministic_encode(x).sample);

  auto x12 = normalized_image(data_rng, profile_with(12), 64, 64);
  EXPECT_EQ(model.deterministic_encode(x12).mean.shape(), (Shape{16, 8, 8}));
}

TEST(Model, Errors) {
  VAEModel<float> model(ModelConfig::tiny(), 7);
  Rng rng(1);
  EXPECT_THROW(model.deterministic_encode(normalized_image(rng, data::rgb_wavelengths(), 60, 64)), ShapeError);
  data::MultispectralImage raw(Tensor<float>({3, 64, 64}), data::rgb_wavelengths(), data::Modality::RGB);
  EXPECT_THROW(model.deterministic_encode(raw), StateError);
  EXPECT_THROW(model.decode(Tensor<float>({15, 8, 8}), data::rgb_wavelengths()), ShapeError);
  auto bad = ModelConfig::tiny();
  bad.vae.downsample_factor = 4;
  EXPECT_THROW(VAEModel<float>(bad, 0), ConfigError);
}

TEST(Model, DecodeShapesDeterminismAndPermutation) {
  VAEModel<float> model(ModelConfig::tiny(), 8);
  Rng rng(2);
  auto z = rng.normal_tensor<float>({16, 8, 8});
  const WavelengthProfile p({665.0, 560.0, 842.0});
  auto a = model.decode(z, p), b = model.decode(z, p);
  EXPECT_EQ(a.pixels().shape(), (Shape{3, 64, 64}));
  EXPECT_EQ(a.value_space(), data::ValueSpace::NORMALIZED);
  EXPECT_EQ(a.pixels(), b.pixels());
  auto swapped = model.decode(z, WavelengthProfile({842.0, 560.0, 665.0}));
  const std::size_t plane = 64 * 64;
  for (std::size_t i = 0; i < plane; ++i) {
    EXPECT_EQ(swapped.pixels()[i], a.pixels()[2 * plane + i]);
    EXPECT_EQ(swapped.pixels()[plane + i], a.pixels()[plane + i]);
    EXPECT_EQ(swapped.pixels()[2 * plane + i], a.pixels()[i]);
  }
}

TEST(Model, ChannelFlexibility) {
  VAEModel<float> model(ModelConfig::tiny(), 9);
  const auto params = model.parameter_count();
  Rng rng(3);
  for (std::size_t c : {2u, 3u, 4u, 12u, 13u}) {
    auto x = normalized_image(rng, profile_with(c), 32, 32);
    auto mean_a = model.reconstruct(x, ReconstructMode::Mean);
    auto mean_b = model.reconstruct(x, ReconstructMode::Mean);
    EXPECT_EQ(mean_a.pixels().shape(), x.pixels().shape());
    EXPECT_EQ(mean_a.pixels(), mean_b.pixels());
    Rng s(1);
    EXPECT_EQ(model.reconstruct(x, ReconstructMode::Sample, &s).pixels().shape(), x.pixels().shape());
    EXPECT_EQ(model.parameter_count(), params);
  }
}

TEST(Model, ParameterCountIndependentOfChannelsAndSplitsCleanly) {
  VAEModel<float> model(ModelConfig::tiny(), 1);
  EXPECT_EQ(nn::count_parameters(model.hypernet_parameters()) + nn::count_parameters(model.backbone_parameters()),
            model.parameter_count());
  std::set<std::string> names;
  for (const auto& p : model.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
}

TEST(Model, ReconstructionLossGradientMatchesFiniteDifferences) {
  VAEModel<double> model(micro_config(), 11);
  Rng rng(4);
  const WavelengthProfile p({490.0, 665.0, 842.0});
  Var<double> x(rng.normal_tensor<double>({1, 3, 8, 8}));
  auto loss = [&] {
    auto out = model.forward(x, p, ReconstructMode::Mean, nullptr);
    return ops::mean(ops::square(ops::sub(out.reconstruction, x)));
  };
  std::vector<Var<double>> hyper, backbone;
  for (const auto& np : model.hypernet_parameters()) hyper.push_back(np.var);
  for (const auto& np : model.backbone_parameters()) backbone.push_back(np.var);
  auto rh = eovae::testing::gradient_check(loss, hyper, 4, 1e-6);
  EXPECT_LT(rh.max_rel_error, 1e-4) << "abs " << rh.max_abs_error;
  auto rb = eovae::testing::gradient_check(loss, backbone, 2, 1e-6);
  EXPECT_LT(rb.max_rel_error, 1e-4) << "abs " << rb.max_abs_error;
}

TEST(Kl, ClosedFormExamples) {
  LatentCode<double> z{Tensor<double>({2, 2, 2}, 0.0), Tensor<double>({2, 2, 2}, 0.0), std::nullopt};
  EXPECT_EQ(kl_divergence(z), 0.0);
  z.mean.fill(1.0);
  EXPECT_DOUBLE_EQ(kl_divergence(z), 0.5);
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    LatentCode<double> r{rng.normal_tensor<double>({3, 2, 2}, 2.0), rng.normal_tensor<double>({3, 2, 2}, 3.0),
                         std::nullopt};
    EXPECT_GE(kl_divergence(r), 0.0);
    auto v = kl_loss(Posterior<double>{Var<double>(r.mean), Var<double>(r.log_variance)}).item();
    EXPECT_NEAR(v, kl_divergence(r), 1e-12 * (1.0 + v));
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto dir = eovae::testing::scratch_dir("vae_ckpt");
  VAEModel<float> model(ModelConfig::tiny(), 21);
  save_model(model, dir / "m.eock");
  auto back = load_model<float>(dir / "m.eock");
  auto a = model.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(std::memcmp(a[i].var.value().data(), b[i].var.value().data(), a[i].var.value().size() * 4), 0);
  }
  EXPECT_EQ(to_json(back.config()), to_json(model.config()));

  VAEModel<double> dmodel(micro_config(), 3);
  save_model(dmodel, dir / "d.eock");
  auto dback = load_model<double>(dir / "d.eock");
  for (std::size_t i = 0; i < dmodel.parameters().size(); ++i)
    EXPECT_EQ(dmodel.parameters()[i].var.value(), dback.parameters()[i].var.value());

  auto bytes = data::detail::read_file(dir / "m.eock");
  EXPECT_THROW(nn::decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CorruptContainerError);
  EXPECT_THROW(nn::decode_checkpoint(bytes.substr(0, 10)), CorruptContainerError);
}

TEST(Checkpoint, OptimizerAndRngStateRestore) {
  VAEModel<double> model(micro_config(), 2);
  nn::AdamW<double> opt(model.parameters(), nn::CosineSchedule{1e-3, 0.0, 10, 0});
  Rng rng(6);
  const WavelengthProfile p({490.0, 842.0});
  Var<double> x(rng.normal_tensor<double>({1, 2, 8, 8}));
  auto step = [&] {
    auto out = model.forward(x, p, ReconstructMode::Sample, &rng);
    auto loss = ops::mean(ops::square(ops::sub(out.reconstruction, x)));
    const double v = loss.item();
    loss.backward();
    opt.step();
    return v;
  };
  step();
  nn::CheckpointWriter w;
  w.add_optimizer(opt);
  w.meta()["rng"] = rng.state();
  auto dir = eovae::testing::scratch_dir("vae_ckpt_opt");
  save_model(model, dir / "r.eock", w);
  const double next = step();

  auto ck = nn::read_checkpoint(dir / "r.eock");
  auto resumed = model_from_checkpoint<double>(ck);
  nn::AdamW<double> opt2(resumed.parameters(), nn::CosineSchedule{1e-3, 0.0, 10, 0});
  ck.load_optimizer(opt2);
  Rng rng2(0);
  rng2.set_state(ck.meta["rng"].get<std::string>());
  auto out = resumed.forward(x, p, ReconstructMode::Sample, &rng2);
  EXPECT_EQ(ops::mean(ops::square(ops::sub(out.reconstruction, x))).item(), next);
  EXPECT_EQ(opt2.step_count(), 1);
}
