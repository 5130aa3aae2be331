#include <gtest/gtest.h>

#include <set>

#include "eovae/data/fixtures.hpp"
#include "eovae/data/harmonize.hpp"
#include "eovae/data/ndvi.hpp"
#include "eovae/data/normalize.hpp"
#include "eovae/data/split.hpp"
#include "test_util.hpp"

using namespace eovae;
using namespace eovae::data;

namespace {

MultispectralImage single_band(std::vector<float> values, std::int64_t h, std::int64_t w,
                               Modality m = Modality::OTHER) {
  return MultispectralImage(Tensor<float>({1, h, w}, std::move(values)), WavelengthProfile({665.0}), m);
}

DatasetManifest write_corpus(const std::filesystem::path& dir, const std::vector<MultispectralImage>& tiles) {
  DatasetManifest m;
  m.base_dir = dir;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const std::string name = "t" + std::to_string(i) + ".eovt";
    save_tile(tiles[i], dir / name);
    ManifestEntry e;
    e.tile_path = name;
    e.modality = tiles[i].modality();
    e.split = Split::TRAIN;
    e.lon = 0.0;
    e.lat = 0.0;
    m.entries.push_back(e);
  }
  return m;
}

NormalizationStats stats_of(std::vector<double> mean, std::vector<double> sd) {
  NormalizationStats s;
  s.channel_count = static_cast<std::int64_t>(mean.size());
  s.mean = std::move(mean);
  s.std = std::move(sd);
  return s;
}

// Independent reference: two-pass population mean/std.
std::pair<double, double> reference_mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

TEST(Image, RejectsInvalidConstruction) {
  EXPECT_THROW(MultispectralImage(Tensor<float>({2, 2, 2}), WavelengthProfile({665.0}), Modality::OTHER), ShapeError);
  EXPECT_THROW(WavelengthProfile({665.0, -1.0}), DomainError);
  Tensor<float> bad({1, 1, 2});
  bad[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(MultispectralImage(bad, WavelengthProfile({665.0}), Modality::OTHER), DomainError);
}

TEST(Stats, TwoTileExample) {
  auto dir = eovae::testing::scratch_dir("stats_example");
  auto m = write_corpus(dir, {single_band({0, 0}, 1, 2), single_band({2, 2}, 1, 2)});
  auto s = compute_stats(m, Modality::OTHER);
  ASSERT_EQ(s.channel_count, 1);
  EXPECT_DOUBLE_EQ(s.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(s.std[0], 1.0);
}

TEST(Stats, ConstantChannelIsFlooredWithWarning) {
  auto dir = eovae::testing::scratch_dir("stats_floor");
  auto m = write_corpus(dir, {single_band({0, 0, 0, 0}, 2, 2)});
  Diagnostics diag;
  auto s = compute_stats(m, Modality::OTHER, &diag);
  EXPECT_EQ(s.mean[0], 0.0);
  EXPECT_EQ(s.std[0], 1e-6);
  EXPECT_EQ(diag.warnings.size(), 1u);
}

TEST(Stats, MatchesReferenceOnRandomCorpus) {
  auto dir = eovae::testing::scratch_dir("stats_random");
  Rng rng(3);
  std::vector<MultispectralImage> tiles;
  std::vector<std::vector<double>> per_channel(3);
  for (int t = 0; t < 4; ++t) {
    auto px = rng.uniform_tensor<float>({3, 5, 7}, -200.0, 3000.0);
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < 35; ++i) per_channel[c].push_back(px[c * 35 + i]);
    tiles.emplace_back(px, WavelengthProfile({490, 560, 665}), Modality::RGB);
  }
  auto m = write_corpus(dir, tiles);
  m.entries[3].split = Split::TEST;
  for (auto& v : per_channel) v.resize(3 * 35);
  auto s = compute_stats(m, Modality::RGB);
  for (int c = 0; c < 3; ++c) {
    auto [mean, sd] = reference_mean_std(per_channel[c]);
    EXPECT_NEAR(s.mean[c], mean, 1e-9 * std::abs(mean) + 1e-9);
    EXPECT_NEAR(s.std[c], sd, 1e-7 * sd);
  }
}

TEST(Stats, Errors) {
  auto dir = eovae::testing::scratch_dir("stats_errors");
  auto m = write_corpus(dir, {single_band({1, 2}, 1, 2)});
  EXPECT_THROW(compute_stats(m, Modality::S2L2A), EmptyCorpusError);
  m.entries[0].split = Split::VAL;
  EXPECT_THROW(compute_stats(m, Modality::OTHER), EmptyCorpusError);
}

TEST(Normalize, Examples) {
  auto s = stats_of({1000.0}, {500.0});
  auto out = normalize(single_band({1000, 1500}, 1, 2), s);
  EXPECT_EQ(out.value_space(), ValueSpace::NORMALIZED);
  EXPECT_FLOAT_EQ(out.pixels()[0], 0.0f);
  EXPECT_FLOAT_EQ(out.pixels()[1], 1.0f);

  auto s7 = stats_of({7.0}, {2.0});
  auto back = denormalize(with_value_space(single_band({0, 1}, 1, 2), Tensor<float>({1, 1, 2}, {0, 1}),
                                           ValueSpace::NORMALIZED),
                          s7);
  EXPECT_EQ(back.value_space(), ValueSpace::RAW);
  EXPECT_FLOAT_EQ(back.pixels()[0], 7.0f);
  EXPECT_FLOAT_EQ(back.pixels()[1], 9.0f);
}

TEST(Normalize, Errors) {
  auto s = stats_of({0.0, 0.0}, {1.0, 1.0});
  EXPECT_THROW(normalize(single_band({1, 2}, 1, 2), s), ShapeError);
  auto s1 = stats_of({0.0}, {1.0});
  auto n = normalize(single_band({1, 2}, 1, 2), s1);
  EXPECT_THROW(normalize(n, s1), StateError);
  EXPECT_THROW(denormalize(single_band({1, 2}, 1, 2), s1), StateError);
  EXPECT_THROW(denormalize(n, s), ShapeError);
}

TEST(Normalize, RoundTripProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.below(5));
    std::vector<double> mean, sd;
    for (std::int64_t i = 0; i < c; ++i) {
      sd.push_back(std::exp(rng.uniform(std::log(1e-6), std::log(10.0))));
      // float32 storage: keep |mean| / std bounded so z-scores survive the RAW round trip
      mean.push_back(sd.back() * rng.uniform(-2.0, 2.0));
    }
    auto s = stats_of(mean, sd);
    std::vector<double> nm(static_cast<std::size_t>(c), 400.0);
    for (std::int64_t i = 0; i < c; ++i) nm[i] += 50.0 * static_cast<double>(i);
    // RAW values near the mean keep float32 z-scores representable.
    Tensor<float> px({c, 3, 4});
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < 12; ++i)
        px[ch * 12 + i] = static_cast<float>(mean[ch] + sd[ch] * rng.uniform(-3.0, 3.0));
    MultispectralImage raw(px, WavelengthProfile(nm), Modality::OTHER);
    auto round = denormalize(normalize(raw, s), s);
    for (std::size_t i = 0; i < px.size(); ++i) EXPECT_NEAR(round.pixels()[i], px[i], 1e-6 * (1.0 + std::abs(px[i])));

    Tensor<float> z = rng.normal_tensor<float>({c, 3, 4}, 1.0);
    auto zimg = with_value_space(raw, z, ValueSpace::NORMALIZED);
    auto zround = normalize(denormalize(zimg, s), s);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(zround.pixels()[i], z[i], 1e-6);
  }
}

TEST(Baseline, SingleTileExamples) {
  Rng rng(1);
  auto post = synthetic_s2_tile(rng, 16, 16, true, kBaselineChangeDate);
  auto pre = synthetic_s2_tile(rng, 16, 16, false, kBaselineChangeDate);
  auto rp = inspect_baseline(post, "post");
  auto rq = inspect_baseline(pre, "pre");
  EXPECT_EQ(rp.min_value, -1000.0);
  EXPECT_TRUE(rp.flagged_post_baseline);
  EXPECT_EQ(rq.min_value, 0.0);
  EXPECT_FALSE(rq.flagged_post_baseline);

  Tensor<float> px = pre.pixels();
  px[0] = -999.0f;
  EXPECT_TRUE(inspect_baseline(pre.with_pixels(px), "x").flagged_post_baseline);
}

TEST(Baseline, Errors) {
  auto img = single_band({1, 2}, 1, 2, Modality::RGBN);
  EXPECT_THROW(inspect_baseline(img, "x"), UnsupportedModalityError);
  Rng rng(2);
  auto s2 = synthetic_s2_tile(rng, 8, 8, false, kBaselineChangeDate);
  EXPECT_THROW(inspect_baseline(s2, "x", 10.0), DomainError);
}

TEST(Baseline, MixedCorpusFlagsExactlyTheOffsetHalf) {
  auto dir = eovae::testing::scratch_dir("baseline_mixed");
  CorpusOptions o;
  o.size = 16;
  o.s2_tiles = 10;
  o.seed = 5;
  auto m = make_fixture_corpus(dir, o);
  auto reports = detect_baseline_shift(m);
  ASSERT_EQ(reports.size(), 10u);
  for (std::size_t i = 0; i < reports.size(); ++i) EXPECT_EQ(reports[i].flagged_post_baseline, i >= 5) << i;
  auto series = minimum_series(reports);
  ASSERT_EQ(series.size(), 10u);
  EXPECT_TRUE(std::is_sorted(series.begin(), series.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; }));
  // Dates after the baseline change carry the offset minimum.
  for (const auto& [date, minimum] : series)
    EXPECT_EQ(minimum < -50.0, date >= format_date(kBaselineChangeDate)) << date;
}

// Fixtures whose minima sit >= 100 DN from the threshold are classified perfectly.
TEST(Baseline, PrecisionRecallProperty) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const bool post = rng.uniform() < 0.5;
    const double threshold = -rng.uniform(1.0, 800.0);
    const double margin = rng.uniform(100.0, 1000.0);
    const double minimum = post ? threshold - margin : std::min(threshold + margin, 0.0 + rng.uniform(0.0, 50.0));
    if (std::abs(minimum - threshold) < 100.0) continue;
    auto px = rng.uniform_tensor<float>({12, 4, 4}, 200.0, 5000.0);
    px[rng.below(px.size())] = static_cast<float>(minimum);
    MultispectralImage img(px, s2l2a_wavelengths(), Modality::S2L2A);
    EXPECT_EQ(inspect_baseline(img, "t", threshold).flagged_post_baseline, minimum < threshold);
  }
}

TEST(Harmonize, CorrectsFlaggedAndCopiesOthers) {
  auto dir = eovae::testing::scratch_dir("harmonize");
  CorpusOptions o;
  o.size = 16;
  o.seed = 9;
  auto m = make_fixture_corpus(dir, o);
  m.stats_by_modality[Modality::S2L2A] = compute_stats(m, Modality::S2L2A);
  m.stats_by_modality[Modality::RGBN] = compute_stats(m, Modality::RGBN);
  auto reports = detect_baseline_shift(m);
  auto h = harmonize_corpus(m, reports, dir / "harmonized");
  EXPECT_FALSE(h.manifest.stats_by_modality.count(Modality::S2L2A));
  EXPECT_TRUE(h.manifest.stats_by_modality.count(Modality::RGBN));

  double global_min = 1e300;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& src = m.entries[i];
    const auto& dst = h.manifest.entries[i];
    auto out = h.manifest.load(dst);
    if (src.modality != Modality::S2L2A) {
      EXPECT_EQ(data::detail::read_file(m.resolve(src)), data::detail::read_file(h.manifest.resolve(dst)));
      continue;
    }
    global_min = std::min<double>(global_min, out.pixels().min());
    auto in = m.load(src);
    if (in.pixels().min() < -50.0) {
      EXPECT_EQ(out.pixels().min(), 0.0f);
      EXPECT_EQ(out.pixels()[0], std::max(in.pixels()[0] + 1000.0f, 0.0f));
    } else {
      EXPECT_EQ(data::detail::read_file(m.resolve(src)), data::detail::read_file(h.manifest.resolve(dst)));
    }
  }
  EXPECT_GE(global_min, 0.0);
  int applied = 0;
  for (const auto& r : h.reports) {
    EXPECT_TRUE(r.offset_applied == 0.0 || r.offset_applied == 1000.0);
    EXPECT_EQ(r.offset_applied == 1000.0, r.flagged_post_baseline);
    applied += r.offset_applied > 0.0;
  }
  EXPECT_EQ(applied, 4);

  auto before = compute_stats(m, Modality::S2L2A);
  auto after = compute_stats(h.manifest, Modality::S2L2A);
  bool differ = false;
  for (std::size_t c = 0; c < before.mean.size(); ++c) differ |= before.mean[c] != after.mean[c];
  EXPECT_TRUE(differ);
}

TEST(Harmonize, StatsUnchangedWhenNothingFlagged) {
  auto dir = eovae::testing::scratch_dir("harmonize_none");
  CorpusOptions o;
  o.size = 16;
  o.post_baseline_fraction = 0.0;
  auto m = make_fixture_corpus(dir, o);
  auto h = harmonize_corpus(m, detect_baseline_shift(m), dir / "out");
  auto a = compute_stats(m, Modality::S2L2A);
  auto b = compute_stats(h.manifest, Modality::S2L2A);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
}

TEST(Harmonize, Idempotent) {
  auto dir = eovae::testing::scratch_dir("harmonize_idem");
  CorpusOptions o;
  o.size = 16;
  o.seed = 4;
  auto m = make_fixture_corpus(dir, o);
  auto once = harmonize_corpus(m, detect_baseline_shift(m), dir / "once");
  auto reports2 = detect_baseline_shift(once.manifest);
  for (const auto& r : reports2) EXPECT_FALSE(r.flagged_post_baseline);
  auto twice = harmonize_corpus(once.manifest, reports2, dir / "twice");
  for (std::size_t i = 0; i < once.manifest.entries.size(); ++i)
    EXPECT_EQ(data::detail::read_file(once.manifest.resolve(once.manifest.entries[i])),
              data::detail::read_file(twice.manifest.resolve(twice.manifest.entries[i])));
}

TEST(Harmonize, ReportMismatchIsConsistencyError) {
  auto dir = eovae::testing::scratch_dir("harmonize_mismatch");
  CorpusOptions o;
  o.size = 8;
  auto m = make_fixture_corpus(dir, o);
  auto reports = detect_baseline_shift(m);
  reports.pop_back();
  EXPECT_THROW(harmonize_corpus(m, reports, dir / "out"), ConsistencyError);
  reports = detect_baseline_shift(m);
  reports[0].tile_path = "elsewhere.eovt";
  EXPECT_THROW(harmonize_corpus(m, reports, dir / "out"), ConsistencyError);
}

namespace {

DatasetManifest random_locations(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  DatasetManifest m;
  for (std::size_t i = 0; i < n; ++i) {
    ManifestEntry e;
    e.tile_path = "tile" + std::to_string(i);
    e.lon = rng.uniform(-125.0, -67.0);
    e.lat = rng.uniform(25.0, 49.0);
    m.entries.push_back(e);
  }
  return m;
}

}  // namespace

TEST(Split, SameCellSameSplit) {
  auto m = random_locations(2, 0);
  m.entries[0].lon = 10.01;
  m.entries[0].lat = 45.01;
  m.entries[1].lon = 10.49;
  m.entries[1].lat = 45.49;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = checkerboard_split(m, 0.5, {}, seed);
    EXPECT_EQ(s.entries[0].split, s.entries[1].split);
    EXPECT_NE(s.entries[0].split, Split::UNASSIGNED);
  }
}

TEST(Split, ThousandTilesMatchRatiosWithoutLeakage) {
  auto m = random_locations(1000, 17);
  auto s = checkerboard_split(m, 1.0, {}, 42);
  const double target[3] = {2417.0 / 2851.0, 288.0 / 2851.0, 146.0 / 2851.0};
  std::map<Split, int> counts;
  std::map<GridCell, std::set<Split>> touched;
  for (const auto& e : s.entries) {
    ++counts[e.split];
    touched[grid_cell(*e.lon, *e.lat, 1.0)].insert(e.split);
  }
  EXPECT_EQ(counts[Split::UNASSIGNED], 0);
  const Split order[3] = {Split::TRAIN, Split::VAL, Split::TEST};
  for (int k = 0; k < 3; ++k) {
    const double expected = target[k] * 1000.0;
    EXPECT_NEAR(counts[order[k]], expected, 0.05 * expected) << to_string(order[k]);
  }
  for (const auto& [cell, splits] : touched) EXPECT_EQ(splits.size(), 1u);

  auto again = checkerboard_split(m, 1.0, {}, 42);
  for (std::size_t i = 0; i < s.entries.size(); ++i) EXPECT_EQ(s.entries[i].split, again.entries[i].split);
}

TEST(Split, Errors) {
  auto m = random_locations(3, 1);
  EXPECT_THROW(checkerboard_split(m, 0.0, {}, 0), DomainError);
  m.entries[1].lat.reset();
  EXPECT_THROW(checkerboard_split(m, 1.0, {}, 0), ManifestError);
}

TEST(Ndvi, Examples) {
  const WavelengthProfile p({665.0, 842.0});
  MultispectralImage same(Tensor<float>({2, 1, 2}, {0.3f, 0.5f, 0.3f, 0.5f}), p, Modality::OTHER);
  const auto zero = ndvi(same);
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);

  MultispectralImage veg(Tensor<float>({2, 1, 1}, {0.2f, 0.8f}), p, Modality::OTHER);
  EXPECT_NEAR(ndvi(veg)[0], (0.8f - 0.2f) / (0.8f + 0.2f), 1e-7);

  MultispectralImage missing(Tensor<float>({2, 1, 1}, {0.2f, 0.8f}), WavelengthProfile({490.0, 560.0}),
                             Modality::OTHER);
  EXPECT_THROW(ndvi(missing), MissingBandError);
  EXPECT_TRUE(has_ndvi_bands(s2l2a_wavelengths()));
  EXPECT_FALSE(has_ndvi_bands(s1rtc_wavelengths()));
}

TEST(Ndvi, ScaleInvarianceAndRange) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto px = rng.uniform_tensor<float>({4, 6, 6}, 0.0, 1.0);
    MultispectralImage img(px, rgbn_wavelengths(), Modality::RGBN);
    Tensor<float> scaled = px;
    for (auto& v : scaled.values()) v *= 3.0f;
    auto a = ndvi(img), b = ndvi(img.with_pixels(scaled));
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-6);
      EXPECT_LE(std::abs(a[i]), 1.0 + 1e-6);
    }
  }
}

TEST(TileIo, RoundTripIsBitExact) {
  auto dir = eovae::testing::scratch_dir("tile_io");
  Rng rng(12);
  auto px = rng.normal_tensor<float>({3, 5, 4}, 100.0);
  px[0] = -0.0f;
  px[1] = std::numeric_limits<float>::denorm_min();
  MultispectralImage img(px, WavelengthProfile({490.0, 560.5, 665.25}), Modality::RGB,
                         parse_date("2023-06-30"));
  save_tile(img, dir / "a.eovt");
  auto back = load_tile(dir / "a.eovt");
  ASSERT_EQ(back.pixels().shape(), px.shape());
  EXPECT_EQ(std::memcmp(back.pixels().data(), px.data(), px.size() * sizeof(float)), 0);
  EXPECT_EQ(back.wavelengths().centers(), img.wavelengths().centers());
  EXPECT_EQ(back.modality(), Modality::RGB);
  ASSERT_TRUE(back.acquisition_date());
  EXPECT_EQ(format_date(*back.acquisition_date()), "2023-06-30");
  EXPECT_EQ(back.value_space(), ValueSpace::RAW);
}

TEST(TileIo, NegativeCases) {
  auto dir = eovae::testing::scratch_dir("tile_io_neg");
  MultispectralImage img4(Tensor<float>({4, 2, 2}, 1.0f), rgbn_wavelengths(), Modality::RGBN);
  const std::string bytes = encode_tile(img4);
  EXPECT_THROW(decode_tile(bytes.substr(0, bytes.size() - 5)), CorruptContainerError);
  EXPECT_THROW(decode_tile(bytes.substr(0, 8)), CorruptContainerError);
  EXPECT_THROW(decode_tile("XXXX" + bytes.substr(4)), CorruptContainerError);
  // Header still says C=4 but only three planes follow.
  EXPECT_THROW(decode_tile(bytes.substr(0, bytes.size() - 2 * 2 * 4)), DimensionError);
  EXPECT_THROW(load_tile(dir / "missing.eovt"), IoError);
  EXPECT_THROW(save_tile(img4, dir / "no_such_dir" / "x.eovt"), IoError);
}

TEST(Manifest, SaveLoadRelocatesPaths) {
  auto dir = eovae::testing::scratch_dir("manifest");
  CorpusOptions o;
  o.size = 8;
  auto m = make_fixture_corpus(dir, o);
  m.stats_by_modality[Modality::RGBN] = compute_stats(m, Modality::RGBN);
  std::filesystem::create_directories(dir / "sub");
  save_manifest(m, dir / "sub" / "moved.json");
  auto back = load_manifest(dir / "sub" / "moved.json");
  ASSERT_EQ(back.entries.size(), m.entries.size());
  EXPECT_EQ(back.entries[0].tile_path, "../tiles/s2_0.eovt");
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].split, m.entries[i].split);
    EXPECT_EQ(back.entries[i].lon, m.entries[i].lon);
    EXPECT_EQ(back.load(back.entries[i]).pixels(), m.load(m.entries[i]).pixels());
  }
  EXPECT_EQ(back.stats_for(Modality::RGBN).mean, m.stats_for(Modality::RGBN).mean);
  EXPECT_THROW(back.stats_for(Modality::S1RTC), ConfigError);

  m.entries[1].tile_path = m.entries[0].tile_path;
  EXPECT_THROW(m.validate(), ManifestError);
}

TEST(Fixtures, EveryModalityHasEverySplit) {
  auto dir = eovae::testing::scratch_dir("fixture_splits");
  CorpusOptions o;
  o.size = 8;
  auto m = make_fixture_corpus(dir, o);
  for (auto mod : {Modality::S2L2A, Modality::S1RTC, Modality::RGBN})
    for (auto sp : {Split::TRAIN, Split::VAL, Split::TEST}) EXPECT_FALSE(m.select(mod, sp).empty());
}

TEST(Resample, AreaAndBicubic) {
  Tensor<float> x({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  auto d = downsample_area(x, 2);
  EXPECT_FLOAT_EQ(d[0], (0 + 1 + 4 + 5) / 4.0f);
  Tensor<float> flat({2, 3, 3}, 0.25f);
  const auto flat_up = upsample_bicubic(flat, 4);
  for (float v : flat_up.values()) EXPECT_NEAR(v, 0.25f, 1e-6);
  // Linear ramps are reproduced away from the clamped border.
  Tensor<float> ramp({1, 8, 8});
  for (std::int64_t y = 0; y < 8; ++y)
    for (std::int64_t xx = 0; xx < 8; ++xx) ramp.at(0, y, xx) = static_cast<float>(xx);
  auto up = upsample_bicubic(ramp, 2);
  for (std::int64_t xx = 4; xx < 12; ++xx) EXPECT_NEAR(up.at(0, 5, xx), (xx + 0.5) / 2.0 - 0.5, 1e-5);
}
