#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sarshap/dataset.hpp"
#include "sarshap/evaluators.hpp"
#include "sarshap/scr.hpp"
#include "sarshap/synthetic.hpp"
#include "support.hpp"

using namespace sarshap;

namespace {

std::vector<double> class_mean_scr(const Dataset& ds) {
  std::vector<double> sum(ds.class_count(), 0.0);
  std::vector<int> n(ds.class_count(), 0);
  for (const auto& s : ds.samples) {
    sum[s.class_index] += compute_scr(s.image, s.labels).scr_db;
    ++n[s.class_index];
  }
  for (int c = 0; c < ds.class_count(); ++c) sum[c] /= n[c];
  return sum;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST(Ladder, Values) {
  ASSERT_EQ(kMstarScrLadder.size(), 10u);
  EXPECT_STREQ(kMstarScrLadder[0].first, "BTR70");
  EXPECT_EQ(kMstarScrLadder[0].second, 9.32);
  EXPECT_EQ(kMstarScrLadder[9].second, 16.74);
  const auto cfg = ladder_config();
  EXPECT_DOUBLE_EQ(cfg.classes[3].scr_lo_db, 10.03);
  EXPECT_DOUBLE_EQ(cfg.classes[3].scr_hi_db, 11.03);
}

TEST(Generate, ClassMeansFollowLadder) {
  auto cfg = ladder_config();
  cfg.seed = 3;
  const auto ds = generate_dataset(cfg, Split::train);
  ASSERT_EQ(ds.samples.size(), 1000u);
  const auto means = class_mean_scr(ds);
  for (int c = 0; c < 10; ++c) {
    const double mid = 0.5 * (cfg.classes[c].scr_lo_db + cfg.classes[c].scr_hi_db);
    EXPECT_LT(std::abs(means[c] - mid), 0.3) << cfg.classes[c].name;
  }
}

TEST(Generate, DebiasedClassesAgree) {
  auto cfg = debiased_config(11.0, 14.0);
  cfg.seed = 4;
  const auto means = class_mean_scr(generate_dataset(cfg, Split::train));
  const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
  EXPECT_LT(*hi - *lo, 0.3);
}

TEST(Generate, Deterministic) {
  auto cfg = ladder_config();
  cfg.train_per_class = 3;
  const auto a = generate_dataset(cfg, Split::train);
  const auto b = generate_dataset(cfg, Split::train);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    EXPECT_EQ(a.samples[k].id, b.samples[k].id);
    for (std::size_t p = 0; p < a.samples[k].image.size(); ++p) ASSERT_EQ(a.samples[k].image[p], b.samples[k].image[p]);
  }
  cfg.seed = 1;
  const auto c = generate_dataset(cfg, Split::train);
  EXPECT_NE(a.samples[0].image[0], c.samples[0].image[0]);
  const auto test = generate_dataset(cfg, Split::test);
  EXPECT_EQ(test.samples.size(), 500u);
  EXPECT_EQ(test.samples[0].id, "BTR70/test_000000");
}

TEST(Generate, RegionsAndScrExact) {
  auto cfg = ladder_config();
  cfg.train_per_class = 5;
  cfg.seed = 9;
  for (const auto& s : generate_dataset(cfg, Split::train).samples) {
    for (int r = 0; r < kRegionCount; ++r) EXPECT_GT(s.labels.count(static_cast<Region>(r)), 0u);
    ASSERT_TRUE(s.scr_db.has_value());
    EXPECT_NEAR(compute_scr(s.image, s.labels).scr_db, *s.scr_db, 1e-6);
    for (double v : s.image.data()) ASSERT_GE(v, 0.0);
  }
}

TEST(Generate, ShadowSitsBelowTarget) {
  auto cfg = ladder_config();
  cfg.jitter = 0;
  const auto s = generate_sample(cfg, Split::train, 0, 0);
  // Every shadow pixel has a target pixel somewhere above it in its column.
  for (int r = 0; r < s.labels.height(); ++r)
    for (int c = 0; c < s.labels.width(); ++c) {
      if (s.labels[static_cast<std::size_t>(r) * s.labels.width() + c] != Region::shadow) continue;
      bool found = false;
      for (int rr = 0; rr < r && !found; ++rr)
        found = s.labels[static_cast<std::size_t>(rr) * s.labels.width() + c] == Region::target;
      EXPECT_TRUE(found);
    }
}

TEST(Generate, TextureKnob) {
  auto cfg = ladder_config();
  cfg.classes.resize(2);
  cfg.classes[1].correlation_length = 5;
  const auto rough = generate_sample(cfg, Split::train, 0, 0);
  const auto smooth = generate_sample(cfg, Split::train, 1, 0);
  auto neighbour_corr = [](const Sample& s) {
    double num = 0.0, den = 0.0, mean = 0.0;
    int n = 0;
    for (std::size_t p = 0; p < s.image.size(); ++p)
      if (s.labels[p] == Region::clutter) mean += s.image[p], ++n;
    mean /= n;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c + 1 < 64; ++c) {
        const std::size_t p = static_cast<std::size_t>(r) * 64 + c;
        if (s.labels[p] != Region::clutter || s.labels[p + 1] != Region::clutter) continue;
        num += (s.image[p] - mean) * (s.image[p + 1] - mean);
        den += (s.image[p] - mean) * (s.image[p] - mean);
      }
    return num / den;
  };
  EXPECT_LT(std::abs(neighbour_corr(rough)), 0.1);
  EXPECT_GT(neighbour_corr(smooth), 0.5);
  EXPECT_NEAR(compute_scr(smooth.image, smooth.labels).scr_db, *smooth.scr_db, 1e-6);
}

TEST(Generate, ClutterAloneIsPredictive) {
  auto cfg = ladder_config();
  cfg.seed = 12;
  const auto train = generate_dataset(cfg, Split::train);
  const auto test = generate_dataset(cfg, Split::test);
  std::vector<double> centroid(10, 0.0);
  for (const auto& s : train.samples) centroid[s.class_index] += region_means(s.image, s.labels)[0] / 100.0;
  int correct = 0;
  for (const auto& s : test.samples) {
    const double m = region_means(s.image, s.labels)[0];
    int best = 0;
    for (int c = 1; c < 10; ++c)
      if (std::abs(m - centroid[c]) < std::abs(m - centroid[best])) best = c;
    correct += best == s.class_index;
  }
  EXPECT_GT(correct / 500.0, 0.2);
}

TEST(Config, Validation) {
  auto cfg = ladder_config();
  cfg.target_scale = 3.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = ladder_config();
  cfg.height = 8;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = ladder_config();
  cfg.classes[1].name = cfg.classes[0].name;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = ladder_config();
  cfg.classes[0].scr_lo_db = 20;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = ladder_config();
  cfg.jitter = 30;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = ladder_config();
  cfg.height = cfg.width = 32;
  cfg.target_scale = 1.0;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, JsonRoundTrip) {
  auto cfg = ladder_config();
  cfg.seed = 77;
  cfg.jitter = 2;
  cfg.shadow_direction = ShadowDirection::left;
  cfg.classes[2].correlation_length = 3;
  const auto back = bias_config_from_json(nlohmann::json::parse(bias_config_to_json(cfg).dump()));
  EXPECT_EQ(bias_config_to_json(back), bias_config_to_json(cfg));
  EXPECT_THROW(bias_config_from_json(nlohmann::json{{"shadow_direction", "sideways"}}), InvalidArgument);
}

TEST(Intervention, FixedTarget) {
  auto cfg = ladder_config();
  cfg.train_per_class = 10;
  const auto ds = generate_dataset(cfg, Split::train);
  std::vector<InterventionRecord> records;
  const auto out = apply_intervention(ds, ScrTargetSpec::fixed(12.0), 1, &records);
  ASSERT_EQ(records.size(), ds.samples.size());
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    const auto& before = ds.samples[k];
    const auto& after = out.samples[k];
    EXPECT_NEAR(compute_scr(after.image, after.labels).scr_db, 12.0, 1e-6);
    EXPECT_EQ(records[k].scr_prime_db, 12.0);
    EXPECT_NEAR(records[k].scr_db, *before.scr_db, 1e-6);
    for (std::size_t p = 0; p < before.image.size(); ++p)
      if (before.labels[p] != Region::clutter) ASSERT_EQ(after.image[p], before.image[p]);
  }
}

TEST(Intervention, UniformOnUniformKeepsDistribution) {
  auto cfg = debiased_config(11.0, 14.0);
  cfg.seed = 21;
  const auto ds = generate_dataset(cfg, Split::train);
  const auto out = apply_intervention(ds, ScrTargetSpec::uniform(11.0, 14.0), 5);
  std::vector<double> a, b;
  for (const auto& s : ds.samples) a.push_back(compute_scr(s.image, s.labels).scr_db);
  for (const auto& s : out.samples) b.push_back(compute_scr(s.image, s.labels).scr_db);
  // Critical value at the 1% level for two samples of 1000 is about 0.073.
  EXPECT_LT(ks_statistic(a, b), 0.073);
}

TEST(Intervention, DrawsAreKeyedById) {
  auto cfg = ladder_config();
  cfg.train_per_class = 4;
  const auto ds = generate_dataset(cfg, Split::train);
  Dataset reversed = ds;
  std::reverse(reversed.samples.begin(), reversed.samples.end());
  const auto a = apply_intervention(ds, ScrTargetSpec::uniform(11, 14), 3);
  const auto b = apply_intervention(reversed, ScrTargetSpec::uniform(11, 14), 3);
  for (std::size_t k = 0; k < a.samples.size(); ++k)
    EXPECT_EQ(*a.samples[k].scr_db, *b.samples[a.samples.size() - 1 - k].scr_db);
}

TEST(DatasetIo, RoundTripRaw) {
  testing_support::TempDir dir("ds");
  auto cfg = ladder_config();
  cfg.train_per_class = 2;
  cfg.classes.resize(3);
  const auto ds = generate_dataset(cfg, Split::train);
  write_dataset(dir.path(), ds, ImageFormat::rawf32, bias_config_to_json(cfg));
  const auto back = read_dataset(dir.path());
  EXPECT_EQ(back.class_names, ds.class_names);
  ASSERT_EQ(back.samples.size(), ds.samples.size());
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    EXPECT_EQ(back.samples[k].id, ds.samples[k].id);
    EXPECT_EQ(back.samples[k].class_index, ds.samples[k].class_index);
    EXPECT_EQ(back.samples[k].seed, ds.samples[k].seed);
    for (std::size_t p = 0; p < ds.samples[k].image.size(); ++p) {
      ASSERT_EQ(back.samples[k].image[p], static_cast<double>(static_cast<float>(ds.samples[k].image[p])));
      ASSERT_EQ(back.samples[k].labels[p], ds.samples[k].labels[p]);
    }
  }
}

TEST(DatasetIo, PgmWithoutManifest) {
  testing_support::TempDir dir("dsp");
  auto cfg = ladder_config();
  cfg.train_per_class = 2;
  cfg.classes.resize(2);
  const auto ds = generate_dataset(cfg, Split::train);
  write_dataset(dir.path(), ds);
  std::filesystem::remove(dir / "manifest.json");
  const auto back = read_dataset(dir.path());
  ASSERT_EQ(back.samples.size(), 4u);
  // Directory order is lexicographic: BMPR2 before BTR70.
  EXPECT_EQ(back.class_names, (std::vector<std::string>{"BMPR2", "BTR70"}));
  EXPECT_EQ(back.samples[0].id, "BMPR2/train_000000");
  EXPECT_NEAR(back.samples[0].image[0], ds.samples[2].image[0], 0.5 / 255.0 + 1e-12);
}

TEST(DatasetIo, Errors) {
  testing_support::TempDir dir("dse");
  EXPECT_THROW(read_dataset(dir / "missing"), IoError);
  EXPECT_THROW(read_dataset(dir.path()), IoError);
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(read_dataset(dir.path()), IoError);
}
