#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "sarshap/imaging.hpp"
#include "support.hpp"

using namespace sarshap;
using testing_support::TempDir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST(AmplitudeImage, Validation) {
  EXPECT_THROW(AmplitudeImage(2, 2, {0.0, 0.1, 0.2}), InvalidArgument);
  EXPECT_THROW(AmplitudeImage(1, 2, {0.0, -0.1}), InvalidArgument);
  EXPECT_THROW(AmplitudeImage(1, 2, {0.0, NAN}), InvalidArgument);
  EXPECT_THROW(AmplitudeImage(0, 2, {}), InvalidArgument);
  const AmplitudeImage img(2, 3, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(img.at(1, 2), 5.0);
}

TEST(ImageIo, PgmBytesScaleBy255) {
  TempDir dir("pgm");
  write_bytes(dir / "a.pgm", std::string("P5\n2 2\n255\n") + std::string("\x00\xff\x80\x40", 4));
  const auto img = load_image(dir / "a.pgm", ImageFormat::pgm8);
  ASSERT_EQ(img.height(), 2);
  ASSERT_EQ(img.width(), 2);
  EXPECT_EQ(img[0], 0.0);
  EXPECT_EQ(img[1], 1.0);
  EXPECT_DOUBLE_EQ(img[2], 128.0 / 255.0);
  EXPECT_DOUBLE_EQ(img[3], 64.0 / 255.0);
  EXPECT_NEAR(img[2], 0.50196, 1e-5);
  EXPECT_NEAR(img[3], 0.25098, 1e-5);
}

TEST(ImageIo, PgmHeaderComments) {
  TempDir dir("pgmc");
  write_bytes(dir / "a.pgm", std::string("P5\n# made by hand\n1 1\n# another\n255\n") + std::string("\x33", 1));
  EXPECT_DOUBLE_EQ(load_image(dir / "a.pgm", ImageFormat::pgm8)[0], 51.0 / 255.0);
}

TEST(ImageIo, PgmMalformed) {
  TempDir dir("pgmbad");
  write_bytes(dir / "magic.pgm", "P2\n1 1\n255\n0");
  EXPECT_THROW(load_image(dir / "magic.pgm", ImageFormat::pgm8), IoError);
  write_bytes(dir / "short.pgm", std::string("P5\n2 2\n255\n") + std::string("\x01\x02", 2));
  EXPECT_THROW(load_image(dir / "short.pgm", ImageFormat::pgm8), IoError);
  write_bytes(dir / "maxval.pgm", std::string("P5\n1 1\n65535\n") + std::string("\x01\x02", 2));
  EXPECT_THROW(load_image(dir / "maxval.pgm", ImageFormat::pgm8), IoError);
  EXPECT_THROW(load_image(dir / "absent.pgm", ImageFormat::pgm8), IoError);
}

TEST(ImageIo, RawZeros) {
  TempDir dir("raw0");
  write_bytes(dir / "z.f32", std::string(9 * 4, '\0'));
  write_bytes(dir / "z.json", R"({"height":3,"width":3,"dtype":"f32le"})");
  const auto img = load_image(dir / "z.f32", ImageFormat::rawf32);
  ASSERT_EQ(img.height(), 3);
  for (double v : img.data()) EXPECT_EQ(v, 0.0);
}

TEST(ImageIo, RawLengthMismatch) {
  TempDir dir("rawbad");
  write_bytes(dir / "x.f32", std::string(12 * 4, '\0'));
  write_bytes(dir / "x.json", R"({"height":4,"width":4})");
  EXPECT_THROW(load_image(dir / "x.f32", ImageFormat::rawf32), IoError);
}

TEST(ImageIo, RawRejectsNegative) {
  TempDir dir("rawneg");
  const float v = -1.0f;
  write_bytes(dir / "n.f32", std::string(reinterpret_cast<const char*>(&v), 4));
  write_bytes(dir / "n.json", R"({"height":1,"width":1})");
  EXPECT_THROW(load_image(dir / "n.f32", ImageFormat::rawf32), IoError);
}

TEST(ImageIo, RoundTrips) {
  TempDir dir("rt");
  const AmplitudeImage img(2, 3, {0.0, 0.25, 0.5, 0.75, 1.0, 1.5});
  save_image(dir / "a.f32", img, ImageFormat::rawf32);
  const auto raw = load_image(dir / "a.f32", ImageFormat::rawf32);
  for (std::size_t p = 0; p < img.size(); ++p) EXPECT_EQ(raw[p], img[p]);

  save_image(dir / "a.pgm", img, ImageFormat::pgm8);
  const auto pgm = load_image(dir / "a.pgm", ImageFormat::pgm8);
  EXPECT_EQ(pgm[5], 1.0);  // clamped
  EXPECT_DOUBLE_EQ(pgm[1], 64.0 / 255.0);

  const RegionLabelMap labels(2, 3, {0, 1, 2, 2, 1, 0});
  save_labels(dir / "l.pgm", labels);
  const auto back = load_labels(dir / "l.pgm");
  for (std::size_t p = 0; p < labels.size(); ++p) EXPECT_EQ(back[p], labels[p]);
}

TEST(Masks, AllZeroMapIsAllClutter) {
  const RegionLabelMap labels(3, 3, std::vector<std::uint8_t>(9, 0));
  const auto m = masks_from_labelmap(labels);
  for (std::size_t p = 0; p < 9; ++p) {
    EXPECT_EQ(m.clutter[p], 1);
    EXPECT_EQ(m.target[p], 0);
    EXPECT_EQ(m.shadow[p], 0);
  }
}

TEST(Masks, Checkerboard) {
  std::vector<std::uint8_t> l(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) l[r * 4 + c] = static_cast<std::uint8_t>((r + c) % 2);
  const auto m = masks_from_labelmap(RegionLabelMap(4, 4, l));
  for (std::size_t p = 0; p < 16; ++p) {
    EXPECT_EQ(m.clutter[p] + m.target[p], 1);
    EXPECT_EQ(m.shadow[p], 0);
  }
}

TEST(Masks, InvalidLabel) {
  EXPECT_THROW(RegionLabelMap(1, 2, {0, 3}), InvalidArgument);
  EXPECT_THROW(RegionLabelMap(2, 2, {0, 1, 2}), InvalidArgument);
}

TEST(Masks, PartitionProperty) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + static_cast<int>(gen() % 12);
    const int w = 1 + static_cast<int>(gen() % 12);
    std::vector<std::uint8_t> t(h * w), s(h * w);
    for (auto& x : t) x = gen() % 4 == 0;
    for (auto& x : s) x = gen() % 3 == 0;
    const auto labels = labelmap_from_masks(h, w, t, s);
    const auto m = masks_from_labelmap(labels);
    std::size_t counted = 0;
    for (int r = 0; r < kRegionCount; ++r) counted += labels.count(static_cast<Region>(r));
    EXPECT_EQ(counted, labels.size());
    for (std::size_t p = 0; p < labels.size(); ++p) {
      EXPECT_EQ(m.clutter[p] + m.target[p] + m.shadow[p], 1);
      if (t[p]) EXPECT_EQ(m.target[p], 1);  // target wins overlaps
      else if (s[p]) EXPECT_EQ(m.shadow[p], 1);
    }
  }
}

TEST(Baseline, ParseAndValidate) {
  EXPECT_EQ(BaselineSpec::parse("half_normal:0.1").to_string(), BaselineSpec::half_normal(0.1).to_string());
  EXPECT_EQ(BaselineSpec::parse("zero").to_string(), "zero");
  EXPECT_THROW(BaselineSpec::parse("half_normal:0"), InvalidArgument);
  EXPECT_THROW(BaselineSpec::parse("half_normal:-1"), InvalidArgument);
  EXPECT_THROW(BaselineSpec::parse("constant:-0.5"), InvalidArgument);
  EXPECT_THROW(BaselineSpec::parse("gauss:1"), InvalidArgument);
  EXPECT_THROW(BaselineSpec::parse("half_normal:abc"), InvalidArgument);
}

TEST(Baseline, Constant) {
  const auto f = sample_baseline(BaselineSpec::constant(0.3), 2, 2, 0);
  for (double v : f.image.data()) EXPECT_EQ(v, 0.3);
  const auto z = sample_baseline(BaselineSpec::zero(), 2, 2, 0);
  for (double v : z.image.data()) EXPECT_EQ(v, 0.0);
}

TEST(Baseline, HalfNormalMean) {
  const auto f = sample_baseline(BaselineSpec::half_normal(0.1), 256, 256, 42);
  const auto d = f.image.data();
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) {
    EXPECT_GE(x, 0.0);
    ss += (x - mean) * (x - mean);
  }
  const double sem = std::sqrt(ss / (n - 1) / n);
  const double expected = 0.1 * std::sqrt(2.0 / M_PI);
  EXPECT_NEAR(expected, 0.07979, 1e-5);
  EXPECT_LT(std::abs(mean - expected), 4 * sem);
}

TEST(Baseline, Deterministic) {
  const auto a = sample_baseline(BaselineSpec::half_normal(0.1), 8, 8, 5);
  const auto b = sample_baseline(BaselineSpec::half_normal(0.1), 8, 8, 5);
  const auto c = sample_baseline(BaselineSpec::half_normal(0.1), 8, 8, 6);
  for (std::size_t p = 0; p < 64; ++p) EXPECT_EQ(a.image[p], b.image[p]);
  EXPECT_NE(a.image[0], c.image[0]);
}

TEST(Compose, Identities) {
  const auto labels = testing_support::small_labels();
  const auto img = testing_support::small_image(1);
  const auto base = sample_baseline(BaselineSpec::half_normal(0.1), 6, 6, 3).image;
  const auto all = compose_masked_input(img, labels, kAllRegions, base);
  const auto none = compose_masked_input(img, labels, 0, base);
  for (std::size_t p = 0; p < img.size(); ++p) {
    EXPECT_EQ(all[p], img[p]);
    EXPECT_EQ(none[p], base[p]);
  }
}

TEST(Compose, TargetOnly) {
  const auto labels = testing_support::small_labels();
  const auto img = testing_support::small_image(2);
  const auto base = sample_baseline(BaselineSpec::half_normal(0.1), 6, 6, 4).image;
  const auto out = compose_masked_input(img, labels, region_bit(Region::target), base);
  for (std::size_t p = 0; p < img.size(); ++p)
    EXPECT_EQ(out[p], labels[p] == Region::target ? img[p] : base[p]);
}

TEST(Compose, EveryCoalitionIsLocal) {
  const auto labels = testing_support::small_labels();
  const auto img = testing_support::small_image(3);
  const auto base = sample_baseline(BaselineSpec::half_normal(0.1), 6, 6, 5).image;
  for (Coalition s = 0; s < 8; ++s) {
    const auto out = compose_masked_input(img, labels, s, base);
    for (std::size_t p = 0; p < img.size(); ++p)
      EXPECT_EQ(out[p], contains(s, static_cast<int>(labels[p])) ? img[p] : base[p]);
  }
}

TEST(Compose, ClampAndShapeMismatch) {
  const RegionLabelMap labels(1, 2, {0, 1});
  const AmplitudeImage img(1, 2, {1.5, 0.5});
  const AmplitudeImage base(1, 2, {2.0, 0.0});
  const auto clamped = compose_masked_input(img, labels, 1, base, true);
  EXPECT_EQ(clamped[0], 1.0);
  EXPECT_EQ(clamped[1], 0.0);
  const AmplitudeImage wrong(2, 1, {0.0, 0.0});
  EXPECT_THROW(compose_masked_input(img, labels, 1, wrong), InvalidArgument);
}
