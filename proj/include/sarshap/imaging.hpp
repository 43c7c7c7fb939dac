#pragma once

// Amplitude images, region label maps, baseline fields, masked-input
// composition, and file I/O (binary PGM and raw little-endian float32).

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "sarshap/coalition.hpp"
#include "sarshap/error.hpp"
#include "sarshap/rng.hpp"

namespace sarshap {

enum class Region : std::uint8_t { clutter = 0, target = 1, shadow = 2 };

inline constexpr int kRegionCount = 3;
inline constexpr std::array<const char*, kRegionCount> kRegionNames = {"clutter", "target", "shadow"};

inline constexpr Coalition region_bit(Region r) noexcept { return player_bit(static_cast<int>(r)); }
inline constexpr Coalition kAllRegions = 0b111;

inline PlayerSet region_players() { return PlayerSet(kRegionCount, {"clutter", "target", "shadow"}); }

// Row-major H x W amplitude matrix. Entries are finite and non-negative;
// values above 1 are allowed (re-weighted clutter).
class AmplitudeImage {
 public:
  AmplitudeImage() = default;

  AmplitudeImage(int height, int width, double fill = 0.0)
      : AmplitudeImage(height, width, std::vector<double>(checked_area(height, width), fill)) {}

  AmplitudeImage(int height, int width, std::vector<double> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != checked_area(height, width))
      throw InvalidArgument("image data length " + std::to_string(data_.size()) + " does not match " +
                            std::to_string(height) + "x" + std::to_string(width));
    for (double v : data_)
      if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("image amplitudes must be finite and non-negative");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }

  double operator[](std::size_t p) const { return data_[p]; }
  double at(int row, int col) const { return data_.at(static_cast<std::size_t>(row) * width_ + col); }

  bool same_shape(int h, int w) const noexcept { return h == height_ && w == width_; }

  bool operator==(const AmplitudeImage&) const = default;

  static std::size_t checked_area(int height, int width) {
    if (height <= 0 || width <= 0) throw InvalidArgument("image dimensions must be positive");
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }

 private:
  // Skips validation; used by producers that already guarantee the invariants.
  struct Trusted {};
  AmplitudeImage(Trusted, int height, int width, std::vector<double> data)
      : height_(height), width_(width), data_(std::move(data)) {}

  friend AmplitudeImage make_trusted_image(int, int, std::vector<double>);

  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

inline AmplitudeImage make_trusted_image(int height, int width, std::vector<double> data) {
  return AmplitudeImage(AmplitudeImage::Trusted{}, height, width, std::move(data));
}

class RegionLabelMap {
 public:
  RegionLabelMap() = default;

  RegionLabelMap(int height, int width, std::vector<std::uint8_t> labels)
      : height_(height), width_(width), labels_(std::move(labels)) {
    if (labels_.size() != AmplitudeImage::checked_area(height, width))
      throw InvalidArgument("label map length does not match its dimensions");
    for (std::size_t p = 0; p < labels_.size(); ++p)
      if (labels_[p] >= kRegionCount)
        throw InvalidArgument("label value " + std::to_string(labels_[p]) + " at pixel " + std::to_string(p) +
                              " is not one of {0=clutter, 1=target, 2=shadow}");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }
  Region operator[](std::size_t p) const { return static_cast<Region>(labels_[p]); }

  bool matches(const AmplitudeImage& image) const noexcept { return image.same_shape(height_, width_); }

  std::size_t count(Region r) const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), static_cast<std::uint8_t>(r)));
  }

  bool operator==(const RegionLabelMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> labels_;
};

struct RegionMasks {
  std::vector<std::uint8_t> clutter;
  std::vector<std::uint8_t> target;
  std::vector<std::uint8_t> shadow;

  const std::vector<std::uint8_t>& operator[](Region r) const {
    switch (r) {
      case Region::clutter: return clutter;
      case Region::target: return target;
      default: return shadow;
    }
  }
};

inline RegionMasks masks_from_labelmap(const RegionLabelMap& labels) {
  RegionMasks m;
  m.clutter.assign(labels.size(), 0);
  m.target.assign(labels.size(), 0);
  m.shadow.assign(labels.size(), 0);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    switch (labels[p]) {
      case Region::clutter: m.clutter[p] = 1; break;
      case Region::target: m.target[p] = 1; break;
      case Region::shadow: m.shadow[p] = 1; break;
    }
  }
  return m;
}

// Builds a label map from possibly overlapping binary masks. Overlaps resolve
// target > shadow > clutter; uncovered pixels become clutter.
inline RegionLabelMap labelmap_from_masks(int height, int width, std::span<const std::uint8_t> target,
                                          std::span<const std::uint8_t> shadow) {
  const auto area = AmplitudeImage::checked_area(height, width);
  if (target.size() != area || shadow.size() != area) throw InvalidArgument("mask size mismatch");
  std::vector<std::uint8_t> labels(area, static_cast<std::uint8_t>(Region::clutter));
  for (std::size_t p = 0; p < area; ++p) {
    if (target[p])
      labels[p] = static_cast<std::uint8_t>(Region::target);
    else if (shadow[p])
      labels[p] = static_cast<std::uint8_t>(Region::shadow);
  }
  return RegionLabelMap(height, width, std::move(labels));
}

struct HalfNormal {
  double sigma = 0.1;
};
struct ConstantFill {
  double value = 0.0;
};
struct ZeroFill {};

// Filler for absent regions.
class BaselineSpec {
 public:
  using Kind = std::variant<HalfNormal, ConstantFill, ZeroFill>;

  BaselineSpec() : kind_(HalfNormal{}) {}
  BaselineSpec(Kind kind) : kind_(kind) { validate(); }  // NOLINT(google-explicit-constructor)

  static BaselineSpec half_normal(double sigma) { return BaselineSpec(HalfNormal{sigma}); }
  static BaselineSpec constant(double c) { return BaselineSpec(ConstantFill{c}); }
  static BaselineSpec zero() { return BaselineSpec(ZeroFill{}); }

  // "half_normal:0.1", "constant:0.3", "zero".
  static BaselineSpec parse(const std::string& text) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    auto number = [&](double fallback) {
      if (arg.empty()) return fallback;
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(arg, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != arg.size()) throw InvalidArgument("bad baseline parameter '" + arg + "'");
      return v;
    };
    if (kind == "half_normal") return half_normal(number(0.1));
    if (kind == "constant") return constant(number(0.0));
    if (kind == "zero" && arg.empty()) return zero();
    throw InvalidArgument("unknown baseline '" + text + "' (expected half_normal:S, constant:C or zero)");
  }

  const Kind& kind() const noexcept { return kind_; }
  bool is_random() const noexcept { return std::holds_alternative<HalfNormal>(kind_); }

  std::string to_string() const {
    auto shortest = [](double v) {
      char buf[32];
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      return std::string(buf, res.ptr);
    };
    if (const auto* h = std::get_if<HalfNormal>(&kind_)) return "half_normal:" + shortest(h->sigma);
    if (const auto* c = std::get_if<ConstantFill>(&kind_)) return "constant:" + shortest(c->value);
    return "zero";
  }

 private:
  void validate() const {
    if (const auto* h = std::get_if<HalfNormal>(&kind_); h && !(h->sigma > 0.0 && std::isfinite(h->sigma)))
      throw InvalidArgument("half-normal baseline needs sigma > 0");
    if (const auto* c = std::get_if<ConstantFill>(&kind_); c && !(c->value >= 0.0 && std::isfinite(c->value)))
      throw InvalidArgument("constant baseline needs a finite value >= 0");
  }

  Kind kind_;
};

struct BaselineField {
  AmplitudeImage image;
  std::uint64_t seed = 0;
};

// Per-pixel i.i.d. draws from the baseline distribution; deterministic per seed.
inline BaselineField sample_baseline(const BaselineSpec& spec, int height, int width, std::uint64_t seed) {
  const auto area = AmplitudeImage::checked_area(height, width);
  std::vector<double> data(area, 0.0);
  if (const auto* h = std::get_if<HalfNormal>(&spec.kind())) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, h->sigma);
    for (auto& v : data) v = std::abs(gauss(rng));
  } else if (const auto* c = std::get_if<ConstantFill>(&spec.kind())) {
    std::fill(data.begin(), data.end(), c->value);
  }
  return {make_trusted_image(height, width, std::move(data)), seed};
}

// BShap input: pixels of kept regions come from the image, all others from
// the baseline field.
inline AmplitudeImage compose_masked_input(const AmplitudeImage& image, const RegionLabelMap& labels, Coalition keep,
                                           const AmplitudeImage& baseline, bool clamp = false) {
  if (!labels.matches(image) || !baseline.same_shape(image.height(), image.width()))
    throw InvalidArgument("image, label map and baseline must share dimensions");
  std::vector<double> out(image.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    const bool kept = contains(keep, static_cast<int>(labels[p]));
    double v = kept ? image[p] : baseline[p];
    if (clamp) v = std::min(v, 1.0);
    out[p] = v;
  }
  return make_trusted_image(image.height(), image.width(), std::move(out));
}

inline AmplitudeImage clamp_unit(const AmplitudeImage& image) {
  std::vector<double> out(image.data().begin(), image.data().end());
  for (auto& v : out) v = std::min(v, 1.0);
  return make_trusted_image(image.height(), image.width(), std::move(out));
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

enum class ImageFormat { pgm8, rawf32 };

namespace detail {

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed for " + path.string());
}

struct Pgm {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

inline Pgm parse_pgm(const std::vector<char>& bytes, const std::string& origin) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> void { throw IoError("malformed PGM header in " + origin + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    long value = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + (bytes[pos] - '0');
      if (value > (1L << 24)) fail("value too large");
      ++pos;
      ++digits;
    }
    if (digits == 0) fail("expected integer");
    return static_cast<int>(value);
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("missing P5 magic");
  pos = 2;
  Pgm pgm;
  pgm.width = read_int();
  pgm.height = read_int();
  const int maxval = read_int();
  if (pgm.width <= 0 || pgm.height <= 0) fail("non-positive dimensions");
  if (maxval != 255) fail("only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) fail("missing separator");
  ++pos;
  const auto area = static_cast<std::size_t>(pgm.width) * pgm.height;
  if (bytes.size() - pos != area)
    throw IoError("PGM payload in " + origin + " has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                  std::to_string(area));
  pgm.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return pgm;
}

inline void write_pgm(const std::filesystem::path& path, int height, int width, std::span<const std::uint8_t> px) {
  std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<char> buf(header.begin(), header.end());
  buf.insert(buf.end(), px.begin(), px.end());
  write_file(path, buf.data(), buf.size());
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& raw) {
  auto p = raw;
  p.replace_extension(".json");
  return p;
}

}  // namespace detail

inline AmplitudeImage load_image(const std::filesystem::path& path, ImageFormat format) {
  const auto bytes = detail::read_file(path);
  if (format == ImageFormat::pgm8) {
    const auto pgm = detail::parse_pgm(bytes, path.string());
    std::vector<double> data(pgm.pixels.size());
    std::transform(pgm.pixels.begin(), pgm.pixels.end(), data.begin(),
                   [](std::uint8_t b) { return static_cast<double>(b) / 255.0; });
    return make_trusted_image(pgm.height, pgm.width, std::move(data));
  }

  const auto sidecar = detail::sidecar_path(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_file(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed sidecar " + sidecar.string() + ": " + e.what());
  }
  int height = 0;
  int width = 0;
  try {
    height = meta.at("height").get<int>();
    width = meta.at("width").get<int>();
    if (meta.contains("dtype") && meta.at("dtype").get<std::string>() != "f32le")
      throw IoError("unsupported dtype in " + sidecar.string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed sidecar " + sidecar.string() + ": " + e.what());
  }
  const auto area = AmplitudeImage::checked_area(height, width);
  if (bytes.size() != area * 4)
    throw IoError("rawf32 payload " + path.string() + " holds " + std::to_string(bytes.size() / 4) +
                  " floats but sidecar declares " + std::to_string(height) + "x" + std::to_string(width));
  std::vector<double> data(area);
  for (std::size_t p = 0; p < area; ++p) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<std::uint8_t>(bytes[p * 4 + b]);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) throw IoError("non-finite value at pixel " + std::to_string(p) + " of " + path.string());
    if (f < 0.0f) throw IoError("negative amplitude at pixel " + std::to_string(p) + " of " + path.string());
    data[p] = static_cast<double>(f);
  }
  return make_trusted_image(height, width, std::move(data));
}

// pgm8 quantizes to the 1/255 grid (clamped to [0,1]); rawf32 stores float32.
inline void save_image(const std::filesystem::path& path, const AmplitudeImage& image, ImageFormat format) {
  if (format == ImageFormat::pgm8) {
    std::vector<std::uint8_t> px(image.size());
    for (std::size_t p = 0; p < px.size(); ++p)
      px[p] = static_cast<std::uint8_t>(std::lround(std::clamp(image[p], 0.0, 1.0) * 255.0));
    detail::write_pgm(path, image.height(), image.width(), px);
    return;
  }
  std::vector<char> buf(image.size() * 4);
  for (std::size_t p = 0; p < image.size(); ++p) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(image[p]));
    for (int b = 0; b < 4; ++b) buf[p * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  detail::write_file(path, buf.data(), buf.size());
  const nlohmann::json meta = {{"height", image.height()}, {"width", image.width()}, {"dtype", "f32le"}};
  const auto text = meta.dump();
  detail::write_file(detail::sidecar_path(path), text.data(), text.size());
}

// Label maps are PGM P5 files holding the raw region values 0/1/2.
inline RegionLabelMap load_labels(const std::filesystem::path& path) {
  auto pgm = detail::parse_pgm(detail::read_file(path), path.string());
  return RegionLabelMap(pgm.height, pgm.width, std::move(pgm.pixels));
}

inline void save_labels(const std::filesystem::path& path, const RegionLabelMap& labels) {
  detail::write_pgm(path, labels.height(), labels.width(), labels.labels());
}

inline ImageFormat parse_image_format(const std::string& text) {
  if (text == "pgm8" || text == "pgm") return ImageFormat::pgm8;
  if (text == "rawf32" || text == "f32") return ImageFormat::rawf32;
  throw InvalidArgument("unknown image format '" + text + "' (expected pgm8 or rawf32)");
}

}  // namespace sarshap
