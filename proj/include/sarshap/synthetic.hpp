#pragma once

// SAR-like synthetic datasets with a controllable class <-> clutter bias.
//
// Each sample has a class-specific target template in the centre
// (amplitudes 0.6-0.9), a shadow cast in a fixed direction (0.02-0.08), and
// exponential-amplitude clutter scaled so the sample's SCR equals a draw from
// its class's SCR range. Clutter statistics are not physically calibrated.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sarshap/dataset.hpp"
#include "sarshap/error.hpp"
#include "sarshap/imaging.hpp"
#include "sarshap/rng.hpp"
#include "sarshap/scr.hpp"

namespace sarshap {

enum class Split { train = 0, test = 1 };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

struct ClassSpec {
  std::string name;
  int shape_id = 0;
  double scr_lo_db = 11.0;
  double scr_hi_db = 14.0;
  // Side of the box filter applied to the raw speckle; 1 means i.i.d. pixels.
  int correlation_length = 1;
};

enum class ShadowDirection { down, up, left, right };

struct BiasConfig {
  std::vector<ClassSpec> classes;
  int height = 64;
  int width = 64;
  int train_per_class = 100;
  int test_per_class = 50;
  std::uint64_t seed = 0;
  double target_scale = 0.85;
  int shadow_length = 10;  // in 64-pixel units
  ShadowDirection shadow_direction = ShadowDirection::down;
  // Per-sample uniform translation of target and shadow, in pixels, each axis.
  int jitter = 1;

  void validate() const;
};

inline constexpr int kShapeCount = 10;

// Training-set clutter SCR per MSTAR class, in dB.
inline constexpr std::array<std::pair<const char*, double>, 10> kMstarScrLadder = {{{"BTR70", 9.32},
                                                                                   {"BMPR2", 9.42},
                                                                                   {"BRDM2", 9.72},
                                                                                   {"BTR60", 10.53},
                                                                                   {"2S1", 11.00},
                                                                                   {"T72", 11.51},
                                                                                   {"T62", 13.83},
                                                                                   {"ZIL131", 14.27},
                                                                                   {"D7", 16.57},
                                                                                   {"ZSU234", 16.74}}};

// Ten classes whose SCR ranges are centred on the ladder, +/- half_width dB.
inline BiasConfig ladder_config(double half_width = 0.5) {
  BiasConfig c;
  for (int k = 0; k < static_cast<int>(kMstarScrLadder.size()); ++k) {
    const auto& [name, scr] = kMstarScrLadder[k];
    c.classes.push_back({name, k, scr - half_width, scr + half_width, 1});
  }
  return c;
}

// Same classes and shapes, every class drawing its SCR from one range.
inline BiasConfig debiased_config(double lo_db = 11.0, double hi_db = 14.0) {
  BiasConfig c = ladder_config();
  for (auto& cls : c.classes) {
    cls.scr_lo_db = lo_db;
    cls.scr_hi_db = hi_db;
  }
  return c;
}

namespace detail {

// Template membership in 64-pixel units, dy pointing down.
inline bool in_template(int shape_id, double dx, double dy) {
  const double ax = std::abs(dx);
  const double ay = std::abs(dy);
  switch (shape_id % kShapeCount) {
    case 0: return ax <= 10 && ay <= 5;                                          // rectangle
    case 1: return (dx / 11) * (dx / 11) + (dy / 7) * (dy / 7) <= 1;             // ellipse
    case 2: return (ax <= 10 && ay <= 2) || (ax <= 2 && ay <= 8);                 // cross
    case 3: return dy >= -7 && dy <= 7 && ax <= (dy + 7) * 10.0 / 14.0;          // triangle
    case 4: return ax / 11 + ay / 8 <= 1;                                         // diamond
    case 5: return ax <= 9 && ay <= 7 && (dx <= -5 || dy >= 3);                   // L
    case 6: return ax <= 10 && ay <= 7 && (dy <= -3 || ax <= 2);                  // T
    case 7: {                                                                     // ring
      const double r2 = (dx / 10) * (dx / 10) + (dy / 8) * (dy / 8);
      return r2 <= 1 && r2 >= 0.45;
    }
    case 8:                                                                       // dumbbell
      return (dx - 7) * (dx - 7) + dy * dy <= 25 || (dx + 7) * (dx + 7) + dy * dy <= 25 || (ax <= 7 && ay <= 1.5);
    default: return ax <= 9 && ay <= 7 && (ax >= 6 || ay <= 1.5);                // H
  }
}

inline constexpr double kTemplateHalfWidth = 12.0;
inline constexpr double kTemplateHalfHeight = 8.0;

struct Geometry {
  int height, width;
  double scale;      // pixels per template unit
  double cy, cx;     // template centre (pixel coordinates)
  int shadow_px;
  int dr, dc;        // shadow step
};

inline Geometry geometry(const BiasConfig& cfg) {
  Geometry g{};
  g.height = cfg.height;
  g.width = cfg.width;
  g.scale = cfg.target_scale * std::min(cfg.height, cfg.width) / 64.0;
  g.shadow_px = std::max(1, static_cast<int>(std::lround(cfg.shadow_length * g.scale)));
  switch (cfg.shadow_direction) {
    case ShadowDirection::down: g.dr = 1, g.dc = 0; break;
    case ShadowDirection::up: g.dr = -1, g.dc = 0; break;
    case ShadowDirection::left: g.dr = 0, g.dc = -1; break;
    case ShadowDirection::right: g.dr = 0, g.dc = 1; break;
  }
  // Shift the target against the shadow so target plus shadow is centred.
  g.cy = cfg.height / 2.0 - g.dr * g.shadow_px / 2.0;
  g.cx = cfg.width / 2.0 - g.dc * g.shadow_px / 2.0;
  return g;
}

inline RegionLabelMap layout(Geometry g, int shape_id, int shift_r = 0, int shift_c = 0) {
  g.cy += shift_r;
  g.cx += shift_c;
  const auto area = static_cast<std::size_t>(g.height) * g.width;
  std::vector<std::uint8_t> target(area, 0);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      const double dx = (c + 0.5 - g.cx) / g.scale;
      const double dy = (r + 0.5 - g.cy) / g.scale;
      if (in_template(shape_id, dx, dy)) target[static_cast<std::size_t>(r) * g.width + c] = 1;
    }
  std::vector<std::uint8_t> shadow(area, 0);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      if (!target[static_cast<std::size_t>(r) * g.width + c]) continue;
      for (int k = 1; k <= g.shadow_px; ++k) {
        const int rr = r + k * g.dr;
        const int cc = c + k * g.dc;
        if (rr < 0 || cc < 0 || rr >= g.height || cc >= g.width) break;
        shadow[static_cast<std::size_t>(rr) * g.width + cc] = 1;
      }
    }
  return labelmap_from_masks(g.height, g.width, target, shadow);
}

}  // namespace detail

inline void BiasConfig::validate() const {
  if (classes.empty()) throw InvalidArgument("bias config needs at least one class");
  if (height < 16 || width < 16) throw InvalidArgument("synthetic images must be at least 16x16");
  if (train_per_class < 0 || test_per_class < 0) throw InvalidArgument("sample counts must be non-negative");
  if (!(target_scale > 0.0)) throw InvalidArgument("target scale must be positive");
  if (shadow_length < 1) throw InvalidArgument("shadow length must be at least 1");
  if (jitter < 0) throw InvalidArgument("jitter must be non-negative");
  for (std::size_t a = 0; a < classes.size(); ++a) {
    const auto& c = classes[a];
    if (c.name.empty() || c.name.find('/') != std::string::npos)
      throw InvalidArgument("class names must be non-empty and contain no '/'");
    if (!(c.scr_lo_db <= c.scr_hi_db)) throw InvalidArgument("class " + c.name + ": SCR range needs lo <= hi");
    if (c.shape_id < 0) throw InvalidArgument("class " + c.name + ": negative shape id");
    if (c.correlation_length < 1) throw InvalidArgument("class " + c.name + ": correlation length must be >= 1");
    for (std::size_t b = a + 1; b < classes.size(); ++b)
      if (classes[b].name == c.name) throw InvalidArgument("duplicate class name " + c.name);
  }
  const auto g = detail::geometry(*this);
  const double top = g.cy - detail::kTemplateHalfHeight * g.scale - std::max(0, -g.dr) * g.shadow_px;
  const double bottom = g.cy + detail::kTemplateHalfHeight * g.scale + std::max(0, g.dr) * g.shadow_px;
  const double left = g.cx - detail::kTemplateHalfWidth * g.scale - std::max(0, -g.dc) * g.shadow_px;
  const double right = g.cx + detail::kTemplateHalfWidth * g.scale + std::max(0, g.dc) * g.shadow_px;
  if (top - jitter < 1 || left - jitter < 1 || bottom + jitter > height - 1 || right + jitter > width - 1)
    throw InvalidArgument("target template and shadow do not fit inside a " + std::to_string(height) + "x" +
                          std::to_string(width) + " image");
}

inline std::uint64_t sample_seed(std::uint64_t root, Split split, int class_index, int index) {
  return derive_seed(root, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(class_index),
                     static_cast<std::uint64_t>(index));
}

inline Sample generate_sample(const BiasConfig& cfg, Split split, int class_index, int index) {
  const auto& cls = cfg.classes.at(class_index);
  const auto g = detail::geometry(cfg);
  const std::uint64_t seed = sample_seed(cfg.seed, split, class_index, index);
  SplitMix64 rng(seed);
  const double scr = cls.scr_lo_db + (cls.scr_hi_db - cls.scr_lo_db) * rng.uniform();
  int shift_r = 0, shift_c = 0;
  if (cfg.jitter > 0) {
    const auto span = static_cast<std::uint64_t>(2 * cfg.jitter + 1);
    shift_r = static_cast<int>(rng() % span) - cfg.jitter;
    shift_c = static_cast<int>(rng() % span) - cfg.jitter;
  }

  RegionLabelMap labels = detail::layout(g, cls.shape_id, shift_r, shift_c);
  for (int r = 0; r < kRegionCount; ++r)
    if (labels.count(static_cast<Region>(r)) == 0)
      throw InvalidArgument(std::string("class ") + cls.name + " produced an empty " + kRegionNames[r] + " region");

  const auto area = labels.size();
  std::vector<double> px(area, 0.0);
  std::vector<double> speckle(area, 0.0);
  for (std::size_t p = 0; p < area; ++p) {
    const double u_region = rng.uniform();
    const double u_speckle = rng.uniform();
    speckle[p] = -std::log1p(-u_speckle);
    switch (labels[p]) {
      case Region::target: px[p] = 0.6 + 0.3 * u_region; break;
      case Region::shadow: px[p] = 0.02 + 0.06 * u_region; break;
      case Region::clutter: break;
    }
  }

  if (cls.correlation_length > 1) {
    const int half = cls.correlation_length / 2;
    std::vector<double> smooth(area, 0.0);
    for (int r = 0; r < g.height; ++r)
      for (int c = 0; c < g.width; ++c) {
        double s = 0.0;
        int n = 0;
        for (int rr = std::max(0, r - half); rr <= std::min(g.height - 1, r - half + cls.correlation_length - 1); ++rr)
          for (int cc = std::max(0, c - half); cc <= std::min(g.width - 1, c - half + cls.correlation_length - 1);
               ++cc, ++n)
            s += speckle[static_cast<std::size_t>(rr) * g.width + cc];
        smooth[static_cast<std::size_t>(r) * g.width + c] = s / n;
      }
    speckle.swap(smooth);
  }

  double sum_target = 0.0, sum_clutter = 0.0;
  std::size_t n_target = 0, n_clutter = 0;
  for (std::size_t p = 0; p < area; ++p) {
    if (labels[p] == Region::target) sum_target += px[p], ++n_target;
    if (labels[p] == Region::clutter) sum_clutter += speckle[p], ++n_clutter;
  }
  const double mean_target = sum_target / static_cast<double>(n_target);
  const double wanted_clutter_mean = mean_target / std::pow(10.0, scr / 20.0);
  const double k = wanted_clutter_mean / (sum_clutter / static_cast<double>(n_clutter));
  for (std::size_t p = 0; p < area; ++p)
    if (labels[p] == Region::clutter) px[p] = k * speckle[p];

  Sample s;
  char stem[32];
  std::snprintf(stem, sizeof stem, "%s_%06d", split_name(split), index);
  s.id = cls.name + "/" + stem;
  s.class_index = class_index;
  s.image = make_trusted_image(g.height, g.width, std::move(px));
  s.labels = std::move(labels);
  s.scr_db = scr;
  s.seed = seed;
  return s;
}

inline Dataset generate_dataset(const BiasConfig& cfg, Split split) {
  cfg.validate();
  Dataset ds;
  for (const auto& c : cfg.classes) ds.class_names.push_back(c.name);
  const int per_class = split == Split::train ? cfg.train_per_class : cfg.test_per_class;
  for (int c = 0; c < static_cast<int>(cfg.classes.size()); ++c)
    for (int i = 0; i < per_class; ++i) ds.samples.push_back(generate_sample(cfg, split, c, i));
  return ds;
}

struct InterventionRecord {
  std::string id;
  double scr_db = 0.0;
  double scr_prime_db = 0.0;
  double alpha = 1.0;
};

// Re-weights every sample's clutter to an independent SCR draw. Each
// sample's draw is keyed by (seed, sample id).
inline Dataset apply_intervention(const Dataset& dataset, const ScrTargetSpec& spec, std::uint64_t seed,
                                  std::vector<InterventionRecord>* records = nullptr) {
  Dataset out;
  out.class_names = dataset.class_names;
  out.samples.reserve(dataset.samples.size());
  if (records) records->clear();
  for (const auto& s : dataset.samples) {
    auto r = random_scr_reweight(s.image, s.labels, spec, derive_seed(seed, hash_string(s.id)));
    if (records) records->push_back({s.id, r.original_scr_db, r.drawn_scr_db, r.alpha});
    Sample t = s;
    t.image = std::move(r.image);
    t.scr_db = r.drawn_scr_db;
    out.samples.push_back(std::move(t));
  }
  return out;
}

inline nlohmann::json bias_config_to_json(const BiasConfig& c) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& k : c.classes)
    classes.push_back({{"name", k.name},
                       {"shape_id", k.shape_id},
                       {"scr_range_db", {k.scr_lo_db, k.scr_hi_db}},
                       {"correlation_length", k.correlation_length}});
  static constexpr const char* kDirections[] = {"down", "up", "left", "right"};
  return {{"classes", classes},
          {"height", c.height},
          {"width", c.width},
          {"train_per_class", c.train_per_class},
          {"test_per_class", c.test_per_class},
          {"seed", c.seed},
          {"target_scale", c.target_scale},
          {"shadow_length", c.shadow_length},
          {"jitter", c.jitter},
          {"shadow_direction", kDirections[static_cast<int>(c.shadow_direction)]}};
}

// Missing keys keep the ladder defaults.
inline BiasConfig bias_config_from_json(const nlohmann::json& j) {
  BiasConfig c = ladder_config();
  try {
    if (j.contains("classes")) {
      c.classes.clear();
      for (const auto& k : j.at("classes")) {
        ClassSpec s;
        s.name = k.at("name").get<std::string>();
        s.shape_id = k.value("shape_id", static_cast<int>(c.classes.size()));
        const auto range = k.at("scr_range_db").get<std::array<double, 2>>();
        s.scr_lo_db = range[0];
        s.scr_hi_db = range[1];
        s.correlation_length = k.value("correlation_length", 1);
        c.classes.push_back(std::move(s));
      }
    }
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.train_per_class = j.value("train_per_class", c.train_per_class);
    c.test_per_class = j.value("test_per_class", c.test_per_class);
    c.seed = j.value("seed", c.seed);
    c.target_scale = j.value("target_scale", c.target_scale);
    c.shadow_length = j.value("shadow_length", c.shadow_length);
    c.jitter = j.value("jitter", c.jitter);
    const auto dir = j.value("shadow_direction", std::string("down"));
    if (dir == "down")
      c.shadow_direction = ShadowDirection::down;
    else if (dir == "up")
      c.shadow_direction = ShadowDirection::up;
    else if (dir == "left")
      c.shadow_direction = ShadowDirection::left;
    else if (dir == "right")
      c.shadow_direction = ShadowDirection::right;
    else
      throw InvalidArgument("unknown shadow direction '" + dir + "'");
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed bias config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace sarshap
