#pragma once

// Signal-to-clutter ratio measurement and clutter re-weighting.
//
//   SCR   = 20 log10(mean_target / mean_clutter)           [dB]
//   alpha = 10^((SCR - SCR') / 20)
//   X'    = X o (1 - K_clutter) + alpha * X o K_clutter
//
// Shadow pixels take part in neither mean and are never modified.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "sarshap/error.hpp"
#include "sarshap/imaging.hpp"
#include "sarshap/rng.hpp"

namespace sarshap {

struct ScrStats {
  double scr_db = 0.0;
  double mean_target = 0.0;
  double mean_clutter = 0.0;
};

struct FixedScr {
  double scr_db = 12.0;
};
struct UniformScr {
  double lo_db = 11.0;
  double hi_db = 14.0;
};

class ScrTargetSpec {
 public:
  using Kind = std::variant<FixedScr, UniformScr>;

  ScrTargetSpec() : kind_(UniformScr{}) {}
  ScrTargetSpec(Kind kind) : kind_(kind) {  // NOLINT(google-explicit-constructor)
    if (const auto* u = std::get_if<UniformScr>(&kind_); u && !(u->lo_db <= u->hi_db))
      throw InvalidArgument("uniform SCR range needs lo <= hi");
    const bool finite = std::visit(
        [](const auto& k) {
          if constexpr (std::is_same_v<std::decay_t<decltype(k)>, FixedScr>)
            return std::isfinite(k.scr_db);
          else
            return std::isfinite(k.lo_db) && std::isfinite(k.hi_db);
        },
        kind_);
    if (!finite) throw InvalidArgument("SCR targets must be finite");
  }

  static ScrTargetSpec fixed(double db) { return ScrTargetSpec(FixedScr{db}); }
  static ScrTargetSpec uniform(double lo, double hi) { return ScrTargetSpec(UniformScr{lo, hi}); }

  // "fixed:12" or "uniform:11,14".
  static ScrTargetSpec parse(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw InvalidArgument("SCR spec must look like fixed:DB or uniform:LO,HI");
    const std::string kind = text.substr(0, colon);
    const std::string arg = text.substr(colon + 1);
    try {
      if (kind == "fixed") return fixed(std::stod(arg));
      if (kind == "uniform") {
        const auto comma = arg.find(',');
        if (comma == std::string::npos) throw InvalidArgument("uniform SCR spec needs LO,HI");
        return uniform(std::stod(arg.substr(0, comma)), std::stod(arg.substr(comma + 1)));
      }
    } catch (const std::logic_error&) {
      throw InvalidArgument("bad SCR spec '" + text + "'");
    }
    throw InvalidArgument("unknown SCR spec '" + text + "'");
  }

  const Kind& kind() const noexcept { return kind_; }

  double draw(std::uint64_t seed) const {
    if (const auto* f = std::get_if<FixedScr>(&kind_)) return f->scr_db;
    const auto& u = std::get<UniformScr>(kind_);
    SplitMix64 rng(seed);
    return u.lo_db + (u.hi_db - u.lo_db) * rng.uniform();
  }

 private:
  Kind kind_;
};

inline ScrStats compute_scr(const AmplitudeImage& image, const RegionLabelMap& labels) {
  if (!labels.matches(image)) throw InvalidArgument("label map does not match image dimensions");
  double sum_target = 0.0;
  double sum_clutter = 0.0;
  std::size_t n_target = 0;
  std::size_t n_clutter = 0;
  for (std::size_t p = 0; p < image.size(); ++p) {
    switch (labels[p]) {
      case Region::target:
        sum_target += image[p];
        ++n_target;
        break;
      case Region::clutter:
        sum_clutter += image[p];
        ++n_clutter;
        break;
      case Region::shadow: break;
    }
  }
  if (n_target == 0) throw UndefinedScr("SCR undefined: empty target region");
  if (n_clutter == 0) throw UndefinedScr("SCR undefined: empty clutter region");
  ScrStats s;
  s.mean_target = sum_target / static_cast<double>(n_target);
  s.mean_clutter = sum_clutter / static_cast<double>(n_clutter);
  if (!(s.mean_target > 0.0)) throw UndefinedScr("SCR undefined: zero mean target amplitude");
  if (!(s.mean_clutter > 0.0)) throw UndefinedScr("SCR undefined: zero mean clutter amplitude");
  s.scr_db = 20.0 * std::log10(s.mean_target / s.mean_clutter);
  return s;
}

inline double reweight_factor(double current_scr_db, double target_scr_db) {
  return std::pow(10.0, (current_scr_db - target_scr_db) / 20.0);
}

struct ReweightResult {
  AmplitudeImage image;
  double scr_db = 0.0;
  double scr_prime_db = 0.0;
  double alpha = 1.0;
};

namespace detail {

inline AmplitudeImage scale_clutter(const AmplitudeImage& image, const RegionLabelMap& labels, double alpha) {
  std::vector<double> out(image.data().begin(), image.data().end());
  if (alpha != 1.0)
    for (std::size_t p = 0; p < out.size(); ++p)
      if (labels[p] == Region::clutter) out[p] *= alpha;
  return make_trusted_image(image.height(), image.width(), std::move(out));
}

}  // namespace detail

inline ReweightResult reweight_with_details(const AmplitudeImage& image, const RegionLabelMap& labels,
                                            double target_scr_db) {
  if (!std::isfinite(target_scr_db)) throw InvalidArgument("target SCR must be finite");
  const auto stats = compute_scr(image, labels);
  ReweightResult r;
  r.scr_db = stats.scr_db;
  r.scr_prime_db = target_scr_db;
  r.alpha = target_scr_db == stats.scr_db ? 1.0 : reweight_factor(stats.scr_db, target_scr_db);
  r.image = detail::scale_clutter(image, labels, r.alpha);
  return r;
}

inline AmplitudeImage reweight_to_scr(const AmplitudeImage& image, const RegionLabelMap& labels,
                                      double target_scr_db) {
  return reweight_with_details(image, labels, target_scr_db).image;
}

struct RandomReweight {
  AmplitudeImage image;
  double drawn_scr_db = 0.0;
  double alpha = 1.0;
  double original_scr_db = 0.0;
};

inline RandomReweight random_scr_reweight(const AmplitudeImage& image, const RegionLabelMap& labels,
                                          const ScrTargetSpec& spec, std::uint64_t seed) {
  const double drawn = spec.draw(seed);
  auto r = reweight_with_details(image, labels, drawn);
  return {std::move(r.image), drawn, r.alpha, r.scr_db};
}

}  // namespace sarshap
