#pragma once

// Invariant checks runnable from the command line against the installed
// library build. Each check is seeded and self-contained.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sarshap/coalition.hpp"
#include "sarshap/imaging.hpp"
#include "sarshap/rng.hpp"
#include "sarshap/scr.hpp"
#include "sarshap/synthetic.hpp"
#include "sarshap/toy_model.hpp"

namespace sarshap {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline CoalitionValueTable random_game(int n, std::uint64_t seed, double scale = 1.0) {
  SplitMix64 rng(seed);
  return CoalitionValueTable::from_function(PlayerSet(n), [&](Coalition) { return scale * (2.0 * rng.uniform() - 1.0); });
}

namespace detail {

inline std::string describe_max(const char* what, double v) {
  std::ostringstream os;
  os << what << " = " << v;
  return os.str();
}

}  // namespace detail

inline CheckResult check_shapley_axioms(int games, std::uint64_t seed) {
  double worst_eff = 0.0, worst_dummy = 0.0, worst_sym = 0.0, worst_lin = 0.0, worst_add = 0.0;
  for (int g = 0; g < games; ++g) {
    const int n = 2 + g % 4;
    const auto v = random_game(n, derive_seed(seed, g, 0));
    const auto w = random_game(n, derive_seed(seed, g, 1));
    const auto a = shapley_all(v);
    worst_eff = std::max(worst_eff, std::abs(a.efficiency_residual) /
                                        std::max(1.0, std::abs(v.grand_value() - v.empty_value())));

    // Dummy: make player n-1 contribute nothing.
    const auto dummy = CoalitionValueTable::from_function(
        PlayerSet(n), [&](Coalition s) { return v[s & ~player_bit(n - 1)]; });
    worst_dummy = std::max(worst_dummy, std::abs(shapley_exact(dummy, n - 1)));

    // Symmetry: reverse player labels.
    auto relabel = [n](Coalition s) {
      Coalition t = 0;
      for (int i = 0; i < n; ++i)
        if (contains(s, i)) t |= player_bit(n - 1 - i);
      return t;
    };
    const auto rev = CoalitionValueTable::from_function(PlayerSet(n), [&](Coalition s) { return v[relabel(s)]; });
    const auto ar = shapley_all(rev);
    for (int i = 0; i < n; ++i) worst_sym = std::max(worst_sym, std::abs(ar.phi[n - 1 - i] - a.phi[i]));

    const auto sum = CoalitionValueTable::from_function(PlayerSet(n), [&](Coalition s) { return v[s] + w[s]; });
    const auto as = shapley_all(sum);
    const auto aw = shapley_all(w);
    for (int i = 0; i < n; ++i) worst_lin = std::max(worst_lin, std::abs(as.phi[i] - a.phi[i] - aw.phi[i]));

    SplitMix64 rng(derive_seed(seed, g, 2));
    std::vector<double> weights(n);
    for (auto& x : weights) x = 4.0 * rng.uniform() - 2.0;
    const auto additive = CoalitionValueTable::from_function(PlayerSet(n), [&](Coalition s) {
      double t = 0.0;
      for (int i = 0; i < n; ++i)
        if (contains(s, i)) t += weights[i];
      return t;
    });
    const auto aa = shapley_all(additive);
    for (int i = 0; i < n; ++i) {
      worst_add = std::max(worst_add, std::abs(aa.phi[i] - weights[i]));
      for (int j = i + 1; j < n; ++j) worst_add = std::max(worst_add, std::abs(bsi_closed_form(additive, i, j)));
    }
  }
  const bool ok = worst_eff < 1e-9 && worst_dummy == 0.0 && worst_sym < 1e-12 && worst_lin < 1e-12 && worst_add < 1e-12;
  std::ostringstream os;
  os << "efficiency " << worst_eff << ", dummy " << worst_dummy << ", symmetry " << worst_sym << ", linearity "
     << worst_lin << ", additive " << worst_add;
  return {"shapley axioms", ok, os.str()};
}

inline CheckResult check_bsi_equivalence(int games, std::uint64_t seed) {
  double worst = 0.0;
  for (int g = 0; g < games; ++g) {
    const int n = 2 + g % 4;
    const auto v = random_game(n, derive_seed(seed, g));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) worst = std::max(worst, std::abs(bsi_merged(v, i, j) - bsi_closed_form(v, i, j)));
  }
  return {"bsi merged vs closed form", worst < 1e-12, detail::describe_max("max difference", worst)};
}

inline CheckResult check_montecarlo(int games, std::uint64_t samples, std::uint64_t seed) {
  int within = 0, total = 0;
  for (int g = 0; g < games; ++g) {
    const auto v = random_game(4, derive_seed(seed, g));
    const auto exact = shapley_all(v).phi;
    const auto est = shapley_montecarlo([&](Coalition s) { return v[s]; }, 4, samples, derive_seed(seed, g, 1));
    for (int i = 0; i < 4; ++i, ++total)
      if (std::abs(est.phi_hat[i] - exact[i]) < 3.0 * est.std_error[i]) ++within;
  }
  const double frac = static_cast<double>(within) / total;
  return {"monte carlo within 3 stderr", frac >= 0.95, detail::describe_max("fraction", frac)};
}

inline CheckResult check_scr_exactness(int images, std::uint64_t seed) {
  BiasConfig cfg = ladder_config();
  cfg.seed = seed;
  double worst_db = 0.0;
  bool untouched = true;
  for (int k = 0; k < images; ++k) {
    const auto s = generate_sample(cfg, Split::train, k % 10, k / 10);
    SplitMix64 rng(derive_seed(seed, k));
    const double target = 5.0 + 15.0 * rng.uniform();
    const auto out = reweight_to_scr(s.image, s.labels, target);
    worst_db = std::max(worst_db, std::abs(compute_scr(out, s.labels).scr_db - target));
    for (std::size_t p = 0; p < out.size(); ++p)
      if (s.labels[p] != Region::clutter && out[p] != s.image[p]) untouched = false;
  }
  std::ostringstream os;
  os << "max SCR error " << worst_db << " dB, non-clutter untouched " << (untouched ? "yes" : "no");
  return {"scr re-weighting exactness", worst_db < 1e-6 && untouched, os.str()};
}

inline CheckResult check_baseline_mean(std::uint64_t seed) {
  const auto f = sample_baseline(BaselineSpec::half_normal(0.1), 1000, 1000, seed);
  const auto data = f.image.data();
  const double n = static_cast<double>(data.size());
  const double mean = std::accumulate(data.begin(), data.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : data) ss += (x - mean) * (x - mean);
  const double sem = std::sqrt(ss / (n - 1) / n);
  const double expected = 0.1 * std::sqrt(2.0 / std::acos(-1.0));
  std::ostringstream os;
  os << "mean " << mean << " vs " << expected << " (4 SEM = " << 4 * sem << ")";
  return {"half-normal baseline mean", std::abs(mean - expected) < 4 * sem, os.str()};
}

inline CheckResult check_gradients(int configs, std::uint64_t seed) {
  double worst = 0.0;
  for (int k = 0; k < configs; ++k) {
    SplitMix64 rng(derive_seed(seed, k));
    MlpShape shape{16, 16, 2, 4 + k % 5, 2 + k % 4};
    const auto model = MlpModel::random(shape, 0.3, derive_seed(seed, k, 1));
    std::vector<double> px(256);
    for (auto& x : px) x = rng.uniform();
    const AmplitudeImage image(16, 16, px);
    worst = std::max(worst, gradient_check(model, image, k % shape.classes, 1e-4, derive_seed(seed, k, 2), 256));
  }
  return {"toy model gradient check", worst < 1e-4, detail::describe_max("max relative error", worst)};
}

inline std::vector<CheckResult> run_selftest(std::uint64_t seed = 1) {
  return {check_shapley_axioms(200, seed),     check_bsi_equivalence(200, seed), check_montecarlo(10, 20000, seed),
          check_scr_exactness(100, seed),      check_baseline_mean(seed),        check_gradients(10, seed)};
}

}  // namespace sarshap
