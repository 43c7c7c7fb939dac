#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "sarshap/coalition.hpp"
#include "sarshap/imaging.hpp"

namespace testing_support {

using sarshap::Coalition;
using sarshap::CoalitionValueTable;
using sarshap::PlayerSet;

// Uniform game values in [-1, 1). Uses the standard engine on purpose so
// the generator shares nothing with the library's own RNG.
inline CoalitionValueTable random_table(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(std::size_t{1} << n);
  for (auto& x : v) x = u(gen);
  return CoalitionValueTable(PlayerSet(n), std::move(v));
}

template <class F>
CoalitionValueTable table_of(int n, F&& f) {
  std::vector<double> v(std::size_t{1} << n);
  for (Coalition s = 0; s < v.size(); ++s) v[s] = f(s);
  return CoalitionValueTable(PlayerSet(n), std::move(v));
}

// Shapley values as the average marginal contribution over all n! orders.
inline std::vector<double> shapley_by_permutations(const std::vector<double>& v, int n) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(n, 0.0);
  double count = 0.0;
  do {
    Coalition s = 0;
    for (int p : order) {
      phi[p] += v[s | (Coalition{1} << p)] - v[s];
      s |= Coalition{1} << p;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (auto& x : phi) x /= count;
  return phi;
}

inline std::vector<double> shapley_by_permutations(const CoalitionValueTable& t) {
  const auto vals = t.values();
  return shapley_by_permutations(std::vector<double>(vals.begin(), vals.end()), t.player_count());
}

// Game on n-1 players with player `gone` removed (coalitions never contain it).
inline std::vector<double> without(const std::vector<double>& v, int n, int gone) {
  std::vector<double> out(std::size_t{1} << (n - 1));
  for (Coalition t = 0; t < out.size(); ++t) {
    Coalition s = 0;
    for (int k = 0, src = 0; k < n - 1; ++k, ++src) {
      if (src == gone) ++src;
      if ((t >> k) & 1U) s |= Coalition{1} << src;
    }
    out[t] = v[s];
  }
  return out;
}

// Interaction of i and j: merged pair's Shapley value in the game where the
// pair acts as one player, minus each member's value in the game without the
// other. Every piece is computed by permutation enumeration.
inline double bsi_by_permutations(const CoalitionValueTable& t, int i, int j) {
  const int n = t.player_count();
  const auto raw = t.values();
  const std::vector<double> v(raw.begin(), raw.end());
  // Merged game: players are N \ {i, j} in index order, then the pair last.
  std::vector<int> others;
  for (int k = 0; k < n; ++k)
    if (k != i && k != j) others.push_back(k);
  std::vector<double> merged(std::size_t{1} << (n - 1));
  for (Coalition m = 0; m < merged.size(); ++m) {
    Coalition s = 0;
    for (std::size_t k = 0; k < others.size(); ++k)
      if ((m >> k) & 1U) s |= Coalition{1} << others[k];
    if ((m >> others.size()) & 1U) s |= (Coalition{1} << i) | (Coalition{1} << j);
    merged[m] = v[s];
  }
  const double pair = shapley_by_permutations(merged, n - 1)[n - 2];
  const double phi_i = shapley_by_permutations(without(v, n, j), n - 1)[i < j ? i : i - 1];
  const double phi_j = shapley_by_permutations(without(v, n, i), n - 1)[j < i ? j : j - 1];
  return pair - phi_i - phi_j;
}

inline sarshap::AmplitudeImage image_of(int h, int w, std::vector<double> px) {
  return sarshap::AmplitudeImage(h, w, std::move(px));
}

// A 6x6 scene with all three regions present.
inline sarshap::RegionLabelMap small_labels() {
  std::vector<std::uint8_t> l(36, 0);
  for (int r = 1; r < 3; ++r)
    for (int c = 1; c < 5; ++c) l[r * 6 + c] = 1;
  for (int c = 1; c < 5; ++c) l[3 * 6 + c] = 2, l[4 * 6 + c] = 2;
  return sarshap::RegionLabelMap(6, 6, std::move(l));
}

inline sarshap::AmplitudeImage small_image(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto labels = small_labels();
  std::vector<double> px(36);
  for (std::size_t p = 0; p < px.size(); ++p) {
    switch (labels[p]) {
      case sarshap::Region::target: px[p] = 0.6 + 0.3 * u(gen); break;
      case sarshap::Region::shadow: px[p] = 0.02 + 0.05 * u(gen); break;
      default: px[p] = 0.1 + 0.2 * u(gen); break;
    }
  }
  return sarshap::AmplitudeImage(6, 6, std::move(px));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("sarshap_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
