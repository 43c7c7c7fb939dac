#pragma once

// Cooperative games over small player sets: exact Shapley values, Shapley
// value ratios, bivariate Shapley interactions, and a permutation-sampling
// estimator for player counts beyond exact enumeration.
//
// A coalition is a bit pattern; player i corresponds to bit i.

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sarshap/error.hpp"
#include "sarshap/rng.hpp"

namespace sarshap {

using Coalition = std::uint64_t;

inline constexpr int kMaxExactPlayers = 24;
inline constexpr int kMaxSampledPlayers = 64;

inline constexpr Coalition player_bit(int i) noexcept { return Coalition{1} << i; }
inline constexpr bool contains(Coalition s, int i) noexcept { return (s >> i) & 1U; }
inline constexpr int coalition_size(Coalition s) noexcept { return std::popcount(s); }

class PlayerSet {
 public:
  explicit PlayerSet(int n, std::vector<std::string> names = {}) : n_(n), names_(std::move(names)) {
    if (n_ < 1) throw InvalidArgument("player set must contain at least one player");
    if (n_ > kMaxSampledPlayers) throw InvalidArgument("player set larger than 64 players");
    if (!names_.empty()) {
      if (static_cast<int>(names_.size()) != n_)
        throw InvalidArgument("player names must match the player count");
      std::set<std::string> unique(names_.begin(), names_.end());
      if (unique.size() != names_.size()) throw InvalidArgument("player names must be unique");
    }
  }

  int size() const noexcept { return n_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  bool has_names() const noexcept { return !names_.empty(); }
  Coalition grand() const noexcept { return n_ == 64 ? ~Coalition{0} : player_bit(n_) - 1; }

  std::string name(int i) const { return has_names() ? names_.at(i) : std::to_string(i); }

  bool operator==(const PlayerSet&) const = default;

 private:
  int n_;
  std::vector<std::string> names_;
};

// A complete game v: 2^N -> R, stored densely and indexed by coalition bits.
class CoalitionValueTable {
 public:
  CoalitionValueTable(PlayerSet players, std::vector<double> values)
      : players_(std::move(players)), values_(std::move(values)) {
    if (players_.size() > kMaxExactPlayers)
      throw InvalidArgument("value tables support at most " + std::to_string(kMaxExactPlayers) + " players");
    if (values_.size() != (std::size_t{1} << players_.size()))
      throw InvalidArgument("table incomplete: expected " + std::to_string(std::size_t{1} << players_.size()) +
                            " values, got " + std::to_string(values_.size()));
    for (std::size_t s = 0; s < values_.size(); ++s)
      if (!std::isfinite(values_[s])) throw InvalidArgument("non-finite value for coalition " + std::to_string(s));
  }

  template <typename F>
  static CoalitionValueTable from_function(PlayerSet players, F&& v) {
    if (players.size() > kMaxExactPlayers)
      throw InvalidArgument("value tables support at most " + std::to_string(kMaxExactPlayers) + " players");
    std::vector<double> values(std::size_t{1} << players.size());
    for (Coalition s = 0; s < values.size(); ++s) values[s] = v(s);
    return CoalitionValueTable(std::move(players), std::move(values));
  }

  const PlayerSet& players() const noexcept { return players_; }
  int player_count() const noexcept { return players_.size(); }
  std::span<const double> values() const noexcept { return values_; }

  double operator[](Coalition s) const { return values_[s]; }
  double at(Coalition s) const {
    if (s >= values_.size()) throw InvalidArgument("coalition " + std::to_string(s) + " outside the player set");
    return values_[s];
  }
  double grand_value() const noexcept { return values_.back(); }
  double empty_value() const noexcept { return values_.front(); }

  bool operator==(const CoalitionValueTable&) const = default;

 private:
  PlayerSet players_;
  std::vector<double> values_;
};

struct AttributionResult {
  std::vector<double> phi;
  // Empty when every Shapley value is zero.
  std::optional<std::vector<double>> ratio;
  double efficiency_residual = 0.0;
};

// Pairwise interactions, stored as a symmetric n x n matrix with a zero diagonal.
class InteractionResult {
 public:
  explicit InteractionResult(int n) : n_(n), b_(static_cast<std::size_t>(n) * n, 0.0) {}

  int player_count() const noexcept { return n_; }
  double at(int i, int j) const { return b_[index(i, j)]; }
  void set(int i, int j, double value) {
    b_[index(i, j)] = value;
    b_[index(j, i)] = value;
  }

 private:
  std::size_t index(int i, int j) const {
    if (i < 0 || j < 0 || i >= n_ || j >= n_) throw InvalidArgument("interaction index out of range");
    return static_cast<std::size_t>(i) * n_ + j;
  }

  int n_;
  std::vector<double> b_;
};

struct McEstimate {
  std::vector<double> phi_hat;
  std::vector<double> std_error;
  std::uint64_t samples = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline const std::array<double, kMaxExactPlayers + 1>& log_factorials() {
  static const auto table = [] {
    std::array<double, kMaxExactPlayers + 1> t{};
    for (int k = 1; k <= kMaxExactPlayers; ++k) t[k] = t[k - 1] + std::log(static_cast<double>(k));
    return t;
  }();
  return table;
}

// |S|!(n-|S|-1)!/n! for every |S| in [0, n-1].
inline std::vector<double> shapley_weights(int n) {
  const auto& lf = log_factorials();
  std::vector<double> w(n);
  for (int s = 0; s < n; ++s) w[s] = std::exp(lf[s] + lf[n - s - 1] - lf[n]);
  return w;
}

// |S|!(n-|S|-2)!/(n-1)! for every |S| in [0, n-2].
inline std::vector<double> interaction_weights(int n) {
  const auto& lf = log_factorials();
  std::vector<double> w(n - 1);
  for (int s = 0; s <= n - 2; ++s) w[s] = std::exp(lf[s] + lf[n - s - 2] - lf[n - 1]);
  return w;
}

inline void check_player(const CoalitionValueTable& table, int i) {
  if (i < 0 || i >= table.player_count())
    throw InvalidArgument("player index " + std::to_string(i) + " out of range for " +
                          std::to_string(table.player_count()) + " players");
}

inline void check_pair(const CoalitionValueTable& table, int i, int j) {
  check_player(table, i);
  check_player(table, j);
  if (i == j) throw InvalidArgument("interaction requires two distinct players");
}

inline double shapley_with_weights(const CoalitionValueTable& table, int i, std::span<const double> w) {
  const Coalition full = table.players().grand();
  const Coalition bit = player_bit(i);
  double phi = 0.0;
  for (Coalition s = 0; s <= full; ++s) {
    if (s & bit) continue;
    phi += w[coalition_size(s)] * (table[s | bit] - table[s]);
  }
  return phi;
}

}  // namespace detail

// Exact Shapley value of player i by enumeration of every coalition without i.
inline double shapley_exact(const CoalitionValueTable& table, int i) {
  detail::check_player(table, i);
  const auto w = detail::shapley_weights(table.player_count());
  return detail::shapley_with_weights(table, i, w);
}

// Signed share of each value in the total absolute mass.
inline std::vector<double> value_ratio(std::span<const double> phi) {
  double mass = 0.0;
  for (double p : phi) mass += std::abs(p);
  if (!(mass > 0.0)) throw UndefinedRatio();
  std::vector<double> ratio(phi.size());
  std::transform(phi.begin(), phi.end(), ratio.begin(), [mass](double p) { return p / mass; });
  return ratio;
}

inline AttributionResult shapley_all(const CoalitionValueTable& table) {
  const int n = table.player_count();
  const auto w = detail::shapley_weights(n);
  AttributionResult result;
  result.phi.resize(n);
  for (int i = 0; i < n; ++i) result.phi[i] = detail::shapley_with_weights(table, i, w);

  const double total = std::accumulate(result.phi.begin(), result.phi.end(), 0.0);
  result.efficiency_residual = total - (table.grand_value() - table.empty_value());
  if (std::any_of(result.phi.begin(), result.phi.end(), [](double p) { return p != 0.0; }))
    result.ratio = value_ratio(result.phi);
  return result;
}

// Sub-game whose player k stands for the union of the original players in
// groups[k]. Restriction and player merging are both instances of this.
inline CoalitionValueTable induced_game(const CoalitionValueTable& table, std::span<const Coalition> groups) {
  const int m = static_cast<int>(groups.size());
  if (m < 1) throw InvalidArgument("induced game needs at least one group");
  Coalition seen = 0;
  for (Coalition g : groups) {
    if (g == 0 || (g & ~table.players().grand()) != 0 || (g & seen) != 0)
      throw InvalidArgument("induced game groups must be non-empty, disjoint subsets of the players");
    seen |= g;
  }
  return CoalitionValueTable::from_function(PlayerSet(m), [&](Coalition t) {
    Coalition s = 0;
    for (int k = 0; k < m; ++k)
      if (contains(t, k)) s |= groups[k];
    return table[s];
  });
}

// Bivariate Shapley interaction via the weighted sum of second differences.
inline double bsi_closed_form(const CoalitionValueTable& table, int i, int j) {
  detail::check_pair(table, i, j);
  const int n = table.player_count();
  const auto w = detail::interaction_weights(n);
  const Coalition full = table.players().grand();
  const Coalition bi = player_bit(i);
  const Coalition bj = player_bit(j);
  double b = 0.0;
  for (Coalition s = 0; s <= full; ++s) {
    if (s & (bi | bj)) continue;
    const double delta = table[s | bi | bj] - table[s | bi] - table[s | bj] + table[s];
    b += w[coalition_size(s)] * delta;
  }
  return b;
}

// Bivariate Shapley interaction as the Shapley value of the merged player
// {i,j} minus the Shapley values of i and j in the games without the other.
inline double bsi_merged(const CoalitionValueTable& table, int i, int j) {
  detail::check_pair(table, i, j);
  const int n = table.player_count();

  std::vector<Coalition> merged;
  std::vector<Coalition> without_j;
  std::vector<Coalition> without_i;
  int i_in_without_j = -1;
  int j_in_without_i = -1;
  for (int k = 0; k < n; ++k) {
    if (k != i && k != j) merged.push_back(player_bit(k));
    if (k != j) {
      if (k == i) i_in_without_j = static_cast<int>(without_j.size());
      without_j.push_back(player_bit(k));
    }
    if (k != i) {
      if (k == j) j_in_without_i = static_cast<int>(without_i.size());
      without_i.push_back(player_bit(k));
    }
  }
  merged.push_back(player_bit(i) | player_bit(j));

  const double phi_pair = shapley_exact(induced_game(table, merged), static_cast<int>(merged.size()) - 1);
  const double phi_i = shapley_exact(induced_game(table, without_j), i_in_without_j);
  const double phi_j = shapley_exact(induced_game(table, without_i), j_in_without_i);
  return phi_pair - (phi_i + phi_j);
}

inline InteractionResult bsi_all(const CoalitionValueTable& table) {
  const int n = table.player_count();
  InteractionResult result(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) result.set(i, j, bsi_closed_form(table, i, j));
  return result;
}

namespace detail {

struct RunningMoments {
  std::uint64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }

  void merge(const RunningMoments& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    const double total = static_cast<double>(count + other.count);
    const double delta = other.mean - mean;
    mean += delta * static_cast<double>(other.count) / total;
    m2 += other.m2 + delta * delta * static_cast<double>(count) * static_cast<double>(other.count) / total;
    count += other.count;
  }
};

inline constexpr std::uint64_t kPermutationsPerBlock = 4096;

}  // namespace detail

// Permutation-sampling Shapley estimator. Permutation k is drawn from a
// stream keyed by (seed, k); blocks of permutations are reduced in index
// order, so the estimate is bit-identical for any thread count. With
// threads > 1 the oracle is called concurrently and must be thread-safe.
template <typename Oracle>
McEstimate shapley_montecarlo(Oracle&& game, int n, std::uint64_t samples, std::uint64_t seed, int threads = 1) {
  if (n < 1 || n > kMaxSampledPlayers) throw InvalidArgument("player count must be in [1, 64]");
  if (samples < 1) throw InvalidArgument("monte carlo estimation needs at least one sample");
  threads = std::max(1, threads);

  auto value_of = [&game](Coalition s) -> double {
    double v;
    try {
      v = static_cast<double>(game(s));
    } catch (const CoalitionError&) {
      throw;
    } catch (const std::exception& e) {
      throw CoalitionError(s, e.what());
    }
    if (!std::isfinite(v)) throw CoalitionError(s, "oracle returned a non-finite value");
    return v;
  };

  const double empty_value = value_of(0);
  const std::uint64_t block_count = (samples + detail::kPermutationsPerBlock - 1) / detail::kPermutationsPerBlock;
  std::vector<std::vector<detail::RunningMoments>> blocks(block_count, std::vector<detail::RunningMoments>(n));
  std::vector<std::exception_ptr> failures(block_count);

  auto run_block = [&](std::uint64_t b) {
    try {
      std::vector<int> order(n);
      const std::uint64_t first = b * detail::kPermutationsPerBlock;
      const std::uint64_t last = std::min(samples, first + detail::kPermutationsPerBlock);
      for (std::uint64_t k = first; k < last; ++k) {
        SplitMix64 rng(derive_seed(seed, k));
        std::iota(order.begin(), order.end(), 0);
        for (int pos = n - 1; pos > 0; --pos) {
          const auto pick = static_cast<int>(rng() % static_cast<std::uint64_t>(pos + 1));
          std::swap(order[pos], order[pick]);
        }
        Coalition pred = 0;
        double previous = empty_value;
        for (int player : order) {
          pred |= player_bit(player);
          const double current = value_of(pred);
          blocks[b][player].push(current - previous);
          previous = current;
        }
      }
    } catch (...) {
      failures[b] = std::current_exception();
    }
  };

  if (threads == 1 || block_count == 1) {
    for (std::uint64_t b = 0; b < block_count; ++b) run_block(b);
  } else {
    std::atomic<std::uint64_t> next{0};
    std::vector<std::jthread> pool;
    const auto workers = std::min<std::uint64_t>(static_cast<std::uint64_t>(threads), block_count);
    for (std::uint64_t t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (std::uint64_t b = next++; b < block_count; b = next++) run_block(b);
      });
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  McEstimate est;
  est.samples = samples;
  est.seed = seed;
  est.phi_hat.resize(n);
  est.std_error.resize(n);
  for (int i = 0; i < n; ++i) {
    detail::RunningMoments total;
    for (const auto& block : blocks) total.merge(block[i]);
    est.phi_hat[i] = total.mean;
    // A single permutation carries no spread information; report zero.
    est.std_error[i] = samples > 1 ? std::sqrt(std::max(0.0, total.m2) / static_cast<double>(samples - 1) /
                                               static_cast<double>(samples))
                                   : 0.0;
  }
  return est;
}

// {"n":3,"values":{"0":0.0,"1":1.0,...}} with decimal bit-pattern keys.
inline nlohmann::json table_to_json(const CoalitionValueTable& table) {
  nlohmann::json j;
  j["n"] = table.player_count();
  if (table.players().has_names()) j["names"] = table.players().names();
  nlohmann::json values = nlohmann::json::object();
  for (Coalition s = 0; s < table.values().size(); ++s) values[std::to_string(s)] = table[s];
  j["values"] = std::move(values);
  return j;
}

inline CoalitionValueTable table_from_json(const nlohmann::json& j) {
  try {
    const int n = j.at("n").get<int>();
    if (n < 1 || n > kMaxExactPlayers) throw InvalidArgument("table player count out of range");
    std::vector<std::string> names;
    if (j.contains("names")) names = j.at("names").get<std::vector<std::string>>();
    const auto& values = j.at("values");
    std::vector<double> v(std::size_t{1} << n);
    for (std::size_t s = 0; s < v.size(); ++s) {
      const auto key = std::to_string(s);
      if (!values.contains(key)) throw InvalidArgument("table incomplete: missing coalition " + key);
      v[s] = values.at(key).get<double>();
    }
    if (values.size() != v.size()) throw InvalidArgument("table has coalition keys outside the player set");
    return CoalitionValueTable(PlayerSet(n, std::move(names)), std::move(v));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed value table: ") + e.what());
  }
}

}  // namespace sarshap
