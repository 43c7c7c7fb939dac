#pragma once

// Batch attribution over datasets: per-sample region games, replicate
// averaging, aggregation per class and overall, and training trajectories.
//
// Seeds: the baseline field for (sample, replicate) is keyed by
// (root seed, hash(sample id), replicate), so results do not depend on the
// degree of parallelism or on sample order. Aggregation walks samples in
// dataset order.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "sarshap/coalition.hpp"
#include "sarshap/dataset.hpp"
#include "sarshap/error.hpp"
#include "sarshap/evaluators.hpp"
#include "sarshap/external.hpp"
#include "sarshap/imaging.hpp"
#include "sarshap/rng.hpp"
#include "sarshap/scr.hpp"
#include "sarshap/synthetic.hpp"
#include "sarshap/toy_model.hpp"

namespace sarshap {

// Region pairs in report order.
inline constexpr std::array<std::pair<int, int>, 3> kRegionPairs = {{{0, 1}, {1, 2}, {2, 0}}};
inline constexpr std::array<const char*, 3> kPairNames = {"clutter&target", "target&shadow", "shadow&clutter"};

using Triple = std::array<double, 3>;

struct SampleAnalysis {
  CoalitionValueTable table;
  AttributionResult attribution;
  InteractionResult interaction;
};

inline SampleAnalysis analyze_with_baseline(const AmplitudeImage& image, const RegionLabelMap& labels,
                                            GameEvaluator& evaluator, const AmplitudeImage& baseline,
                                            int class_index, bool clamp = false) {
  auto table = evaluate_coalition_table(evaluator, image, labels, baseline, class_index, clamp);
  auto attribution = shapley_all(table);
  InteractionResult interaction(kRegionCount);
  for (const auto& [i, j] : kRegionPairs) interaction.set(i, j, bsi_closed_form(table, i, j));
  return {std::move(table), std::move(attribution), std::move(interaction)};
}

// One baseline field drawn from `seed`, shared by all 8 coalitions.
inline SampleAnalysis analyze_sample(const AmplitudeImage& image, const RegionLabelMap& labels,
                                     GameEvaluator& evaluator, const BaselineSpec& baseline_spec, int class_index,
                                     std::uint64_t seed, bool clamp = false) {
  const auto baseline = sample_baseline(baseline_spec, image.height(), image.width(), seed);
  return analyze_with_baseline(image, labels, evaluator, baseline.image, class_index, clamp);
}

using EvaluatorFactory = std::function<std::shared_ptr<GameEvaluator>()>;

struct RunConfig {
  std::string dataset_root;
  // Replicate r is evaluated with models[r % models.size()]; a single entry
  // means replicates differ only in their baseline draws.
  std::vector<EvaluatorFactory> models;
  std::string evaluator_name = "unnamed";
  BaselineSpec baseline = BaselineSpec::half_normal(0.1);
  int replicates = 5;
  std::uint64_t seed = 0;
  bool clamp = false;
  std::optional<ScrTargetSpec> intervention;
  std::uint64_t intervention_seed = 0;
  int parallelism = 1;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct SampleResult {
  std::string id;
  int class_index = 0;
  bool ok = false;
  std::string error;
  Triple phi{};
  std::optional<Triple> ratio;  // mean over replicates with a defined ratio
  Triple bsi{};
  Triple phi_std_replicates{};
  Triple ratio_std_replicates{};
  Triple bsi_std_replicates{};
  double max_residual = 0.0;
  int predicted = -1;
};

struct ScopeAggregate {
  std::string scope;  // "overall" or a class name
  std::size_t samples = 0;
  std::size_t failed = 0;
  std::size_t ratio_undefined = 0;
  double accuracy = 0.0;
  std::array<Stat, 3> phi{};
  std::array<Stat, 3> ratio{};
  std::array<Stat, 3> bsi{};
  Triple ratio_of_means{};
  Triple phi_std_replicates{};
  Triple ratio_std_replicates{};
  Triple bsi_std_replicates{};
};

struct AggregateReport {
  std::string evaluator;
  std::string baseline;
  int replicates = 0;
  std::uint64_t seed = 0;
  std::size_t failed = 0;
  double max_efficiency_residual = 0.0;
  std::vector<ScopeAggregate> scopes;  // overall first, then classes in order
  std::vector<SampleResult> samples;

  const ScopeAggregate& overall() const { return scopes.front(); }
};

namespace detail {

inline Stat describe(const std::vector<double>& xs) {
  Stat s;
  s.count = xs.size();
  if (xs.empty()) return s;
  // Running moments keep identical inputs at exactly zero spread.
  RunningMoments m;
  for (double x : xs) m.push(x);
  s.mean = m.mean;
  s.std = std::sqrt(std::max(0.0, m.m2) / static_cast<double>(xs.size()));
  return s;
}

inline double mean_of(const std::vector<double>& xs) { return describe(xs).mean; }

// Lazily built evaluators for one worker.
class EvaluatorPool {
 public:
  explicit EvaluatorPool(const std::vector<EvaluatorFactory>& factories)
      : factories_(factories), instances_(factories.size()) {}

  GameEvaluator& get(int replicate) {
    const auto k = static_cast<std::size_t>(replicate) % factories_.size();
    if (!instances_[k]) {
      instances_[k] = factories_[k]();
      if (!instances_[k]) throw Error("evaluator factory returned nothing");
    }
    return *instances_[k];
  }

 private:
  const std::vector<EvaluatorFactory>& factories_;
  std::vector<std::shared_ptr<GameEvaluator>> instances_;
};

inline SampleResult analyze_one(const Sample& sample, const RunConfig& cfg, EvaluatorPool& pool) {
  SampleResult out;
  out.id = sample.id;
  out.class_index = sample.class_index;
  try {
    std::array<std::vector<double>, 3> phi, ratio, bsi;
    for (int r = 0; r < cfg.replicates; ++r) {
      GameEvaluator& ev = pool.get(r);
      const auto seed = derive_seed(cfg.seed, hash_string(sample.id), static_cast<std::uint64_t>(r));
      const auto a = analyze_sample(sample.image, sample.labels, ev, cfg.baseline, sample.class_index, seed, cfg.clamp);
      const double total = a.table.grand_value() - a.table.empty_value();
      out.max_residual =
          std::max(out.max_residual, std::abs(a.attribution.efficiency_residual) / std::max(1.0, std::abs(total)));
      for (int k = 0; k < 3; ++k) {
        phi[k].push_back(a.attribution.phi[k]);
        if (a.attribution.ratio) ratio[k].push_back((*a.attribution.ratio)[k]);
        bsi[k].push_back(a.interaction.at(kRegionPairs[k].first, kRegionPairs[k].second));
      }
      if (r == 0) {
        const auto scores = ev.scores(sample.image, sample.labels);
        out.predicted = argmax(scores);
      }
    }
    for (int k = 0; k < 3; ++k) {
      const auto p = describe(phi[k]);
      const auto b = describe(bsi[k]);
      out.phi[k] = p.mean;
      out.phi_std_replicates[k] = p.std;
      out.bsi[k] = b.mean;
      out.bsi_std_replicates[k] = b.std;
    }
    if (!ratio[0].empty()) {
      Triple t{};
      for (int k = 0; k < 3; ++k) {
        const auto q = describe(ratio[k]);
        t[k] = q.mean;
        out.ratio_std_replicates[k] = q.std;
      }
      out.ratio = t;
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = sample.id + ": " + e.what();
  }
  return out;
}

inline ScopeAggregate aggregate_scope(std::string scope, const std::vector<const SampleResult*>& members) {
  ScopeAggregate agg;
  agg.scope = std::move(scope);
  std::array<std::vector<double>, 3> phi, ratio, bsi, phi_rep, ratio_rep, bsi_rep;
  std::size_t correct = 0;
  for (const auto* s : members) {
    if (!s->ok) {
      ++agg.failed;
      continue;
    }
    ++agg.samples;
    if (s->predicted == s->class_index) ++correct;
    if (!s->ratio) ++agg.ratio_undefined;
    for (int k = 0; k < 3; ++k) {
      phi[k].push_back(s->phi[k]);
      bsi[k].push_back(s->bsi[k]);
      phi_rep[k].push_back(s->phi_std_replicates[k]);
      bsi_rep[k].push_back(s->bsi_std_replicates[k]);
      if (s->ratio) {
        ratio[k].push_back((*s->ratio)[k]);
        ratio_rep[k].push_back(s->ratio_std_replicates[k]);
      }
    }
  }
  agg.accuracy = agg.samples ? static_cast<double>(correct) / static_cast<double>(agg.samples) : 0.0;
  Triple means{};
  for (int k = 0; k < 3; ++k) {
    agg.phi[k] = describe(phi[k]);
    agg.ratio[k] = describe(ratio[k]);
    agg.bsi[k] = describe(bsi[k]);
    agg.phi_std_replicates[k] = mean_of(phi_rep[k]);
    agg.ratio_std_replicates[k] = mean_of(ratio_rep[k]);
    agg.bsi_std_replicates[k] = mean_of(bsi_rep[k]);
    means[k] = agg.phi[k].mean;
  }
  double mass = 0.0;
  for (double m : means) mass += std::abs(m);
  for (int k = 0; k < 3; ++k) agg.ratio_of_means[k] = mass > 0.0 ? means[k] / mass : 0.0;
  return agg;
}

}  // namespace detail

inline AggregateReport analyze_dataset(const Dataset& input, const RunConfig& cfg) {
  if (cfg.replicates < 1) throw InvalidArgument("replicates must be at least 1");
  if (cfg.models.empty()) throw InvalidArgument("no evaluator configured");
  if (input.samples.empty()) throw InvalidArgument("dataset is empty");

  const Dataset* data = &input;
  Dataset intervened;
  if (cfg.intervention) {
    intervened = apply_intervention(input, *cfg.intervention, cfg.intervention_seed);
    data = &intervened;
  }

  const std::size_t n = data->samples.size();
  std::vector<SampleResult> results(n);
  const int workers = std::clamp(cfg.parallelism, 1, static_cast<int>(std::min<std::size_t>(n, 256)));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    detail::EvaluatorPool pool(cfg.models);
    for (std::size_t i = next++; i < n; i = next++) results[i] = detail::analyze_one(data->samples[i], cfg, pool);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    for (int t = 0; t < workers; ++t) threads.emplace_back(work);
  }

  AggregateReport report;
  report.evaluator = cfg.evaluator_name;
  report.baseline = cfg.baseline.to_string();
  report.replicates = cfg.replicates;
  report.seed = cfg.seed;
  for (const auto& r : results) {
    if (!r.ok) ++report.failed;
    else report.max_efficiency_residual = std::max(report.max_efficiency_residual, r.max_residual);
  }
  if (report.failed == n) throw Error("every sample failed; first error: " + results.front().error);

  std::vector<const SampleResult*> all;
  for (const auto& r : results) all.push_back(&r);
  report.scopes.push_back(detail::aggregate_scope("overall", all));
  for (int c = 0; c < data->class_count(); ++c) {
    std::vector<const SampleResult*> members;
    for (const auto& r : results)
      if (r.class_index == c) members.push_back(&r);
    report.scopes.push_back(detail::aggregate_scope(data->class_names[c], members));
  }
  report.samples = std::move(results);
  return report;
}

inline AggregateReport analyze_dataset(const RunConfig& cfg) {
  return analyze_dataset(read_dataset(cfg.dataset_root), cfg);
}

struct TrajectoryRow {
  int checkpoint = 0;
  bool ok = false;
  std::string error;
  ScopeAggregate overall;
};

struct TrajectoryReport {
  std::vector<TrajectoryRow> rows;
};

struct Checkpoint {
  int index = 0;
  std::vector<EvaluatorFactory> models;
};

// Every checkpoint is analysed with the same seeds, so rows are paired.
inline TrajectoryReport analyze_trajectory(const Dataset& dataset, const RunConfig& cfg,
                                           const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) throw InvalidArgument("trajectory needs at least one checkpoint");
  for (std::size_t k = 1; k < checkpoints.size(); ++k)
    if (checkpoints[k].index <= checkpoints[k - 1].index)
      throw InvalidArgument("checkpoint indices must be strictly increasing");
  TrajectoryReport out;
  for (const auto& cp : checkpoints) {
    TrajectoryRow row;
    row.checkpoint = cp.index;
    try {
      RunConfig c = cfg;
      c.models = cp.models;
      row.overall = analyze_dataset(dataset, c).overall();
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluator specs
// ---------------------------------------------------------------------------

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

inline std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) parts.push_back(item);
  return parts;
}

// echo[:K] | linear:<model.json> | toy:<ckpt>[,<ckpt>...] | external:<command> | tcp:<host:port>
inline std::vector<EvaluatorFactory> parse_evaluator_spec(const std::string& spec, ExternalOptions options = {}) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "echo") {
    const int classes = arg.empty() ? 10 : std::stoi(arg);
    auto shared = std::make_shared<MeanEchoEvaluator>(classes);
    return {[shared] { return shared; }};
  }
  if (kind == "linear" && !arg.empty()) {
    auto shared = std::make_shared<RegionMeanLinear>(RegionMeanLinear::from_json(read_json_file(arg)));
    return {[shared] { return shared; }};
  }
  if (kind == "toy" && !arg.empty()) {
    std::vector<EvaluatorFactory> out;
    for (const auto& path : split_list(arg, ',')) {
      auto shared = std::make_shared<MlpEvaluator>(model_from_json(read_json_file(path)));
      out.push_back([shared] { return shared; });
    }
    if (out.empty()) throw InvalidArgument("toy evaluator needs at least one checkpoint");
    return out;
  }
  if (kind == "external" && !arg.empty())
    return {[arg, options] { return std::shared_ptr<GameEvaluator>(ExternalEvaluator::spawn(arg, options)); }};
  if (kind == "tcp" && !arg.empty())
    return {[arg, options] { return std::shared_ptr<GameEvaluator>(ExternalEvaluator::connect(arg, options)); }};
  throw InvalidArgument("unknown evaluator spec '" + spec +
                        "' (expected echo[:K], linear:FILE, toy:CKPT[,CKPT...], external:CMD or tcp:HOST:PORT)");
}

}  // namespace sarshap
