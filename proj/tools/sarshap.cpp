// sarshap: region Shapley attribution for SAR target recognition.
//
// Exit codes: 0 success, 2 some samples or checkpoints failed, 1 fatal.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sarshap/pipeline.hpp"
#include "sarshap/report.hpp"
#include "sarshap/selftest.hpp"
#include "sarshap/synthetic.hpp"
#include "sarshap/toy_model.hpp"

namespace fs = std::filesystem;
using namespace sarshap;

namespace {

constexpr int kExitFatal = 1;
constexpr int kExitPartial = 2;

struct RunFlags {
  std::string dataset;
  std::string evaluator = "echo";
  std::string baseline = "half_normal:0.1";
  int replicates = 5;
  std::uint64_t seed = 0;
  std::string out = "out";
  int parallelism = 1;
  std::string intervention;
  std::uint64_t intervention_seed = 0;
  bool clamp = false;
  int timeout_ms = 30000;
  bool no_batch = false;
  bool no_svg = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_evaluator) {
  cmd->add_option("--dataset", f.dataset, "Dataset root (manifest.json or class folders)")->required();
  if (with_evaluator)
    cmd->add_option("--evaluator", f.evaluator, "echo[:K] | linear:FILE | toy:CKPT[,CKPT...] | external:CMD | tcp:HOST:PORT")
        ->capture_default_str();
  cmd->add_option("--baseline", f.baseline, "half_normal:SIGMA | constant:C | zero")->capture_default_str();
  cmd->add_option("--replicates", f.replicates, "Replicates per sample")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f.seed, "Root seed")->capture_default_str();
  cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
  cmd->add_option("--parallelism", f.parallelism, "Concurrent samples")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--intervention", f.intervention, "SCR re-weighting applied before analysis: fixed:DB | uniform:LO,HI");
  cmd->add_option("--intervention-seed", f.intervention_seed, "Seed for the re-weighting draws")->capture_default_str();
  cmd->add_flag("--clamp", f.clamp, "Clamp composed inputs to [0,1]");
  cmd->add_option("--timeout-ms", f.timeout_ms, "External evaluator reply timeout")->capture_default_str();
  cmd->add_flag("--no-batch", f.no_batch, "Never use score_batch with external evaluators");
  cmd->add_flag("--no-svg", f.no_svg, "Skip SVG charts");
}

ExternalOptions external_options(const RunFlags& f) {
  ExternalOptions o;
  o.timeout = std::chrono::milliseconds(f.timeout_ms);
  o.allow_batch = !f.no_batch;
  return o;
}

RunConfig run_config(const RunFlags& f) {
  RunConfig cfg;
  cfg.dataset_root = f.dataset;
  cfg.evaluator_name = f.evaluator;
  cfg.baseline = BaselineSpec::parse(f.baseline);
  cfg.replicates = f.replicates;
  cfg.seed = f.seed;
  cfg.clamp = f.clamp;
  if (!f.intervention.empty()) cfg.intervention = ScrTargetSpec::parse(f.intervention);
  cfg.intervention_seed = f.intervention_seed;
  cfg.parallelism = f.parallelism;
  return cfg;
}

void print_overall(const ScopeAggregate& a) {
  std::printf("%-8s %14s %14s\n", "region", "shapley", "ratio");
  for (int k = 0; k < 3; ++k)
    std::printf("%-8s %14s %14s\n", kRegionNames[k], detail::fixed(a.phi[k].mean, 6).c_str(),
                a.ratio[k].count ? detail::fixed(a.ratio[k].mean, 4).c_str() : "undefined");
  for (int k = 0; k < 3; ++k) std::printf("%-16s bsi %s\n", kPairNames[k], detail::fixed(a.bsi[k].mean, 6).c_str());
  std::printf("accuracy %s over %zu samples\n", detail::fixed(a.accuracy, 4).c_str(), a.samples);
}

int cmd_analyze(const RunFlags& f) {
  auto cfg = run_config(f);
  cfg.models = parse_evaluator_spec(f.evaluator, external_options(f));
  const auto report = analyze_dataset(read_dataset(f.dataset), cfg);
  emit_reports(&report, nullptr, f.out, EmitOptions{!f.no_svg});
  print_overall(report.overall());
  for (const auto& s : report.samples)
    if (!s.ok) std::fprintf(stderr, "failed: %s\n", s.error.c_str());
  std::printf("wrote %s\n", (fs::path(f.out) / "report.json").c_str());
  return report.failed ? kExitPartial : 0;
}

// Checkpoint index: last run of digits in the file name, else position.
std::vector<Checkpoint> load_checkpoints(std::vector<std::string> paths, const std::string& dir) {
  if (!dir.empty()) {
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".json") paths.push_back(e.path().string());
  }
  if (paths.empty()) throw InvalidArgument("no checkpoints given");
  static const std::regex digits("(\\d+)(?!.*\\d)");
  std::vector<std::pair<int, std::string>> indexed;
  for (std::size_t k = 0; k < paths.size(); ++k) {
    const auto name = fs::path(paths[k]).stem().string();
    std::smatch m;
    const int index = std::regex_search(name, m, digits) ? std::stoi(m[1]) : static_cast<int>(k + 1);
    indexed.emplace_back(index, paths[k]);
  }
  std::sort(indexed.begin(), indexed.end());
  std::vector<Checkpoint> out;
  for (const auto& [index, path] : indexed) out.push_back({index, parse_evaluator_spec("toy:" + path)});
  return out;
}

int cmd_trajectory(const RunFlags& f, const std::vector<std::string>& paths, const std::string& dir) {
  auto cfg = run_config(f);
  const auto checkpoints = load_checkpoints(paths, dir);
  cfg.evaluator_name = "toy";
  const auto t = analyze_trajectory(read_dataset(f.dataset), cfg, checkpoints);
  emit_reports(nullptr, &t, f.out, EmitOptions{!f.no_svg});
  bool partial = false;
  std::printf("%10s %9s %9s %9s %9s\n", "checkpoint", "accuracy", "r_clutter", "r_target", "r_shadow");
  for (const auto& row : t.rows) {
    if (!row.ok) {
      partial = true;
      std::fprintf(stderr, "checkpoint %d failed: %s\n", row.checkpoint, row.error.c_str());
      continue;
    }
    const auto& a = row.overall;
    std::printf("%10d %9.4f %9.4f %9.4f %9.4f\n", row.checkpoint, a.accuracy, a.ratio[0].mean, a.ratio[1].mean,
                a.ratio[2].mean);
    partial = partial || a.failed > 0;
  }
  return partial ? kExitPartial : 0;
}

struct GenerateFlags {
  std::string preset = "ladder";
  std::string config;
  std::string out = "data";
  std::string format = "pgm8";
  std::uint64_t seed = 0;
  int train_per_class = -1;
  int test_per_class = -1;
  int size = 0;
};

int cmd_generate(const GenerateFlags& g) {
  BiasConfig cfg;
  if (!g.config.empty()) {
    cfg = bias_config_from_json(read_json_file(g.config));
  } else if (g.preset == "ladder") {
    cfg = ladder_config();
  } else if (g.preset == "debiased") {
    cfg = debiased_config();
  } else {
    throw InvalidArgument("unknown preset '" + g.preset + "' (expected ladder or debiased)");
  }
  cfg.seed = g.seed;
  if (g.train_per_class >= 0) cfg.train_per_class = g.train_per_class;
  if (g.test_per_class >= 0) cfg.test_per_class = g.test_per_class;
  if (g.size > 0) cfg.height = cfg.width = g.size;
  cfg.validate();
  const auto format = parse_image_format(g.format);
  const auto meta = bias_config_to_json(cfg);
  for (Split split : {Split::train, Split::test}) {
    const auto ds = generate_dataset(cfg, split);
    if (ds.samples.empty()) continue;
    const auto root = fs::path(g.out) / split_name(split);
    write_dataset(root, ds, format, meta);
    std::printf("wrote %zu samples to %s\n", ds.samples.size(), root.c_str());
  }
  std::ofstream(fs::path(g.out) / "config.json") << meta.dump(2) << '\n';
  return 0;
}

struct ReweightFlags {
  std::string dataset;
  std::string spec = "uniform:11,14";
  std::uint64_t seed = 0;
  std::string out;
  std::string csv;
  std::string format = "rawf32";
};

int cmd_reweight(const ReweightFlags& r) {
  const auto ds = read_dataset(r.dataset);
  std::vector<InterventionRecord> records;
  const auto shifted = apply_intervention(ds, ScrTargetSpec::parse(r.spec), r.seed, &records);
  write_dataset(r.out, shifted, parse_image_format(r.format), {{"intervention", r.spec}, {"seed", r.seed}});
  const auto csv = r.csv.empty() ? fs::path(r.out) / "intervention.csv" : fs::path(r.csv);
  detail::write_text(csv, intervention_csv(records));
  std::printf("re-weighted %zu samples into %s, records in %s\n", records.size(), r.out.c_str(), csv.c_str());
  return 0;
}

struct TrainFlags {
  std::string dataset;
  std::string out = "model";
  TrainConfig cfg;
  int save_every = 1;
};

int cmd_train(const TrainFlags& t) {
  const auto ds = read_dataset(t.dataset);
  std::vector<AmplitudeImage> images;
  std::vector<int> labels;
  for (const auto& s : ds.samples) images.push_back(s.image), labels.push_back(s.class_index);
  auto cfg = t.cfg;
  if (cfg.classes == 0) cfg.classes = ds.class_count();
  const fs::path out(t.out);
  fs::create_directories(out / "checkpoints");
  std::ostringstream trace;
  trace << "epoch,loss,accuracy\n";
  const auto result = train(images, labels, cfg, [&](const EpochStats& e, const MlpModel& m) {
    trace << e.epoch << ',' << detail::fixed(e.loss, 6) << ',' << detail::fixed(e.accuracy, 4) << '\n';
    if (t.save_every > 0 && (e.epoch % t.save_every == 0 || e.epoch == cfg.epochs)) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.json", e.epoch);
      detail::write_text(out / "checkpoints" / name, model_to_json(m).dump() + "\n");
    }
    std::printf("epoch %3d  loss %.4f  accuracy %.4f\n", e.epoch, e.loss, e.accuracy);
    std::fflush(stdout);
  });
  detail::write_text(out / "model.json", model_to_json(result.model).dump() + "\n");
  detail::write_text(out / "train_trace.csv", trace.str());
  std::printf("wrote %s\n", (out / "model.json").c_str());
  return 0;
}

int cmd_selftest(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_selftest(seed)) {
    std::printf("%s  %-28s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitFatal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region Shapley attribution for SAR target recognition"};
  app.require_subcommand(1);

  RunFlags analyze_flags;
  auto* analyze = app.add_subcommand("analyze", "Attribute every sample of a dataset and aggregate");
  add_run_flags(analyze, analyze_flags, true);

  RunFlags traj_flags;
  std::vector<std::string> checkpoint_paths;
  std::string checkpoint_dir;
  auto* trajectory = app.add_subcommand("trajectory", "Aggregate attributions for a series of toy-model checkpoints");
  add_run_flags(trajectory, traj_flags, false);
  trajectory->add_option("--checkpoint", checkpoint_paths, "Checkpoint files");
  trajectory->add_option("--checkpoint-dir", checkpoint_dir, "Directory of checkpoint files")->check(CLI::ExistingDirectory);

  GenerateFlags gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic biased dataset");
  generate->add_option("--preset", gen.preset, "ladder | debiased")->capture_default_str();
  generate->add_option("--config", gen.config, "Generator config JSON (overrides --preset)");
  generate->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->capture_default_str();
  generate->add_option("--format", gen.format, "pgm8 | rawf32")->capture_default_str();
  generate->add_option("--train-per-class", gen.train_per_class, "Training samples per class");
  generate->add_option("--test-per-class", gen.test_per_class, "Test samples per class");
  generate->add_option("--size", gen.size, "Image side in pixels");

  ReweightFlags rw;
  auto* reweight = app.add_subcommand("reweight", "Re-weight clutter to requested SCRs");
  reweight->add_option("--dataset", rw.dataset, "Input dataset root")->required();
  reweight->add_option("--scr", rw.spec, "fixed:DB | uniform:LO,HI")->capture_default_str();
  reweight->add_option("--seed", rw.seed, "Root seed")->capture_default_str();
  reweight->add_option("--out", rw.out, "Output dataset root")->required();
  reweight->add_option("--csv", rw.csv, "Record CSV (default OUT/intervention.csv)");
  reweight->add_option("--format", rw.format, "pgm8 | rawf32")->capture_default_str();

  TrainFlags tr;
  auto* trainer = app.add_subcommand("train", "Train the toy classifier and save per-epoch checkpoints");
  trainer->add_option("--dataset", tr.dataset, "Training dataset root")->required();
  trainer->add_option("--out", tr.out, "Output directory")->capture_default_str();
  trainer->add_option("--seed", tr.cfg.seed, "Seed")->capture_default_str();
  trainer->add_option("--epochs", tr.cfg.epochs, "Epochs")->capture_default_str()->check(CLI::PositiveNumber);
  trainer->add_option("--learning-rate", tr.cfg.learning_rate, "SGD step")->capture_default_str();
  trainer->add_option("--batch-size", tr.cfg.batch_size, "Minibatch size")->capture_default_str();
  trainer->add_option("--hidden", tr.cfg.hidden, "Hidden units")->capture_default_str();
  trainer->add_option("--pool", tr.cfg.pool, "Average-pool factor")->capture_default_str();
  trainer->add_option("--init-scale", tr.cfg.init_scale, "Initial weight scale")->capture_default_str();
  trainer->add_option("--save-every", tr.save_every, "Checkpoint interval in epochs, 0 for none")->capture_default_str();

  std::uint64_t selftest_seed = 1;
  auto* selftest = app.add_subcommand("selftest", "Run the invariant suite");
  selftest->add_option("--seed", selftest_seed, "Seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*analyze) return cmd_analyze(analyze_flags);
    if (*trajectory) return cmd_trajectory(traj_flags, checkpoint_paths, checkpoint_dir);
    if (*generate) return cmd_generate(gen);
    if (*reweight) return cmd_reweight(rw);
    if (*trainer) return cmd_train(tr);
    if (*selftest) return cmd_selftest(selftest_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFatal;
  }
  return kExitFatal;
}
