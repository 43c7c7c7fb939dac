#include <gtest/gtest.h>

#include <fstream>

#include "sarshap/pipeline.hpp"
#include "sarshap/report.hpp"
#include "sarshap/synthetic.hpp"
#include "sarshap/toy_model.hpp"
#include "support.hpp"

using namespace sarshap;

namespace {

template <class E, class... Args>
std::vector<EvaluatorFactory> shared_model(Args&&... args) {
  auto e = std::make_shared<E>(std::forward<Args>(args)...);
  return {[e] { return e; }};
}

Dataset one_sample_dataset(int copies = 1) {
  Dataset ds;
  ds.class_names = {"only"};
  for (int k = 0; k < copies; ++k)
    ds.samples.push_back({"only/s" + std::to_string(k), 0, testing_support::small_image(1),
                          testing_support::small_labels(), std::nullopt, 0});
  return ds;
}

Dataset fixture_dataset() {
  auto cfg = ladder_config();
  cfg.classes.resize(3);
  cfg.train_per_class = 4;
  cfg.seed = 1;
  return generate_dataset(cfg, Split::train);
}

RegionMeanLinear fixture_linear() {
  return RegionMeanLinear({{1.0, 2.0, -0.5}, {3.0, 0.5, 0.0}, {-1.0, 1.0, 2.0}}, {0.1, 0.0, -0.2});
}

}  // namespace

TEST(AnalyzeSample, TableFixtureReplays) {
  const auto fixture = testing_support::random_table(3, 8);
  const auto img = testing_support::small_image(1);
  const auto labels = testing_support::small_labels();
  const auto base = sample_baseline(BaselineSpec::constant(0.01), 6, 6, 0).image;
  TableEvaluator ev(fixture, img, base, labels);
  const auto a = analyze_sample(img, labels, ev, BaselineSpec::constant(0.01), 0, 123);
  const auto direct = shapley_all(fixture);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(a.attribution.phi[r], direct.phi[r]);
  EXPECT_EQ(a.interaction.at(0, 1), bsi_closed_form(fixture, 0, 1));
}

TEST(AnalyzeDataset, SingleSampleSingleReplicate) {
  const auto fixture = testing_support::random_table(3, 8);
  const auto base = sample_baseline(BaselineSpec::constant(0.01), 6, 6, 0).image;
  RunConfig cfg;
  cfg.baseline = BaselineSpec::constant(0.01);
  cfg.replicates = 1;
  cfg.models = shared_model<TableEvaluator>(fixture, testing_support::small_image(1), base,
                                            testing_support::small_labels());
  const auto report = analyze_dataset(one_sample_dataset(), cfg);
  const auto direct = shapley_all(fixture);
  ASSERT_EQ(report.scopes.size(), 2u);
  const auto& o = report.overall();
  EXPECT_EQ(o.samples, 1u);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(o.phi[r].mean, direct.phi[r]);
    EXPECT_EQ(o.phi[r].std, 0.0);
    EXPECT_EQ(o.ratio[r].mean, (*direct.ratio)[r]);
    EXPECT_EQ(o.ratio[r].std, 0.0);
    EXPECT_EQ(o.bsi[r].std, 0.0);
    EXPECT_EQ(o.phi_std_replicates[r], 0.0);
  }
  EXPECT_EQ(o.bsi[0].mean, bsi_closed_form(fixture, 0, 1));
  EXPECT_EQ(o.bsi[1].mean, bsi_closed_form(fixture, 1, 2));
  EXPECT_EQ(o.bsi[2].mean, bsi_closed_form(fixture, 2, 0));
  EXPECT_EQ(o.accuracy, 1.0);
}

TEST(AnalyzeDataset, DuplicatesHaveZeroSpread) {
  RunConfig cfg;
  cfg.baseline = BaselineSpec::constant(0.05);
  cfg.replicates = 3;
  cfg.models = shared_model<RegionMeanLinear>(fixture_linear());
  const auto report = analyze_dataset(one_sample_dataset(10), cfg);
  const auto& o = report.overall();
  EXPECT_EQ(o.samples, 10u);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(o.phi[r].std, 0.0);
    EXPECT_EQ(o.ratio[r].std, 0.0);
    EXPECT_EQ(o.bsi[r].std, 0.0);
    EXPECT_EQ(o.phi_std_replicates[r], 0.0);
  }
}

TEST(AnalyzeDataset, LinearModelClosedForm) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  cfg.baseline = BaselineSpec::zero();
  cfg.replicates = 2;
  const auto model = fixture_linear();
  cfg.models = shared_model<RegionMeanLinear>(model);
  const auto report = analyze_dataset(ds, cfg);
  ASSERT_EQ(report.samples.size(), ds.samples.size());
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    const auto& s = ds.samples[k];
    const auto& r = report.samples[k];
    ASSERT_TRUE(r.ok);
    const auto m = region_means(s.image, s.labels);
    for (int reg = 0; reg < 3; ++reg) {
      EXPECT_NEAR(r.phi[reg], model.weights(s.class_index)[reg] * m[reg], 1e-12);
      EXPECT_NEAR(r.bsi[reg], 0.0, 1e-12);
    }
  }
  EXPECT_LT(report.max_efficiency_residual, 1e-12);
}

TEST(AnalyzeDataset, ConstantBaselineIgnoresSeed) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  cfg.baseline = BaselineSpec::constant(0.02);
  cfg.models = shared_model<RegionMeanLinear>(fixture_linear());
  cfg.seed = 1;
  const auto a = report_to_json(analyze_dataset(ds, cfg));
  cfg.seed = 2;
  auto b = report_to_json(analyze_dataset(ds, cfg));
  b["seed"] = 1;
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(AnalyzeDataset, ParallelismDoesNotChangeReport) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  cfg.seed = 9;
  cfg.models = shared_model<RegionMeanLinear>(fixture_linear());
  cfg.parallelism = 1;
  const auto serial = report_to_json(analyze_dataset(ds, cfg)).dump(2);
  for (int p : {2, 8, 64}) {
    cfg.parallelism = p;
    EXPECT_EQ(report_to_json(analyze_dataset(ds, cfg)).dump(2), serial) << p;
  }
}

TEST(AnalyzeDataset, RandomBaselineVariesAcrossReplicates) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  cfg.models = shared_model<RegionMeanLinear>(fixture_linear());
  cfg.replicates = 4;
  const auto report = analyze_dataset(ds, cfg);
  EXPECT_GT(report.overall().phi_std_replicates[0], 0.0);
  EXPECT_EQ(report.samples[0].id, ds.samples[0].id);
}

TEST(AnalyzeDataset, ModelReplicatesCycle) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  cfg.baseline = BaselineSpec::zero();
  cfg.replicates = 2;
  auto a = std::make_shared<RegionMeanLinear>(fixture_linear());
  auto b = std::make_shared<RegionMeanLinear>(
      RegionMeanLinear({{3.0, 2.0, -0.5}, {3.0, 0.5, 0.0}, {-1.0, 1.0, 2.0}}, {0.1, 0.0, -0.2}));
  cfg.models = {[a] { return a; }, [b] { return b; }};
  const auto report = analyze_dataset(ds, cfg);
  const auto& s = ds.samples[0];  // class 0
  const double m = region_means(s.image, s.labels)[0];
  EXPECT_NEAR(report.samples[0].phi[0], 0.5 * (1.0 + 3.0) * m, 1e-12);
  EXPECT_NEAR(report.samples[0].phi_std_replicates[0], 1.0 * m, 1e-12);
}

TEST(AnalyzeDataset, FailuresAreIsolated) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  cfg.models = shared_model<RegionMeanLinear>(fixture_linear());
  auto broken = ds;
  broken.samples[1].labels = RegionLabelMap(64, 64, std::vector<std::uint8_t>(64 * 64, 0));
  broken.samples[1].image = AmplitudeImage(64, 64, 0.0);
  cfg.baseline = BaselineSpec::zero();
  broken.samples[2].class_index = 5;
  const auto report = analyze_dataset(broken, cfg);
  EXPECT_EQ(report.failed, 1u);
  EXPECT_FALSE(report.samples[2].ok);
  EXPECT_NE(report.samples[2].error.find(ds.samples[2].id), std::string::npos);
  EXPECT_TRUE(report.samples[1].ok);
  EXPECT_FALSE(report.samples[1].ratio.has_value());
  EXPECT_EQ(report.overall().ratio_undefined, 1u);
  EXPECT_EQ(report.overall().failed, 1u);
  EXPECT_EQ(report.overall().samples, ds.samples.size() - 1);

  for (auto& s : broken.samples) s.class_index = 7;
  EXPECT_THROW(analyze_dataset(broken, cfg), Error);
}

TEST(AnalyzeDataset, Validation) {
  RunConfig cfg;
  EXPECT_THROW(analyze_dataset(fixture_dataset(), cfg), InvalidArgument);
  cfg.models = shared_model<MeanEchoEvaluator>(3);
  cfg.replicates = 0;
  EXPECT_THROW(analyze_dataset(fixture_dataset(), cfg), InvalidArgument);
  cfg.replicates = 1;
  EXPECT_THROW(analyze_dataset(Dataset{}, cfg), InvalidArgument);
}

TEST(AnalyzeDataset, InterventionIsApplied) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  cfg.baseline = BaselineSpec::zero();
  cfg.models = shared_model<RegionMeanLinear>(fixture_linear());
  cfg.intervention = ScrTargetSpec::fixed(12.0);
  const auto report = analyze_dataset(ds, cfg);
  const auto shifted = apply_intervention(ds, ScrTargetSpec::fixed(12.0), 0);
  const auto& s = shifted.samples[0];
  EXPECT_NEAR(report.samples[0].phi[0], fixture_linear().weights(0)[0] * region_means(s.image, s.labels)[0], 1e-12);
}

TEST(AnalyzeDataset, ScopesPerClass) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  cfg.models = shared_model<RegionMeanLinear>(fixture_linear());
  const auto report = analyze_dataset(ds, cfg);
  ASSERT_EQ(report.scopes.size(), 4u);
  EXPECT_EQ(report.scopes[0].scope, "overall");
  EXPECT_EQ(report.scopes[1].scope, ds.class_names[0]);
  EXPECT_EQ(report.scopes[1].samples, 4u);
  // Overall mean is the sample-weighted mean of the class means.
  double m = 0.0;
  for (int c = 1; c <= 3; ++c) m += report.scopes[c].phi[1].mean / 3.0;
  EXPECT_NEAR(report.overall().phi[1].mean, m, 1e-12);
  const auto& o = report.overall();
  double mass = 0.0;
  for (int r = 0; r < 3; ++r) mass += std::abs(o.phi[r].mean);
  EXPECT_NEAR(o.ratio_of_means[1], o.phi[1].mean / mass, 1e-15);
}

TEST(Trajectory, SingleCheckpointMatchesDataset) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  cfg.models = shared_model<RegionMeanLinear>(fixture_linear());
  const auto direct = analyze_dataset(ds, cfg);
  const auto t = analyze_trajectory(ds, cfg, {{0, cfg.models}});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(detail::scope_json(t.rows[0].overall).dump(), detail::scope_json(direct.overall()).dump());
}

TEST(Trajectory, RepeatedCheckpointGivesIdenticalRows) {
  const auto ds = fixture_dataset();
  RunConfig cfg;
  const auto models = shared_model<RegionMeanLinear>(fixture_linear());
  const auto t = analyze_trajectory(ds, cfg, {{1, models}, {2, models}, {3, models}});
  ASSERT_EQ(t.rows.size(), 3u);
  const auto first = detail::scope_json(t.rows[0].overall).dump();
  for (const auto& row : t.rows) EXPECT_EQ(detail::scope_json(row.overall).dump(), first);
  EXPECT_THROW(analyze_trajectory(ds, cfg, {{2, models}, {2, models}}), InvalidArgument);
  EXPECT_THROW(analyze_trajectory(ds, cfg, {}), InvalidArgument);
}

TEST(Trajectory, ClutterRatioMovesDuringTraining) {
  auto bias = ladder_config();
  bias.train_per_class = 20;
  bias.seed = 2;
  const auto ds = generate_dataset(bias, Split::train);
  std::vector<AmplitudeImage> images;
  std::vector<int> labels;
  for (const auto& s : ds.samples) images.push_back(s.image), labels.push_back(s.class_index);

  std::vector<Checkpoint> checkpoints;
  TrainConfig tc;
  tc.seed = 2;
  train(images, labels, tc, [&](const EpochStats& e, const MlpModel& m) {
    auto shared = std::make_shared<MlpEvaluator>(m);
    checkpoints.push_back({e.epoch, {[shared] { return shared; }}});
  });
  ASSERT_EQ(checkpoints.size(), 60u);

  RunConfig cfg;
  cfg.replicates = 1;
  cfg.seed = 2;
  const auto t = analyze_trajectory(ds, cfg, checkpoints);
  double lo = 1e9, hi = -1e9;
  for (const auto& row : t.rows) {
    ASSERT_TRUE(row.ok) << row.error;
    lo = std::min(lo, row.overall.ratio[0].mean);
    hi = std::max(hi, row.overall.ratio[0].mean);
  }
  EXPECT_GT(hi - lo, 0.01);
  EXPECT_GT(t.rows.back().overall.accuracy, t.rows.front().overall.accuracy);
}

TEST(EvaluatorSpec, Parsing) {
  EXPECT_EQ(parse_evaluator_spec("echo")[0]()->class_count(), 10);
  EXPECT_EQ(parse_evaluator_spec("echo:4")[0]()->class_count(), 4);
  EXPECT_THROW(parse_evaluator_spec("magic"), InvalidArgument);
  EXPECT_THROW(parse_evaluator_spec("toy:"), InvalidArgument);
  EXPECT_THROW(parse_evaluator_spec("linear:/nonexistent.json"), IoError);

  testing_support::TempDir dir("spec");
  const auto m1 = MlpModel::random(MlpShape{8, 8, 2, 3, 2}, 0.1, 1);
  const auto m2 = MlpModel::random(MlpShape{8, 8, 2, 3, 2}, 0.1, 2);
  std::ofstream(dir / "a.json") << model_to_json(m1).dump();
  std::ofstream(dir / "b.json") << model_to_json(m2).dump();
  const auto models = parse_evaluator_spec("toy:" + (dir / "a.json").string() + "," + (dir / "b.json").string());
  ASSERT_EQ(models.size(), 2u);
  EXPECT_EQ(dynamic_cast<MlpEvaluator&>(*models[1]()).model(), m2);

  std::ofstream(dir / "lin.json") << R"({"weights":[[1,2,3],[0,0,0]],"bias":[0,1]})";
  EXPECT_EQ(parse_evaluator_spec("linear:" + (dir / "lin.json").string())[0]()->class_count(), 2);
}
