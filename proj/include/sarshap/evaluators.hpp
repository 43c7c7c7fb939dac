#pragma once

// Game evaluators: anything that maps a (masked) image to per-class scores.
// Scores are pre-softmax logits for the class of interest.

#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sarshap/coalition.hpp"
#include "sarshap/error.hpp"
#include "sarshap/imaging.hpp"

namespace sarshap {

// Label maps are passed alongside every image as side information; most
// evaluators ignore them.
class GameEvaluator {
 public:
  virtual ~GameEvaluator() = default;

  virtual std::string name() const = 0;
  virtual int class_count() const = 0;
  virtual std::vector<double> scores(const AmplitudeImage& image, const RegionLabelMap& labels) = 0;

  virtual double score(const AmplitudeImage& image, const RegionLabelMap& labels, int class_index) {
    check_class(class_index);
    return scores(image, labels)[class_index];
  }

  // One true-class score per image. Remote evaluators override this to keep
  // several requests in flight.
  virtual std::vector<double> score_many(std::span<const AmplitudeImage> images, const RegionLabelMap& labels,
                                         int class_index) {
    std::vector<double> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(score(img, labels, class_index));
    return out;
  }

  // Whether one instance may be shared by concurrent callers.
  virtual bool thread_safe() const { return true; }

 protected:
  void check_class(int class_index) const {
    if (class_index < 0 || class_index >= class_count())
      throw InvalidArgument("class index " + std::to_string(class_index) + " out of range for " + name() + " with " +
                            std::to_string(class_count()) + " classes");
  }
};

inline std::array<double, kRegionCount> region_means(const AmplitudeImage& image, const RegionLabelMap& labels) {
  if (!labels.matches(image)) throw InvalidArgument("label map does not match image dimensions");
  std::array<double, kRegionCount> sum{};
  std::array<std::size_t, kRegionCount> count{};
  for (std::size_t p = 0; p < image.size(); ++p) {
    const auto r = static_cast<int>(labels[p]);
    sum[r] += image[p];
    ++count[r];
  }
  std::array<double, kRegionCount> mean{};
  for (int r = 0; r < kRegionCount; ++r) mean[r] = count[r] ? sum[r] / static_cast<double>(count[r]) : 0.0;
  return mean;
}

// score_c = sum_r w[c][r] * mean(region r) + bias[c]. Under a zero baseline
// the induced region game is additive, which makes it a closed-form oracle.
class RegionMeanLinear final : public GameEvaluator {
 public:
  RegionMeanLinear(std::vector<std::array<double, kRegionCount>> weights, std::vector<double> bias)
      : weights_(std::move(weights)), bias_(std::move(bias)) {
    if (weights_.empty() || weights_.size() != bias_.size())
      throw InvalidArgument("region-mean model needs one weight row and one bias per class");
    for (const auto& row : weights_)
      for (double w : row)
        if (!std::isfinite(w)) throw InvalidArgument("non-finite region-mean weight");
    for (double b : bias_)
      if (!std::isfinite(b)) throw InvalidArgument("non-finite region-mean bias");
  }

  static RegionMeanLinear from_json(const nlohmann::json& j) {
    try {
      return RegionMeanLinear(j.at("weights").get<std::vector<std::array<double, kRegionCount>>>(),
                              j.at("bias").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(std::string("malformed region-mean model: ") + e.what());
    }
  }

  std::string name() const override { return "region_mean_linear"; }
  int class_count() const override { return static_cast<int>(bias_.size()); }

  const std::array<double, kRegionCount>& weights(int class_index) const { return weights_.at(class_index); }
  double bias(int class_index) const { return bias_.at(class_index); }

  std::vector<double> scores(const AmplitudeImage& image, const RegionLabelMap& labels) override {
    const auto m = region_means(image, labels);
    std::vector<double> out(bias_);
    for (std::size_t c = 0; c < out.size(); ++c)
      for (int r = 0; r < kRegionCount; ++r) out[c] += weights_[c][r] * m[r];
    return out;
  }

 private:
  std::vector<std::array<double, kRegionCount>> weights_;
  std::vector<double> bias_;
};

inline double region_mean_linear_score(const RegionMeanLinear& model, const AmplitudeImage& image,
                                       const RegionLabelMap& labels, int class_index) {
  if (class_index < 0 || class_index >= model.class_count()) throw InvalidArgument("class index out of range");
  const auto m = region_means(image, labels);
  double s = model.bias(class_index);
  for (int r = 0; r < kRegionCount; ++r) s += model.weights(class_index)[r] * m[r];
  return s;
}

// Every class scores the arithmetic mean of the input pixels.
class MeanEchoEvaluator final : public GameEvaluator {
 public:
  explicit MeanEchoEvaluator(int classes = 10) : classes_(classes) {
    if (classes_ < 1) throw InvalidArgument("echo evaluator needs at least one class");
  }

  std::string name() const override { return "echo"; }
  int class_count() const override { return classes_; }

  std::vector<double> scores(const AmplitudeImage& image, const RegionLabelMap&) override {
    const double mean = std::accumulate(image.data().begin(), image.data().end(), 0.0) /
                        static_cast<double>(image.size());
    return std::vector<double>(classes_, mean);
  }

 private:
  int classes_;
};

// Replays a fixed coalition table: it recognises which regions of its input
// still hold the original image and which hold the baseline, and returns the
// table value of that coalition for every class.
class TableEvaluator final : public GameEvaluator {
 public:
  TableEvaluator(CoalitionValueTable table, AmplitudeImage image, AmplitudeImage baseline, RegionLabelMap labels,
                 int classes = 1)
      : table_(std::move(table)),
        image_(std::move(image)),
        baseline_(std::move(baseline)),
        labels_(std::move(labels)),
        classes_(classes) {
    if (table_.player_count() != kRegionCount) throw InvalidArgument("table evaluator needs a 3-region table");
    if (!labels_.matches(image_) || !baseline_.same_shape(image_.height(), image_.width()))
      throw InvalidArgument("table evaluator inputs must share dimensions");
    std::array<bool, kRegionCount> distinguishable{};
    for (std::size_t p = 0; p < image_.size(); ++p)
      if (image_[p] != baseline_[p]) distinguishable[static_cast<int>(labels_[p])] = true;
    for (int r = 0; r < kRegionCount; ++r)
      if (!distinguishable[r])
        throw InvalidArgument(std::string("region ") + kRegionNames[r] +
                              " is empty or identical in image and baseline");
    if (classes_ < 1) throw InvalidArgument("table evaluator needs at least one class");
  }

  std::string name() const override { return "table"; }
  int class_count() const override { return classes_; }

  Coalition identify(const AmplitudeImage& input) const {
    if (!input.same_shape(image_.height(), image_.width()))
      throw InvalidArgument("table evaluator received an image of the wrong shape");
    std::array<bool, kRegionCount> is_original{true, true, true};
    std::array<bool, kRegionCount> is_baseline{true, true, true};
    for (std::size_t p = 0; p < input.size(); ++p) {
      const auto r = static_cast<int>(labels_[p]);
      if (input[p] != image_[p]) is_original[r] = false;
      if (input[p] != baseline_[p]) is_baseline[r] = false;
    }
    Coalition s = 0;
    for (int r = 0; r < kRegionCount; ++r) {
      if (is_original[r])
        s |= player_bit(r);
      else if (!is_baseline[r])
        throw InvalidArgument(std::string("table evaluator: region ") + kRegionNames[r] +
                              " matches neither the image nor the baseline");
    }
    return s;
  }

  std::vector<double> scores(const AmplitudeImage& input, const RegionLabelMap&) override {
    return std::vector<double>(classes_, table_[identify(input)]);
  }

 private:
  CoalitionValueTable table_;
  AmplitudeImage image_;
  AmplitudeImage baseline_;
  RegionLabelMap labels_;
  int classes_;
};

// v(S) = f(x_S; baseline_{N\S}) for every coalition of {clutter, target, shadow}.
inline CoalitionValueTable evaluate_coalition_table(GameEvaluator& evaluator, const AmplitudeImage& image,
                                                    const RegionLabelMap& labels, const AmplitudeImage& baseline,
                                                    int class_index, bool clamp = false) {
  if (!labels.matches(image) || !baseline.same_shape(image.height(), image.width()))
    throw InvalidArgument("image, label map and baseline must share dimensions");
  if (class_index < 0 || class_index >= evaluator.class_count())
    throw InvalidArgument("class index " + std::to_string(class_index) + " not covered by evaluator " +
                          evaluator.name());

  constexpr std::size_t kCoalitions = std::size_t{1} << kRegionCount;
  std::vector<AmplitudeImage> inputs;
  inputs.reserve(kCoalitions);
  for (Coalition s = 0; s < kCoalitions; ++s) inputs.push_back(compose_masked_input(image, labels, s, baseline, clamp));

  std::vector<double> values;
  try {
    values = evaluator.score_many(inputs, labels, class_index);
  } catch (const CoalitionError&) {
    throw;
  } catch (const std::exception& e) {
    // Batched evaluation lost the per-coalition context; retry one at a
    // time to attribute the failure.
    for (Coalition s = 0; s < kCoalitions; ++s) {
      try {
        evaluator.score(inputs[s], labels, class_index);
      } catch (const std::exception& inner) {
        throw CoalitionError(s, inner.what());
      }
    }
    throw Error(std::string("evaluator ") + evaluator.name() + " failed: " + e.what());
  }
  if (values.size() != kCoalitions) throw Error("evaluator returned the wrong number of scores");
  for (Coalition s = 0; s < kCoalitions; ++s)
    if (!std::isfinite(values[s])) throw CoalitionError(s, "evaluator returned a non-finite score");
  return CoalitionValueTable(region_players(), std::move(values));
}

}  // namespace sarshap
