#pragma once

// One-hidden-layer tanh MLP with softmax cross-entropy, trained by plain
// mini-batch SGD. Inputs are mean-pooled (default 2x2) and flattened.
//
//   logits = W2 * tanh(W1 * x + b1) + b2

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sarshap/error.hpp"
#include "sarshap/evaluators.hpp"
#include "sarshap/imaging.hpp"
#include "sarshap/rng.hpp"

namespace sarshap {

struct MlpShape {
  int image_height = 64;
  int image_width = 64;
  int pool = 2;
  int hidden = 64;
  int classes = 10;

  int input_height() const { return image_height / pool; }
  int input_width() const { return image_width / pool; }
  int input_dim() const { return input_height() * input_width(); }

  void validate() const {
    if (image_height <= 0 || image_width <= 0) throw InvalidArgument("model image dimensions must be positive");
    if (pool < 1 || image_height % pool || image_width % pool)
      throw InvalidArgument("pooling factor must divide the image dimensions");
    if (hidden < 1 || classes < 1) throw InvalidArgument("hidden width and class count must be positive");
  }

  bool operator==(const MlpShape&) const = default;
};

class MlpModel {
 public:
  MlpModel() = default;

  explicit MlpModel(const MlpShape& shape) : shape_(shape) {
    shape_.validate();
    w1_.assign(static_cast<std::size_t>(shape_.hidden) * shape_.input_dim(), 0.0);
    b1_.assign(shape_.hidden, 0.0);
    w2_.assign(static_cast<std::size_t>(shape_.classes) * shape_.hidden, 0.0);
    b2_.assign(shape_.classes, 0.0);
  }

  // Weights uniform in [-scale, scale], biases zero.
  static MlpModel random(const MlpShape& shape, double scale, std::uint64_t seed) {
    MlpModel m(shape);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& w : m.w1_) w = u(rng);
    for (auto& w : m.w2_) w = u(rng);
    return m;
  }

  const MlpShape& shape() const noexcept { return shape_; }
  int input_dim() const noexcept { return shape_.input_dim(); }
  int hidden_dim() const noexcept { return shape_.hidden; }
  int class_count() const noexcept { return shape_.classes; }

  std::vector<double>& w1() noexcept { return w1_; }
  std::vector<double>& b1() noexcept { return b1_; }
  std::vector<double>& w2() noexcept { return w2_; }
  std::vector<double>& b2() noexcept { return b2_; }
  const std::vector<double>& w1() const noexcept { return w1_; }
  const std::vector<double>& b1() const noexcept { return b1_; }
  const std::vector<double>& w2() const noexcept { return w2_; }
  const std::vector<double>& b2() const noexcept { return b2_; }

  std::size_t parameter_count() const noexcept { return w1_.size() + b1_.size() + w2_.size() + b2_.size(); }

  // Flat parameter view in the order w1, b1, w2, b2.
  double& parameter(std::size_t k) {
    for (auto* block : {&w1_, &b1_, &w2_, &b2_}) {
      if (k < block->size()) return (*block)[k];
      k -= block->size();
    }
    throw InvalidArgument("parameter index out of range");
  }

  bool operator==(const MlpModel&) const = default;

 private:
  MlpShape shape_;
  std::vector<double> w1_, b1_, w2_, b2_;
};

// Mean-pools and flattens an image into the model's input vector.
inline std::vector<double> preprocess(const MlpShape& shape, const AmplitudeImage& image) {
  if (!image.same_shape(shape.image_height, shape.image_width))
    throw InvalidArgument("image is " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                          " but the model expects " + std::to_string(shape.image_height) + "x" +
                          std::to_string(shape.image_width));
  const int p = shape.pool;
  const int oh = shape.input_height();
  const int ow = shape.input_width();
  std::vector<double> x(static_cast<std::size_t>(oh) * ow, 0.0);
  const double norm = 1.0 / (p * p);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int dr = 0; dr < p; ++dr)
        for (int dc = 0; dc < p; ++dc) s += image.at(r * p + dr, c * p + dc);
      x[static_cast<std::size_t>(r) * ow + c] = s * norm;
    }
  return x;
}

namespace detail {

struct ForwardCache {
  std::vector<double> hidden;  // tanh activations
  std::vector<double> logits;
};

inline void forward_input(const MlpModel& m, std::span<const double> x, ForwardCache& cache) {
  const int in = m.input_dim();
  const int h = m.hidden_dim();
  const int k = m.class_count();
  if (static_cast<int>(x.size()) != in) throw InvalidArgument("input length does not match the model");
  cache.hidden.resize(h);
  cache.logits.resize(k);
  for (int j = 0; j < h; ++j) {
    const double* row = m.w1().data() + static_cast<std::size_t>(j) * in;
    double a = m.b1()[j];
    for (int i = 0; i < in; ++i) a += row[i] * x[i];
    cache.hidden[j] = std::tanh(a);
  }
  for (int c = 0; c < k; ++c) {
    const double* row = m.w2().data() + static_cast<std::size_t>(c) * h;
    double z = m.b2()[c];
    for (int j = 0; j < h; ++j) z += row[j] * cache.hidden[j];
    cache.logits[c] = z;
  }
}

// Softmax in place; returns log-sum-exp.
inline double softmax_inplace(std::vector<double>& z) {
  const double peak = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) {
    v = std::exp(v - peak);
    sum += v;
  }
  for (auto& v : z) v /= sum;
  return peak + std::log(sum);
}

}  // namespace detail

inline std::vector<double> forward(const MlpModel& model, const AmplitudeImage& image) {
  detail::ForwardCache cache;
  detail::forward_input(model, preprocess(model.shape(), image), cache);
  return cache.logits;
}

// -log softmax(logits)[label]
inline double cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size())) throw InvalidArgument("label out of range");
  std::vector<double> z(logits.begin(), logits.end());
  const double lse = detail::softmax_inplace(z);
  return lse - logits[label];
}

// Parameter-shaped gradient buffers.
struct MlpGradient {
  std::vector<double> w1, b1, w2, b2;

  explicit MlpGradient(const MlpModel& m)
      : w1(m.w1().size(), 0.0), b1(m.b1().size(), 0.0), w2(m.w2().size(), 0.0), b2(m.b2().size(), 0.0) {}

  void clear() {
    for (auto* v : {&w1, &b1, &w2, &b2}) std::fill(v->begin(), v->end(), 0.0);
  }

  double flat(std::size_t k) const {
    for (const auto* block : {&w1, &b1, &w2, &b2}) {
      if (k < block->size()) return (*block)[k];
      k -= block->size();
    }
    throw InvalidArgument("gradient index out of range");
  }
};

namespace detail {

// Adds d loss / d params for one input into grad; returns the loss.
inline double accumulate_gradient(const MlpModel& m, std::span<const double> x, int label, MlpGradient& grad,
                                  ForwardCache& cache, std::vector<double>& delta_hidden) {
  forward_input(m, x, cache);
  const int in = m.input_dim();
  const int h = m.hidden_dim();
  const int k = m.class_count();
  const double logit_label = cache.logits[label];
  std::vector<double>& p = cache.logits;
  const double lse = softmax_inplace(p);
  const double loss = lse - logit_label;
  p[label] -= 1.0;  // d loss / d logits

  delta_hidden.assign(h, 0.0);
  for (int c = 0; c < k; ++c) {
    const double g = p[c];
    grad.b2[c] += g;
    double* gw = grad.w2.data() + static_cast<std::size_t>(c) * h;
    const double* w = m.w2().data() + static_cast<std::size_t>(c) * h;
    for (int j = 0; j < h; ++j) {
      gw[j] += g * cache.hidden[j];
      delta_hidden[j] += g * w[j];
    }
  }
  for (int j = 0; j < h; ++j) {
    const double d = delta_hidden[j] * (1.0 - cache.hidden[j] * cache.hidden[j]);
    grad.b1[j] += d;
    if (d == 0.0) continue;
    double* gw = grad.w1.data() + static_cast<std::size_t>(j) * in;
    for (int i = 0; i < in; ++i) gw[i] += d * x[i];
  }
  return loss;
}

}  // namespace detail

inline MlpGradient loss_gradient(const MlpModel& model, const AmplitudeImage& image, int label) {
  if (label < 0 || label >= model.class_count()) throw InvalidArgument("label out of range");
  MlpGradient grad(model);
  detail::ForwardCache cache;
  std::vector<double> scratch;
  detail::accumulate_gradient(model, preprocess(model.shape(), image), label, grad, cache, scratch);
  return grad;
}

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 60;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double init_scale = 0.05;
  int hidden = 64;
  int pool = 2;
  // 0 infers the class count from the largest label.
  int classes = 0;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  MlpModel model;
  std::vector<EpochStats> trace;
};

using EpochCallback = std::function<void(const EpochStats&, const MlpModel&)>;

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

// Deterministic for a given seed and independent of the order in which the
// samples are supplied: samples are first put in a content-keyed canonical
// order, then shuffled per epoch by the seed.
inline TrainResult train(std::span<const AmplitudeImage> images, std::span<const int> labels,
                         const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  if (images.empty()) throw InvalidArgument("cannot train on an empty dataset");
  if (images.size() != labels.size()) throw InvalidArgument("one label per image is required");
  if (!(config.learning_rate > 0.0) || config.epochs < 1 || config.batch_size < 1)
    throw InvalidArgument("learning rate, epochs and batch size must be positive");

  const int max_label = *std::max_element(labels.begin(), labels.end());
  if (*std::min_element(labels.begin(), labels.end()) < 0) throw InvalidArgument("negative label");
  const int classes = config.classes > 0 ? config.classes : max_label + 1;
  if (max_label >= classes) throw InvalidArgument("label " + std::to_string(max_label) + " out of range");

  MlpShape shape{images[0].height(), images[0].width(), config.pool, config.hidden, std::max(classes, 2)};
  shape.validate();

  const std::size_t n = images.size();
  std::vector<std::vector<double>> inputs(n);
  std::vector<std::uint64_t> keys(n);
  for (std::size_t s = 0; s < n; ++s) {
    inputs[s] = preprocess(shape, images[s]);
    std::uint64_t h = derive_seed(0x5eed, static_cast<std::uint64_t>(labels[s]));
    for (double v : images[s].data()) h = derive_seed(h, std::bit_cast<std::uint64_t>(v));
    keys[s] = h;
  }
  std::vector<std::size_t> canonical(n);
  std::iota(canonical.begin(), canonical.end(), 0);
  std::stable_sort(canonical.begin(), canonical.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  TrainResult result{MlpModel::random(shape, config.init_scale, derive_seed(config.seed, 1)), {}};
  MlpModel& model = result.model;
  MlpGradient grad(model);
  detail::ForwardCache cache;
  std::vector<double> scratch;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = canonical;
    std::shuffle(order.begin(), order.end(), SplitMix64(derive_seed(config.seed, 2, epoch)));

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      grad.clear();
      for (std::size_t b = start; b < stop; ++b)
        detail::accumulate_gradient(model, inputs[order[b]], labels[order[b]], grad, cache, scratch);
      const double step = config.learning_rate / static_cast<double>(stop - start);
      auto apply = [step](std::vector<double>& w, const std::vector<double>& g) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step * g[i];
      };
      apply(model.w1(), grad.w1);
      apply(model.b1(), grad.b1);
      apply(model.w2(), grad.w2);
      apply(model.b2(), grad.b2);
    }

    EpochStats stats;
    stats.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < n; ++s) {
      detail::forward_input(model, inputs[s], cache);
      if (argmax(cache.logits) == labels[s]) ++correct;
      stats.loss += cross_entropy(cache.logits, labels[s]);
    }
    stats.loss /= static_cast<double>(n);
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats, model);
  }
  return result;
}

// Largest relative error between analytic gradients and central finite
// differences over a random subset of parameter coordinates. Coordinates
// where both gradients are below 1e-8 count as exact.
inline double gradient_check(const MlpModel& model, const AmplitudeImage& image, int label, double epsilon = 1e-4,
                             std::uint64_t seed = 0, std::size_t coordinates = 256) {
  const auto analytic = loss_gradient(model, image, label);
  const auto x = preprocess(model.shape(), image);
  MlpModel probe = model;
  auto loss_at = [&] {
    detail::ForwardCache cache;
    detail::forward_input(probe, x, cache);
    return cross_entropy(cache.logits, label);
  };

  const std::size_t total = probe.parameter_count();
  std::vector<std::size_t> picks(total);
  std::iota(picks.begin(), picks.end(), 0);
  if (coordinates < total) {
    std::shuffle(picks.begin(), picks.end(), SplitMix64(seed));
    picks.resize(coordinates);
  }

  double worst = 0.0;
  for (std::size_t k : picks) {
    double& w = probe.parameter(k);
    const double saved = w;
    w = saved + epsilon;
    const double up = loss_at();
    w = saved - epsilon;
    const double down = loss_at();
    w = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double exact = analytic.flat(k);
    const double scale = std::max(std::abs(numeric), std::abs(exact));
    if (scale < 1e-8) continue;
    worst = std::max(worst, std::abs(numeric - exact) / scale);
  }
  return worst;
}

inline nlohmann::json model_to_json(const MlpModel& m) {
  const auto& s = m.shape();
  return {{"format", "sarshap-mlp"},
          {"version", 1},
          {"image_height", s.image_height},
          {"image_width", s.image_width},
          {"pool", s.pool},
          {"input_dim", s.input_dim()},
          {"hidden_dim", s.hidden},
          {"classes", s.classes},
          {"w1", m.w1()},
          {"b1", m.b1()},
          {"w2", m.w2()},
          {"b2", m.b2()}};
}

inline MlpModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "sarshap-mlp") throw InvalidArgument("not an MLP checkpoint");
    MlpShape s{j.at("image_height").get<int>(), j.at("image_width").get<int>(), j.at("pool").get<int>(),
               j.at("hidden_dim").get<int>(), j.at("classes").get<int>()};
    MlpModel m(s);
    if (j.at("input_dim").get<int>() != s.input_dim()) throw InvalidArgument("checkpoint input_dim inconsistent");
    auto load = [&](const char* key, std::vector<double>& dst) {
      auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != dst.size()) throw InvalidArgument(std::string("checkpoint array ") + key + " has wrong size");
      for (double x : v)
        if (!std::isfinite(x)) throw InvalidArgument("non-finite checkpoint parameter");
      dst = std::move(v);
    };
    load("w1", m.w1());
    load("b1", m.b1());
    load("w2", m.w2());
    load("b2", m.b2());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed checkpoint: ") + e.what());
  }
}

class MlpEvaluator final : public GameEvaluator {
 public:
  explicit MlpEvaluator(std::shared_ptr<const MlpModel> model) : model_(std::move(model)) {}
  explicit MlpEvaluator(MlpModel model) : model_(std::make_shared<const MlpModel>(std::move(model))) {}

  std::string name() const override { return "toy_mlp"; }
  int class_count() const override { return model_->class_count(); }
  const MlpModel& model() const noexcept { return *model_; }

  std::vector<double> scores(const AmplitudeImage& image, const RegionLabelMap&) override {
    return forward(*model_, image);
  }

 private:
  std::shared_ptr<const MlpModel> model_;
};

}  // namespace sarshap
