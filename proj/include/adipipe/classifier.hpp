// Copyright 2026 The adipipe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dialect classifiers:
//
//  * LinearModel: single-layer softmax regression over bag vectors, trained
//    with shuffled mini-batch gradient descent on mean cross-entropy.
//  * TapHead: per-frame linear projection, temporal mean pool, linear
//    classification. Trained with Adam under the tri-state schedule; the
//    projection stays frozen for the first freeze_steps updates.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "adipipe/core.hpp"
#include "adipipe/eval.hpp"
#include "adipipe/featurestore.hpp"
#include "adipipe/schedules_search.hpp"

namespace adipipe {

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
  for (double& v : p) v /= z;
  return p;
}

struct Prediction {
  std::string utterance_id;
  std::vector<double> posteriors;
  std::size_t predicted_index = 0;
  std::string predicted_label;
  double confidence = 0.0;  // max posterior
};

inline Prediction make_prediction(std::string utterance_id,
                                  std::span<const double> logits,
                                  const std::vector<std::string>& label_set) {
  Prediction p;
  p.utterance_id = std::move(utterance_id);
  p.posteriors = softmax(logits);
  // max_element returns the first maximum: lowest-index tie-break.
  p.predicted_index = static_cast<std::size_t>(
      std::max_element(p.posteriors.begin(), p.posteriors.end()) -
      p.posteriors.begin());
  p.predicted_label = label_set[p.predicted_index];
  p.confidence = p.posteriors[p.predicted_index];
  return p;
}

/// Mean cross-entropy of one example given its logits; also writes
/// dL/dlogits = softmax - onehot into `dlogits`.
inline double cross_entropy(std::span<const double> logits, std::size_t target,
                            std::span<double> dlogits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double log_z = m + std::log(z);
  for (std::size_t c = 0; c < logits.size(); ++c)
    dlogits[c] = std::exp(logits[c] - log_z) - (c == target ? 1.0 : 0.0);
  return log_z - logits[target];
}

inline void check_label_set(const std::vector<std::string>& label_set) {
  if (label_set.size() < 2)
    fail(ErrorKind::config, "classifier needs at least two labels");
}

inline void check_targets(const std::vector<std::size_t>& y, std::size_t classes) {
  std::vector<bool> present(classes, false);
  std::size_t distinct = 0;
  for (std::size_t t : y) {
    if (t >= classes)
      fail(ErrorKind::data, "target index " + std::to_string(t) + " outside label set");
    if (!present[t]) present[t] = true, ++distinct;
  }
  if (distinct < 2)
    fail(ErrorKind::data, "training data covers fewer than two classes");
}

// ---------------------------------------------------------------------------
// Linear model over bags

struct LinearModel {
  Matrix<double> weights;  // C x K
  std::vector<double> bias;
  std::vector<std::string> label_set;

  std::size_t classes() const { return weights.rows(); }
  std::size_t input_dim() const { return weights.cols(); }

  std::vector<double> logits(std::span<const double> x) const {
    std::vector<double> out(bias);
    for (std::size_t c = 0; c < classes(); ++c) {
      const auto w = weights.row(c);
      double acc = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * x[k];
      out[c] += acc;
    }
    return out;
  }

  static LinearModel zeros(std::size_t input_dim,
                           std::vector<std::string> label_set) {
    check_label_set(label_set);
    const std::size_t c = label_set.size();
    return {Matrix<double>(c, input_dim), std::vector<double>(c, 0.0),
            std::move(label_set)};
  }
};

struct LinearGradient {
  double loss = 0.0;
  Matrix<double> weights;
  std::vector<double> bias;
};

/// Mean loss and gradient over rows `idx` of `x`.
inline LinearGradient linear_loss_and_grad(const LinearModel& model,
                                           const Matrix<double>& x,
                                           const std::vector<std::size_t>& y,
                                           std::span<const std::size_t> idx) {
  LinearGradient g{0.0, Matrix<double>(model.classes(), model.input_dim()),
                   std::vector<double>(model.classes(), 0.0)};
  std::vector<double> d(model.classes());
  for (std::size_t i : idx) {
    const auto xi = x.row(i);
    const auto z = model.logits(xi);
    g.loss += cross_entropy(z, y[i], d);
    for (std::size_t c = 0; c < model.classes(); ++c) {
      if (d[c] == 0.0) continue;
      auto gw = g.weights.row(c);
      for (std::size_t k = 0; k < xi.size(); ++k) gw[k] += d[c] * xi[k];
      g.bias[c] += d[c];
    }
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  g.loss *= inv;
  for (double& v : g.weights.data()) v *= inv;
  for (double& v : g.bias) v *= inv;
  return g;
}

inline double linear_loss(const LinearModel& model, const Matrix<double>& x,
                          const std::vector<std::size_t>& y) {
  std::vector<std::size_t> all(x.rows());
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> d(model.classes());
  double loss = 0.0;
  for (std::size_t i : all) loss += cross_entropy(model.logits(x.row(i)), y[i], d);
  return loss / static_cast<double>(x.rows());
}

struct LinearTrainConfig {
  std::size_t batch_size = 256;
  double learning_rate = 1e-2;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::size_t patience = 10;  // dev macro-F1 early stopping, when dev is given
};

struct LabeledBags {
  Matrix<double> x;
  std::vector<std::size_t> y;
};

struct LinearTrainResult {
  LinearModel model;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // [0] = initial, then one per epoch
  std::vector<double> dev_macro_f1;  // one per epoch when dev is given
  std::size_t epochs_run = 0;
};

inline std::vector<std::string> names_of(const std::vector<std::size_t>& y,
                                         const std::vector<std::string>& label_set) {
  std::vector<std::string> out;
  out.reserve(y.size());
  for (std::size_t t : y) out.push_back(label_set[t]);
  return out;
}

inline std::vector<std::string> predict_names(const LinearModel& model,
                                              const Matrix<double>& x) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto z = model.logits(x.row(i));
    out.push_back(model.label_set[static_cast<std::size_t>(
        std::max_element(z.begin(), z.end()) - z.begin())]);
  }
  return out;
}

/// Zero-initialized mini-batch gradient descent. Each epoch reshuffles the
/// row order with a generator seeded once from cfg.seed and walks it in
/// contiguous batches (the last one may be short). With a dev set the model
/// with the best dev macro-F1 (lower dev loss on ties) is returned and
/// training stops after `patience` epochs without improvement.
inline LinearTrainResult train_linear(const Matrix<double>& x,
                                      const std::vector<std::size_t>& y,
                                      const std::vector<std::string>& label_set,
                                      const LinearTrainConfig& cfg,
                                      const LabeledBags* dev = nullptr) {
  check_label_set(label_set);
  if (x.rows() != y.size())
    fail(ErrorKind::data, "train_linear: feature/label count mismatch");
  if (x.rows() == 0) fail(ErrorKind::data, "train_linear: no training data");
  if (!x.all_finite()) fail(ErrorKind::data, "train_linear: non-finite features");
  if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0))
    fail(ErrorKind::config, "train_linear: batch_size and learning_rate must be positive");
  check_targets(y, label_set.size());

  LinearTrainResult res{LinearModel::zeros(x.cols(), label_set)};
  res.loss_history.push_back(linear_loss(res.model, x, y));

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);

  double best_dev = -1.0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  LinearModel best = res.model;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      const auto g = linear_loss_and_grad(
          res.model, x, y, std::span<const std::size_t>(order).subspan(lo, hi - lo));
      if (!std::isfinite(g.loss))
        fail(ErrorKind::numeric, "train_linear: non-finite loss in epoch " +
                                     std::to_string(epoch));
      auto& w = res.model.weights.data();
      for (std::size_t i = 0; i < w.size(); ++i)
        w[i] -= cfg.learning_rate * g.weights.data()[i];
      for (std::size_t c = 0; c < res.model.bias.size(); ++c)
        res.model.bias[c] -= cfg.learning_rate * g.bias[c];
    }
    res.loss_history.push_back(linear_loss(res.model, x, y));
    ++res.epochs_run;

    if (dev) {
      const double f1 = macro_f1(names_of(dev->y, label_set),
                                 predict_names(res.model, dev->x), label_set)
                            .macro_f1;
      res.dev_macro_f1.push_back(f1);
      // Equal F1 counts as progress when the dev loss still falls, so a
      // plateau in the discrete metric does not end training early.
      const double dev_loss = linear_loss(res.model, dev->x, dev->y);
      if (f1 > best_dev || (f1 == best_dev && dev_loss < best_dev_loss)) {
        best_dev = f1;
        best_dev_loss = dev_loss;
        best = res.model;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (dev && res.epochs_run > 0) res.model = std::move(best);
  res.final_loss = linear_loss(res.model, x, y);
  return res;
}

// ---------------------------------------------------------------------------
// Grid search over (k, batch size, learning rate)

struct GridAxes {
  std::vector<std::size_t> batch_sizes = {64, 128, 256, 512};
  std::vector<double> learning_rates = {1e-2, 1e-3, 1e-4};
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
};

struct BagSplits {
  LabeledBags train;
  LabeledBags dev;
};

struct GridCell {
  std::size_t k = 0;
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  double dev_macro_f1 = 0.0;
};

struct GridResult {
  GridCell best;
  LinearModel model;
  std::vector<GridCell> evaluations;
};

/// Trains one model per (k, batch, lr) cell and keeps the best dev macro-F1.
/// Ties prefer smaller k, then larger batch, then smaller learning rate.
inline GridResult grid_search_linear(const std::map<std::size_t, BagSplits>& bags_by_k,
                                     const std::vector<std::string>& label_set,
                                     const GridAxes& axes) {
  if (bags_by_k.empty() || axes.batch_sizes.empty() || axes.learning_rates.empty())
    fail(ErrorKind::config, "grid_search_linear: every grid axis must be nonempty");
  auto batches = axes.batch_sizes;
  std::sort(batches.begin(), batches.end(), std::greater<>());
  auto rates = axes.learning_rates;
  std::sort(rates.begin(), rates.end());

  GridResult out;
  bool have = false;
  for (const auto& [k, splits] : bags_by_k) {  // ascending k
    for (std::size_t b : batches) {
      for (double lr : rates) {
        GridCell cell{k, b, lr, 0.0};
        LinearTrainResult trained;
        try {
          trained = train_linear(splits.train.x, splits.train.y, label_set,
                                 {b, lr, axes.epochs, axes.seed, axes.patience},
                                 &splits.dev);
          cell.dev_macro_f1 =
              macro_f1(names_of(splits.dev.y, label_set),
                       predict_names(trained.model, splits.dev.x), label_set)
                  .macro_f1;
        } catch (const Error& e) {
          fail(e.kind(), "grid cell (k=" + std::to_string(k) +
                             ", batch=" + std::to_string(b) +
                             ", lr=" + format_general(lr) +
                             ") failed: " + e.what());
        }
        out.evaluations.push_back(cell);
        if (!have || cell.dev_macro_f1 > out.best.dev_macro_f1) {
          out.best = cell;
          out.model = std::move(trained.model);
          have = true;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// TAP head over frames

struct TapHead {
  Matrix<double> projection;  // P x D
  std::vector<double> proj_bias;
  Matrix<double> classifier;  // C x P
  std::vector<double> clf_bias;
  std::vector<std::string> label_set;

  std::size_t feature_dim() const { return projection.cols(); }
  std::size_t projection_dim() const { return projection.rows(); }
  std::size_t classes() const { return classifier.rows(); }
};

struct TapActivations {
  std::vector<double> mean_frame;  // D
  std::vector<double> pooled;      // P: mean over time of projected frames
  std::vector<double> logits;      // C
};

/// Rows [begin, begin+count) of `frames` form the window.
inline TapActivations tap_forward(const TapHead& head, const Matrix<float>& frames,
                                  std::size_t begin = 0,
                                  std::optional<std::size_t> count = std::nullopt) {
  const std::size_t n = count.value_or(frames.rows() - begin);
  const std::size_t d = head.feature_dim(), p = head.projection_dim();
  if (frames.cols() != d)
    fail(ErrorKind::data, "TAP head expects dimension " + std::to_string(d) +
                              ", got " + std::to_string(frames.cols()));
  if (n == 0) fail(ErrorKind::data, "TAP head: empty frame window");
  TapActivations a{std::vector<double>(d, 0.0), std::vector<double>(head.proj_bias),
                   std::vector<double>(head.clf_bias)};
  // The projection is affine, so mean(W x_t + b) = W mean(x) + b.
  for (std::size_t t = begin; t < begin + n; ++t) {
    const auto x = frames.row(t);
    for (std::size_t j = 0; j < d; ++j) a.mean_frame[j] += x[j];
  }
  for (double& v : a.mean_frame) v /= static_cast<double>(n);
  for (std::size_t q = 0; q < p; ++q) {
    const auto w = head.projection.row(q);
    for (std::size_t j = 0; j < d; ++j) a.pooled[q] += w[j] * a.mean_frame[j];
  }
  for (std::size_t c = 0; c < head.classes(); ++c) {
    const auto w = head.classifier.row(c);
    for (std::size_t q = 0; q < p; ++q) a.logits[c] += w[q] * a.pooled[q];
  }
  return a;
}

struct TapGradient {
  double loss = 0.0;
  Matrix<double> projection;
  std::vector<double> proj_bias;
  Matrix<double> classifier;
  std::vector<double> clf_bias;
};

struct FrameWindow {
  const Matrix<float>* frames = nullptr;
  std::size_t begin = 0;
  std::size_t count = 0;
  std::size_t target = 0;
};

inline TapGradient tap_loss_and_grad(const TapHead& head,
                                     std::span<const FrameWindow> batch) {
  if (batch.empty()) fail(ErrorKind::data, "TAP head: empty batch");
  const std::size_t d = head.feature_dim(), p = head.projection_dim(),
                    c = head.classes();
  TapGradient g{0.0, Matrix<double>(p, d), std::vector<double>(p, 0.0),
                Matrix<double>(c, p), std::vector<double>(c, 0.0)};
  std::vector<double> dz(c), dh(p);
  for (const auto& w : batch) {
    const auto a = tap_forward(head, *w.frames, w.begin, w.count);
    g.loss += cross_entropy(a.logits, w.target, dz);
    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t k = 0; k < c; ++k) {
      auto gw = g.classifier.row(k);
      const auto wk = head.classifier.row(k);
      for (std::size_t q = 0; q < p; ++q) {
        gw[q] += dz[k] * a.pooled[q];
        dh[q] += dz[k] * wk[q];
      }
      g.clf_bias[k] += dz[k];
    }
    for (std::size_t q = 0; q < p; ++q) {
      auto gw = g.projection.row(q);
      for (std::size_t j = 0; j < d; ++j) gw[j] += dh[q] * a.mean_frame[j];
      g.proj_bias[q] += dh[q];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  g.loss *= inv;
  for (auto* v : {&g.projection.data(), &g.classifier.data(), &g.proj_bias, &g.clf_bias})
    for (double& x : *v) x *= inv;
  return g;
}

inline TapHead init_tap_head(std::size_t feature_dim, std::size_t projection_dim,
                             std::vector<std::string> label_set, std::uint64_t seed) {
  check_label_set(label_set);
  if (feature_dim < 1 || projection_dim < 1)
    fail(ErrorKind::config, "TAP head dimensions must be positive");
  std::mt19937_64 rng(seed);
  TapHead h;
  const std::size_t c = label_set.size();
  h.label_set = std::move(label_set);
  h.projection = Matrix<double>(projection_dim, feature_dim);
  h.proj_bias.assign(projection_dim, 0.0);
  h.classifier = Matrix<double>(c, projection_dim);
  h.clf_bias.assign(c, 0.0);
  const double a = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  std::uniform_real_distribution<double> pu(-a, a);
  for (double& v : h.projection.data()) v = pu(rng);
  const double b = 1.0 / std::sqrt(static_cast<double>(projection_dim));
  std::uniform_real_distribution<double> cu(-b, b);
  for (double& v : h.classifier.data()) v = cu(rng);
  return h;
}

struct TapOptions {
  std::size_t projection_dim = 256;
  double step_scale = 1.0;  // shrinks max_steps/freeze_steps for desk-scale runs
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
};

struct TapTrainResult {
  TapHead head;
  std::vector<double> loss_history;  // one per update
  std::size_t steps = 0;
  std::size_t freeze_steps = 0;
};

namespace detail {

struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& param, const std::vector<double>& grad, double lr,
            std::size_t t, const TapOptions& o) {
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
      param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.epsilon);
    }
  }
};

}  // namespace detail

/// Each update draws `batch_size` utterances (cycling through a per-pass
/// shuffle) and crops each to a random window of duration_s seconds.
inline TapTrainResult train_tap(const std::vector<FeatureMatrix>& features,
                                const std::vector<std::size_t>& targets,
                                const std::vector<std::string>& label_set,
                                const TrainConfig& cfg, const TapOptions& opt = {}) {
  if (features.size() != targets.size())
    fail(ErrorKind::data, "train_tap: feature/label count mismatch");
  if (features.empty()) fail(ErrorKind::data, "train_tap: no training data");
  if (cfg.batch_size < 1) fail(ErrorKind::config, "train_tap: empty batch");
  if (!(opt.step_scale > 0.0)) fail(ErrorKind::config, "train_tap: step_scale must be positive");
  check_label_set(label_set);
  check_targets(targets, label_set.size());
  for (const auto& f : features) f.validate();

  TapTrainResult res;
  res.head = init_tap_head(features.front().dim(), opt.projection_dim, label_set, cfg.seed);
  res.steps = std::max<std::size_t>(
      10, static_cast<std::size_t>(std::llround(cfg.max_steps * opt.step_scale)));
  res.freeze_steps = std::min(
      res.steps,
      static_cast<std::size_t>(std::llround(std::max(0, cfg.freeze_steps) * opt.step_scale)));
  const TriStateSchedule schedule(cfg.learning_rate, res.steps);

  auto& h = res.head;
  detail::AdamState a_proj(h.projection.size()), a_pb(h.proj_bias.size()),
      a_clf(h.classifier.size()), a_cb(h.clf_bias.size());
  std::size_t proj_updates = 0;

  std::mt19937_64 rng(cfg.seed ^ 0x7a9ULL);
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const std::size_t window_frames = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.duration_s * features.front().frame_rate)));

  std::vector<FrameWindow> batch(static_cast<std::size_t>(cfg.batch_size));
  for (std::size_t step = 0; step < res.steps; ++step) {
    for (auto& w : batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t u = order[cursor++];
      const auto& f = features[u].frames;
      w.frames = &f;
      w.count = std::min(window_frames, f.rows());
      w.begin = f.rows() > w.count
                    ? std::uniform_int_distribution<std::size_t>(0, f.rows() - w.count)(rng)
                    : 0;
      w.target = targets[u];
    }
    const auto g = tap_loss_and_grad(h, batch);
    if (!std::isfinite(g.loss))
      fail(ErrorKind::numeric, "train_tap: non-finite loss at step " + std::to_string(step));
    res.loss_history.push_back(g.loss);

    // lr_at(0) is zero; step+1 keeps the first update meaningful.
    const double lr = schedule.lr_at(step + 1);
    a_clf.step(h.classifier.data(), g.classifier.data(), lr, step + 1, opt);
    a_cb.step(h.clf_bias, g.clf_bias, lr, step + 1, opt);
    if (step >= res.freeze_steps) {
      ++proj_updates;
      a_proj.step(h.projection.data(), g.projection.data(), lr, proj_updates, opt);
      a_pb.step(h.proj_bias, g.proj_bias, lr, proj_updates, opt);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Prediction

inline Prediction predict(const LinearModel& model, const std::string& utterance_id,
                          std::span<const double> bag) {
  if (bag.size() != model.input_dim())
    fail(ErrorKind::data, "predict: input '" + utterance_id + "' has dimension " +
                              std::to_string(bag.size()) + ", model expects " +
                              std::to_string(model.input_dim()));
  return make_prediction(utterance_id, model.logits(bag), model.label_set);
}

inline Prediction predict(const TapHead& head, const FeatureMatrix& m) {
  if (m.dim() != head.feature_dim())
    fail(ErrorKind::data, "predict: features '" + m.utterance_id + "' have dimension " +
                              std::to_string(m.dim()) + ", model expects " +
                              std::to_string(head.feature_dim()));
  return make_prediction(m.utterance_id, tap_forward(head, m.frames).logits, head.label_set);
}

// ---------------------------------------------------------------------------
// Persistence: one directory per model, binary parameter matrices plus a
// model.json sidecar carrying the label order.

using AnyModel = std::variant<LinearModel, TapHead>;

namespace detail {

inline Matrix<double> as_row(const std::vector<double>& v) {
  return Matrix<double>(1, v.size(), v);
}

inline std::vector<double> read_row(const std::filesystem::path& p, std::size_t n) {
  auto m = read_matrix(p).values;
  if (m.rows() != 1 || m.cols() != n)
    fail(ErrorKind::data, p.string() + ": unexpected shape");
  return m.data();
}

}  // namespace detail

inline void save_model(const LinearModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_matrix(dir / "weights.bin", m.weights);
  write_matrix(dir / "bias.bin", detail::as_row(m.bias));
  nlohmann::ordered_json j;
  j["type"] = "linear";
  j["label_set"] = m.label_set;
  j["input_dim"] = m.input_dim();
  detail::spit(dir / "model.json", j.dump(2) + "\n");
}

inline void save_model(const TapHead& h, const std::filesystem::path& dir,
                       const std::optional<TrainConfig>& cfg = std::nullopt) {
  std::filesystem::create_directories(dir);
  write_matrix(dir / "projection.bin", h.projection);
  write_matrix(dir / "proj_bias.bin", detail::as_row(h.proj_bias));
  write_matrix(dir / "classifier.bin", h.classifier);
  write_matrix(dir / "clf_bias.bin", detail::as_row(h.clf_bias));
  nlohmann::ordered_json j;
  j["type"] = "tap";
  j["label_set"] = h.label_set;
  j["feature_dim"] = h.feature_dim();
  j["projection_dim"] = h.projection_dim();
  if (cfg) j["config"] = to_json(*cfg);
  detail::spit(dir / "model.json", j.dump(2) + "\n");
}

inline AnyModel load_model(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::slurp(dir / "model.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, (dir / "model.json").string() + ": " + e.what());
  }
  const auto labels = j.at("label_set").get<std::vector<std::string>>();
  const auto type = j.at("type").get<std::string>();
  if (type == "linear") {
    LinearModel m;
    m.label_set = labels;
    m.weights = read_matrix(dir / "weights.bin").values;
    if (m.weights.rows() != labels.size())
      fail(ErrorKind::data, dir.string() + ": weight rows do not match label set");
    m.bias = detail::read_row(dir / "bias.bin", labels.size());
    return m;
  }
  if (type == "tap") {
    TapHead h;
    h.label_set = labels;
    h.projection = read_matrix(dir / "projection.bin").values;
    h.proj_bias = detail::read_row(dir / "proj_bias.bin", h.projection.rows());
    h.classifier = read_matrix(dir / "classifier.bin").values;
    if (h.classifier.rows() != labels.size() || h.classifier.cols() != h.projection.rows())
      fail(ErrorKind::data, dir.string() + ": inconsistent TAP head shapes");
    h.clf_bias = detail::read_row(dir / "clf_bias.bin", labels.size());
    return h;
  }
  fail(ErrorKind::data, dir.string() + ": unknown model type '" + type + "'");
}

}  // namespace adipipe
