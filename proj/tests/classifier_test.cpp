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

#include "adipipe/classifier.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

namespace adipipe {
namespace {

const std::vector<std::string> kFour = {"EGY", "JOR", "KSA", "MOR"};

// Two Gaussian blobs in 2-D, well apart along the diagonal.
LabeledBags blobs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  LabeledBags b{Matrix<double>(n, 2), std::vector<std::size_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    b.y[i] = i % 2;
    const double c = b.y[i] ? 2.0 : -2.0;
    b.x(i, 0) = c + g(rng);
    b.x(i, 1) = c + g(rng);
  }
  return b;
}

double accuracy(const LinearModel& m, const LabeledBags& b) {
  const auto pred = predict_names(m, b.x);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == m.label_set[b.y[i]];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

std::vector<double> flatten(const LinearGradient& g) {
  auto v = g.weights.data();
  v.insert(v.end(), g.bias.begin(), g.bias.end());
  return v;
}

TEST(TrainLinear, SeparableBlobsReachFullAccuracy) {
  const auto b = blobs(200, 1);
  const auto r = train_linear(b.x, b.y, {"A", "B"}, {.batch_size = 16, .learning_rate = 0.1,
                                                    .epochs = 50});
  EXPECT_EQ(accuracy(r.model, b), 1.0);
  EXPECT_EQ(r.loss_history.size(), 51u);
  EXPECT_LT(r.final_loss, r.loss_history.front());
}

TEST(TrainLinear, ZeroEpochsLeavesUniformPosteriors) {
  const auto b = blobs(20, 2);
  const auto r = train_linear(b.x, b.y, {"A", "B"}, {.epochs = 0});
  const auto p = predict(r.model, "u", b.x.row(3));
  EXPECT_EQ(p.posteriors, (std::vector<double>{0.5, 0.5}));
  EXPECT_NEAR(r.final_loss, std::log(2.0), 1e-15);
}

TEST(TrainLinear, DuplicatedDataFullBatchGivesSameModel) {
  const auto b = blobs(50, 3);
  LabeledBags dup{Matrix<double>(100, 2), {}};
  for (std::size_t i = 0; i < 100; ++i) {
    std::copy_n(b.x.row(i % 50).begin(), 2, dup.x.row(i).begin());
    dup.y.push_back(b.y[i % 50]);
  }
  const auto once = train_linear(b.x, b.y, {"A", "B"}, {.batch_size = 50, .epochs = 30});
  const auto twice = train_linear(dup.x, dup.y, {"A", "B"}, {.batch_size = 100, .epochs = 30});
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(once.model.weights.data()[i], twice.model.weights.data()[i], 1e-12);
  EXPECT_NEAR(once.final_loss, twice.final_loss, 1e-12);
}

TEST(TrainLinear, SameSeedSameModel) {
  const auto b = blobs(120, 4);
  LinearTrainConfig cfg{.batch_size = 32, .epochs = 5, .seed = 9};
  EXPECT_EQ(train_linear(b.x, b.y, {"A", "B"}, cfg).model.weights,
            train_linear(b.x, b.y, {"A", "B"}, cfg).model.weights);
}

TEST(TrainLinear, FullBatchLossNeverIncreasesAtSmallLr) {
  const auto b = blobs(80, 5);
  const auto r = train_linear(b.x, b.y, {"A", "B"},
                              {.batch_size = 80, .learning_rate = 1e-4, .epochs = 200});
  for (std::size_t i = 1; i < r.loss_history.size(); ++i)
    EXPECT_LE(r.loss_history[i], r.loss_history[i - 1]);
}

TEST(TrainLinear, DevEarlyStoppingKeepsBestEpoch) {
  const auto b = blobs(100, 6), dev = blobs(40, 7);
  const auto r = train_linear(b.x, b.y, {"A", "B"}, {.batch_size = 10, .learning_rate = 0.1,
                                                    .epochs = 100, .patience = 3},
                              &dev);
  EXPECT_EQ(r.dev_macro_f1.size(), r.epochs_run);
  EXPECT_EQ(accuracy(r.model, dev), 1.0);
  const double returned =
      macro_f1(names_of(dev.y, r.model.label_set), predict_names(r.model, dev.x), {"A", "B"})
          .macro_f1;
  EXPECT_EQ(returned, *std::max_element(r.dev_macro_f1.begin(), r.dev_macro_f1.end()));
}

TEST(TrainLinear, DevPatienceStopsWhenNothingImproves) {
  // Identical train and dev rows: dev F1 saturates, and once the dev loss
  // is pinned by a tiny learning rate nothing counts as progress.
  const auto b = blobs(40, 8);
  const auto r = train_linear(b.x, b.y, {"A", "B"},
                              {.batch_size = 40, .learning_rate = 1e-300, .epochs = 100,
                               .patience = 4},
                              &b);
  EXPECT_EQ(r.epochs_run, 5u);
}

TEST(TrainLinear, Errors) {
  const auto b = blobs(10, 0);
  std::vector<std::size_t> one_class(10, 0);
  EXPECT_THROW(train_linear(b.x, one_class, {"A", "B"}, {}), Error);
  auto bad = b.x;
  bad(0, 0) = std::nan("");
  EXPECT_THROW(train_linear(bad, b.y, {"A", "B"}, {}), Error);
  EXPECT_THROW(train_linear(b.x, b.y, {"A"}, {}), Error);
  EXPECT_THROW(train_linear(b.x, b.y, {"A", "B"}, {.batch_size = 0}), Error);
}

TEST(LinearGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  LinearModel m = LinearModel::zeros(5, {"a", "b", "c"});
  for (double& v : m.weights.data()) v = g(rng);
  for (double& v : m.bias) v = g(rng);
  Matrix<double> x(6, 5);
  for (double& v : x.data()) v = g(rng);
  const std::vector<std::size_t> y = {0, 1, 2, 2, 1, 0}, idx = {0, 1, 2, 3, 4, 5};

  const auto analytic = flatten(linear_loss_and_grad(m, x, y, idx));
  std::vector<double> params = m.weights.data();
  params.insert(params.end(), m.bias.begin(), m.bias.end());
  const auto numeric = oracle::central_differences(params, [&] {
    LinearModel probe = m;
    std::copy_n(params.begin(), 15, probe.weights.data().begin());
    std::copy_n(params.begin() + 15, 3, probe.bias.begin());
    return linear_loss(probe, x, y);
  });
  EXPECT_LT(oracle::max_relative_error(analytic, numeric), 1e-4);
}

TEST(GridSearch, SingletonGridReturnsItsPoint) {
  const auto b = blobs(40, 1), dev = blobs(20, 2);
  const auto r = grid_search_linear({{16, {b, dev}}}, {"A", "B"},
                                    {.batch_sizes = {64}, .learning_rates = {1e-3}, .epochs = 3});
  EXPECT_EQ(r.best.k, 16u);
  EXPECT_EQ(r.best.batch_size, 64u);
  EXPECT_EQ(r.best.learning_rate, 1e-3);
  EXPECT_EQ(r.evaluations.size(), 1u);
}

TEST(GridSearch, PrefersInformativeCodebookSize) {
  // k=8: each class owns two of eight clusters. k=2: bags carry no class signal.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto make = [&](std::size_t n, std::size_t k) {
    LabeledBags b{Matrix<double>(n, k), std::vector<std::size_t>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      b.y[i] = i % 4;
      if (k == 8) {
        const double p = 0.6 + 0.3 * u(rng);
        b.x(i, 2 * b.y[i]) = p;
        b.x(i, 2 * b.y[i] + 1) = 1.0 - p;
      } else {
        b.x(i, 0) = u(rng);
        b.x(i, 1) = 1.0 - b.x(i, 0);
      }
    }
    return b;
  };
  std::map<std::size_t, BagSplits> bags;
  bags[2] = {make(200, 2), make(80, 2)};
  bags[8] = {make(200, 8), make(80, 8)};
  const auto r = grid_search_linear(bags, kFour, {.batch_sizes = {32}, .learning_rates = {0.5},
                                                  .epochs = 30});
  EXPECT_EQ(r.best.k, 8u);
  EXPECT_EQ(r.best.dev_macro_f1, 100.0);
}

TEST(GridSearch, PaperGridShapeRecordsSixtyEvaluations) {
  std::map<std::size_t, BagSplits> bags;
  for (std::size_t k : {200u, 400u, 600u, 800u, 1000u}) {
    auto b = blobs(8, k), dev = blobs(4, k + 1);
    // Pad the 2-D blobs into k columns; only the first two carry signal.
    BagSplits s;
    for (auto pair : {std::pair{&b, &s.train}, std::pair{&dev, &s.dev}}) {
      pair.second->x = Matrix<double>(pair.first->x.rows(), k);
      for (std::size_t i = 0; i < pair.first->x.rows(); ++i)
        std::copy_n(pair.first->x.row(i).begin(), 2, pair.second->x.row(i).begin());
      pair.second->y = pair.first->y;
    }
    bags[k] = std::move(s);
  }
  const auto r = grid_search_linear(bags, {"A", "B"}, {.epochs = 1});
  EXPECT_EQ(r.evaluations.size(), 60u);
  // Every cell scores 100 here, so the tie-break picks (smallest k, largest batch, smallest lr).
  EXPECT_EQ(r.best.k, 200u);
  EXPECT_EQ(r.best.batch_size, 512u);
  EXPECT_EQ(r.best.learning_rate, 1e-4);
}

TEST(GridSearch, FailingCellIsNamed) {
  const auto b = blobs(10, 1);
  LabeledBags single{b.x, std::vector<std::size_t>(10, 0)};
  try {
    grid_search_linear({{4, {single, b}}}, {"A", "B"}, {.batch_sizes = {64},
                                                          .learning_rates = {1e-3}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("k=4, batch=64, lr=0.001"), std::string::npos);
  }
}

TEST(Predict, UniformAndSaturated) {
  LinearModel m = LinearModel::zeros(3, kFour);
  const std::vector<double> x = {1, 2, 3};
  auto p = predict(m, "u", x);
  EXPECT_EQ(p.posteriors, std::vector<double>(4, 0.25));
  EXPECT_EQ(p.confidence, 0.25);
  EXPECT_EQ(p.predicted_label, "EGY");
  m.bias[2] = 50.0;
  p = predict(m, "u", x);
  EXPECT_EQ(p.predicted_label, "KSA");
  EXPECT_GT(p.confidence, 0.999);
  EXPECT_THROW(predict(m, "u", std::vector<double>{1, 2}), Error);
}

TEST(Predict, PosteriorsAreADistribution) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 5.0);
  for (int trial = 0; trial < 1000; ++trial) {
    LinearModel m = LinearModel::zeros(6, kFour);
    for (double& v : m.weights.data()) v = g(rng);
    std::vector<double> x(6);
    for (double& v : x) v = g(rng);
    const auto p = predict(m, "u", x);
    EXPECT_NEAR(std::accumulate(p.posteriors.begin(), p.posteriors.end(), 0.0), 1.0, 1e-9);
    EXPECT_GE(p.confidence, 0.25);
    EXPECT_LE(p.confidence, 1.0);
  }
}

TEST(Softmax, ShiftInvariant) {
  const std::vector<double> z = {0.3, -1.2, 4.0}, shifted = {100.3, 98.8, 104.0};
  const auto a = softmax(z), b = softmax(shifted);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TapHead small_head(std::size_t d, std::size_t p, std::uint64_t seed) {
  auto h = init_tap_head(d, p, {"a", "b", "c"}, seed);
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> g(0.0, 0.5);
  for (double& v : h.proj_bias) v = g(rng);
  for (double& v : h.clf_bias) v = g(rng);
  return h;
}

Matrix<float> random_frames(std::size_t t, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  Matrix<float> m(t, d);
  for (float& v : m.data()) v = g(rng);
  return m;
}

TEST(Tap, IdentityProjectionForward) {
  TapHead h = init_tap_head(3, 3, {"a", "b"}, 0);
  h.projection = Matrix<double>(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  h.classifier = Matrix<double>(2, 3, {1, 2, 3, -1, 0, 1});
  const Matrix<float> frames(2, 3, {1, 2, 3, 3, 2, 1});
  const auto a = tap_forward(h, frames);
  EXPECT_EQ(a.pooled, (std::vector<double>{2, 2, 2}));
  EXPECT_EQ(a.logits, (std::vector<double>{12, 0}));
}

TEST(Tap, TimePermutationInvariant) {
  const auto h = small_head(4, 6, 1);
  auto frames = random_frames(32, 4, 2);
  const auto before = tap_forward(h, frames).logits;
  std::vector<std::size_t> perm(32);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  Matrix<float> shuffled(32, 4);
  for (std::size_t t = 0; t < 32; ++t)
    std::copy_n(frames.row(perm[t]).begin(), 4, shuffled.row(t).begin());
  const auto after = tap_forward(h, shuffled).logits;
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(before[c], after[c], 1e-12);
}

TEST(Tap, GradientMatchesCentralDifferences) {
  const auto h = small_head(4, 5, 7);
  const auto f0 = random_frames(20, 4, 1), f1 = random_frames(31, 4, 2),
             f2 = random_frames(9, 4, 3);
  const std::vector<FrameWindow> batch = {{&f0, 0, 20, 0}, {&f1, 5, 20, 2}, {&f2, 0, 9, 1}};
  const auto g = tap_loss_and_grad(h, batch);

  auto pack = [](const auto& x) {
    std::vector<double> v = x.projection.data();
    v.insert(v.end(), x.proj_bias.begin(), x.proj_bias.end());
    v.insert(v.end(), x.classifier.data().begin(), x.classifier.data().end());
    v.insert(v.end(), x.clf_bias.begin(), x.clf_bias.end());
    return v;
  };
  std::vector<double> params = pack(h);
  const auto numeric = oracle::central_differences(params, [&] {
    TapHead probe = h;
    auto it = params.begin();
    for (auto* dst : {&probe.projection.data(), &probe.proj_bias,
                      &probe.classifier.data(), &probe.clf_bias}) {
      std::copy_n(it, dst->size(), dst->begin());
      it += static_cast<std::ptrdiff_t>(dst->size());
    }
    return tap_loss_and_grad(probe, batch).loss;
  });
  EXPECT_LT(oracle::max_relative_error(pack(g), numeric), 1e-4);
}

TEST(Tap, ConstantClassFeaturesAreLearnedPerfectly) {
  std::vector<FeatureMatrix> feats;
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < 24; ++i) {
    const std::size_t c = i % 4;
    Matrix<float> m(150, 4, 0.0f);
    for (std::size_t t = 0; t < 150; ++t) m(t, c) = 1.0f;
    feats.push_back({"u" + std::to_string(i), std::move(m)});
    targets.push_back(c);
  }
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-2;
  cfg.max_steps = 200;
  cfg.freeze_steps = 50;
  cfg.duration_s = 2.0;
  const auto r = train_tap(feats, targets, kFour, cfg, {.projection_dim = 8});
  EXPECT_EQ(r.steps, 200u);
  EXPECT_EQ(r.freeze_steps, 50u);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
  for (std::size_t i = 0; i < feats.size(); ++i)
    EXPECT_EQ(predict(r.head, feats[i]).predicted_index, targets[i]);
}

TEST(Tap, FrozenProjectionDoesNotMove) {
  std::vector<FeatureMatrix> feats;
  for (std::size_t i = 0; i < 4; ++i) feats.push_back({"u", random_frames(60, 3, i)});
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 20;
  cfg.freeze_steps = 20;
  cfg.duration_s = 1.0;
  const auto r = train_tap(feats, {0, 1, 0, 1}, {"a", "b"}, cfg, {.projection_dim = 4});
  EXPECT_EQ(r.head.projection, init_tap_head(3, 4, {"a", "b"}, cfg.seed).projection);
}

TEST(Tap, StepScaleShrinksSchedule) {
  std::vector<FeatureMatrix> feats;
  for (std::size_t i = 0; i < 4; ++i) feats.push_back({"u", random_frames(60, 3, i)});
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 20000;
  cfg.freeze_steps = 1000;
  const auto r = train_tap(feats, {0, 1, 0, 1}, {"a", "b"}, cfg,
                           {.projection_dim = 4, .step_scale = 0.001});
  EXPECT_EQ(r.steps, 20u);
  EXPECT_EQ(r.freeze_steps, 1u);
}

TEST(Tap, DimensionMismatch) {
  const auto h = small_head(4, 5, 0);
  EXPECT_THROW(predict(h, FeatureMatrix{"u", random_frames(5, 3, 0)}), Error);
}

TEST(ModelIo, RoundTripsBothFamilies) {
  testing::TempDir dir;
  const auto b = blobs(40, 1);
  const auto lin = train_linear(b.x, b.y, {"A", "B"}, {.epochs = 3}).model;
  save_model(lin, dir.path() / "lin");
  const auto lin2 = std::get<LinearModel>(load_model(dir.path() / "lin"));
  EXPECT_EQ(lin2.weights, lin.weights);
  EXPECT_EQ(lin2.bias, lin.bias);
  EXPECT_EQ(lin2.label_set, lin.label_set);

  const auto tap = small_head(4, 5, 3);
  save_model(tap, dir.path() / "tap");
  const auto tap2 = std::get<TapHead>(load_model(dir.path() / "tap"));
  EXPECT_EQ(tap2.projection, tap.projection);
  EXPECT_EQ(tap2.classifier, tap.classifier);
  EXPECT_EQ(tap2.clf_bias, tap.clf_bias);
  EXPECT_EQ(tap2.label_set, tap.label_set);

  EXPECT_THROW(load_model(dir.path() / "missing"), Error);
}

}  // namespace
}  // namespace adipipe
