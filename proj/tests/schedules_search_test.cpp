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

#include "adipipe/schedules_search.hpp"

#include <atomic>
#include <cmath>
#include <set>
#include <stdexcept>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace adipipe {
namespace {

TEST(Schedule, Breakpoints) {
  const TriStateSchedule s(1e-3, 1000);
  EXPECT_EQ(s.lr_at(0), 0.0);
  EXPECT_DOUBLE_EQ(s.lr_at(50), 0.5e-3);
  EXPECT_DOUBLE_EQ(s.lr_at(100), 1e-3);
  EXPECT_DOUBLE_EQ(s.lr_at(600), 1e-3);
  EXPECT_DOUBLE_EQ(s.lr_at(800), 0.5e-3);
  EXPECT_EQ(s.lr_at(1000), 0.0);
}

TEST(Schedule, ContinuousWithTwoKinks) {
  const TriStateSchedule s(2e-4, 5000);
  // Slopes change only at 500 and 3000.
  int kinks = 0;
  for (std::size_t t = 1; t + 1 <= 5000; ++t) {
    const double left = s.lr_at(t) - s.lr_at(t - 1);
    const double right = s.lr_at(t + 1) - s.lr_at(t);
    EXPECT_LE(std::abs(right), 2e-4 / 500.0 + 1e-15);  // steepest piece is the ramp
    if (std::abs(left - right) > 1e-15) {
      ++kinks;
      EXPECT_TRUE(t == 500 || t == 3000) << t;
    }
  }
  EXPECT_EQ(kinks, 2);
}

TEST(Schedule, AreaIsThreeQuartersOfPeak) {
  for (std::size_t total : {10u, 1000u, 31337u}) {
    const TriStateSchedule s(1e-3, total);
    double area = 0.0;  // trapezoid rule, exact for piecewise-linear pieces
    for (std::size_t t = 0; t < total; ++t) area += 0.5 * (s.lr_at(t) + s.lr_at(t + 1));
    EXPECT_NEAR(area / (0.75 * 1e-3 * total), 1.0, 1e-3) << total;
  }
}

TEST(Schedule, Errors) {
  EXPECT_THROW(TriStateSchedule(1e-3, 9), Error);
  EXPECT_THROW(TriStateSchedule(0.0, 100), Error);
  EXPECT_THROW(TriStateSchedule(1e-3, 100).lr_at(101), Error);
}

TEST(SampleConfig, BatchFollowsDuration) {
  EXPECT_EQ(batch_size_for(8.0), 36);
  EXPECT_EQ(batch_size_for(4.69), 60);
  EXPECT_EQ(batch_size_for(18.0), 16);
  TrainConfig reported;
  reported.batch_size = 16;
  reported.duration_s = 4.69;
  EXPECT_EQ(reported.violations().size(), 1u);
}

TEST(SampleConfig, DeterministicPerSeedAndIndex) {
  EXPECT_EQ(sample_config(4, 17), sample_config(4, 17));
  EXPECT_NE(sample_config(4, 17), sample_config(4, 18));
  EXPECT_NE(sample_config(4, 17), sample_config(5, 17));
}

TEST(SampleConfig, AllInRangeAndLogUniform) {
  double sum_log = 0.0;
  std::set<int> thaw;
  int lna = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto c = sample_config(1, i);
    ASSERT_TRUE(c.violations().empty()) << c.violations().front();
    sum_log += std::log(c.learning_rate);
    thaw.insert(c.thaw_depth);
    lna += c.lna;
  }
  const double target = 0.5 * (std::log(1e-5) + std::log(1e-2));
  EXPECT_NEAR(sum_log / n, target, 0.02 * std::abs(target));
  EXPECT_EQ(thaw.size(), 24u);
  EXPECT_NEAR(lna / double(n), 0.5, 0.03);
}

TEST(SampleConfig, JsonRoundTrip) {
  const auto c = sample_config(9, 3);
  EXPECT_EQ(config_from_json(nlohmann::json::parse(to_json(c).dump())), c);
}

TEST(RunSearch, BudgetThirtyJournalsThirtyRows) {
  testing::TempDir dir;
  const auto journal = dir.path() / "search.jsonl";
  const auto results = run_search([](const TrainConfig& c) { return c.learning_rate; }, 30, 7,
                                  {.journal = journal});
  EXPECT_EQ(results.size(), 30u);
  EXPECT_EQ(read_journal(journal).size(), 30u);
  for (std::size_t i = 1; i < results.size(); ++i)
    EXPECT_GE(results[i - 1].score, results[i].score);
}

TEST(RunSearch, ConstantObjectiveKeepsIndexOrder) {
  const auto results = run_search([](const TrainConfig&) { return 1.0; }, 12, 0);
  for (std::size_t i = 0; i < results.size(); ++i) {
    EXPECT_EQ(results[i].score, 1.0);
    EXPECT_EQ(results[i].config.index, i);
  }
}

TEST(RunSearch, FindsLearningRateNearOptimum) {
  const auto results = run_search(
      [](const TrainConfig& c) { return -std::abs(c.learning_rate - 1e-3); }, 200, 2);
  EXPECT_GE(results.front().config.learning_rate, 5e-4);
  EXPECT_LE(results.front().config.learning_rate, 2e-3);
}

TEST(RunSearch, FailuresRankLastAndAreLogged) {
  std::vector<std::string> logged;
  const auto results = run_search(
      [](const TrainConfig& c) -> double {
        if (c.index % 4 == 0) throw std::runtime_error("boom");
        if (c.index % 4 == 1) return std::nan("");
        return 1.0;
      },
      8, 0, {.log = [&](const std::string& m) { logged.push_back(m); }});
  EXPECT_EQ(logged.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(results[i].ok);
  for (std::size_t i = 4; i < 8; ++i) {
    EXPECT_FALSE(results[i].ok);
    EXPECT_EQ(results[i].score, -std::numeric_limits<double>::infinity());
  }
  EXPECT_EQ(results[4].reason, "boom");
}

TEST(RunSearch, ResumeSkipsDoneAndReplaysIdentically) {
  testing::TempDir dir;
  const auto journal = dir.path() / "j.jsonl";
  std::atomic<int> calls{0};
  auto objective = [&](const TrainConfig& c) {
    ++calls;
    return std::sin(static_cast<double>(c.freeze_steps));
  };
  const auto first = run_search(objective, 10, 3, {.journal = journal});
  const auto full = run_search(objective, 20, 3, {.journal = journal, .resume = true});
  EXPECT_EQ(calls, 20);
  EXPECT_EQ(read_journal(journal).size(), 20u);

  const auto fresh = run_search(objective, 20, 3, {.workers = 4});
  ASSERT_EQ(fresh.size(), full.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    EXPECT_EQ(full[i].config, fresh[i].config);
    EXPECT_EQ(full[i].score, fresh[i].score);
  }
  auto replay = read_journal(journal);
  rank_results(replay);
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(replay[i].config, full[i].config);
}

TEST(RunSearch, ZeroBudgetIsAConfigError) {
  EXPECT_THROW(run_search([](const TrainConfig&) { return 0.0; }, 0, 0), Error);
}

}  // namespace
}  // namespace adipipe
