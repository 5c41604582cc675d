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

// Tri-state learning-rate schedule and random search over finetuning
// hyperparameters.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "adipipe/core.hpp"
#include "adipipe/featurestore.hpp"

namespace adipipe {

/// Linear ramp from 0 over the first 10% of steps, flat at max_lr until 60%,
/// then linear decay to 0 at total_steps.
struct TriStateSchedule {
  static constexpr double kRampFrac = 0.10;
  static constexpr double kPlateauFrac = 0.50;
  static constexpr double kCooldownFrac = 0.40;

  double max_lr = 1e-3;
  std::size_t total_steps = 1000;

  TriStateSchedule(double max_lr_, std::size_t total_steps_)
      : max_lr(max_lr_), total_steps(total_steps_) {
    if (!(max_lr > 0.0) || !std::isfinite(max_lr))
      fail(ErrorKind::config, "schedule: max_lr must be positive");
    if (total_steps < 10)
      fail(ErrorKind::config, "schedule: total_steps must be >= 10");
  }

  double ramp_end() const { return kRampFrac * static_cast<double>(total_steps); }
  double decay_start() const {
    return (kRampFrac + kPlateauFrac) * static_cast<double>(total_steps);
  }

  double lr_at(std::size_t step) const {
    if (step > total_steps)
      fail(ErrorKind::config, "schedule: step " + std::to_string(step) +
                                  " beyond total_steps " +
                                  std::to_string(total_steps));
    const double s = static_cast<double>(step);
    const double t = static_cast<double>(total_steps);
    if (s < ramp_end()) return max_lr * s / ramp_end();
    if (s < decay_start()) return max_lr;
    return max_lr * (t - s) / (kCooldownFrac * t);
  }
};

// ---------------------------------------------------------------------------
// Search space

struct SearchSpace {
  static constexpr int kFreezeMin = 0, kFreezeMax = 1000;
  static constexpr double kLrMin = 1e-5, kLrMax = 1e-2;
  static constexpr int kStepsMin = 20000, kStepsMax = 40000;
  static constexpr double kDurationMin = 4.0, kDurationMax = 18.0;
  static constexpr int kThawMin = 0, kThawMax = 23;
  static constexpr double kAudioSecondsPerGpu = 75.0;
  static constexpr int kGpus = 4;
};

/// Batch size that keeps 75 s of audio per GPU across four GPUs.
inline int batch_size_for(double duration_s) {
  return SearchSpace::kGpus *
         static_cast<int>(std::floor(SearchSpace::kAudioSecondsPerGpu / duration_s));
}

struct TrainConfig {
  int batch_size = 16;
  int freeze_steps = 0;
  double learning_rate = 1e-3;
  bool lna = false;  // recorded only; no backbone is finetuned here
  int max_steps = 20000;
  double duration_s = 4.69;
  int thaw_depth = 0;  // recorded only
  std::uint64_t seed = 0;
  std::uint64_t index = 0;

  /// Human-readable range violations; empty when the config is in-space.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    using S = SearchSpace;
    if (freeze_steps < S::kFreezeMin || freeze_steps > S::kFreezeMax)
      out.push_back("freeze_steps outside [0,1000]");
    if (!(learning_rate >= S::kLrMin && learning_rate <= S::kLrMax))
      out.push_back("learning_rate outside [1e-5,1e-2]");
    if (max_steps < S::kStepsMin || max_steps > S::kStepsMax)
      out.push_back("max_steps outside [20000,40000]");
    if (!(duration_s >= S::kDurationMin && duration_s <= S::kDurationMax))
      out.push_back("duration_s outside [4,18]");
    if (thaw_depth < S::kThawMin || thaw_depth > S::kThawMax)
      out.push_back("thaw_depth outside [0,23]");
    if (duration_s > 0.0 && batch_size != batch_size_for(duration_s))
      out.push_back("batch_size " + std::to_string(batch_size) +
                    " differs from 4*floor(75/duration) = " +
                    std::to_string(batch_size_for(duration_s)));
    return out;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["batch_size"] = c.batch_size;
  j["freeze_steps"] = c.freeze_steps;
  j["learning_rate"] = c.learning_rate;
  j["lna"] = c.lna;
  j["max_steps"] = c.max_steps;
  j["duration_s"] = c.duration_s;
  j["thaw_depth"] = c.thaw_depth;
  j["seed"] = c.seed;
  j["index"] = c.index;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.freeze_steps = j.at("freeze_steps").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lna = j.at("lna").get<bool>();
  c.max_steps = j.at("max_steps").get<int>();
  c.duration_s = j.at("duration_s").get<double>();
  c.thaw_depth = j.at("thaw_depth").get<int>();
  c.seed = j.value("seed", std::uint64_t{0});
  c.index = j.value("index", std::uint64_t{0});
  return c;
}

/// Draws configuration `index` of the stream identified by `seed`. Each
/// (seed, index) pair owns an independent generator, so draws do not depend
/// on how many configs were sampled before.
inline TrainConfig sample_config(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  using S = SearchSpace;

  TrainConfig c;
  c.seed = seed;
  c.index = index;
  c.duration_s =
      std::uniform_real_distribution<double>(S::kDurationMin, S::kDurationMax)(rng);
  c.batch_size = batch_size_for(c.duration_s);
  c.freeze_steps =
      std::uniform_int_distribution<int>(S::kFreezeMin, S::kFreezeMax)(rng);
  c.learning_rate = std::exp(std::uniform_real_distribution<double>(
      std::log(S::kLrMin), std::log(S::kLrMax))(rng));
  c.learning_rate = std::clamp(c.learning_rate, S::kLrMin, S::kLrMax);
  c.lna = std::bernoulli_distribution(0.5)(rng);
  c.max_steps =
      std::uniform_int_distribution<int>(S::kStepsMin, S::kStepsMax)(rng);
  c.thaw_depth =
      std::uniform_int_distribution<int>(S::kThawMin, S::kThawMax)(rng);
  return c;
}

// ---------------------------------------------------------------------------
// Random search

struct SearchResult {
  TrainConfig config;
  double score = -std::numeric_limits<double>::infinity();
  bool ok = false;
  std::string reason;  // failure message when !ok
};

struct SearchOptions {
  std::filesystem::path journal;  // empty: no journal
  bool resume = false;
  unsigned workers = 1;
  std::function<void(const std::string&)> log;  // failure log sink
};

inline nlohmann::ordered_json to_json(const SearchResult& r) {
  nlohmann::ordered_json j;
  j["index"] = r.config.index;
  j["config"] = to_json(r.config);
  // JSON has no infinities; failed evaluations carry a null score.
  j["score"] = r.ok ? nlohmann::ordered_json(r.score) : nlohmann::ordered_json(nullptr);
  j["status"] = r.ok ? "ok" : "error";
  if (!r.ok) j["reason"] = r.reason;
  return j;
}

inline SearchResult search_result_from_json(const nlohmann::json& j) {
  SearchResult r;
  r.config = config_from_json(j.at("config"));
  r.config.index = j.at("index").get<std::uint64_t>();
  r.ok = j.at("status").get<std::string>() == "ok";
  if (r.ok) r.score = j.at("score").get<double>();
  r.reason = j.value("reason", std::string{});
  return r;
}

inline std::vector<SearchResult> read_journal(const std::filesystem::path& path) {
  std::vector<SearchResult> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(search_result_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data,
           path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Descending score; equal scores (and failures) keep index order.
inline void rank_results(std::vector<SearchResult>& results) {
  std::stable_sort(results.begin(), results.end(),
                   [](const SearchResult& a, const SearchResult& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.config.index < b.config.index;
                   });
}

/// Evaluates configs 0..budget-1 of the `seed` stream. Objective failures
/// (exceptions or non-finite scores) rank last and do not stop the search.
/// With a journal and `resume`, indices already journaled are not re-run.
inline std::vector<SearchResult> run_search(
    const std::function<double(const TrainConfig&)>& objective,
    std::size_t budget, std::uint64_t seed, const SearchOptions& opt = {}) {
  if (budget < 1) fail(ErrorKind::config, "run_search: budget must be >= 1");

  std::map<std::uint64_t, SearchResult> done;
  if (!opt.journal.empty()) {
    if (opt.resume) {
      for (auto& r : read_journal(opt.journal))
        if (r.config.index < budget) done[r.config.index] = std::move(r);
    } else {
      std::ofstream truncate(opt.journal, std::ios::trunc);
    }
  }

  std::vector<std::uint64_t> pending;
  for (std::uint64_t i = 0; i < budget; ++i)
    if (!done.count(i)) pending.push_back(i);

  std::mutex journal_mutex;
  std::vector<SearchResult> fresh(pending.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    for (std::size_t slot; (slot = cursor.fetch_add(1)) < pending.size();) {
      SearchResult r;
      r.config = sample_config(seed, pending[slot]);
      try {
        r.score = objective(r.config);
        r.ok = std::isfinite(r.score);
        if (!r.ok) r.reason = "objective returned a non-finite score";
      } catch (const std::exception& e) {
        r.reason = e.what();
      }
      if (!r.ok) r.score = -std::numeric_limits<double>::infinity();
      std::lock_guard lock(journal_mutex);
      if (!r.ok && opt.log)
        opt.log("config " + std::to_string(r.config.index) + " failed: " + r.reason);
      if (!opt.journal.empty()) {
        std::ofstream out(opt.journal, std::ios::app);
        out << to_json(r).dump() << '\n';
        if (!out) fail(ErrorKind::data, opt.journal.string() + ": append failed");
      }
      fresh[slot] = std::move(r);
    }
  };

  const unsigned n = std::max(1u, std::min<unsigned>(opt.workers,
                                                     static_cast<unsigned>(pending.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (auto& r : fresh) done[r.config.index] = std::move(r);
  std::vector<SearchResult> out;
  for (auto& [_, r] : done) out.push_back(std::move(r));
  rank_results(out);
  return out;
}

}  // namespace adipipe
