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

// Macro-F1 / accuracy / confusion evaluation, country-to-region pooling and
// result tables. Scores are on a 0-100 scale.

#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "adipipe/core.hpp"
#include "adipipe/labels.hpp"

namespace adipipe {

struct ClassScores {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvalReport {
  std::vector<std::string> label_set;
  std::vector<ClassScores> per_class;  // aligned with label_set
  std::vector<std::string> averaged_over;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  Matrix<std::size_t> confusion;  // rows: gold, cols: predicted
  std::size_t n_samples = 0;
};

/// Per-class F1 is 2PR/(P+R), or 0 when P+R = 0. The macro average runs over
/// `average_over` (default: the whole label set), absent classes included.
inline EvalReport macro_f1(const std::vector<std::string>& gold,
                           const std::vector<std::string>& pred,
                           const std::vector<std::string>& label_set,
                           std::optional<std::vector<std::string>> average_over =
                               std::nullopt) {
  if (gold.size() != pred.size())
    fail(ErrorKind::data, "macro_f1: " + std::to_string(gold.size()) +
                              " gold labels vs " + std::to_string(pred.size()) +
                              " predictions");
  const std::size_t c = label_set.size();
  EvalReport rep;
  rep.label_set = label_set;
  rep.confusion = Matrix<std::size_t>(c, c, 0);
  rep.n_samples = gold.size();

  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = label_index(label_set, gold[i]);
    const auto p = label_index(label_set, pred[i]);
    if (g < 0) fail(ErrorKind::data, "macro_f1: unknown gold label '" + gold[i] + "'");
    if (p < 0) fail(ErrorKind::data, "macro_f1: unknown predicted label '" + pred[i] + "'");
    ++rep.confusion(static_cast<std::size_t>(g), static_cast<std::size_t>(p));
    if (g == p) ++correct;
  }

  for (std::size_t j = 0; j < c; ++j) {
    std::size_t tp = rep.confusion(j, j), row = 0, col = 0;
    for (std::size_t i = 0; i < c; ++i) {
      row += rep.confusion(j, i);
      col += rep.confusion(i, j);
    }
    ClassScores s{label_set[j]};
    s.support = row;
    s.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    s.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    rep.per_class.push_back(s);
  }

  rep.averaged_over = average_over ? *average_over : label_set;
  if (rep.averaged_over.empty())
    fail(ErrorKind::config, "macro_f1: empty averaging set");
  double sum = 0.0;
  for (const auto& l : rep.averaged_over) {
    const auto j = label_index(label_set, l);
    if (j < 0) fail(ErrorKind::config, "macro_f1: averaging label '" + l + "' not in label set");
    sum += rep.per_class[static_cast<std::size_t>(j)].f1;
  }
  rep.macro_f1 = 100.0 * sum / static_cast<double>(rep.averaged_over.size());
  rep.accuracy = gold.empty() ? 0.0
                              : 100.0 * static_cast<double>(correct) /
                                    static_cast<double>(gold.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Region pooling

/// Country code -> coarse region, total on the 17 ADI-17 countries.
class RegionMap {
 public:
  static RegionMap adi5() {
    RegionMap m;
    for (const char* c : {"KSA", "UAE", "OMA", "IRQ", "KUW", "YEM", "QAT"})
      m.map_[c] = "Gulf";
    for (const char* c : {"LEB", "PAL", "JOR", "SYR"}) m.map_[c] = "Levantine";
    for (const char* c : {"EGY", "SUD"}) m.map_[c] = "Egypt";
    for (const char* c : {"MOR", "MAU", "LIB", "ALG"}) m.map_[c] = "NorthAfrica";
    return m;
  }

  std::optional<std::string> region_of(const std::string& code) const {
    auto it = map_.find(code);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  /// Regions in first-appearance order of the fixed list, plus MSA if asked.
  static std::vector<std::string> regions(bool msa_passthrough = false) {
    std::vector<std::string> out = {"Gulf", "Levantine", "Egypt", "NorthAfrica"};
    if (msa_passthrough) out.emplace_back(kMsaLabel);
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return map_; }

 private:
  std::map<std::string, std::string> map_;
};

inline std::vector<std::string> pool_regions(const std::vector<std::string>& labels,
                                             const RegionMap& regions,
                                             bool msa_passthrough = false) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    if (msa_passthrough && l == kMsaLabel) {
      out.push_back(l);
      continue;
    }
    auto r = regions.region_of(l);
    if (!r) fail(ErrorKind::data, "pool_regions: label '" + l + "' has no region");
    out.push_back(*r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["n_samples"] = r.n_samples;
  j["macro_f1"] = r.macro_f1;
  j["accuracy"] = r.accuracy;
  j["averaged_over"] = r.averaged_over;
  auto& classes = j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& s : r.per_class)
    classes.push_back({{"label", s.label},
                       {"precision", s.precision},
                       {"recall", s.recall},
                       {"f1", s.f1},
                       {"support", s.support}});
  auto& conf = j["confusion"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.confusion.rows(); ++i) {
    const auto row = r.confusion.row(i);
    conf.push_back(std::vector<std::size_t>(row.begin(), row.end()));
  }
  j["label_set"] = r.label_set;
  return j;
}

inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string format_general(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct NamedReport {
  std::string model;
  std::string dataset;
  EvalReport report;
};

/// Markdown table: one row per model, one column per dataset, both in
/// first-appearance order. Cells show macro-F1 and the sample count.
inline std::string report_table(const std::vector<NamedReport>& reports) {
  std::vector<std::string> models, datasets;
  auto remember = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& r : reports) {
    remember(models, r.model);
    remember(datasets, r.dataset);
  }

  std::string out = "| Model |";
  for (const auto& d : datasets) out += " " + d + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < datasets.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& m : models) {
    out += "| " + m + " |";
    for (const auto& d : datasets) {
      auto it = std::find_if(reports.begin(), reports.end(), [&](const NamedReport& r) {
        return r.model == m && r.dataset == d;
      });
      if (it == reports.end()) {
        out += " - |";
      } else {
        out += " " + format_score(it->report.macro_f1) +
               " (n=" + std::to_string(it->report.n_samples) + ") |";
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace adipipe
