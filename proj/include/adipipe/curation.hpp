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

// Silver-label curation: language filtering, surrogate labels from the
// collection country, confidence buckets, agreement statistics, self-training
// set assembly and annotation sampling.
//
// A manifest "with predictions" stores the classifier output in `label` and
// the max posterior in `confidence`; `country` keeps the collection metadata.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adipipe/classifier.hpp"
#include "adipipe/core.hpp"
#include "adipipe/eval.hpp"
#include "adipipe/featurestore.hpp"
#include "adipipe/quantizer.hpp"

namespace adipipe {

inline constexpr double kDefaultLanguageThreshold = 0.5;

/// Keeps records whose language_score >= min_score.
inline Manifest filter_language(const Manifest& manifest, double min_score) {
  Manifest out = manifest.like();
  for (const auto& r : manifest.records) {
    if (!r.language_score)
      fail(ErrorKind::data,
           "filter_language: record '" + r.utterance_id + "' has no language_score");
    if (*r.language_score >= min_score) out.records.push_back(r);
  }
  return out;
}

/// label := country, bucket := surrogate.
inline Manifest surrogate_label(const Manifest& manifest) {
  Manifest out = manifest;
  for (auto& r : out.records) {
    if (!r.country)
      fail(ErrorKind::data,
           "surrogate_label: record '" + r.utterance_id + "' has no country");
    r.label = r.country;
    r.bucket = Bucket::surrogate;
  }
  return out;
}

/// Writes predicted label and confidence onto the matching records.
inline Manifest attach_predictions(const Manifest& manifest,
                                   const std::vector<Prediction>& predictions) {
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) by_id[p.utterance_id] = &p;
  Manifest out = manifest;
  for (auto& r : out.records) {
    auto it = by_id.find(r.utterance_id);
    if (it == by_id.end())
      fail(ErrorKind::data, "no prediction for record '" + r.utterance_id + "'");
    r.label = it->second->predicted_label;
    r.confidence = it->second->confidence;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confidence buckets

struct BucketThresholds {
  double t_low = 0.0;
  double t_high = 0.0;
  std::size_t fit_size = 0;
  std::string fit_sample = "all";  // which predictions the fit used

  /// Equal thresholds collapse the medium bucket.
  bool degenerate() const { return !(t_low < t_high); }
};

/// Reference thresholds from the original HuBERT-17 silver-label run.
inline constexpr double kReferenceLowThreshold = 0.5424;
inline constexpr double kReferenceHighThreshold = 0.8784;

/// Empirical quantile with linear interpolation between order statistics,
/// at position (n-1) * num/den, computed exactly in integers.
inline double quantile_sorted(const std::vector<double>& sorted, std::size_t num,
                              std::size_t den) {
  const std::size_t n = sorted.size();
  const std::size_t scaled = (n - 1) * num;
  const std::size_t lo = scaled / den;
  const double frac = static_cast<double>(scaled % den) / static_cast<double>(den);
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline BucketThresholds fit_thresholds(std::vector<double> confidences,
                                       std::string fit_sample = "all") {
  if (confidences.size() < 3)
    fail(ErrorKind::data, "fit_thresholds: need at least 3 confidences, got " +
                              std::to_string(confidences.size()));
  for (double c : confidences)
    if (!(c >= 0.0 && c <= 1.0))
      fail(ErrorKind::data, "fit_thresholds: confidence outside [0,1]");
  std::sort(confidences.begin(), confidences.end());
  return {quantile_sorted(confidences, 1, 3), quantile_sorted(confidences, 2, 3),
          confidences.size(), std::move(fit_sample)};
}

/// low: c < t_low; medium: t_low <= c < t_high; high: c >= t_high.
inline Bucket bucket_of(double confidence, const BucketThresholds& t) {
  if (confidence < t.t_low) return Bucket::low;
  if (confidence < t.t_high) return Bucket::medium;
  return Bucket::high;
}

inline Manifest bucket(const Manifest& predictions, const BucketThresholds& t) {
  if (t.t_high < t.t_low) fail(ErrorKind::config, "bucket: t_low exceeds t_high");
  Manifest out = predictions;
  for (auto& r : out.records) {
    if (!r.confidence)
      fail(ErrorKind::data, "bucket: record '" + r.utterance_id + "' has no confidence");
    r.bucket = bucket_of(*r.confidence, t);
  }
  return out;
}

inline std::vector<double> confidences_of(const Manifest& m) {
  std::vector<double> out;
  for (const auto& r : m.records) {
    if (!r.confidence)
      fail(ErrorKind::data, "record '" + r.utterance_id + "' has no confidence");
    out.push_back(*r.confidence);
  }
  return out;
}

inline std::string format_percent(double fraction) {
  return format_score(100.0 * fraction) + "%";
}

inline nlohmann::ordered_json to_json(const BucketThresholds& t) {
  nlohmann::ordered_json j;
  j["t_low"] = t.t_low;
  j["t_high"] = t.t_high;
  j["fit_size"] = t.fit_size;
  j["fit_sample"] = t.fit_sample;
  j["degenerate"] = t.degenerate();
  return j;
}

inline BucketThresholds thresholds_from_json(const nlohmann::json& j) {
  return {j.at("t_low").get<double>(), j.at("t_high").get<double>(),
          j.value("fit_size", std::size_t{0}), j.value("fit_sample", std::string("all"))};
}

/// The three bucket definitions as a text table.
inline std::string render_thresholds(const BucketThresholds& t) {
  const std::string lo = format_percent(t.t_low), hi = format_percent(t.t_high);
  std::string out = "| Setting | Description |\n|---|---|\n";
  out += "| Surrogate label | Label via country of origin |\n";
  out += "| Low confidence | < " + lo + " confidence |\n";
  out += "| Medium confidence | " + lo + " <= x < " + hi + " confidence |\n";
  out += "| High confidence | >= " + hi + " confidence |\n";
  if (t.degenerate()) out += "\nWARNING: degenerate thresholds, medium bucket is empty\n";
  return out;
}

// ---------------------------------------------------------------------------
// Agreement between predictions and collection country

struct CountryAgreement {
  std::string country;
  std::size_t total = 0;
  std::size_t matches = 0;
  double fraction() const {
    return total ? static_cast<double>(matches) / static_cast<double>(total) : 0.0;
  }
};

struct AgreementReport {
  std::size_t total = 0;
  std::size_t match_count = 0;
  double match_fraction = 0.0;
  std::vector<CountryAgreement> per_country;  // sorted by country code
};

inline AgreementReport agreement_report(const Manifest& predictions) {
  AgreementReport rep;
  std::map<std::string, CountryAgreement> rows;
  for (const auto& r : predictions.records) {
    if (!r.country || !r.label)
      fail(ErrorKind::data, "agreement_report: record '" + r.utterance_id +
                                "' needs both country and predicted label");
    auto& row = rows[*r.country];
    row.country = *r.country;
    ++row.total;
    ++rep.total;
    if (*r.label == *r.country) {
      ++row.matches;
      ++rep.match_count;
    }
  }
  rep.match_fraction = rep.total ? static_cast<double>(rep.match_count) /
                                       static_cast<double>(rep.total)
                                 : 0.0;
  for (auto& [_, row] : rows) rep.per_country.push_back(row);
  return rep;
}

inline nlohmann::ordered_json to_json(const AgreementReport& a) {
  nlohmann::ordered_json j;
  j["total"] = a.total;
  j["match_count"] = a.match_count;
  j["match_fraction"] = a.match_fraction;
  auto& rows = j["per_country"] = nlohmann::ordered_json::array();
  for (const auto& r : a.per_country)
    rows.push_back({{"country", r.country},
                    {"total", r.total},
                    {"matches", r.matches},
                    {"fraction", r.fraction()}});
  return j;
}

// Channels that the classifier (in)consistently places in the Gulf region
// are candidate MSA sources. This only reports; nothing is relabeled.

struct ChannelStats {
  std::string channel;  // source_video_id
  std::size_t n = 0;
  double label_entropy = 0.0;  // nats, over predicted labels
  double gulf_share = 0.0;
  bool flagged = false;
};

inline std::vector<ChannelStats> gulf_channel_report(const Manifest& predictions,
                                                     double flag_share = 0.5) {
  const auto regions = RegionMap::adi5();
  std::map<std::string, std::map<std::string, std::size_t>> hist;
  for (const auto& r : predictions.records) {
    if (!r.label)
      fail(ErrorKind::data, "gulf_channel_report: record '" + r.utterance_id +
                                "' has no predicted label");
    ++hist[r.source_video_id][*r.label];
  }
  std::vector<ChannelStats> out;
  for (const auto& [channel, counts] : hist) {
    ChannelStats s{channel};
    std::size_t gulf = 0;
    for (const auto& [label, n] : counts) {
      s.n += n;
      if (regions.region_of(label) == std::optional<std::string>("Gulf")) gulf += n;
    }
    for (const auto& [_, n] : counts) {
      const double p = static_cast<double>(n) / static_cast<double>(s.n);
      s.label_entropy -= p * std::log(p);
    }
    s.gulf_share = static_cast<double>(gulf) / static_cast<double>(s.n);
    s.flagged = s.gulf_share >= flag_share;
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Collection pipeline bookkeeping

struct StageCount {
  std::string stage;
  std::size_t in = 0;
  std::size_t out = 0;
  double retention() const {
    return in ? static_cast<double>(out) / static_cast<double>(in) : 0.0;
  }
};

/// Counts for the four collection stages: source videos, segments surviving
/// the duration filter, Arabic segments after language ID, and segments
/// whose prediction matches the collection country.
inline std::vector<StageCount> pipeline_report(const Manifest& segments,
                                               double min_duration_s,
                                               double min_language_score) {
  std::set<std::string> videos;
  for (const auto& r : segments.records) videos.insert(r.source_video_id);
  const auto kept = filter_by_duration(segments, min_duration_s);
  const auto arabic = filter_language(kept, min_language_score);
  std::size_t matched = 0;
  bool have_predictions = !arabic.empty();
  for (const auto& r : arabic.records) {
    if (!r.label || !r.country) have_predictions = false;
    else if (*r.label == *r.country) ++matched;
  }
  std::vector<StageCount> out;
  out.push_back({"collection", videos.size(), videos.size()});
  out.push_back({"segmentation", segments.size(), kept.size()});
  out.push_back({"language_id", kept.size(), arabic.size()});
  if (have_predictions) out.push_back({"silver_label", arabic.size(), matched});
  return out;
}

inline nlohmann::ordered_json to_json(const std::vector<StageCount>& stages) {
  auto j = nlohmann::ordered_json::array();
  for (const auto& s : stages)
    j.push_back({{"stage", s.stage},
                 {"in", s.in},
                 {"out", s.out},
                 {"retention", s.retention()}});
  return j;
}

// ---------------------------------------------------------------------------
// Self-training sets

struct SelfTrainSet {
  Manifest base;
  Manifest added;
  Bucket setting = Bucket::surrogate;

  /// base followed by added, as one training manifest.
  Manifest concatenated() const {
    Manifest out = base;
    out.records.insert(out.records.end(), added.records.begin(), added.records.end());
    out.validate();
    return out;
  }
};

/// Pool records whose bucket equals `setting`. Surrogate additions carry the
/// country label; confidence buckets keep the predicted label.
inline SelfTrainSet assemble_selftrain(const Manifest& base, const Manifest& pool,
                                       Bucket setting) {
  std::set<std::string> base_ids;
  for (const auto& r : base.records) base_ids.insert(r.utterance_id);
  for (const auto& r : pool.records)
    if (base_ids.count(r.utterance_id))
      fail(ErrorKind::data, "assemble_selftrain: utterance '" + r.utterance_id +
                                "' appears in both base and pool");

  SelfTrainSet set{base, base.like(), setting};
  for (const auto& r : pool.records) {
    if (r.bucket != setting) continue;
    UtteranceRecord a = r;
    if (setting == Bucket::surrogate) {
      if (!r.country)
        fail(ErrorKind::data, "assemble_selftrain: surrogate record '" +
                                  r.utterance_id + "' has no country");
      a.label = r.country;
    } else if (!r.label) {
      fail(ErrorKind::data, "assemble_selftrain: record '" + r.utterance_id +
                                "' has no predicted label");
    }
    a.split = Split::train;
    set.added.records.push_back(std::move(a));
  }
  set.added.validate();
  return set;
}

// ---------------------------------------------------------------------------
// Annotation sampling

/// Draws `per_label` records per requested country among records whose
/// prediction disagrees with the country. Deterministic per seed.
inline Manifest human_audit_sample(const Manifest& predictions, std::size_t per_label,
                                   const std::vector<std::string>& labels,
                                   std::uint64_t seed) {
  Manifest out = predictions.like();
  if (per_label == 0) return out;
  for (std::size_t li = 0; li < labels.size(); ++li) {
    std::vector<const UtteranceRecord*> pool;
    for (const auto& r : predictions.records)
      if (r.country && r.label && *r.country == labels[li] && *r.label != *r.country)
        pool.push_back(&r);
    if (pool.size() < per_label)
      fail(ErrorKind::data, "human_audit_sample: only " + std::to_string(pool.size()) +
                                " mismatched records for '" + labels[li] + "', need " +
                                std::to_string(per_label));
    for (std::size_t i : sample_indices(pool.size(), per_label, seed + li))
      out.records.push_back(*pool[i]);
  }
  return out;
}

inline constexpr std::array<const char*, 8> kAnnotationColumns = {
    "utterance_id", "source_video_id",    "country",       "predicted_label",
    "confidence",   "belongs_to_country", "msa_or_da",     "prediction_correct"};

/// Tab-separated sheet; the three judgement columns are left empty.
inline std::string annotation_sheet(const Manifest& sample) {
  std::string out;
  for (std::size_t i = 0; i < kAnnotationColumns.size(); ++i)
    out += std::string(i ? "\t" : "") + kAnnotationColumns[i];
  out += "\n";
  for (const auto& r : sample.records) {
    out += r.utterance_id + "\t" + r.source_video_id + "\t" + r.country.value_or("") +
           "\t" + r.label.value_or("") + "\t" +
           (r.confidence ? format_general(*r.confidence) : "") + "\t\t\t\n";
  }
  return out;
}

}  // namespace adipipe
