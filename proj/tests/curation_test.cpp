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

#include "adipipe/curation.hpp"

#include <random>

#include <gtest/gtest.h>

namespace adipipe {
namespace {

UtteranceRecord rec(std::string id, std::optional<std::string> country,
                    std::optional<std::string> label = std::nullopt,
                    std::optional<double> confidence = std::nullopt) {
  UtteranceRecord r;
  r.utterance_id = std::move(id);
  r.source_video_id = "v_" + r.utterance_id;
  r.duration_s = 6.0;
  r.country = std::move(country);
  r.label = std::move(label);
  r.confidence = confidence;
  return r;
}

Manifest of(std::vector<UtteranceRecord> rs) {
  Manifest m;
  m.records = std::move(rs);
  return m;
}

TEST(FilterLanguage, ThresholdIsInclusive) {
  auto m = of({rec("a", "EGY"), rec("b", "EGY"), rec("c", "EGY")});
  m.records[0].language_score = 0.2;
  m.records[1].language_score = 0.5;
  m.records[2].language_score = 0.9;
  const auto kept = filter_language(m, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept.records[0].utterance_id, "b");
  EXPECT_EQ(filter_language(m, 0.0).records, m.records);
  m.records[1].language_score.reset();
  EXPECT_THROW(filter_language(m, 0.5), Error);
}

TEST(Surrogate, CopiesCountry) {
  const auto s = surrogate_label(of({rec("a", "JOR")}));
  EXPECT_EQ(s.records[0].label, "JOR");
  EXPECT_EQ(s.records[0].bucket, Bucket::surrogate);
  try {
    surrogate_label(of({rec("missing_country", std::nullopt)}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("missing_country"), std::string::npos);
  }
}

TEST(Surrogate, LabelHistogramEqualsCountryHistogram) {
  std::vector<UtteranceRecord> rs;
  for (std::size_t i = 0; i < 170; ++i)
    rs.push_back(rec("u" + std::to_string(i), std::string(kCountryCodes[(i * 7) % 17])));
  const auto s = surrogate_label(of(rs));
  std::map<std::string, int> labels, countries;
  for (const auto& r : s.records) {
    ++labels[*r.label];
    ++countries[*r.country];
  }
  EXPECT_EQ(labels, countries);
  EXPECT_EQ(labels.size(), 17u);
}

TEST(Thresholds, UniformGrid) {
  std::vector<double> grid;
  for (int i = 1; i <= 100; ++i) grid.push_back(i / 100.0);
  const auto t = fit_thresholds(grid);
  EXPECT_NEAR(t.t_low, 0.34, 0.01);
  EXPECT_NEAR(t.t_high, 0.67, 0.01);
  EXPECT_EQ(t.fit_size, 100u);
  EXPECT_FALSE(t.degenerate());
}

TEST(Thresholds, ConstantSampleIsDegenerate) {
  const auto t = fit_thresholds(std::vector<double>(9, 0.7));
  EXPECT_EQ(t.t_low, 0.7);
  EXPECT_EQ(t.t_high, 0.7);
  EXPECT_TRUE(t.degenerate());
  EXPECT_NE(render_thresholds(t).find("WARNING"), std::string::npos);
}

TEST(Thresholds, Errors) {
  EXPECT_THROW(fit_thresholds({0.1, 0.2}), Error);
  EXPECT_THROW(fit_thresholds({0.1, 0.2, 1.5}), Error);
}

TEST(Bucket, ReferenceBoundaries) {
  const BucketThresholds t{kReferenceLowThreshold, kReferenceHighThreshold};
  EXPECT_EQ(bucket_of(0.5423, t), Bucket::low);
  EXPECT_EQ(bucket_of(0.5424, t), Bucket::medium);
  EXPECT_EQ(bucket_of(0.8783, t), Bucket::medium);
  EXPECT_EQ(bucket_of(0.8784, t), Bucket::high);
  EXPECT_EQ(bucket_of(1.0, t), Bucket::high);
}

TEST(Bucket, ReferenceRendering) {
  const std::string table =
      render_thresholds({kReferenceLowThreshold, kReferenceHighThreshold});
  EXPECT_EQ(table,
            "| Setting | Description |\n|---|---|\n"
            "| Surrogate label | Label via country of origin |\n"
            "| Low confidence | < 54.24% confidence |\n"
            "| Medium confidence | 54.24% <= x < 87.84% confidence |\n"
            "| High confidence | >= 87.84% confidence |\n");
}

TEST(Bucket, FitThenBucketIsBalanced) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t n : {3u, 10u, 101u, 1000u, 3001u}) {
    std::vector<UtteranceRecord> rs;
    for (std::size_t i = 0; i < n; ++i)
      rs.push_back(rec("u" + std::to_string(i), "EGY", "EGY", u(rng)));
    const auto m = of(rs);
    const auto b = bucket(m, fit_thresholds(confidences_of(m)));
    std::map<Bucket, double> sizes;
    for (const auto& r : b.records) ++sizes[*r.bucket];
    for (Bucket k : {Bucket::low, Bucket::medium, Bucket::high})
      EXPECT_LE(std::abs(sizes[k] - n / 3.0), 1.0) << n;
  }
}

TEST(Bucket, MissingConfidence) {
  EXPECT_THROW(bucket(of({rec("a", "EGY")}), {0.3, 0.6}), Error);
}

TEST(Agreement, PerfectAndDisjoint) {
  const auto same = agreement_report(of({rec("a", "EGY", "EGY"), rec("b", "JOR", "JOR")}));
  EXPECT_EQ(same.match_fraction, 1.0);
  const auto none = agreement_report(of({rec("a", "EGY", "JOR"), rec("b", "JOR", "EGY")}));
  EXPECT_EQ(none.match_fraction, 0.0);
  EXPECT_EQ(none.per_country.size(), 2u);
}

TEST(Agreement, ReorderingInvariant) {
  std::vector<UtteranceRecord> rs;
  for (int i = 0; i < 60; ++i)
    rs.push_back(rec("u" + std::to_string(i), i % 3 ? "EGY" : "SUD", i % 4 ? "EGY" : "SUD"));
  const auto a = agreement_report(of(rs));
  std::shuffle(rs.begin(), rs.end(), std::mt19937_64(1));
  const auto b = agreement_report(of(rs));
  EXPECT_EQ(to_json(a), to_json(b));
}

TEST(Agreement, ReferenceShareRenders) {
  EXPECT_EQ(format_percent(0.2658), "26.58%");
}

TEST(Assemble, HighSettingTakesHighBucketOnly) {
  std::vector<UtteranceRecord> pool;
  for (int i = 0; i < 5; ++i) {
    auto r = rec("p" + std::to_string(i), "EGY", i < 3 ? "SUD" : "EGY", 0.5);
    r.bucket = i < 3 ? Bucket::high : Bucket::low;
    pool.push_back(r);
  }
  auto base = of({rec("b0", "KSA", "KSA"), rec("b1", "LEB", "LEB")});
  const auto set = assemble_selftrain(base, of(pool), Bucket::high);
  ASSERT_EQ(set.added.size(), 3u);
  for (const auto& r : set.added.records) {
    EXPECT_EQ(r.label, "SUD");
    EXPECT_EQ(r.split, Split::train);
  }
  EXPECT_EQ(set.concatenated().size(), base.size() + set.added.size());
}

TEST(Assemble, SurrogateUsesCountry) {
  auto pool = surrogate_label(of({rec("p0", "MOR", "EGY"), rec("p1", "ALG", "EGY")}));
  const auto set = assemble_selftrain(of({}), pool, Bucket::surrogate);
  for (const auto& r : set.added.records) EXPECT_EQ(r.label, r.country);
}

TEST(Assemble, OverlapIsRejected) {
  auto pool = of({rec("x", "EGY", "EGY")});
  pool.records[0].bucket = Bucket::high;
  EXPECT_THROW(assemble_selftrain(of({rec("x", "EGY", "EGY")}), pool, Bucket::high), Error);
}

Manifest audit_pool() {
  std::vector<UtteranceRecord> rs;
  for (const char* c : {"UAE", "JOR", "MOR", "SUD"})
    for (int i = 0; i < 40; ++i)
      rs.push_back(rec(std::string(c) + std::to_string(i), std::string(c),
                       i % 4 ? std::string("EGY") : std::string(c), 0.6));
  return of(rs);
}

TEST(Audit, FourCountriesTimesTwentyFive) {
  const auto m = audit_pool();
  const std::vector<std::string> labels = {"UAE", "JOR", "MOR", "SUD"};
  const auto s = human_audit_sample(m, 25, labels, 7);
  ASSERT_EQ(s.size(), 100u);
  for (const auto& r : s.records) EXPECT_NE(r.label, r.country);
  EXPECT_EQ(human_audit_sample(m, 25, labels, 7).records, s.records);
  EXPECT_NE(human_audit_sample(m, 25, labels, 8).records, s.records);
  EXPECT_TRUE(human_audit_sample(m, 0, labels, 7).empty());
  EXPECT_THROW(human_audit_sample(m, 31, labels, 7), Error);
}

TEST(Audit, SheetHasFixedColumnsAndEmptyJudgements) {
  const auto s = human_audit_sample(audit_pool(), 1, {"JOR"}, 0);
  const auto sheet = annotation_sheet(s);
  EXPECT_EQ(sheet.substr(0, sheet.find('\n')),
            "utterance_id\tsource_video_id\tcountry\tpredicted_label\tconfidence\t"
            "belongs_to_country\tmsa_or_da\tprediction_correct");
  const auto row = sheet.substr(sheet.find('\n') + 1);
  EXPECT_NE(row.find("\tJOR\tEGY\t0.6\t\t\t\n"), std::string::npos);
  EXPECT_EQ(annotation_sheet(Manifest{}), sheet.substr(0, sheet.find('\n') + 1));
}

TEST(GulfChannels, FlagsGulfHeavyChannels) {
  std::vector<UtteranceRecord> rs;
  for (int i = 0; i < 4; ++i) {
    auto g = rec("g" + std::to_string(i), "EGY", i < 3 ? "KSA" : "EGY");
    g.source_video_id = "chan_gulf";
    auto e = rec("e" + std::to_string(i), "EGY", "EGY");
    e.source_video_id = "chan_egy";
    rs.push_back(g);
    rs.push_back(e);
  }
  const auto rep = gulf_channel_report(of(rs));
  ASSERT_EQ(rep.size(), 2u);
  EXPECT_EQ(rep[0].channel, "chan_egy");
  EXPECT_FALSE(rep[0].flagged);
  EXPECT_EQ(rep[0].label_entropy, 0.0);
  EXPECT_TRUE(rep[1].flagged);
  EXPECT_DOUBLE_EQ(rep[1].gulf_share, 0.75);
}

TEST(PipelineReport, RetentionPerStage) {
  std::vector<UtteranceRecord> rs;
  for (int i = 0; i < 20; ++i) {
    auto r = rec("u" + std::to_string(i), "EGY", i < 5 ? "EGY" : "JOR");
    r.source_video_id = "v" + std::to_string(i / 5);
    r.language_score = i < 17 ? 0.9 : 0.1;
    rs.push_back(r);
  }
  const auto stages = pipeline_report(of(rs), 0.0, 0.5);
  ASSERT_EQ(stages.size(), 4u);
  EXPECT_EQ(stages[0].in, 4u);
  EXPECT_EQ(stages[2].in, 20u);
  EXPECT_EQ(stages[2].out, 17u);
  EXPECT_DOUBLE_EQ(stages[2].retention(), 0.85);
  EXPECT_EQ(stages[3].out, 5u);
}

}  // namespace
}  // namespace adipipe
