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

// The bag-of-pseudo-labels baseline end to end: subsample train frames,
// fit a codebook, bag every utterance, train the softmax classifier and
// score the test split.

#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "adipipe/classifier.hpp"
#include "adipipe/curation.hpp"
#include "adipipe/eval.hpp"
#include "adipipe/featurestore.hpp"
#include "adipipe/quantizer.hpp"
#include "adipipe/representation.hpp"

namespace adipipe {

/// Labels of `order` that occur as record labels, in `order`'s order.
inline std::vector<std::string> labels_present(const Manifest& m,
                                               const std::vector<std::string>& order) {
  std::set<std::string> seen;
  for (const auto& r : m.records)
    if (r.label) seen.insert(*r.label);
  std::vector<std::string> out;
  for (const auto& l : order)
    if (seen.count(l)) out.push_back(l);
  for (const auto& l : seen)
    if (std::find(out.begin(), out.end(), l) == out.end())
      fail(ErrorKind::data, "label '" + l + "' is not in the manifest label set");
  return out;
}

/// Reads, assigns and bags every record's features. Output follows the
/// manifest order whatever the worker count.
inline std::vector<BagVector> bag_manifest(const Manifest& m,
                                           const std::filesystem::path& features_dir,
                                           const Codebook& codebook, unsigned workers = 1,
                                           std::vector<LabelSequence>* sequences = nullptr) {
  std::vector<LabelSequence> seqs(m.size());
  std::vector<BagVector> bags(m.size());
  parallel_for(m.size(), workers, [&](std::size_t i) {
    const auto f = read_features(feature_path(features_dir, m.records[i].utterance_id));
    seqs[i] = assign(codebook, f);
    bags[i] = bag_of_labels(seqs[i], codebook.k());
  });
  if (sequences) *sequences = std::move(seqs);
  return bags;
}

inline LabeledBags labeled_bags(const Manifest& m, const std::vector<BagVector>& bags,
                                const std::vector<std::string>& label_set) {
  LabeledBags out{stack_bags(bags), {}};
  for (const auto& r : m.records) {
    const auto idx = r.label ? label_index(label_set, *r.label) : -1;
    if (idx < 0)
      fail(ErrorKind::data, "record '" + r.utterance_id + "' has no usable label");
    out.y.push_back(static_cast<std::size_t>(idx));
  }
  return out;
}

struct BagPipelineOptions {
  std::size_t k = 32;
  double subsample_fraction = 0.10;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  KMeansOptions kmeans;
  LinearTrainConfig train;  // train.seed is replaced by `seed`
};

struct BagPipelineResult {
  Codebook codebook;
  LinearModel model;
  Manifest predictions;  // test records: predicted label and confidence
  EvalReport report;
};

inline BagPipelineResult run_bag_pipeline(const Manifest& manifest,
                                          const std::filesystem::path& features_dir,
                                          const BagPipelineOptions& opt) {
  manifest.validate();
  const auto train = filter_by_split(manifest, Split::train);
  const auto dev = filter_by_split(manifest, Split::dev);
  const auto test = filter_by_split(manifest, Split::test);
  if (train.empty() || test.empty())
    fail(ErrorKind::data, "pipeline needs nonempty train and test splits");

  BagPipelineResult res;
  auto km = opt.kmeans;
  km.workers = opt.workers;
  res.codebook = train_kmeans(
      subsample_frames(train, features_dir, opt.subsample_fraction, opt.seed), opt.k,
      opt.seed, km);

  const auto labels = labels_present(train, manifest.label_set);
  const auto train_xy =
      labeled_bags(train, bag_manifest(train, features_dir, res.codebook, opt.workers), labels);
  auto cfg = opt.train;
  cfg.seed = opt.seed;
  if (dev.empty()) {
    res.model = train_linear(train_xy.x, train_xy.y, labels, cfg).model;
  } else {
    const auto dev_xy =
        labeled_bags(dev, bag_manifest(dev, features_dir, res.codebook, opt.workers), labels);
    res.model = train_linear(train_xy.x, train_xy.y, labels, cfg, &dev_xy).model;
  }

  const auto test_bags = bag_manifest(test, features_dir, res.codebook, opt.workers);
  std::vector<Prediction> preds;
  std::vector<std::string> gold, guessed;
  for (std::size_t i = 0; i < test.size(); ++i) {
    preds.push_back(predict(res.model, test.records[i].utterance_id, test_bags[i].values));
    gold.push_back(test.records[i].label.value_or(""));
    guessed.push_back(preds.back().predicted_label);
  }
  res.predictions = attach_predictions(test, preds);

  auto eval_labels = labels;
  for (const auto& l : labels_present(test, manifest.label_set))
    if (std::find(eval_labels.begin(), eval_labels.end(), l) == eval_labels.end())
      eval_labels.push_back(l);
  res.report = macro_f1(gold, guessed, eval_labels);
  return res;
}

/// codebook.bin, model/, predictions.jsonl and report.json under `dir`.
inline void write_pipeline_artifacts(const BagPipelineResult& r,
                                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_codebook(r.codebook, dir / "codebook.bin");
  save_model(r.model, dir / "model");
  write_manifest(r.predictions, dir / "predictions.jsonl");
  detail::spit(dir / "report.json", to_json(r.report).dump(2) + "\n");
}

}  // namespace adipipe
