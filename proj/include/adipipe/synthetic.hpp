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

// Synthetic corpora for smoke runs and tests: each class draws its frames
// from its own isotropic Gaussian.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "adipipe/featurestore.hpp"

namespace adipipe {

struct SyntheticSpec {
  std::vector<std::string> labels = {"EGY", "JOR", "KSA", "MOR"};
  std::size_t per_class = 200;
  std::size_t dim = 8;
  double min_duration_s = 5.0;
  double max_duration_s = 10.0;
  double mean_spread = 1.5;  // std-dev of class means around the origin
  double frame_noise = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  Manifest manifest;
  std::vector<FeatureMatrix> features;  // aligned with manifest.records
};

/// Every third utterance of each class goes to test, the one before it to
/// dev, the rest to train. Utterances are interleaved across classes.
inline SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> dur(spec.min_duration_s, spec.max_duration_s);
  std::uniform_real_distribution<double> lang(0.5, 1.0);

  Matrix<double> means(spec.labels.size(), spec.dim);
  for (double& v : means.data()) v = spec.mean_spread * normal(rng);

  SyntheticCorpus corpus;
  corpus.manifest.label_set = default_label_set();
  for (const auto& l : spec.labels)
    if (label_index(corpus.manifest.label_set, l) < 0)
      corpus.manifest.label_set.push_back(l);

  for (std::size_t i = 0; i < spec.per_class; ++i) {
    for (std::size_t c = 0; c < spec.labels.size(); ++c) {
      UtteranceRecord r;
      char id[64];
      std::snprintf(id, sizeof id, "syn_%s_%04zu", spec.labels[c].c_str(), i);
      r.utterance_id = id;
      std::snprintf(id, sizeof id, "vid_%s_%03zu", spec.labels[c].c_str(), i / 10);
      r.source_video_id = id;
      r.duration_s = std::round(dur(rng) * 100.0) / 100.0;
      if (is_country_code(spec.labels[c])) r.country = spec.labels[c];
      r.label = spec.labels[c];
      r.language_score = std::round(lang(rng) * 1e4) / 1e4;
      r.split = i % 3 == 2 ? Split::test : i % 3 == 1 ? Split::dev : Split::train;

      FeatureMatrix m;
      m.utterance_id = r.utterance_id;
      const auto t = static_cast<std::size_t>(std::floor(kDefaultFrameRate * r.duration_s));
      m.frames = Matrix<float>(t, spec.dim);
      for (std::size_t f = 0; f < t; ++f)
        for (std::size_t d = 0; d < spec.dim; ++d)
          m.frames(f, d) =
              static_cast<float>(means(c, d) + spec.frame_noise * normal(rng));
      corpus.manifest.records.push_back(std::move(r));
      corpus.features.push_back(std::move(m));
    }
  }
  return corpus;
}

inline void write_synthetic_corpus(const SyntheticCorpus& corpus,
                                   const std::filesystem::path& manifest_path,
                                   const std::filesystem::path& features_dir) {
  for (const auto& m : corpus.features)
    write_features(m, feature_path(features_dir, m.utterance_id));
  write_manifest(corpus.manifest, manifest_path);
}

}  // namespace adipipe
