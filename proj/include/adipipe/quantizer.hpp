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

// K-means codebooks over acoustic frames and nearest-centroid labeling.

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "adipipe/core.hpp"
#include "adipipe/featurestore.hpp"

namespace adipipe {

/// Codebook sizes swept by default.
inline constexpr std::array<std::size_t, 5> kPaperClusterCounts = {200, 400, 600,
                                                                   800, 1000};

struct Codebook {
  Matrix<double> centroids;  // k x feature_dim
  std::uint64_t seed = 0;
  double train_inertia = 0.0;
  std::vector<double> inertia_history;  // one entry per assignment pass
  std::size_t iterations = 0;

  std::size_t k() const { return centroids.rows(); }
  std::size_t feature_dim() const { return centroids.cols(); }
};

struct LabelSequence {
  std::string utterance_id;
  std::vector<std::uint32_t> labels;
};

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-4;  // mean centroid displacement
  std::size_t n_init = 10;
  bool refine = true;  // Hartigan transfers after Lloyd converges
  unsigned workers = 1;
};

// ---------------------------------------------------------------------------
// Subsampling

/// Selection sampling (Knuth's algorithm S): exactly `wanted` of `total`
/// indices, uniformly without replacement, in increasing order.
inline std::vector<std::size_t> sample_indices(std::size_t total,
                                               std::size_t wanted,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> out;
  out.reserve(wanted);
  for (std::size_t i = 0; i < total && out.size() < wanted; ++i) {
    const double need = static_cast<double>(wanted - out.size());
    if (static_cast<double>(total - i) * unit(rng) < need) out.push_back(i);
  }
  return out;
}

inline std::size_t subsample_count(std::size_t total, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    fail(ErrorKind::config, "subsample fraction must be in (0, 1]");
  // The small epsilon keeps e.g. 0.29 * 100 from flooring to 28.
  return static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(total) + 1e-9));
}

/// Pools all frames of `corpus` and draws floor(fraction * N) of them.
inline Matrix<float> subsample_frames(const std::vector<FeatureMatrix>& corpus,
                                      double fraction, std::uint64_t seed) {
  std::size_t total = 0;
  std::size_t dim = 0;
  for (const auto& m : corpus) {
    if (dim == 0) dim = m.dim();
    if (m.dim() != dim)
      fail(ErrorKind::data, "features '" + m.utterance_id +
                                "': dimension " + std::to_string(m.dim()) +
                                " differs from corpus dimension " +
                                std::to_string(dim));
    total += m.num_frames();
  }
  if (total == 0) fail(ErrorKind::data, "subsample_frames: empty corpus");
  const std::size_t wanted = subsample_count(total, fraction);
  if (wanted == 0)
    fail(ErrorKind::config, "subsample_frames: fraction selects no frames");

  const auto picks = sample_indices(total, wanted, seed);
  Matrix<float> out(wanted, dim);
  std::size_t utt = 0, base = 0, row = 0;
  for (std::size_t idx : picks) {
    while (idx >= base + corpus[utt].num_frames()) base += corpus[utt++].num_frames();
    const auto src = corpus[utt].frames.row(idx - base);
    std::copy(src.begin(), src.end(), out.row(row++).begin());
  }
  return out;
}

/// Streaming variant over a manifest and a feature directory; only one
/// utterance is resident at a time.
inline Matrix<float> subsample_frames(const Manifest& manifest,
                                      const std::filesystem::path& features_dir,
                                      double fraction, std::uint64_t seed) {
  std::vector<std::size_t> counts;
  std::size_t total = 0, dim = 0;
  for (const auto& r : manifest.records) {
    const auto path = feature_path(features_dir, r.utterance_id);
    std::ifstream in(path, std::ios::binary);
    std::string head(kHeaderBytes, '\0');
    if (!in.read(head.data(), kHeaderBytes))
      fail(ErrorKind::data, path.string() + ": cannot read header");
    const auto h = detail::decode_header(head, kMatrixMagic, path.string());
    if (dim == 0) dim = h.cols;
    if (h.cols != dim)
      fail(ErrorKind::data, path.string() + ": dimension " +
                                std::to_string(h.cols) + " differs from " +
                                std::to_string(dim));
    counts.push_back(h.rows);
    total += h.rows;
  }
  if (total == 0) fail(ErrorKind::data, "subsample_frames: empty corpus");
  const std::size_t wanted = subsample_count(total, fraction);
  if (wanted == 0)
    fail(ErrorKind::config, "subsample_frames: fraction selects no frames");

  const auto picks = sample_indices(total, wanted, seed);
  Matrix<float> out(wanted, dim);
  std::size_t next = 0, base = 0, row = 0;
  for (std::size_t u = 0; u < counts.size() && next < picks.size(); ++u) {
    if (picks[next] < base + counts[u]) {
      const auto m = read_features(
          feature_path(features_dir, manifest.records[u].utterance_id));
      for (; next < picks.size() && picks[next] < base + counts[u]; ++next) {
        const auto src = m.frames.row(picks[next] - base);
        std::copy(src.begin(), src.end(), out.row(row++).begin());
      }
    }
    base += counts[u];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

inline std::size_t count_distinct_rows(const Matrix<float>& frames,
                                       std::size_t stop_at) {
  std::set<std::vector<float>> seen;
  for (std::size_t i = 0; i < frames.rows() && seen.size() < stop_at; ++i) {
    const auto r = frames.row(i);
    seen.emplace(r.begin(), r.end());
  }
  return seen.size();
}

inline std::size_t nearest(std::span<const float> x, const Matrix<double>& c,
                           double& best_dist) {
  std::size_t best = 0;
  best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c.rows(); ++j) {
    const double d = squared_distance(x, c.row(j));
    if (d < best_dist) {  // strict: ties keep the lower index
      best_dist = d;
      best = j;
    }
  }
  return best;
}

inline Matrix<double> kmeanspp_init(const Matrix<float>& x, std::size_t k,
                                    std::mt19937_64& rng) {
  const std::size_t n = x.rows(), dim = x.cols();
  Matrix<double> c(k, dim);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t first = std::min(n - 1, static_cast<std::size_t>(unit(rng) * n));
  for (std::size_t d = 0; d < dim; ++d) c(0, d) = x(first, d);

  std::vector<double> d2(n), trial(n), best_d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(x.row(i), c.row(0));
  // Greedy seeding: draw several D^2-weighted candidates per centroid and
  // keep the one that lowers the potential most.
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t best_pick = n;
    double best_potential = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
      const double target = unit(rng) * total;
      std::size_t pick = n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
      double potential = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        trial[i] = std::min(d2[i], squared_distance(x.row(i), x.row(pick)));
        potential += trial[i];
      }
      if (potential < best_potential) {
        best_potential = potential;
        best_pick = pick;
        best_d2.swap(trial);
      }
    }
    for (std::size_t d = 0; d < dim; ++d) c(j, d) = x(best_pick, d);
    d2.swap(best_d2);
  }
  return c;
}

struct LloydRun {
  Matrix<double> centroids;
  std::vector<double> history;
  std::size_t iterations = 0;
};

inline double assign_all(const Matrix<float>& x, const Matrix<double>& c,
                         std::vector<std::size_t>& owner,
                         std::vector<double>& dist, unsigned workers) {
  parallel_for(x.rows(), workers, [&](std::size_t i) {
    owner[i] = nearest(x.row(i), c, dist[i]);
  });
  double inertia = 0.0;
  for (double d : dist) inertia += d;
  return inertia;
}

inline Matrix<double> means_of(const Matrix<float>& x,
                               const std::vector<std::size_t>& owner,
                               const Matrix<double>& fallback,
                               std::vector<std::size_t>& counts) {
  const std::size_t k = fallback.rows(), dim = x.cols();
  Matrix<double> sums(k, dim);
  counts.assign(k, 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto s = sums.row(owner[i]);
    const auto xi = x.row(i);
    for (std::size_t d = 0; d < dim; ++d) s[d] += xi[d];
    ++counts[owner[i]];
  }
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t d = 0; d < dim; ++d)
      sums(j, d) = counts[j] ? sums(j, d) / static_cast<double>(counts[j])
                             : fallback(j, d);
  return sums;
}

/// Plain Lloyd iterations until the mean centroid displacement drops below
/// tol or the shared iteration budget runs out.
inline Matrix<double> lloyd_phase(const Matrix<float>& x, Matrix<double> c,
                                  const KMeansOptions& opt, LloydRun& run) {
  const std::size_t n = x.rows(), k = c.rows(), dim = x.cols();
  std::vector<std::size_t> owner(n), counts;
  std::vector<double> dist(n);
  while (run.iterations < opt.max_iters) {
    run.history.push_back(assign_all(x, c, owner, dist, opt.workers));
    ++run.iterations;
    Matrix<double> next = means_of(x, owner, c, counts);
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      // Reseed at the point currently worst served by its centroid.
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (dist[i] > dist[far]) far = i;
      for (std::size_t d = 0; d < dim; ++d) next(j, d) = x(far, d);
      dist[far] = 0.0;
    }
    double moved = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      moved += std::sqrt(squared_distance(c.row(j), next.row(j)));
    c = std::move(next);
    if (moved == 0.0 || moved / static_cast<double>(k) < opt.tol) break;
  }
  return c;
}

/// Hartigan single-point transfers from the nearest-centroid partition of
/// `c`. A point moves from cluster a to b when
///   n_b/(n_b+1) |x-c_b|^2 < n_a/(n_a-1) |x-c_a|^2,
/// which strictly lowers the objective. Returns the number of moves; `c`
/// ends as the exact means of the final partition.
inline std::size_t hartigan_refine(const Matrix<float>& x, Matrix<double>& c,
                                   const KMeansOptions& opt) {
  const std::size_t n = x.rows(), k = c.rows(), dim = x.cols();
  std::vector<std::size_t> owner(n), counts;
  std::vector<double> dist(n);
  assign_all(x, c, owner, dist, opt.workers);
  c = means_of(x, owner, c, counts);

  std::size_t moves = 0;
  for (std::size_t pass = 0; pass < opt.max_iters; ++pass) {
    std::size_t moved_this_pass = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = owner[i];
      if (counts[a] <= 1) continue;
      const auto xi = x.row(i);
      const double na = static_cast<double>(counts[a]);
      const double remove_gain = na / (na - 1.0) * squared_distance(xi, c.row(a));
      std::size_t best = a;
      double best_cost = remove_gain;
      for (std::size_t b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(counts[b]);
        const double cost = nb / (nb + 1.0) * squared_distance(xi, c.row(b));
        if (cost < best_cost) {
          best_cost = cost;
          best = b;
        }
      }
      // Relative margin keeps rounding noise from triggering moves.
      if (best == a || best_cost >= remove_gain * (1.0 - 1e-12)) continue;
      auto ca = c.row(a);
      auto cb = c.row(best);
      const double nb = static_cast<double>(counts[best]);
      for (std::size_t d = 0; d < dim; ++d) {
        ca[d] = (ca[d] * na - xi[d]) / (na - 1.0);
        cb[d] = (cb[d] * nb + xi[d]) / (nb + 1.0);
      }
      --counts[a];
      ++counts[best];
      owner[i] = best;
      ++moved_this_pass;
    }
    moves += moved_this_pass;
    if (moved_this_pass == 0) break;
  }
  c = means_of(x, owner, c, counts);
  return moves;
}

inline LloydRun lloyd(const Matrix<float>& x, Matrix<double> c,
                      const KMeansOptions& opt) {
  LloydRun run;
  c = lloyd_phase(x, std::move(c), opt, run);
  if (opt.refine) {
    for (std::size_t round = 0; round < opt.max_iters; ++round) {
      if (hartigan_refine(x, c, opt) == 0) break;
      c = lloyd_phase(x, std::move(c), opt, run);
    }
  }
  std::vector<std::size_t> owner(x.rows());
  std::vector<double> dist(x.rows());
  run.history.push_back(assign_all(x, c, owner, dist, opt.workers));
  run.centroids = std::move(c);
  return run;
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeds, polished with Hartigan transfers
/// (then Lloyd again) until neither changes the partition. With n_init > 1
/// the run with the lowest final inertia wins (first one on ties).
inline Codebook train_kmeans(const Matrix<float>& frames, std::size_t k,
                             std::uint64_t seed, const KMeansOptions& opt = {}) {
  if (k < 1) fail(ErrorKind::config, "train_kmeans: k must be >= 1");
  if (opt.n_init < 1) fail(ErrorKind::config, "train_kmeans: n_init must be >= 1");
  if (frames.rows() < k)
    fail(ErrorKind::data, "train_kmeans: " + std::to_string(frames.rows()) +
                              " frames cannot support k=" + std::to_string(k));
  if (!frames.all_finite())
    fail(ErrorKind::data, "train_kmeans: non-finite frame values");
  if (detail::count_distinct_rows(frames, k) < k)
    fail(ErrorKind::data, "train_kmeans: fewer than k=" + std::to_string(k) +
                              " distinct frames; centroids would be duplicates");

  std::mt19937_64 rng(seed);
  Codebook best;
  best.seed = seed;
  best.train_inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < opt.n_init; ++r) {
    auto run = detail::lloyd(frames, detail::kmeanspp_init(frames, k, rng), opt);
    if (run.history.back() < best.train_inertia) {
      best.train_inertia = run.history.back();
      best.centroids = std::move(run.centroids);
      best.inertia_history = std::move(run.history);
      best.iterations = run.iterations;
    }
  }
  return best;
}

/// Nearest centroid per frame under squared Euclidean distance; ties go to
/// the lowest centroid index.
inline LabelSequence assign(const Codebook& codebook, const FeatureMatrix& m) {
  if (m.dim() != codebook.feature_dim())
    fail(ErrorKind::data, "features '" + m.utterance_id + "': dimension " +
                              std::to_string(m.dim()) +
                              " does not match codebook dimension " +
                              std::to_string(codebook.feature_dim()));
  LabelSequence seq{m.utterance_id, std::vector<std::uint32_t>(m.num_frames())};
  double unused = 0.0;
  for (std::size_t t = 0; t < m.num_frames(); ++t)
    seq.labels[t] = static_cast<std::uint32_t>(
        detail::nearest(m.frames.row(t), codebook.centroids, unused));
  return seq;
}

// ---------------------------------------------------------------------------
// Persistence

inline void write_codebook(const Codebook& cb, const std::filesystem::path& path) {
  if (!cb.centroids.all_finite())
    fail(ErrorKind::numeric, "codebook has non-finite centroids");
  MatrixHeader h;
  h.magic = kCodebookMagic;
  h.element = ElementType::f64;
  h.rows = static_cast<std::uint32_t>(cb.k());
  h.cols = static_cast<std::uint32_t>(cb.feature_dim());
  std::string bytes = detail::encode_header(h);
  detail::put_le(bytes, cb.seed);
  detail::put_le(bytes, std::bit_cast<std::uint64_t>(cb.train_inertia));
  detail::encode_payload(bytes, cb.centroids, ElementType::f64);
  detail::spit(path, bytes);
}

inline Codebook read_codebook(const std::filesystem::path& path) {
  const std::string bytes = detail::slurp(path);
  const auto h = detail::decode_header(bytes, kCodebookMagic, path.string());
  if (bytes.size() < kHeaderBytes + 16)
    fail(ErrorKind::data, path.string() + ": truncated codebook extension");
  detail::check_payload_size(h, bytes.size() - kHeaderBytes - 16, path.string());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  Codebook cb;
  cb.seed = detail::get_le<std::uint64_t>(p + kHeaderBytes);
  cb.train_inertia =
      std::bit_cast<double>(detail::get_le<std::uint64_t>(p + kHeaderBytes + 8));
  cb.centroids = detail::decode_payload<double>(p + kHeaderBytes + 16, h);
  if (cb.k() < 1 || !cb.centroids.all_finite())
    fail(ErrorKind::data, path.string() + ": invalid centroids");
  return cb;
}

/// Label sequences as JSON lines: {"utterance_id": ..., "labels": [...]}.
inline void write_label_sequences(const std::vector<LabelSequence>& seqs,
                                  const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : seqs) {
    nlohmann::ordered_json j;
    j["utterance_id"] = s.utterance_id;
    j["labels"] = s.labels;
    out += j.dump();
    out.push_back('\n');
  }
  detail::spit(path, out);
}

inline std::vector<LabelSequence> read_label_sequences(
    const std::filesystem::path& path) {
  std::istringstream in(detail::slurp(path));
  std::vector<LabelSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("utterance_id").get<std::string>(),
                     j.at("labels").get<std::vector<std::uint32_t>>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data,
           path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace adipipe
