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

// On-disk formats for frame features and dataset manifests.
//
// Matrix file layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic ("ADFM" for matrices, "ADCB" for codebooks)
//   4       1     version (1)
//   5       1     element type (0 = float32, 1 = float64)
//   6       2     flags: frames per second for frame data, 0 otherwise
//   8       4     rows (T for features)
//   12      4     cols (D for features)
//   16      ...   rows*cols IEEE-754 values, row-major
//
// Feature files always use float32. Codebook files insert a 16-byte
// extension (int64 seed, float64 inertia) between header and payload.
//
// Manifests are JSON lines, one UtteranceRecord per line, with a fixed field
// order and explicit nulls for absent optional fields.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adipipe/core.hpp"
#include "adipipe/labels.hpp"

namespace adipipe {

inline constexpr std::array<char, 4> kMatrixMagic = {'A', 'D', 'F', 'M'};
inline constexpr std::array<char, 4> kCodebookMagic = {'A', 'D', 'C', 'B'};
inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::uint16_t kDefaultFrameRate = 50;  // 320 samples @ 16 kHz
inline constexpr std::size_t kHeaderBytes = 16;

enum class ElementType : std::uint8_t { f32 = 0, f64 = 1 };

struct MatrixHeader {
  std::array<char, 4> magic = kMatrixMagic;
  std::uint8_t version = kFormatVersion;
  ElementType element = ElementType::f32;
  std::uint16_t flags = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;

  std::size_t element_bytes() const {
    return element == ElementType::f32 ? 4 : 8;
  }
};

namespace detail {

template <typename U>
inline void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
inline U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

inline std::string encode_header(const MatrixHeader& h) {
  std::string out(h.magic.begin(), h.magic.end());
  out.push_back(static_cast<char>(h.version));
  out.push_back(static_cast<char>(h.element));
  put_le(out, h.flags);
  put_le(out, h.rows);
  put_le(out, h.cols);
  return out;
}

inline MatrixHeader decode_header(const std::string& bytes,
                                  const std::array<char, 4>& expected_magic,
                                  const std::string& path) {
  if (bytes.size() < kHeaderBytes)
    fail(ErrorKind::data, path + ": file shorter than the 16-byte header");
  MatrixHeader h;
  std::memcpy(h.magic.data(), bytes.data(), 4);
  if (h.magic != expected_magic)
    fail(ErrorKind::data, path + ": bad magic bytes");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  h.version = p[4];
  if (h.version != kFormatVersion)
    fail(ErrorKind::data,
         path + ": unsupported format version " + std::to_string(h.version));
  if (p[5] > 1)
    fail(ErrorKind::data,
         path + ": unknown element type " + std::to_string(p[5]));
  h.element = static_cast<ElementType>(p[5]);
  h.flags = get_le<std::uint16_t>(p + 6);
  h.rows = get_le<std::uint32_t>(p + 8);
  h.cols = get_le<std::uint32_t>(p + 12);
  return h;
}

template <typename T>
inline void encode_payload(std::string& out, const Matrix<T>& m,
                           ElementType element) {
  for (const T& v : m.data()) {
    if (element == ElementType::f32)
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    else
      put_le(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
}

template <typename T>
inline Matrix<T> decode_payload(const unsigned char* p, const MatrixHeader& h) {
  Matrix<T> m(h.rows, h.cols);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (h.element == ElementType::f32)
      m.data()[i] = static_cast<T>(
          std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)));
    else
      m.data()[i] = static_cast<T>(
          std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i)));
  }
  return m;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::data, path.string() + ": write failed");
}

inline void check_payload_size(const MatrixHeader& h, std::size_t available,
                               const std::string& path) {
  const std::size_t expected =
      static_cast<std::size_t>(h.rows) * h.cols * h.element_bytes();
  if (available != expected)
    fail(ErrorKind::data,
         path + ": dimension mismatch, header says " + std::to_string(h.rows) +
             "x" + std::to_string(h.cols) + " (" + std::to_string(expected) +
             " payload bytes) but file carries " + std::to_string(available));
}

}  // namespace detail

struct MatrixFile {
  MatrixHeader header;
  Matrix<double> values;
};

template <typename T>
inline void write_matrix(const std::filesystem::path& path, const Matrix<T>& m,
                         ElementType element = ElementType::f64,
                         std::uint16_t flags = 0) {
  if (!m.all_finite())
    fail(ErrorKind::data, path.string() + ": refusing to write non-finite values");
  MatrixHeader h;
  h.element = element;
  h.flags = flags;
  h.rows = static_cast<std::uint32_t>(m.rows());
  h.cols = static_cast<std::uint32_t>(m.cols());
  std::string bytes = detail::encode_header(h);
  detail::encode_payload(bytes, m, element);
  detail::spit(path, bytes);
}

inline MatrixFile read_matrix(const std::filesystem::path& path) {
  const std::string bytes = detail::slurp(path);
  MatrixFile f;
  f.header = detail::decode_header(bytes, kMatrixMagic, path.string());
  detail::check_payload_size(f.header, bytes.size() - kHeaderBytes,
                             path.string());
  f.values = detail::decode_payload<double>(
      reinterpret_cast<const unsigned char*>(bytes.data()) + kHeaderBytes,
      f.header);
  return f;
}

/// Frame-level features of one utterance. Row t is frame t.
struct FeatureMatrix {
  std::string utterance_id;
  Matrix<float> frames;
  std::uint16_t frame_rate = kDefaultFrameRate;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }

  void validate() const {
    if (frames.rows() < 1 || frames.cols() < 1)
      fail(ErrorKind::data, "features '" + utterance_id + "': empty matrix");
    if (!frames.all_finite())
      fail(ErrorKind::data,
           "features '" + utterance_id + "': non-finite values");
  }
};

/// T should be floor(rate * duration) give or take one frame.
inline bool frame_count_consistent(std::size_t num_frames, double duration_s,
                                   std::uint16_t frame_rate = kDefaultFrameRate) {
  const double expected = std::floor(frame_rate * duration_s);
  return std::abs(static_cast<double>(num_frames) - expected) <= 1.0;
}

inline void write_features(const FeatureMatrix& m,
                           const std::filesystem::path& path) {
  m.validate();
  write_matrix(path, m.frames, ElementType::f32, m.frame_rate);
}

/// The utterance id is taken from the file stem.
inline FeatureMatrix read_features(const std::filesystem::path& path) {
  const std::string bytes = detail::slurp(path);
  const auto h = detail::decode_header(bytes, kMatrixMagic, path.string());
  if (h.element != ElementType::f32)
    fail(ErrorKind::data, path.string() + ": feature files must be float32");
  detail::check_payload_size(h, bytes.size() - kHeaderBytes, path.string());
  FeatureMatrix m;
  m.utterance_id = path.stem().string();
  m.frame_rate = h.flags;
  m.frames = detail::decode_payload<float>(
      reinterpret_cast<const unsigned char*>(bytes.data()) + kHeaderBytes, h);
  if (m.frames.rows() < 1 || m.frames.cols() < 1)
    fail(ErrorKind::data, path.string() + ": empty feature matrix");
  if (!m.frames.all_finite())
    fail(ErrorKind::data, path.string() + ": non-finite values in payload");
  return m;
}

inline std::filesystem::path feature_path(const std::filesystem::path& dir,
                                          const std::string& utterance_id) {
  return dir / (utterance_id + ".feat");
}

// ---------------------------------------------------------------------------
// Manifests

enum class Split { train, dev, test };
enum class Bucket { surrogate, low, medium, high };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline std::string to_string(Bucket b) {
  switch (b) {
    case Bucket::surrogate: return "surrogate";
    case Bucket::low: return "low";
    case Bucket::medium: return "medium";
    case Bucket::high: return "high";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  fail(ErrorKind::data, "unknown split '" + std::string(s) + "'");
}

inline Bucket parse_bucket(std::string_view s) {
  if (s == "surrogate") return Bucket::surrogate;
  if (s == "low") return Bucket::low;
  if (s == "medium") return Bucket::medium;
  if (s == "high") return Bucket::high;
  fail(ErrorKind::config, "unknown bucket/setting '" + std::string(s) + "'");
}

struct UtteranceRecord {
  std::string utterance_id;
  std::string source_video_id;
  double duration_s = 0.0;
  std::optional<std::string> country;
  std::optional<std::string> label;
  std::optional<double> language_score;
  std::optional<double> confidence;
  std::optional<Bucket> bucket;
  Split split = Split::train;

  friend bool operator==(const UtteranceRecord&, const UtteranceRecord&) = default;
};

struct Manifest {
  std::vector<UtteranceRecord> records;
  std::vector<std::string> label_set = default_label_set();

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  /// Returns a manifest with the same label set and no records.
  Manifest like() const { return Manifest{{}, label_set}; }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& r : records) {
      const std::string who = "record '" + r.utterance_id + "'";
      if (r.utterance_id.empty())
        fail(ErrorKind::data, "record with empty utterance_id");
      if (!seen.insert(r.utterance_id).second)
        fail(ErrorKind::data, "duplicate utterance_id '" + r.utterance_id + "'");
      if (!(r.duration_s > 0.0) || !std::isfinite(r.duration_s))
        fail(ErrorKind::data, who + ": duration_s must be positive");
      if (r.country && !is_country_code(*r.country))
        fail(ErrorKind::data, who + ": unknown country '" + *r.country + "'");
      if (r.label && label_index(label_set, *r.label) < 0)
        fail(ErrorKind::data, who + ": label '" + *r.label +
                                  "' is not in the label set");
      for (const auto& score : {r.language_score, r.confidence})
        if (score && !(*score >= 0.0 && *score <= 1.0))
          fail(ErrorKind::data, who + ": score outside [0,1]");
      if (r.bucket && !r.confidence && !r.country)
        fail(ErrorKind::data,
             who + ": bucket requires a confidence or a country");
    }
  }
};

namespace detail {

template <typename T>
inline nlohmann::ordered_json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const UtteranceRecord& r) {
  nlohmann::ordered_json j;
  j["utterance_id"] = r.utterance_id;
  j["source_video_id"] = r.source_video_id;
  j["duration_s"] = r.duration_s;
  j["country"] = detail::opt_json(r.country);
  j["label"] = detail::opt_json(r.label);
  j["language_score"] = detail::opt_json(r.language_score);
  j["confidence"] = detail::opt_json(r.confidence);
  j["bucket"] = r.bucket ? nlohmann::ordered_json(to_string(*r.bucket))
                         : nlohmann::ordered_json(nullptr);
  j["split"] = to_string(r.split);
  return j;
}

inline UtteranceRecord record_from_json(const nlohmann::json& j) {
  UtteranceRecord r;
  auto str = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<std::string>();
  };
  auto num = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
  };
  r.utterance_id = j.at("utterance_id").get<std::string>();
  r.source_video_id = str("source_video_id").value_or("");
  r.duration_s = j.at("duration_s").get<double>();
  r.country = str("country");
  r.label = str("label");
  r.language_score = num("language_score");
  r.confidence = num("confidence");
  if (auto b = str("bucket")) r.bucket = parse_bucket(*b);
  r.split = parse_split(str("split").value_or("train"));
  return r;
}

inline std::string manifest_to_string(const Manifest& m) {
  std::string out;
  for (const auto& r : m.records) {
    out += to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

inline Manifest manifest_from_string(const std::string& text,
                                     std::vector<std::string> label_set,
                                     const std::string& origin = "<manifest>") {
  Manifest m;
  m.label_set = std::move(label_set);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data,
           origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  m.validate();
  detail::spit(path, manifest_to_string(m));
}

inline Manifest read_manifest(const std::filesystem::path& path,
                              std::vector<std::string> label_set =
                                  default_label_set()) {
  return manifest_from_string(detail::slurp(path), std::move(label_set),
                              path.string());
}

/// Keeps records with min_s < duration_s (<= max_s when given), in order.
inline Manifest filter_by_duration(const Manifest& manifest, double min_s,
                                   std::optional<double> max_s = std::nullopt) {
  if (!(min_s >= 0.0))
    fail(ErrorKind::config, "filter_by_duration: min_s must be >= 0");
  if (max_s && !(*max_s > min_s))
    fail(ErrorKind::config, "filter_by_duration: max_s must exceed min_s");
  Manifest out = manifest.like();
  for (const auto& r : manifest.records)
    if (r.duration_s > min_s && (!max_s || r.duration_s <= *max_s))
      out.records.push_back(r);
  return out;
}

inline Manifest filter_by_split(const Manifest& manifest, Split split) {
  Manifest out = manifest.like();
  for (const auto& r : manifest.records)
    if (r.split == split) out.records.push_back(r);
  return out;
}

}  // namespace adipipe
