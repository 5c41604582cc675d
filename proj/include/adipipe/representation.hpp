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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adipipe/core.hpp"
#include "adipipe/quantizer.hpp"

namespace adipipe {

/// Length-normalized unigram histogram of cluster labels.
struct BagVector {
  std::string utterance_id;
  std::vector<double> values;

  std::size_t k() const { return values.size(); }
};

inline BagVector bag_of_labels(const LabelSequence& seq, std::size_t k) {
  if (seq.labels.empty())
    fail(ErrorKind::data,
         "bag_of_labels: empty label sequence for '" + seq.utterance_id + "'");
  std::vector<std::uint64_t> counts(k, 0);
  for (std::uint32_t label : seq.labels) {
    if (label >= k)
      fail(ErrorKind::data, "bag_of_labels: label " + std::to_string(label) +
                                " out of range for k=" + std::to_string(k) +
                                " in '" + seq.utterance_id + "'");
    ++counts[label];
  }
  BagVector bag{seq.utterance_id, std::vector<double>(k)};
  const double n = static_cast<double>(seq.labels.size());
  for (std::size_t i = 0; i < k; ++i)
    bag.values[i] = static_cast<double>(counts[i]) / n;
  return bag;
}

/// Stacks bags into an N x k matrix in input order.
inline Matrix<double> stack_bags(const std::vector<BagVector>& bags) {
  if (bags.empty()) return {};
  Matrix<double> out(bags.size(), bags.front().k());
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (bags[i].k() != out.cols())
      fail(ErrorKind::data, "stack_bags: mixed bag dimensions");
    std::copy(bags[i].values.begin(), bags[i].values.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace adipipe
