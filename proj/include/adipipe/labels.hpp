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

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace adipipe {

/// The 17 country codes of the ADI-17 inventory, sorted.
inline constexpr std::array<std::string_view, 17> kCountryCodes = {
    "ALG", "EGY", "IRQ", "JOR", "KSA", "KUW", "LEB", "LIB", "MAU",
    "MOR", "OMA", "PAL", "QAT", "SUD", "SYR", "UAE", "YEM"};

inline constexpr std::string_view kMsaLabel = "MSA";

inline bool is_country_code(std::string_view code) {
  return std::find(kCountryCodes.begin(), kCountryCodes.end(), code) !=
         kCountryCodes.end();
}

/// 17 countries followed by MSA.
inline std::vector<std::string> default_label_set() {
  std::vector<std::string> out(kCountryCodes.begin(), kCountryCodes.end());
  out.emplace_back(kMsaLabel);
  return out;
}

inline std::ptrdiff_t label_index(const std::vector<std::string>& label_set,
                                  std::string_view label) {
  auto it = std::find(label_set.begin(), label_set.end(), label);
  return it == label_set.end() ? -1 : it - label_set.begin();
}

}  // namespace adipipe
