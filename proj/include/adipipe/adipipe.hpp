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

#include "adipipe/core.hpp"
#include "adipipe/labels.hpp"
#include "adipipe/featurestore.hpp"
#include "adipipe/quantizer.hpp"
#include "adipipe/representation.hpp"
#include "adipipe/schedules_search.hpp"
#include "adipipe/eval.hpp"
#include "adipipe/classifier.hpp"
#include "adipipe/curation.hpp"
#include "adipipe/pipeline.hpp"
#include "adipipe/synthetic.hpp"
