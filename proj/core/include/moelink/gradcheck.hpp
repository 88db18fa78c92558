// Copyright 2026 The moelink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MOELINK_GRADCHECK_HPP_
#define MOELINK_GRADCHECK_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace moelink {

enum class GradComponent {
  kProjection,
  kCoarseMatch,
  kFineMatch,
  kGatedFuse,
  kContrastiveLoss,
  kSmoe,
};

const char* ToString(GradComponent c);
// Accepts the ToString names plus "smoe_forward" and "projections".
GradComponent ParseGradComponent(std::string_view name);
std::vector<GradComponent> AllGradComponents();

struct GradCheckOptions {
  int dim = 4;
  int rows = 3;          // token rows for fine-grained inputs
  int experts = 2;       // smoe only
  int top_k = 2;         // smoe only
  double eps = 1e-5;     // must lie in [1e-6, 1e-3]
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  GradComponent component;
  double max_rel_error = 0;
  std::string worst;     // "<tensor>[i,j]"
  std::int64_t checked = 0;
};

// Probe loss sum(c .* output) with fixed random c; every parameter and
// input element is compared against a central difference using
// |a - n| / max(|a|, |n|, 1e-6). SMoE routing is recorded once and held.
GradCheckResult GradCheck(GradComponent component,
                          const GradCheckOptions& options = GradCheckOptions());

}  // namespace moelink

#endif  // MOELINK_GRADCHECK_HPP_
