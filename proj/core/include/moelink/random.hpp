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

#ifndef MOELINK_RANDOM_HPP_
#define MOELINK_RANDOM_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace moelink {

// Name of the PRNG algorithm every seeded path in the library uses. The
// standard fixes the mt19937_64 output sequence, but not the output of
// std::*_distribution or std::shuffle, so all derived draws below are
// implemented here to stay reproducible across toolchains.
inline constexpr std::string_view kPrngName = "mt19937_64/v1";

// Name of the 64-bit digest used for context hashes and byte keys.
inline constexpr std::string_view kHashName = "fnv1a64";

std::uint64_t Fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

// Fixed-width lowercase hex, 16 characters.
std::string HexDigest(std::uint64_t value);

// Combines two 64-bit values into one seed (splitmix64 finalizer).
std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double Uniform();

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t Below(std::uint64_t n);

  // Standard normal via Box-Muller (cached second variate).
  double Normal();

  // Fisher-Yates shuffle driven by Below().
  template <typename T>
  void Shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(Below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace moelink

#endif  // MOELINK_RANDOM_HPP_
