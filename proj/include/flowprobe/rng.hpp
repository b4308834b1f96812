/* Copyright 2026 The flowprobe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "flowprobe/tensor.hpp"

namespace flowprobe {

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_label(std::string_view label);

/// Counter-based generator: draw i of a stream is mix(key, i), so a stream
/// can be split into independent children by hashing labels into the key.
/// Distributions are implemented here, not taken from <random>, so values
/// are identical on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(mix64(key ^ 0x6a09e667f3bcc909ULL)) {}

  Rng split(std::string_view label) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();   // standard normal, Box-Muller
  std::size_t below(std::size_t n);

  Tensor normal_tensor(Shape shape, double stddev);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  struct Raw {};
  Rng(std::uint64_t mixed_key, Raw) : key_(mixed_key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace flowprobe
