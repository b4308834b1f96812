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

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flowprobe/tensor.hpp"

// Little-endian binary containers shared by corpora, checkpoints and heads.
//
// Record block ("FPRB"):
//   char[4] magic = "FPRB"
//   u32     version (= 1)
//   u32     record count
//   u32     record length (values per record)
//   f64     count * length values
//
// Named tensor record: u32 name length, name bytes, u32 rank, u32 extents,
// then one record block with count 1 and length numel.
namespace flowprobe::binio {

inline constexpr std::uint32_t kRecordVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v);
void put_f64(std::ostream& os, double v);
std::uint32_t get_u32(std::istream& is);
double get_f64(std::istream& is);

struct RecordBlock {
  std::uint32_t count = 0;
  std::uint32_t length = 0;
  std::vector<double> values;
};

void write_records(std::ostream& os, std::uint32_t count, std::uint32_t length,
                   std::span<const double> values);
RecordBlock read_records(std::istream& is);

void write_named_tensor(std::ostream& os, std::string_view name, const Tensor& t);
std::pair<std::string, Tensor> read_named_tensor(std::istream& is);

using NamedTensors = std::vector<std::pair<std::string, const Tensor*>>;

std::string serialize(const NamedTensors& tensors);
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t checksum(const NamedTensors& tensors);
std::string hex64(std::uint64_t v);

}  // namespace flowprobe::binio
