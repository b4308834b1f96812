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

#include "flowprobe/binio.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "flowprobe/error.hpp"

namespace flowprobe::binio {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw IoError("unexpected end of binary data");
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void put_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void put_f64(std::ostream& os, double v) { put_le(os, v); }
std::uint32_t get_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
double get_f64(std::istream& is) { return get_le<double>(is); }

void write_records(std::ostream& os, std::uint32_t count, std::uint32_t length,
                   std::span<const double> values) {
  if (static_cast<std::size_t>(count) * length != values.size()) {
    throw DimensionError("record block of " + std::to_string(count) + "x" + std::to_string(length) +
                         " given " + std::to_string(values.size()) + " values");
  }
  os.write("FPRB", 4);
  put_u32(os, kRecordVersion);
  put_u32(os, count);
  put_u32(os, length);
  for (double v : values) put_f64(os, v);
}

RecordBlock read_records(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FPRB", 4) != 0) throw IoError("bad record block magic");
  const auto version = get_u32(is);
  if (version != kRecordVersion) throw IoError("unsupported record block version " + std::to_string(version));
  RecordBlock b;
  b.count = get_u32(is);
  b.length = get_u32(is);
  b.values.resize(static_cast<std::size_t>(b.count) * b.length);
  for (auto& v : b.values) v = get_f64(is);
  return b;
}

void write_named_tensor(std::ostream& os, std::string_view name, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  write_records(os, 1, static_cast<std::uint32_t>(t.numel()), t.data());
}

std::pair<std::string, Tensor> read_named_tensor(std::istream& is) {
  const auto len = get_u32(is);
  std::string name(len, '\0');
  if (!is.read(name.data(), len)) throw IoError("truncated tensor name");
  const auto rank = get_u32(is);
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(is);
  auto block = read_records(is);
  if (block.count != 1 || block.values.size() != shape_numel(shape)) {
    throw IoError("tensor record '" + name + "' does not match shape " + shape_str(shape));
  }
  return {name, Tensor(shape, std::move(block.values))};
}

std::string serialize(const NamedTensors& tensors) {
  std::ostringstream os(std::ios::binary);
  for (const auto& [name, t] : tensors) write_named_tensor(os, name, *t);
  return os.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum(const NamedTensors& tensors) { return fnv1a64(serialize(tensors)); }

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace flowprobe::binio
