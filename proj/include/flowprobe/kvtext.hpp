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
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

// Flat "key = value" text, one pair per line; '#' starts a comment.
namespace flowprobe::kv {

using Pairs = std::vector<std::pair<std::string, std::string>>;

Pairs parse(const std::string& text);
Pairs read_file(const std::filesystem::path& path);
std::string render(const Pairs& pairs);
void write_file(const std::filesystem::path& path, const Pairs& pairs);

const std::string* find(const Pairs& pairs, const std::string& key);
const std::string& get(const Pairs& pairs, const std::string& key);  // throws ConfigError

std::int64_t to_int(const std::string& key, const std::string& value);
std::uint64_t to_u64(const std::string& key, const std::string& value);
double to_double(const std::string& key, const std::string& value);
bool to_bool(const std::string& key, const std::string& value);
std::string format_double(double v);  // shortest round-trip text

}  // namespace flowprobe::kv
