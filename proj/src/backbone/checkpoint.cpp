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

#include <algorithm>
#include <fstream>
#include <map>

#include "flowprobe/backbone.hpp"
#include "flowprobe/error.hpp"

// Checkpoint layout:
//   char[4] "FPCK", u32 version, u32 L, u32 D, u32 V+C, u32 N_mel,
//   u32 tensor count, then named tensor records. The first record, "arch",
//   holds the remaining architecture fields and the init seed.
namespace flowprobe {

namespace {

constexpr char kMagic[4] = {'F', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

Tensor arch_tensor(const BackboneConfig& c, std::uint64_t seed) {
  return Tensor({8}, std::vector<double>{
                         static_cast<double>(c.heads), static_cast<double>(c.ffn_mult),
                         static_cast<double>(c.cond_embed), static_cast<double>(c.cond_length),
                         static_cast<double>(c.t_frames), static_cast<double>(c.kind),
                         static_cast<double>(seed >> 32), static_cast<double>(seed & 0xffffffffULL)});
}

}  // namespace

void GatedResidualNet::save(const std::filesystem::path& path) const {
  if (std::filesystem::exists(path)) {
    throw IoError("refusing to overwrite existing checkpoint " + path.string());
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, 4);
  binio::put_u32(os, kVersion);
  binio::put_u32(os, static_cast<std::uint32_t>(config_.layers));
  binio::put_u32(os, static_cast<std::uint32_t>(config_.width));
  binio::put_u32(os, static_cast<std::uint32_t>(config_.vocab_total));
  binio::put_u32(os, static_cast<std::uint32_t>(config_.n_mel));
  const auto named = tensors();
  binio::put_u32(os, static_cast<std::uint32_t>(named.size() + 1));
  binio::write_named_tensor(os, "arch", arch_tensor(config_, seed_));
  for (const auto& [name, t] : named) binio::write_named_tensor(os, name, *t);
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

GatedResidualNet GatedResidualNet::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || !std::equal(magic, magic + 4, kMagic)) {
    throw IoError(path.string() + " is not a flowprobe checkpoint");
  }
  if (binio::get_u32(is) != kVersion) throw IoError("unsupported checkpoint version");
  BackboneConfig c;
  c.layers = static_cast<int>(binio::get_u32(is));
  c.width = static_cast<int>(binio::get_u32(is));
  c.vocab_total = static_cast<int>(binio::get_u32(is));
  c.n_mel = static_cast<int>(binio::get_u32(is));
  const std::uint32_t count = binio::get_u32(is);
  auto [arch_name, arch] = binio::read_named_tensor(is);
  if (arch_name != "arch" || arch.numel() != 8) throw IoError("checkpoint lacks architecture record");
  c.heads = static_cast<int>(arch[0]);
  c.ffn_mult = static_cast<int>(arch[1]);
  c.cond_embed = static_cast<int>(arch[2]);
  c.cond_length = static_cast<int>(arch[3]);
  c.t_frames = static_cast<int>(arch[4]);
  c.kind = static_cast<BlockKind>(static_cast<int>(arch[5]));
  const std::uint64_t seed =
      (static_cast<std::uint64_t>(arch[6]) << 32) | static_cast<std::uint64_t>(arch[7]);

  GatedResidualNet net(c, seed);
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : net.parameters()) by_name[p->name] = p;
  for (std::uint32_t i = 1; i < count; ++i) {
    auto [name, t] = binio::read_named_tensor(is);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("unexpected tensor '" + name + "' in checkpoint");
    if (t.shape() != it->second->value.shape()) {
      throw IoError("tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                    shape_str(it->second->value.shape()));
    }
    it->second->value = std::move(t);
    by_name.erase(it);
  }
  if (!by_name.empty()) throw IoError("checkpoint is missing tensor '" + by_name.begin()->first + "'");
  return net;
}

}  // namespace flowprobe
