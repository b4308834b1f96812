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


#include <functional>
#include <set>
#include <sstream>

#include "flowprobe/binio.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/protocol.hpp"

namespace flowprobe {

namespace {

struct Field {
  const char* key;
  std::function<std::string(const ProtocolConfig&)> get;
  std::function<void(ProtocolConfig&, const std::string&)> set;
  bool path = false;
};

template <typename T>
Field int_field(const char* key, T ProtocolConfig::*member) {
  return {key, [member](const ProtocolConfig& c) { return std::to_string(c.*member); },
          [key, member](ProtocolConfig& c, const std::string& v) {
            c.*member = static_cast<T>(kv::to_int(key, v));
          }};
}

Field double_field(const char* key, double ProtocolConfig::*member) {
  return {key, [member](const ProtocolConfig& c) { return kv::format_double(c.*member); },
          [key, member](ProtocolConfig& c, const std::string& v) { c.*member = kv::to_double(key, v); }};
}

Field bool_field(const char* key, bool ProtocolConfig::*member) {
  return {key, [member](const ProtocolConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [key, member](ProtocolConfig& c, const std::string& v) { c.*member = kv::to_bool(key, v); }};
}

template <typename S, typename T>
Field nested_int(const char* key, S ProtocolConfig::*outer, T S::*member) {
  return {key, [outer, member](const ProtocolConfig& c) { return std::to_string(c.*outer.*member); },
          [key, outer, member](ProtocolConfig& c, const std::string& v) {
            c.*outer.*member = static_cast<T>(kv::to_int(key, v));
          }};
}

template <typename S>
Field nested_double(const char* key, S ProtocolConfig::*outer, double S::*member) {
  return {key, [outer, member](const ProtocolConfig& c) { return kv::format_double(c.*outer.*member); },
          [key, outer, member](ProtocolConfig& c, const std::string& v) {
            c.*outer.*member = kv::to_double(key, v);
          }};
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ";" : "") + items[i];
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

const std::vector<Field>& fields() {
  using C = ProtocolConfig;
  static const std::vector<Field> table = {
      {"seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, const std::string& v) { c.seed = kv::to_u64("seed", v); }},
      {"topology", [](const C& c) { return std::string(topology_name(c.data.topology)); },
       [](C& c, const std::string& v) { c.data.topology = parse_topology(v); }},
      nested_int("vocab", &C::data, &TopologyConfig::vocab),
      nested_int("codebook", &C::data, &TopologyConfig::codebook),
      nested_int("embed_dim", &C::data, &TopologyConfig::embed_dim),
      nested_int("t_tok", &C::data, &TopologyConfig::t_tok),
      nested_int("t_frames", &C::data, &TopologyConfig::t_frames),
      nested_int("n_mel", &C::data, &TopologyConfig::n_mel),
      nested_int("decoder_hidden", &C::data, &TopologyConfig::decoder_hidden),
      nested_int("smoothing_width", &C::data, &TopologyConfig::smoothing_width),
      nested_double("speech_noise", &C::data, &TopologyConfig::speech_noise),
      nested_double("audio_noise", &C::data, &TopologyConfig::audio_noise),
      nested_double("token_persistence", &C::data, &TopologyConfig::token_persistence),
      nested_double("texture_amplitude", &C::data, &TopologyConfig::texture_amplitude),
      int_field("n_per_domain", &C::n_per_domain),
      {"corpus", [](const C& c) { return c.corpus.string(); },
       [](C& c, const std::string& v) { c.corpus = v; }, true},
      int_field("layers", &C::layers),
      int_field("width", &C::width),
      int_field("heads", &C::heads),
      int_field("ffn_mult", &C::ffn_mult),
      int_field("cond_embed", &C::cond_embed),
      nested_int("d_teacher", &C::teacher, &TeacherConfig::d_teacher),
      nested_int("teacher_hidden", &C::teacher, &TeacherConfig::hidden),
      nested_int("calibration_samples", &C::teacher, &TeacherConfig::calibration_samples),
      int_field("batch_size", &C::batch_size),
      nested_double("lr", &C::adam, &AdamConfig::lr),
      nested_double("beta1", &C::adam, &AdamConfig::beta1),
      nested_double("beta2", &C::adam, &AdamConfig::beta2),
      nested_double("adam_eps", &C::adam, &AdamConfig::eps),
      nested_double("clip_norm", &C::adam, &AdamConfig::clip_norm),
      int_field("warmup_epochs", &C::warmup_epochs),
      int_field("intervention_epochs", &C::intervention_epochs),
      int_field("k", &C::k),
      double_field("lambda_bit", &C::lambda_bit),
      double_field("lambda_align", &C::lambda_align),
      bool_field("force_include_interface", &C::force_include_interface),
      int_field("t_bins", &C::t_bins),
      int_field("probe_budget", &C::probe_budget),
      double_field("foga_eps", &C::foga_eps),
      double_field("noise_sigma", &C::noise_sigma),
      int_field("euler_steps", &C::euler_steps),
      int_field("evals_per_epoch", &C::evals_per_epoch),
      int_field("eval_draws", &C::eval_draws),
      {"strategies", [](const C& c) { return join(c.strategies); },
       [](C& c, const std::string& v) { c.strategies = split_list(v); }},
      bool_field("parallel", &C::parallel),
  };
  return table;
}

}  // namespace

kv::Pairs config_pairs(const ProtocolConfig& c) {
  kv::Pairs out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(c));
  return out;
}

ProtocolConfig parse_protocol_config(const kv::Pairs& pairs, ProtocolConfig base) {
  std::set<std::string> seen;
  for (const auto& [key, value] : pairs) {
    const Field* field = nullptr;
    for (const Field& f : fields())
      if (key == f.key) field = &f;
    if (field == nullptr) throw ConfigError("unknown config key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    field->set(base, value);
  }
  base.validate();
  return base;
}

std::uint64_t config_digest(const ProtocolConfig& c) {
  std::string text;
  for (const Field& f : fields()) {
    if (f.path || std::string(f.key) == "parallel") continue;
    text += std::string(f.key) + "=" + f.get(c) + "\n";
  }
  return binio::fnv1a64(text);
}

}  // namespace flowprobe
