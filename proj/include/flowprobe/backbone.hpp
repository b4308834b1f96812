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
#include <span>
#include <string>
#include <vector>

#include "flowprobe/autodiff.hpp"
#include "flowprobe/binio.hpp"
#include "flowprobe/rng.hpp"
#include "flowprobe/synthdata.hpp"

namespace flowprobe {

enum class BlockKind : std::uint8_t {
  Transformer,  // adaLN-Zero attention + feed-forward
  Linear,       // f = z·A, no time dependence; used by closed-form checks
};

struct BackboneConfig {
  int layers = 12;
  int width = 48;
  int heads = 2;
  int ffn_mult = 4;
  int cond_embed = 32;   // token embedding width E'
  int vocab_total = 128; // ids [0, V + C)
  int cond_length = 32;  // conditioning tokens per sample (2·T_tok for topology B)
  int t_frames = 32;
  int n_mel = 16;
  BlockKind kind = BlockKind::Transformer;

  static BackboneConfig for_data(const TopologyConfig& data, int layers, int width);
  void validate() const;
};

using GateMask = std::vector<std::uint8_t>;  // one entry per block, 1 = on
GateMask all_gates(int layers);
GateMask single_gate_off(int layers, int k);  // k in 1..L

struct ConditioningPack {
  std::vector<int> tokens;
  Tensor e_fused;  // T x E'
  Tensor m_ref;    // T x N_mel, zeros
  Tensor x_t;      // T x N_mel
  double t = 0.0;
};

/// States z_0..z_L and updates f_1..f_L of one forward pass.
struct BlockTrace {
  std::vector<Tensor> states;   // L + 1 entries
  std::vector<Tensor> updates;  // L entries, updates[k - 1] = f_k

  const Tensor& z(int k) const { return states[static_cast<std::size_t>(k)]; }
  const Tensor& f(int k) const { return updates[static_cast<std::size_t>(k - 1)]; }
  int layers() const { return static_cast<int>(updates.size()); }
};

/// Tape handles for one differentiable forward pass.
struct TapeForward {
  Var velocity;
  std::vector<Var> states;   // z_0..z_L
  std::vector<Var> updates;  // f_1..f_L; invalid where the gate is off
};

class GatedResidualNet {
 public:
  struct Block {
    Parameter mod_w, mod_b;  // adaLN-Zero modulation, zero-initialised
    Parameter qkv_w, qkv_b, out_w, out_b;
    Parameter ffn1_w, ffn1_b, ffn2_w, ffn2_b;
    Parameter lin;  // BlockKind::Linear only
  };

  GatedResidualNet(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  int layers() const { return config_.layers; }
  std::uint64_t seed() const { return seed_; }

  ConditioningPack build_conditioning(std::span<const int> tokens, const Tensor& x_t, double t,
                                      const Tensor* m_ref = nullptr) const;

  Tensor forward(const ConditioningPack& pack) const;
  Tensor forward_gated(const ConditioningPack& pack, const GateMask& gates) const;
  Tensor forward_traced(const ConditioningPack& pack, BlockTrace& trace) const;
  /// Runs blocks start_layer+1..L on z_start (= z_{start_layer}) and the head.
  Tensor forward_from(const ConditioningPack& pack, const Tensor& z_start, int start_layer,
                      const GateMask& gates) const;
  Tensor head(const Tensor& z_last) const;

  /// Mean over random unit directions u of ||v(z_k + h u) - v(z_k)|| / h.
  double jacobian_sensitivity(const ConditioningPack& pack, int k, int n_probes,
                              std::uint64_t seed, double h = 1e-5) const;

  /// Differentiable forward on `tape`; parameters enter as tape parameters.
  TapeForward forward_tape(Tape& tape, std::span<const int> tokens, const Tensor& x_t, double t,
                           const GateMask& gates);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Block& block(int k) { return blocks_[static_cast<std::size_t>(k - 1)]; }
  const Block& block(int k) const { return blocks_[static_cast<std::size_t>(k - 1)]; }
  Parameter& head_weight() { return head_w_; }
  Parameter& head_bias() { return head_b_; }

  binio::NamedTensors tensors() const;
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& path) const;
  static GatedResidualNet load(const std::filesystem::path& path);

 private:
  Tensor run(const ConditioningPack& pack, const GateMask& gates, BlockTrace* trace) const;
  Var bind(Tape& tape, const Parameter& p, bool trainable) const;
  Var fused_embedding(Tape& tape, std::span<const int> tokens, bool trainable) const;
  Var input_state(Tape& tape, Var e_fused, const Tensor& m_ref, const Tensor& x_t,
                  bool trainable) const;
  Var time_context(Tape& tape, double t, bool trainable) const;
  Var block_update(Tape& tape, int k, Var z, Var ctx, bool trainable) const;
  Var output(Tape& tape, Var z, bool trainable) const;
  void check_finite(const Tensor& z, int layer) const;

  BackboneConfig config_;
  std::uint64_t seed_;
  Tensor interp_;      // T x cond_length
  Tensor positional_;  // T x D
  Parameter embed_;
  Parameter in_w_, in_b_;
  Parameter time_w_, time_b_;
  std::vector<Block> blocks_;
  Parameter head_w_, head_b_;
};

/// Half-pixel linear resampling matrix mapping `source` steps onto `target` frames.
Tensor interpolation_matrix(int target, int source);
Tensor sinusoidal_embedding(double position, int width);

}  // namespace flowprobe
