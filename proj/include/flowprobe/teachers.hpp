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
#include <map>
#include <span>
#include <vector>

#include "flowprobe/autodiff.hpp"
#include "flowprobe/binio.hpp"
#include "flowprobe/rng.hpp"
#include "flowprobe/synthdata.hpp"

namespace flowprobe {

struct TeacherConfig {
  int d_teacher = 12;
  int hidden = 32;
  int calibration_samples = 64;  // per domain, for the fixed input standardisation
};

/// Frozen encoder: standardise, mean-pool over time, then two tanh layers.
/// Its weights are plain tensors, so no tape can ever produce gradients for them.
class TeacherEncoder {
 public:
  TeacherEncoder(Domain domain, const GroundTruthProcess& gt, const TeacherConfig& config,
                 std::uint64_t seed);

  Domain domain() const { return domain_; }
  std::uint64_t seed() const { return seed_; }
  int dim() const { return static_cast<int>(b2_.numel()); }

  Tensor encode(const Tensor& x0) const;          // [d_teacher]
  Tensor frame_features(const Tensor& x0) const;  // [T x d_teacher]

  binio::NamedTensors tensors() const;
  std::uint64_t checksum() const;

 private:
  Tensor layers(const Tensor& rows) const;

  Domain domain_;
  std::uint64_t seed_;
  Tensor shift_;            // per mel bin
  Tensor inv_scale_;        // for time-pooled input
  Tensor frame_inv_scale_;  // for single frames
  Tensor w1_, b1_, w2_, b2_;
};

struct TeacherBundle {
  TeacherEncoder speech;
  TeacherEncoder audio;

  /// Teacher weights come from `seed`, a stream disjoint from the data process.
  static TeacherBundle make(std::uint64_t seed, const GroundTruthProcess& gt,
                            const TeacherConfig& config = {});
  const TeacherEncoder& for_domain(Domain d) const { return d == Domain::Speech ? speech : audio; }
  std::uint64_t checksum() const;
};

/// descriptor(h) = layer_norm(mean_pool_time(h)), unit gain, zero bias, eps 1e-5.
inline constexpr double kDescriptorEps = 1e-5;
Tensor descriptor(const Tensor& h);
Var descriptor(Var h);

/// Single dense map R^D -> R^{D_teacher}. Trainable until frozen; a frozen
/// head enters tapes as constants and refuses mutable access.
class ProjectionHead {
 public:
  ProjectionHead(Domain domain, int width, int d_teacher, Rng rng);

  Domain domain() const { return domain_; }
  bool frozen() const { return frozen_; }
  void freeze();  // idempotent

  Tensor project(const Tensor& hbar) const;
  Var project(Tape& tape, Var hbar);

  std::vector<Parameter*> mutable_parameters();  // throws FrozenHeadError once frozen
  /// Replaces the weights, e.g. from a saved run. Refused once frozen.
  void assign(const Tensor& w, const Tensor& b);
  std::vector<const Parameter*> parameters() const;
  binio::NamedTensors tensors() const;
  std::uint64_t checksum() const;
  /// Checksum recorded by freeze(); 0 while unfrozen.
  std::uint64_t frozen_checksum() const { return frozen_checksum_; }

 private:
  Domain domain_;
  Parameter w_, b_;
  bool frozen_ = false;
  std::uint64_t frozen_checksum_ = 0;
};

/// The pair of interface heads used by BiT-C and LASP.
struct InterfaceHeads {
  ProjectionHead speech;
  ProjectionHead audio;

  static InterfaceHeads make(int width, int d_teacher, Rng rng);
  ProjectionHead& for_domain(Domain d) { return d == Domain::Speech ? speech : audio; }
  const ProjectionHead& for_domain(Domain d) const { return d == Domain::Speech ? speech : audio; }
  void freeze() {
    speech.freeze();
    audio.freeze();
  }
  bool frozen() const { return speech.frozen() && audio.frozen(); }
};

/// bitc = cosine(project(head, hbar), t_emb, 1e-8)
double bitc(const ProjectionHead& head, const Tensor& hbar, const Tensor& t_emb);

/// Two-layer tanh MLP R^D -> R^{2D} -> R^{D_teacher} owned by one selected layer.
class PerLayerHead {
 public:
  /// Throws ConfigError unless `layer` is in `selected`.
  PerLayerHead(int layer, std::span<const int> selected, int width, int d_teacher, Rng rng);

  int layer() const { return layer_; }
  Tensor forward(const Tensor& hbar) const;
  Var forward(Tape& tape, Var hbar);
  std::vector<Parameter*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }
  binio::NamedTensors tensors() const;
  std::uint64_t checksum() const;

 private:
  int layer_;
  Parameter w1_, b1_, w2_, b2_;
};

/// Heads for exactly the layers in `selected`, keyed by layer.
std::map<int, PerLayerHead> make_layer_heads(std::span<const int> selected, int width,
                                             int d_teacher, Rng rng);

}  // namespace flowprobe
