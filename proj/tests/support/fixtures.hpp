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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "flowprobe/backbone.hpp"
#include "flowprobe/protocol.hpp"
#include "flowprobe/rng.hpp"
#include "flowprobe/synthdata.hpp"
#include "flowprobe/tensor.hpp"

// Small configurations and independent reference computations shared by the
// unit and acceptance tests.
namespace fpt {

using namespace flowprobe;

inline TopologyConfig tiny_topology(Topology topology = Topology::A) {
  TopologyConfig c;
  c.topology = topology;
  c.vocab = 8;
  c.codebook = 8;
  c.embed_dim = 4;
  c.t_tok = 6;
  c.t_frames = 6;
  c.n_mel = 4;
  c.decoder_hidden = 6;
  return c;
}

inline BackboneConfig tiny_backbone(int layers = 2, int width = 8, BlockKind kind = BlockKind::Transformer,
                                    Topology topology = Topology::A) {
  BackboneConfig b = BackboneConfig::for_data(tiny_topology(topology), layers, width);
  b.heads = 2;
  b.ffn_mult = 2;
  b.cond_embed = 4;
  b.kind = kind;
  return b;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  return Rng(seed).normal_tensor(std::move(shape), stddev);
}

inline std::vector<int> random_tokens(int n, int vocab, std::uint64_t seed) {
  Rng r(seed);
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(static_cast<int>(r.below(static_cast<std::size_t>(vocab))));
  return out;
}

/// Gives every adaLN-Zero modulation a non-zero value so blocks contribute.
inline void wake_modulation(GatedResidualNet& net, std::uint64_t seed, double stddev = 0.3) {
  for (int k = 1; k <= net.layers(); ++k) {
    auto& b = net.block(k);
    b.mod_w.value = random_tensor(b.mod_w.value.shape(), seed + 2 * static_cast<std::uint64_t>(k), stddev);
    b.mod_b.value = random_tensor(b.mod_b.value.shape(), seed + 2 * static_cast<std::uint64_t>(k) + 1, stddev);
  }
}

inline Tensor plain_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

inline double frob(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return std::sqrt(s);
}

inline Tensor minus(const Tensor& a, const Tensor& b) {
  Tensor c = a;
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] -= b[i];
  return c;
}

/// Velocity of a linear residual stack z <- z + z A_k (gated), v = z H + 1 b.
inline Tensor linear_stack_velocity(const Tensor& z0, const std::vector<Tensor>& A, const Tensor& H,
                                    const Tensor& b, const GateMask& gates) {
  Tensor z = z0;
  for (std::size_t k = 0; k < A.size(); ++k) {
    if (!gates[k]) continue;
    const Tensor f = plain_matmul(z, A[k]);
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] += f[i];
  }
  Tensor v = plain_matmul(z, H);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) v.at(r, c) += b[c];
  return v;
}

/// ||v without block k - v|| / (||v|| + eps) from the closed form of a linear stack.
inline double linear_foga(const Tensor& z0, const std::vector<Tensor>& A, const Tensor& H, const Tensor& b, int k,
                          double eps) {
  const int L = static_cast<int>(A.size());
  const Tensor v = linear_stack_velocity(z0, A, H, b, all_gates(L));
  const Tensor va = linear_stack_velocity(z0, A, H, b, single_gate_off(L, k));
  return frob(minus(va, v)) / (frob(v) + eps);
}

/// Loads the block maps of a Linear-kind network.
inline std::vector<Tensor> linear_maps(const GatedResidualNet& net) {
  std::vector<Tensor> A;
  for (int k = 1; k <= net.layers(); ++k) A.push_back(net.block(k).lin.value);
  return A;
}

/// A protocol small enough to run in well under a second.
inline ProtocolConfig tiny_protocol_config(std::uint64_t seed = 1) {
  ProtocolConfig c;
  c.seed = seed;
  c.data = tiny_topology();
  c.n_per_domain = 20;
  c.layers = 3;
  c.width = 8;
  c.heads = 2;
  c.ffn_mult = 2;
  c.cond_embed = 4;
  c.teacher.hidden = 8;
  c.teacher.calibration_samples = 8;
  c.batch_size = 4;
  c.k = 2;
  c.t_bins = 2;
  c.probe_budget = 2;
  c.euler_steps = 2;
  c.evals_per_epoch = 1;
  c.eval_draws = 1;
  return c;
}

/// Fresh directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("flowprobe-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fpt
