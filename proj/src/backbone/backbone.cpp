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

#include "flowprobe/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "flowprobe/error.hpp"

namespace flowprobe {

namespace {

constexpr double kBlockNormEps = 1e-6;
constexpr double kTimeScale = 1000.0;

Tensor scaled_normal(Rng& rng, std::size_t rows, std::size_t cols) {
  return rng.normal_tensor({rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)));
}

std::string block_prefix(int k) { return "block" + std::to_string(k) + "."; }

}  // namespace

BackboneConfig BackboneConfig::for_data(const TopologyConfig& data, int layers, int width) {
  BackboneConfig c;
  c.layers = layers;
  c.width = width;
  c.vocab_total = data.vocab_total();
  c.cond_length = data.cond_length();
  c.t_frames = data.t_frames;
  c.n_mel = data.n_mel;
  return c;
}

void BackboneConfig::validate() const {
  if (layers < 1) throw ConfigError("backbone needs at least one block");
  if (width < 2 || heads < 1 || width % heads != 0) {
    throw ConfigError("backbone width " + std::to_string(width) + " must be divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (width % 2 != 0) throw ConfigError("backbone width must be even for the time embedding");
  if (ffn_mult < 1 || cond_embed < 1 || vocab_total < 1 || cond_length < 1 || t_frames < 1 ||
      n_mel < 1) {
    throw ConfigError("backbone sizes must be positive");
  }
}

GateMask all_gates(int layers) { return GateMask(static_cast<std::size_t>(layers), 1); }

GateMask single_gate_off(int layers, int k) {
  if (k < 1 || k > layers) {
    throw ConfigError("gate index " + std::to_string(k) + " outside 1.." + std::to_string(layers));
  }
  GateMask g = all_gates(layers);
  g[static_cast<std::size_t>(k - 1)] = 0;
  return g;
}

Tensor interpolation_matrix(int target, int source) {
  Tensor m({static_cast<std::size_t>(target), static_cast<std::size_t>(source)});
  const double ratio = static_cast<double>(source) / static_cast<double>(target);
  for (int i = 0; i < target; ++i) {
    double pos = (i + 0.5) * ratio - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(source - 1));
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, source - 1);
    const double frac = pos - lo;
    m.at(static_cast<std::size_t>(i), static_cast<std::size_t>(lo)) += 1.0 - frac;
    if (frac > 0.0) m.at(static_cast<std::size_t>(i), static_cast<std::size_t>(hi)) += frac;
  }
  return m;
}

Tensor sinusoidal_embedding(double position, int width) {
  const int half = width / 2;
  Tensor e({1, static_cast<std::size_t>(width)});
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[static_cast<std::size_t>(i)] = std::sin(position * freq);
    e[static_cast<std::size_t>(i + half)] = std::cos(position * freq);
  }
  return e;
}

GatedResidualNet::GatedResidualNet(const BackboneConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  const auto D = static_cast<std::size_t>(config_.width);
  const auto T = static_cast<std::size_t>(config_.t_frames);
  const auto E = static_cast<std::size_t>(config_.cond_embed);
  const auto M = static_cast<std::size_t>(config_.n_mel);
  const auto F = D * static_cast<std::size_t>(config_.ffn_mult);
  const Rng root = Rng(seed).split("backbone");

  interp_ = interpolation_matrix(config_.t_frames, config_.cond_length);
  positional_ = Tensor({T, D});
  for (std::size_t i = 0; i < T; ++i) {
    const Tensor e = sinusoidal_embedding(static_cast<double>(i), config_.width);
    std::copy(e.data().begin(), e.data().end(), positional_.row(i).begin());
  }

  Rng r = root.split("input");
  embed_ = Parameter("embed", r.normal_tensor({static_cast<std::size_t>(config_.vocab_total), E}, 1.0));
  in_w_ = Parameter("in.w", scaled_normal(r, E + 2 * M, D));
  in_b_ = Parameter("in.b", Tensor({1, D}));
  Rng rt = root.split("time");
  time_w_ = Parameter("time.w", scaled_normal(rt, D, D));
  time_b_ = Parameter("time.b", Tensor({1, D}));

  blocks_.resize(static_cast<std::size_t>(config_.layers));
  for (int k = 1; k <= config_.layers; ++k) {
    Block& b = blocks_[static_cast<std::size_t>(k - 1)];
    Rng rb = root.split("block").split(static_cast<std::uint64_t>(k));
    const std::string p = block_prefix(k);
    if (config_.kind == BlockKind::Linear) {
      b.lin = Parameter(p + "lin", rb.normal_tensor({D, D}, 0.1 / std::sqrt(static_cast<double>(D))));
      continue;
    }
    b.mod_w = Parameter(p + "mod.w", Tensor({D, 6 * D}));
    b.mod_b = Parameter(p + "mod.b", Tensor({1, 6 * D}));
    b.qkv_w = Parameter(p + "qkv.w", scaled_normal(rb, D, 3 * D));
    b.qkv_b = Parameter(p + "qkv.b", Tensor({1, 3 * D}));
    b.out_w = Parameter(p + "out.w", scaled_normal(rb, D, D));
    b.out_b = Parameter(p + "out.b", Tensor({1, D}));
    b.ffn1_w = Parameter(p + "ffn1.w", scaled_normal(rb, D, F));
    b.ffn1_b = Parameter(p + "ffn1.b", Tensor({1, F}));
    b.ffn2_w = Parameter(p + "ffn2.w", scaled_normal(rb, F, D));
    b.ffn2_b = Parameter(p + "ffn2.b", Tensor({1, D}));
  }
  Rng rh = root.split("head");
  head_w_ = Parameter("head.w", scaled_normal(rh, D, M));
  head_b_ = Parameter("head.b", Tensor({1, M}));
}

ConditioningPack GatedResidualNet::build_conditioning(std::span<const int> tokens, const Tensor& x_t,
                                                      double t, const Tensor* m_ref) const {
  const Shape frame_shape{static_cast<std::size_t>(config_.t_frames),
                          static_cast<std::size_t>(config_.n_mel)};
  if (x_t.shape() != frame_shape) {
    throw DimensionError("x_t must be " + shape_str(frame_shape) + ", got " + shape_str(x_t.shape()));
  }
  if (m_ref != nullptr && m_ref->shape() != frame_shape) {
    throw DimensionError("m_ref must be " + shape_str(frame_shape));
  }
  ConditioningPack pack;
  pack.tokens.assign(tokens.begin(), tokens.end());
  Tape tape(false);
  pack.e_fused = fused_embedding(tape, tokens, false).value();
  pack.m_ref = m_ref ? *m_ref : Tensor(frame_shape);
  pack.x_t = x_t;
  pack.t = t;
  return pack;
}

Var GatedResidualNet::bind(Tape& tape, const Parameter& p, bool trainable) const {
  return trainable ? tape.param(const_cast<Parameter&>(p)) : tape.constant(p.value);
}

Var GatedResidualNet::fused_embedding(Tape& tape, std::span<const int> tokens, bool trainable) const {
  if (static_cast<int>(tokens.size()) != config_.cond_length) {
    throw DimensionError("expected " + std::to_string(config_.cond_length) +
                         " conditioning tokens, got " + std::to_string(tokens.size()));
  }
  Var table = bind(tape, embed_, trainable);
  Var rows = ad::gather_rows(table, std::vector<int>(tokens.begin(), tokens.end()));
  return ad::matmul(tape.constant(interp_), rows);
}

Var GatedResidualNet::input_state(Tape& tape, Var e_fused, const Tensor& m_ref, const Tensor& x_t,
                                  bool trainable) const {
  Var x = ad::concat_cols({e_fused, tape.constant(m_ref), tape.constant(x_t)});
  Var z = ad::add_row(ad::matmul(x, bind(tape, in_w_, trainable)), bind(tape, in_b_, trainable));
  return ad::add(z, tape.constant(positional_));
}

Var GatedResidualNet::time_context(Tape& tape, double t, bool trainable) const {
  Var temb = tape.constant(sinusoidal_embedding(t * kTimeScale, config_.width));
  return ad::silu(
      ad::add_row(ad::matmul(temb, bind(tape, time_w_, trainable)), bind(tape, time_b_, trainable)));
}

Var GatedResidualNet::block_update(Tape& tape, int k, Var z, Var ctx, bool trainable) const {
  const Block& b = block(k);
  if (config_.kind == BlockKind::Linear) return ad::matmul(z, bind(tape, b.lin, trainable));

  const std::size_t D = static_cast<std::size_t>(config_.width);
  Var mod = ad::add_row(ad::matmul(ctx, bind(tape, b.mod_w, trainable)), bind(tape, b.mod_b, trainable));
  auto chunk = [&](std::size_t i) { return ad::slice_cols(mod, i * D, (i + 1) * D); };
  auto modulate = [&](Var x, Var shift, Var scale) {
    return ad::add_row(ad::mul_row(ad::layer_norm(x, kBlockNormEps), ad::add_scalar(scale, 1.0)),
                       shift);
  };

  Var a1 = modulate(z, chunk(0), chunk(1));
  Var qkv = ad::add_row(ad::matmul(a1, bind(tape, b.qkv_w, trainable)), bind(tape, b.qkv_b, trainable));
  const std::size_t H = static_cast<std::size_t>(config_.heads), dh = D / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < H; ++h) {
    Var q = ad::slice_cols(qkv, h * dh, (h + 1) * dh);
    Var kk = ad::slice_cols(qkv, D + h * dh, D + (h + 1) * dh);
    Var v = ad::slice_cols(qkv, 2 * D + h * dh, 2 * D + (h + 1) * dh);
    Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, kk), inv_sqrt));
    heads.push_back(ad::matmul(attn, v));
  }
  Var mixed = H == 1 ? heads.front() : ad::concat_cols(heads);
  Var att = ad::add_row(ad::matmul(mixed, bind(tape, b.out_w, trainable)), bind(tape, b.out_b, trainable));
  Var u1 = ad::mul_row(att, chunk(2));

  Var a2 = modulate(ad::add(z, u1), chunk(3), chunk(4));
  Var hid = ad::gelu(
      ad::add_row(ad::matmul(a2, bind(tape, b.ffn1_w, trainable)), bind(tape, b.ffn1_b, trainable)));
  Var ffn = ad::add_row(ad::matmul(hid, bind(tape, b.ffn2_w, trainable)), bind(tape, b.ffn2_b, trainable));
  Var u2 = ad::mul_row(ffn, chunk(5));
  return ad::add(u1, u2);
}

Var GatedResidualNet::output(Tape& tape, Var z, bool trainable) const {
  return ad::add_row(ad::matmul(z, bind(tape, head_w_, trainable)), bind(tape, head_b_, trainable));
}

void GatedResidualNet::check_finite(const Tensor& z, int layer) const {
  if (!z.all_finite()) {
    throw NumericError("non-finite activation at layer " + std::to_string(layer));
  }
}

Tensor GatedResidualNet::run(const ConditioningPack& pack, const GateMask& gates,
                             BlockTrace* trace) const {
  if (gates.size() != static_cast<std::size_t>(config_.layers)) {
    throw ConfigError("gate mask has " + std::to_string(gates.size()) + " entries, expected " +
                      std::to_string(config_.layers));
  }
  Tape tape(false);
  Var z = input_state(tape, tape.constant(pack.e_fused), pack.m_ref, pack.x_t, false);
  check_finite(z.value(), 0);
  if (trace) {
    trace->states.assign(1, z.value());
    trace->updates.clear();
  }
  Var ctx = config_.kind == BlockKind::Transformer ? time_context(tape, pack.t, false) : Var{};
  for (int k = 1; k <= config_.layers; ++k) {
    if (gates[static_cast<std::size_t>(k - 1)]) {
      Var f = block_update(tape, k, z, ctx, false);
      z = ad::add(z, f);
      check_finite(z.value(), k);
      if (trace) trace->updates.push_back(f.value());
    } else if (trace) {
      trace->updates.emplace_back(z.shape());
    }
    if (trace) trace->states.push_back(z.value());
  }
  Var v = output(tape, z, false);
  check_finite(v.value(), config_.layers + 1);
  return v.value();
}

Tensor GatedResidualNet::forward(const ConditioningPack& pack) const {
  return run(pack, all_gates(config_.layers), nullptr);
}

Tensor GatedResidualNet::forward_gated(const ConditioningPack& pack, const GateMask& gates) const {
  return run(pack, gates, nullptr);
}

Tensor GatedResidualNet::forward_traced(const ConditioningPack& pack, BlockTrace& trace) const {
  return run(pack, all_gates(config_.layers), &trace);
}

Tensor GatedResidualNet::forward_from(const ConditioningPack& pack, const Tensor& z_start,
                                      int start_layer, const GateMask& gates) const {
  if (start_layer < 0 || start_layer > config_.layers) {
    throw ConfigError("start layer " + std::to_string(start_layer) + " outside 0.." +
                      std::to_string(config_.layers));
  }
  if (gates.size() != static_cast<std::size_t>(config_.layers)) {
    throw ConfigError("gate mask length mismatch");
  }
  Tape tape(false);
  Var z = tape.constant(z_start);
  Var ctx = config_.kind == BlockKind::Transformer && start_layer < config_.layers
                ? time_context(tape, pack.t, false)
                : Var{};
  for (int k = start_layer + 1; k <= config_.layers; ++k) {
    if (!gates[static_cast<std::size_t>(k - 1)]) continue;
    z = ad::add(z, block_update(tape, k, z, ctx, false));
    check_finite(z.value(), k);
  }
  return output(tape, z, false).value();
}

Tensor GatedResidualNet::head(const Tensor& z_last) const {
  Tape tape(false);
  return output(tape, tape.constant(z_last), false).value();
}

double GatedResidualNet::jacobian_sensitivity(const ConditioningPack& pack, int k, int n_probes,
                                              std::uint64_t seed, double h) const {
  if (k < 1 || k > config_.layers) {
    throw ConfigError("sensitivity layer " + std::to_string(k) + " outside 1.." +
                      std::to_string(config_.layers));
  }
  if (n_probes < 1 || h <= 0.0) throw ConfigError("sensitivity needs n_probes >= 1 and h > 0");
  BlockTrace trace;
  forward_traced(pack, trace);
  const Tensor& zk = trace.z(k);
  const GateMask gates = all_gates(config_.layers);
  const Tensor base = forward_from(pack, zk, k, gates);
  const Rng root = Rng(seed).split("sensitivity");
  double total = 0.0;
  for (int p = 0; p < n_probes; ++p) {
    Rng r = root.split(static_cast<std::uint64_t>(p));
    Tensor u = r.normal_tensor(zk.shape(), 1.0);
    double norm = 0.0;
    for (double x : u.data()) norm += x * x;
    norm = std::sqrt(norm);
    Tensor moved = zk;
    for (std::size_t i = 0; i < u.numel(); ++i) moved[i] += h * u[i] / norm;
    const Tensor out = forward_from(pack, moved, k, gates);
    double d = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) d += (out[i] - base[i]) * (out[i] - base[i]);
    total += std::sqrt(d) / h;
  }
  return total / n_probes;
}

TapeForward GatedResidualNet::forward_tape(Tape& tape, std::span<const int> tokens, const Tensor& x_t,
                                           double t, const GateMask& gates) {
  if (gates.size() != static_cast<std::size_t>(config_.layers)) {
    throw ConfigError("gate mask length mismatch");
  }
  const Tensor m_ref({static_cast<std::size_t>(config_.t_frames), static_cast<std::size_t>(config_.n_mel)});
  TapeForward out;
  Var z = input_state(tape, fused_embedding(tape, tokens, true), m_ref, x_t, true);
  out.states.push_back(z);
  Var ctx = config_.kind == BlockKind::Transformer ? time_context(tape, t, true) : Var{};
  for (int k = 1; k <= config_.layers; ++k) {
    if (gates[static_cast<std::size_t>(k - 1)]) {
      Var f = block_update(tape, k, z, ctx, true);
      z = ad::add(z, f);
      out.updates.push_back(f);
    } else {
      out.updates.emplace_back();
    }
    out.states.push_back(z);
  }
  out.velocity = output(tape, z, true);
  check_finite(out.velocity.value(), config_.layers + 1);
  return out;
}

std::vector<Parameter*> GatedResidualNet::parameters() {
  std::vector<Parameter*> ps{&embed_, &in_w_, &in_b_};
  if (config_.kind == BlockKind::Transformer) {
    ps.push_back(&time_w_);
    ps.push_back(&time_b_);
  }
  for (Block& b : blocks_) {
    for (Parameter* p : {&b.mod_w, &b.mod_b, &b.qkv_w, &b.qkv_b, &b.out_w, &b.out_b, &b.ffn1_w,
                         &b.ffn1_b, &b.ffn2_w, &b.ffn2_b, &b.lin}) {
      if (!p->value.empty()) ps.push_back(p);
    }
  }
  ps.push_back(&head_w_);
  ps.push_back(&head_b_);
  return ps;
}

std::vector<const Parameter*> GatedResidualNet::parameters() const {
  auto ps = const_cast<GatedResidualNet*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

binio::NamedTensors GatedResidualNet::tensors() const {
  binio::NamedTensors out;
  for (const Parameter* p : parameters()) out.emplace_back(p->name, &p->value);
  return out;
}

std::uint64_t GatedResidualNet::checksum() const { return binio::checksum(tensors()); }

}  // namespace flowprobe
