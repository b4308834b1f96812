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

#include "flowprobe/teachers.hpp"

#include <algorithm>
#include <cmath>

#include "flowprobe/error.hpp"

namespace flowprobe {

namespace {

constexpr double kTeacherGain = 1.5;

// y = x·W + b for a rank-1 or rank-2 x, returned with x's row count.
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t rows = x.rows(), in = x.cols(), out = w.cols();
  if (w.shape()[0] != in || b.numel() != out) {
    throw DimensionError("dense layer expects input width " + std::to_string(w.shape()[0]) +
                         ", got " + shape_str(x.shape()));
  }
  Tensor y({rows, out});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out; ++j) {
      double acc = b[j];
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w[i * out + j];
      y[r * out + j] = acc;
    }
  return y;
}

void tanh_inplace(Tensor& x) {
  for (double& v : x.data()) v = std::tanh(v);
}

Tensor gaussian(Rng& rng, std::size_t rows, std::size_t cols, double gain) {
  return rng.normal_tensor({rows, cols}, gain / std::sqrt(static_cast<double>(rows)));
}

}  // namespace

TeacherEncoder::TeacherEncoder(Domain domain, const GroundTruthProcess& gt,
                               const TeacherConfig& config, std::uint64_t seed)
    : domain_(domain), seed_(seed) {
  if (config.d_teacher < 1 || config.hidden < 1 || config.calibration_samples < 2) {
    throw ConfigError("teacher needs d_teacher >= 1, hidden >= 1, calibration_samples >= 2");
  }
  const Rng root = Rng(seed).split("teacher").split(domain_name(domain));
  const auto n_mel = static_cast<std::size_t>(gt.config.n_mel);
  const auto hidden = static_cast<std::size_t>(config.hidden);
  const auto dt = static_cast<std::size_t>(config.d_teacher);

  Rng wr = root.split("weights");
  w1_ = gaussian(wr, n_mel, hidden, kTeacherGain);
  b1_ = wr.normal_tensor({1, hidden}, 0.1);
  w2_ = gaussian(wr, hidden, dt, kTeacherGain);
  b2_ = wr.normal_tensor({1, dt}, 0.1);

  // Standardisation statistics from calibration draws of this teacher's domain.
  const Rng cal = root.split("calibration");
  const auto n = static_cast<std::size_t>(config.calibration_samples);
  std::vector<Tensor> pooled;
  std::vector<Tensor> targets;
  for (std::size_t s = 0; s < n; ++s) {
    Sample smp = synth_sample(gt, domain, cal.split(s).key());
    pooled.push_back(mean_pool_time(smp.target));
    targets.push_back(std::move(smp.target));
  }
  shift_ = Tensor({1, n_mel});
  for (const auto& p : pooled)
    for (std::size_t j = 0; j < n_mel; ++j) shift_[j] += p[j];
  for (std::size_t j = 0; j < n_mel; ++j) shift_[j] /= static_cast<double>(n);

  inv_scale_ = Tensor({1, n_mel});
  frame_inv_scale_ = Tensor({1, n_mel});
  std::size_t frames = 0;
  for (const auto& p : pooled)
    for (std::size_t j = 0; j < n_mel; ++j) inv_scale_[j] += (p[j] - shift_[j]) * (p[j] - shift_[j]);
  for (const auto& x : targets)
    for (std::size_t r = 0; r < x.rows(); ++r, ++frames)
      for (std::size_t j = 0; j < n_mel; ++j) {
        const double d = x.at(r, j) - shift_[j];
        frame_inv_scale_[j] += d * d;
      }
  for (std::size_t j = 0; j < n_mel; ++j) {
    inv_scale_[j] = 1.0 / std::sqrt(inv_scale_[j] / static_cast<double>(n - 1) + 1e-12);
    frame_inv_scale_[j] =
        1.0 / std::sqrt(frame_inv_scale_[j] / static_cast<double>(frames - 1) + 1e-12);
  }
}

Tensor TeacherEncoder::layers(const Tensor& rows) const {
  Tensor h = dense(rows, w1_, b1_);
  tanh_inplace(h);
  Tensor y = dense(h, w2_, b2_);
  tanh_inplace(y);
  return y;
}

Tensor TeacherEncoder::encode(const Tensor& x0) const {
  if (x0.rank() != 2 || x0.cols() != shift_.numel()) {
    throw DimensionError("teacher expects T x " + std::to_string(shift_.numel()) + " input, got " +
                         shape_str(x0.shape()));
  }
  Tensor u = mean_pool_time(x0).reshaped({1, x0.cols()});
  for (std::size_t j = 0; j < u.numel(); ++j) u[j] = (u[j] - shift_[j]) * inv_scale_[j];
  return layers(u).reshaped({b2_.numel()});
}

Tensor TeacherEncoder::frame_features(const Tensor& x0) const {
  if (x0.rank() != 2 || x0.cols() != shift_.numel()) {
    throw DimensionError("teacher expects T x " + std::to_string(shift_.numel()) + " input, got " +
                         shape_str(x0.shape()));
  }
  Tensor u = x0;
  const std::size_t n = u.cols();
  for (std::size_t r = 0; r < u.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) u.at(r, j) = (u.at(r, j) - shift_[j]) * frame_inv_scale_[j];
  return layers(u);
}

binio::NamedTensors TeacherEncoder::tensors() const {
  const std::string p = std::string("teacher.") + domain_name(domain_) + ".";
  return {{p + "shift", &shift_},       {p + "inv_scale", &inv_scale_},
          {p + "frame_inv_scale", &frame_inv_scale_},
          {p + "w1", &w1_},             {p + "b1", &b1_},
          {p + "w2", &w2_},             {p + "b2", &b2_}};
}

std::uint64_t TeacherEncoder::checksum() const { return binio::checksum(tensors()); }

TeacherBundle TeacherBundle::make(std::uint64_t seed, const GroundTruthProcess& gt,
                                  const TeacherConfig& config) {
  return TeacherBundle{TeacherEncoder(Domain::Speech, gt, config, seed),
                       TeacherEncoder(Domain::Audio, gt, config, seed)};
}

std::uint64_t TeacherBundle::checksum() const {
  auto all = speech.tensors();
  for (auto& e : audio.tensors()) all.push_back(e);
  return binio::checksum(all);
}

Tensor descriptor(const Tensor& h) {
  return layer_norm(mean_pool_time(h), kDescriptorEps);
}

Var descriptor(Var h) { return ad::layer_norm(ad::mean_rows(h), kDescriptorEps); }

ProjectionHead::ProjectionHead(Domain domain, int width, int d_teacher, Rng rng)
    : domain_(domain) {
  const auto d = static_cast<std::size_t>(width), dt = static_cast<std::size_t>(d_teacher);
  const std::string p = std::string("head.") + domain_name(domain) + ".";
  w_ = Parameter(p + "w", gaussian(rng, d, dt, 1.0));
  b_ = Parameter(p + "b", Tensor({1, dt}));
}

void ProjectionHead::freeze() {
  if (frozen_) return;
  frozen_ = true;
  frozen_checksum_ = checksum();
}

Tensor ProjectionHead::project(const Tensor& hbar) const {
  return dense(hbar.reshaped({1, hbar.numel()}), w_.value, b_.value).reshaped({b_.value.numel()});
}

Var ProjectionHead::project(Tape& tape, Var hbar) {
  const Var w = frozen_ ? tape.constant(w_.value) : tape.param(w_);
  const Var b = frozen_ ? tape.constant(b_.value) : tape.param(b_);
  return ad::add_row(ad::matmul(hbar, w), b);
}

std::vector<Parameter*> ProjectionHead::mutable_parameters() {
  if (frozen_) {
    throw FrozenHeadError(std::string("projection head '") + domain_name(domain_) +
                          "' is frozen; its parameters cannot be updated");
  }
  return {&w_, &b_};
}

void ProjectionHead::assign(const Tensor& w, const Tensor& b) {
  mutable_parameters();
  if (w.shape() != w_.value.shape() || b.shape() != b_.value.shape()) {
    throw DimensionError("projection head weights have shape " + shape_str(w.shape()) + " / " +
                         shape_str(b.shape()) + ", expected " + shape_str(w_.value.shape()) + " / " +
                         shape_str(b_.value.shape()));
  }
  w_.value = w;
  b_.value = b;
}

std::vector<const Parameter*> ProjectionHead::parameters() const { return {&w_, &b_}; }

binio::NamedTensors ProjectionHead::tensors() const {
  return {{w_.name, &w_.value}, {b_.name, &b_.value}};
}

std::uint64_t ProjectionHead::checksum() const { return binio::checksum(tensors()); }

InterfaceHeads InterfaceHeads::make(int width, int d_teacher, Rng rng) {
  return InterfaceHeads{ProjectionHead(Domain::Speech, width, d_teacher, rng.split("speech")),
                        ProjectionHead(Domain::Audio, width, d_teacher, rng.split("audio"))};
}

double bitc(const ProjectionHead& head, const Tensor& hbar, const Tensor& t_emb) {
  return cosine(head.project(hbar), t_emb, 1e-8);
}

PerLayerHead::PerLayerHead(int layer, std::span<const int> selected, int width, int d_teacher,
                           Rng rng)
    : layer_(layer) {
  if (std::find(selected.begin(), selected.end(), layer) == selected.end()) {
    throw ConfigError("no per-layer head allowed for layer " + std::to_string(layer) +
                      ": it is not in the selected set");
  }
  const auto d = static_cast<std::size_t>(width), dt = static_cast<std::size_t>(d_teacher);
  const std::string p = "layer_head." + std::to_string(layer) + ".";
  w1_ = Parameter(p + "w1", gaussian(rng, d, 2 * d, 1.0));
  b1_ = Parameter(p + "b1", Tensor({1, 2 * d}));
  w2_ = Parameter(p + "w2", gaussian(rng, 2 * d, dt, 1.0));
  b2_ = Parameter(p + "b2", Tensor({1, dt}));
}

Tensor PerLayerHead::forward(const Tensor& hbar) const {
  Tensor h = dense(hbar.reshaped({1, hbar.numel()}), w1_.value, b1_.value);
  tanh_inplace(h);
  return dense(h, w2_.value, b2_.value).reshaped({b2_.value.numel()});
}

Var PerLayerHead::forward(Tape& tape, Var hbar) {
  Var h = ad::tanh(ad::add_row(ad::matmul(hbar, tape.param(w1_)), tape.param(b1_)));
  return ad::add_row(ad::matmul(h, tape.param(w2_)), tape.param(b2_));
}

binio::NamedTensors PerLayerHead::tensors() const {
  return {{w1_.name, &w1_.value}, {b1_.name, &b1_.value}, {w2_.name, &w2_.value},
          {b2_.name, &b2_.value}};
}

std::uint64_t PerLayerHead::checksum() const { return binio::checksum(tensors()); }

std::map<int, PerLayerHead> make_layer_heads(std::span<const int> selected, int width,
                                             int d_teacher, Rng rng) {
  std::map<int, PerLayerHead> heads;
  for (int k : selected) {
    heads.emplace(k, PerLayerHead(k, selected, width, d_teacher,
                                  rng.split(static_cast<std::uint64_t>(k))));
  }
  return heads;
}

}  // namespace flowprobe
