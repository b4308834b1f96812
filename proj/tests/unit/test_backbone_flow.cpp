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


#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "fixtures.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/flow.hpp"

using namespace flowprobe;

namespace {

ConditioningPack pack_for(const GatedResidualNet& net, std::uint64_t seed, double t = 0.4) {
  const BackboneConfig& c = net.config();
  const auto tokens = fpt::random_tokens(c.cond_length, c.vocab_total, seed);
  const Tensor x = fpt::random_tensor({static_cast<std::size_t>(c.t_frames), static_cast<std::size_t>(c.n_mel)},
                                      seed + 100);
  return net.build_conditioning(tokens, x, t);
}

const Tensor& embed_table(const GatedResidualNet& net) { return net.parameters().front()->value; }

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::fabs(x));
  return m;
}

// Unit direction p of the sensitivity probe stream.
Tensor unit_direction(std::uint64_t seed, int p, const Shape& shape) {
  Tensor u = Rng(seed).split("sensitivity").split(static_cast<std::uint64_t>(p)).normal_tensor(shape, 1.0);
  const double n = fpt::frob(u);
  for (double& x : u.data()) x /= n;
  return u;
}

}  // namespace

TEST_CASE("conditioning interpolation") {
  SUBCASE("topology A with T_tok == T is the identity") {
    GatedResidualNet net(fpt::tiny_backbone(), 1);
    const ConditioningPack p = pack_for(net, 3);
    const Tensor& E = embed_table(net);
    for (std::size_t r = 0; r < p.e_fused.rows(); ++r)
      for (std::size_t c = 0; c < p.e_fused.cols(); ++c)
        CHECK(std::fabs(p.e_fused.at(r, c) - E.at(static_cast<std::size_t>(p.tokens[r]), c)) < 1e-15);
    CHECK(p.m_ref == Tensor(p.x_t.shape()));
  }
  SUBCASE("constant tokens give equal rows") {
    GatedResidualNet net(fpt::tiny_backbone(), 1);
    const ConditioningPack p = net.build_conditioning(std::vector<int>(6, 0), Tensor({6, 4}), 0.0);
    for (std::size_t r = 1; r < p.e_fused.rows(); ++r)
      for (std::size_t c = 0; c < p.e_fused.cols(); ++c) CHECK(p.e_fused.at(r, c) == p.e_fused.at(0, c));
  }
  SUBCASE("topology B blends the interleaved pair of each frame") {
    const BackboneConfig cfg = fpt::tiny_backbone(2, 8, BlockKind::Transformer, Topology::B);
    REQUIRE(cfg.cond_length == 12);
    GatedResidualNet net(cfg, 1);
    const auto primary = fpt::random_tokens(6, 8, 4), dense = fpt::random_tokens(6, 8, 5);
    const auto seq = interleave(primary, dense, 8);
    const ConditioningPack p = net.build_conditioning(seq, Tensor({6, 4}), 0.2);
    const Tensor& E = embed_table(net);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 4; ++c) {
        const double want = 0.5 * (E.at(static_cast<std::size_t>(primary[i]), c) +
                                   E.at(static_cast<std::size_t>(8 + dense[i]), c));
        CHECK(std::fabs(p.e_fused.at(i, c) - want) < 1e-14);
      }
  }
  SUBCASE("bad inputs") {
    GatedResidualNet net(fpt::tiny_backbone(), 1);
    std::vector<int> tokens(6, 0);
    tokens[2] = 16;
    CHECK_THROWS_AS(net.build_conditioning(tokens, Tensor({6, 4}), 0.0), DimensionError);
    CHECK_THROWS_AS(net.build_conditioning(std::vector<int>(6, 0), Tensor({5, 4}), 0.0), DimensionError);
  }
}

TEST_CASE("adaLN-Zero initialisation makes every update vanish") {
  GatedResidualNet net(fpt::tiny_backbone(3), 2);
  const ConditioningPack p = pack_for(net, 1);
  BlockTrace tr;
  const Tensor v = net.forward_traced(p, tr);
  for (int k = 1; k <= 3; ++k) CHECK(max_abs(tr.f(k)) == 0.0);
  CHECK(v == net.head(tr.z(0)));
  CHECK(net.forward_gated(p, single_gate_off(3, 2)) == v);
}

TEST_CASE("traced forward, gates and telescoping") {
  GatedResidualNet net(fpt::tiny_backbone(4), 2);
  fpt::wake_modulation(net, 9);
  const ConditioningPack p = pack_for(net, 1);
  BlockTrace tr;
  const Tensor v = net.forward_traced(p, tr);
  CHECK(v == net.forward(p));
  CHECK(net.forward_gated(p, all_gates(4)) == v);
  CHECK(tr.states.size() == 5);

  Tensor sum = tr.z(0);
  for (int k = 1; k <= 4; ++k)
    for (std::size_t i = 0; i < sum.numel(); ++i) sum[i] += tr.f(k)[i];
  CHECK(max_abs(fpt::minus(tr.z(4), sum)) < 1e-9);
  CHECK(net.head(tr.z(4)) == v);
  CHECK(net.forward_from(p, tr.z(2), 2, all_gates(4)) == v);

  Tensor removed = tr.z(4);
  for (std::size_t i = 0; i < removed.numel(); ++i) removed[i] -= tr.f(1)[i];
  CHECK(max_abs(fpt::minus(net.head(removed), net.forward_gated(p, single_gate_off(4, 1)))) > 1e-6);

  CHECK_THROWS_AS(net.forward_gated(p, GateMask(3, 1)), ConfigError);
  CHECK_THROWS_AS(single_gate_off(4, 0), ConfigError);
  const std::uint64_t before = net.checksum();
  net.forward_gated(p, single_gate_off(4, 3));
  CHECK(net.checksum() == before);
}

TEST_CASE("a single-layer net is the head on z0 + f1") {
  GatedResidualNet net(fpt::tiny_backbone(1), 3);
  fpt::wake_modulation(net, 4);
  const ConditioningPack p = pack_for(net, 2);
  BlockTrace tr;
  const Tensor v = net.forward_traced(p, tr);
  Tensor z = tr.z(0);
  for (std::size_t i = 0; i < z.numel(); ++i) z[i] += tr.f(1)[i];
  CHECK(max_abs(fpt::minus(net.head(z), v)) < 1e-12);
}

TEST_CASE("a zeroed layer is a null intervention") {
  GatedResidualNet net(fpt::tiny_backbone(3), 3);
  fpt::wake_modulation(net, 4);
  net.block(2).mod_w.value = Tensor(net.block(2).mod_w.value.shape());
  net.block(2).mod_b.value = Tensor(net.block(2).mod_b.value.shape());
  const ConditioningPack p = pack_for(net, 2);
  CHECK(net.forward_gated(p, single_gate_off(3, 2)) == net.forward(p));
}

TEST_CASE("linear stack matches its closed form") {
  GatedResidualNet net(fpt::tiny_backbone(2, 8, BlockKind::Linear), 5);
  const ConditioningPack p = pack_for(net, 7);
  BlockTrace tr;
  net.forward_traced(p, tr);
  const auto A = fpt::linear_maps(net);
  const Tensor H = net.head_weight().value, b = net.head_bias().value;
  for (const GateMask& g : {all_gates(2), single_gate_off(2, 1), single_gate_off(2, 2), GateMask{0, 0}}) {
    CHECK(max_abs(fpt::minus(net.forward_gated(p, g), fpt::linear_stack_velocity(tr.z(0), A, H, b, g))) < 1e-10);
  }
}

TEST_CASE("jacobian sensitivity against explicit oracles") {
  const int L = 4;
  GatedResidualNet net(fpt::tiny_backbone(L, 8, BlockKind::Linear), 5);
  for (int k = 1; k <= L; ++k) {
    auto& lin = net.block(k).lin.value;
    lin = fpt::random_tensor(lin.shape(), 40 + static_cast<std::uint64_t>(k), 0.3);
  }
  const ConditioningPack p = pack_for(net, 7);
  BlockTrace tr;
  net.forward_traced(p, tr);
  const Tensor H = net.head_weight().value;
  const std::uint64_t seed = 17;

  auto oracle = [&](int k, int probes) {
    Tensor M({8, 8});
    for (std::size_t i = 0; i < 8; ++i) M.at(i, i) = 1.0;
    for (int j = k + 1; j <= L; ++j) {
      Tensor step = net.block(j).lin.value;
      for (std::size_t i = 0; i < 8; ++i) step.at(i, i) += 1.0;
      M = fpt::plain_matmul(M, step);
    }
    const Tensor MH = fpt::plain_matmul(M, H);
    double total = 0.0;
    for (int q = 0; q < probes; ++q) total += fpt::frob(fpt::plain_matmul(unit_direction(seed, q, tr.z(k).shape()), MH));
    return total / probes;
  };

  for (int k = 1; k <= L; ++k) {
    const double s = net.jacobian_sensitivity(p, k, 64, seed);
    CHECK(std::fabs(s - oracle(k, 64)) <= 0.01 * oracle(k, 64));
  }
  CHECK(std::fabs(net.jacobian_sensitivity(p, L, 8, seed) - oracle(L, 8)) <= 1e-6 * oracle(L, 8));

  for (int j = 3; j <= L; ++j) net.block(j).lin.value = Tensor({8, 8});
  double gain = 0.0;
  for (int q = 0; q < 16; ++q) gain += fpt::frob(fpt::plain_matmul(unit_direction(seed, q, tr.z(2).shape()), H));
  gain /= 16;
  CHECK(std::fabs(net.jacobian_sensitivity(p, 2, 16, seed) - gain) <= 0.02 * gain);

  CHECK_THROWS_AS(net.jacobian_sensitivity(p, 0, 4, seed), ConfigError);
  CHECK_THROWS_AS(net.jacobian_sensitivity(p, L + 1, 4, seed), ConfigError);
}

TEST_CASE("finite differences converge at first order") {
  GatedResidualNet net(fpt::tiny_backbone(3), 6);
  fpt::wake_modulation(net, 11, 0.5);
  const ConditioningPack p = pack_for(net, 8);
  BlockTrace tr;
  net.forward_traced(p, tr);
  const GateMask g = all_gates(3);
  const Tensor base = net.forward_from(p, tr.z(1), 1, g);
  const Tensor u = unit_direction(3, 0, tr.z(1).shape());
  auto quotient = [&](double h) {
    Tensor moved = tr.z(1);
    for (std::size_t i = 0; i < moved.numel(); ++i) moved[i] += h * u[i];
    Tensor q = fpt::minus(net.forward_from(p, moved, 1, g), base);
    for (double& x : q.data()) x /= h;
    return q;
  };
  const Tensor ref = quotient(1e-7);
  const double e1 = fpt::frob(fpt::minus(quotient(2e-2), ref));
  const double e2 = fpt::frob(fpt::minus(quotient(1e-2), ref));
  CHECK(e1 > 0.0);
  CHECK(e1 / e2 >= 1.8);
}

TEST_CASE("tape forward agrees with the plain forward") {
  GatedResidualNet net(fpt::tiny_backbone(3), 6);
  fpt::wake_modulation(net, 11);
  const ConditioningPack p = pack_for(net, 8);
  Tape tape;
  const TapeForward tf = net.forward_tape(tape, p.tokens, p.x_t, p.t, single_gate_off(3, 2));
  CHECK(max_abs(fpt::minus(tf.velocity.value(), net.forward_gated(p, single_gate_off(3, 2)))) < 1e-12);
  CHECK(tf.states.size() == 4);
}

TEST_CASE("checkpoints round trip byte for byte") {
  GatedResidualNet net(fpt::tiny_backbone(3), 6);
  fpt::wake_modulation(net, 11);
  fpt::TempDir dir("ckpt");
  net.save(dir.path / "a.ckpt");
  net.save(dir.path / "b.ckpt");
  auto bytes = [](const std::filesystem::path& f) {
    std::ifstream in(f, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(bytes(dir.path / "a.ckpt") == bytes(dir.path / "b.ckpt"));
  CHECK(bytes(dir.path / "a.ckpt").rfind("FPCK", 0) == 0);
  const GatedResidualNet back = GatedResidualNet::load(dir.path / "a.ckpt");
  CHECK(back.checksum() == net.checksum());
  const ConditioningPack p = pack_for(net, 8);
  CHECK(back.forward(p) == net.forward(p));
  CHECK(GatedResidualNet(fpt::tiny_backbone(3), 6).checksum() == GatedResidualNet(fpt::tiny_backbone(3), 6).checksum());

  {
    std::ofstream out(dir.path / "bad.ckpt", std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_AS(GatedResidualNet::load(dir.path / "bad.ckpt"), IoError);
}

TEST_CASE("ot path and analytic velocity") {
  const Tensor x0 = fpt::random_tensor({3, 2}, 1), eps = fpt::random_tensor({3, 2}, 2);
  CHECK(ot_path(x0, eps, 0.0) == eps);
  CHECK(ot_path(x0, eps, 1.0) == x0);
  CHECK(ot_path(Tensor::vector({2}), Tensor::vector({0}), 0.5)[0] == 1.0);
  for (double t : {0.0, 0.3, 0.77}) {
    const Tensor v = analytic_velocity(ot_path(x0, eps, t), t, x0);
    CHECK(max_abs(fpt::minus(v, fpt::minus(x0, eps))) < 1e-12);
  }
  CHECK(max_abs(analytic_velocity(x0, 0.6, x0)) == 0.0);
  const double r = fpt::frob(analytic_velocity(eps, 0.99, x0)) / fpt::frob(analytic_velocity(eps, 0.9, x0));
  CHECK(r == doctest::Approx(10.0).epsilon(1e-9));
  CHECK_THROWS_AS(analytic_velocity(eps, 1.0, x0), NumericError);
}

TEST_CASE("euler sampler") {
  const Tensor x0 = fpt::random_tensor({3, 2}, 1), eps = fpt::random_tensor({3, 2}, 2);
  for (int n : {1, 2, 5, 16}) {
    const Tensor out = euler_sample([&](const Tensor& x, double t) { return analytic_velocity(x, t, x0); }, eps, n);
    CHECK(max_abs(fpt::minus(out, x0)) < 1e-9);
  }
  CHECK(euler_sample([](const Tensor& x, double) { return Tensor(x.shape()); }, eps, 7) == eps);
  const Tensor bar = fpt::random_tensor({3, 2}, 3);
  Tensor want = eps;
  for (std::size_t i = 0; i < want.numel(); ++i) want[i] += bar[i];
  CHECK(max_abs(fpt::minus(euler_sample([&](const Tensor&, double) { return bar; }, eps, 1), want)) < 1e-15);

  auto decay = [](const Tensor& x, double) {
    Tensor v = x;
    for (double& e : v.data()) e = -e;
    return v;
  };
  Tensor exact = eps;
  for (double& e : exact.data()) e *= std::exp(-1.0);
  double prev = INFINITY;
  for (int n : {4, 8, 16, 32}) {
    const double err = max_abs(fpt::minus(euler_sample(decay, eps, n), exact));
    CHECK(err <= prev);
    prev = err;
  }
  CHECK_THROWS_AS(euler_sample(decay, eps, 0), ConfigError);
  CHECK_THROWS_AS(euler_sample([](const Tensor& x, double) {
                    Tensor v = x;
                    v[0] = INFINITY;
                    return v;
                  }, eps, 3),
                  NumericError);
}

TEST_CASE("flow matching loss") {
  const GroundTruthProcess gt = make_ground_truth(3, fpt::tiny_topology());
  const Corpus c = make_corpus(gt, Topology::A, 20, 4, nullptr);
  std::vector<const Sample*> ptrs;
  for (std::size_t i = 0; i < 6; ++i) ptrs.push_back(&c.train[i]);
  const FlowBatch batch = make_flow_batch(ptrs, 8, Rng(5), 1.0);
  REQUIRE(batch.items.size() == 6);
  for (const FlowItem& it : batch.items) {
    CHECK(it.t >= 0.0);
    CHECK(it.t < 1.0);
    CHECK(max_abs(fpt::minus(it.xt, ot_path(it.x0, it.eps, it.t))) == 0.0);
  }
  const FlowBatch again = make_flow_batch(ptrs, 8, Rng(5), 1.0);
  CHECK(again.items[3].eps == batch.items[3].eps);

  CHECK(fm_loss([](const FlowItem& it) { return it.target(); }, batch) == 0.0);
  CHECK(fm_loss([](const FlowItem& it) { return analytic_velocity(it.xt, it.t, it.x0); }, batch) < 1e-12);
  double oracle = 0.0;
  std::size_t n = 0;
  for (const FlowItem& it : batch.items)
    for (std::size_t i = 0; i < it.x0.numel(); ++i, ++n) oracle += (it.x0[i] - it.eps[i]) * (it.x0[i] - it.eps[i]);
  oracle /= static_cast<double>(n);
  CHECK(std::fabs(fm_loss([](const FlowItem& it) { return Tensor(it.x0.shape()); }, batch) - oracle) < 1e-10);

  for (std::uint64_t s = 0; s < 1000; ++s) {
    const double l = fm_loss([&](const FlowItem& it) { return fpt::random_tensor(it.x0.shape(), s); }, batch);
    CHECK(l >= 0.0);
  }

  GatedResidualNet net(fpt::tiny_backbone(2), 3);
  fpt::wake_modulation(net, 5);
  Tape tape;
  const FlowItem& it = batch.items[0];
  const TapeForward tf = net.forward_tape(tape, it.cond, it.xt, it.t, all_gates(2));
  const double item = fm_item_loss(tape, tf.velocity, it).value()[0];
  FlowBatch one;
  one.items.push_back(it);
  CHECK(std::fabs(item - fm_loss(net, one)) < 1e-12);

  const Tensor e0 = fpt::random_tensor({6, 4}, 9);
  CHECK(sample_net(net, it.cond, e0, 8) == sample_net(net, it.cond, e0, 8));
}
