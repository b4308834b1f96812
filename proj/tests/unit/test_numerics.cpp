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
#include <sstream>

#include "fixtures.hpp"
#include "flowprobe/autodiff.hpp"
#include "flowprobe/binio.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/gradcheck.hpp"
#include "flowprobe/kernels.hpp"
#include "flowprobe/kvtext.hpp"

using namespace flowprobe;

TEST_CASE("matmul examples and loop oracle") {
  const Tensor id = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(matmul(id, m) == m);
  CHECK(matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4})).item() == 11.0);

  const Tensor a = fpt::random_tensor({3, 4}, 1), b = fpt::random_tensor({4, 2}, 2);
  CHECK(max_abs_diff(matmul(a, b), fpt::plain_matmul(a, b)) < 1e-12);
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("gemm variants agree bit for bit") {
  using kernels::Transpose;
  const std::size_t m = 37, n = 29, k = 41;
  const Tensor a = fpt::random_tensor({m, k}, 3), b = fpt::random_tensor({k, n}, 4);
  const Tensor at = fpt::random_tensor({k, m}, 5), bt = fpt::random_tensor({n, k}, 6);
  for (Transpose ta : {Transpose::No, Transpose::Yes})
    for (Transpose tb : {Transpose::No, Transpose::Yes}) {
      const double* pa = ta == Transpose::No ? a.data().data() : at.data().data();
      const double* pb = tb == Transpose::No ? b.data().data() : bt.data().data();
      std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
      kernels::gemm_serial(ta, tb, m, n, k, pa, pb, c1.data(), true);
      kernels::gemm_omp(ta, tb, m, n, k, pa, pb, c2.data(), true);
      CHECK(c1 == c2);
    }
}

TEST_CASE("layer_norm examples") {
  const Tensor ones = Tensor::vector({1, 1, 1}), zeros = Tensor::vector({0, 0, 0});
  const Tensor c = layer_norm(Tensor::vector({5, 5, 5}), ones, zeros, 1e-5);
  for (double v : c.data()) CHECK(v == 0.0);
  const Tensor y = layer_norm(Tensor::vector({1, 3}), Tensor::vector({1, 1}), Tensor::vector({0, 0}), 0.0);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-15));

  const Tensor x = fpt::random_tensor({4, 6}, 7);
  const Tensor g2 = Tensor({6}, 2.0), b1 = Tensor({6}, 1.0);
  const Tensor plain = layer_norm(x, 1e-5), affine = layer_norm(x, g2, b1, 1e-5);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(affine[i] == doctest::Approx(2.0 * plain[i] + 1.0).epsilon(1e-14));

  const Tensor n0 = layer_norm(x, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0.0, var = 0.0;
    for (double v : n0.row(r)) mu += v / 6.0;
    for (double v : n0.row(r)) var += (v - mu) * (v - mu) / 6.0;
    CHECK(std::fabs(mu) < 1e-10);
    CHECK(std::fabs(var - 1.0) < 1e-10);
  }
}

TEST_CASE("mean_pool_time examples") {
  CHECK(mean_pool_time(Tensor::matrix(2, 2, {1, 2, 3, 4})) == Tensor::vector({2, 3}));
  CHECK(mean_pool_time(Tensor::matrix(1, 2, {7, 8})) == Tensor::vector({7, 8}));
  const Tensor h = fpt::random_tensor({5, 3}, 8);
  const Tensor p = mean_pool_time(h);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0;
    for (std::size_t t = 0; t < 5; ++t) s += h.at(t, j);
    CHECK(std::fabs(p[j] - s / 5.0) < 1e-12);
  }
}

TEST_CASE("cosine examples") {
  CHECK(cosine(Tensor::vector({1, 2, 3}), Tensor::vector({1, 2, 3}), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(Tensor::vector({1, 0}), Tensor::vector({0, 1})) == 0.0);
  CHECK(std::fabs(cosine(Tensor::vector({1, 1}), Tensor::vector({1, 0}), 0.0) - 1.0 / std::sqrt(2.0)) < 1e-6);
  const Cosine z = cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0});
  CHECK(z.zero_norm);
  CHECK(z.value == 0.0);
}

TEST_CASE("backward on scalar examples") {
  Tape tape;
  Parameter x("x", Tensor::scalar(3.0));
  Var vx = tape.param(x);
  tape.backward(ad::sum(ad::square(vx)));
  CHECK(tape.grad(vx).item() == 6.0);

  Tape t2;
  Parameter a("a", Tensor::scalar(2.0)), b("b", Tensor::scalar(5.0));
  Var va = t2.param(a), vb = t2.param(b);
  t2.backward(ad::sum(ad::mul(va, vb)));
  CHECK(t2.grad(va).item() == 5.0);
  CHECK(t2.grad(vb).item() == 2.0);
}

TEST_CASE("composite chain matches central differences") {
  const Tensor w = fpt::random_tensor({4, 3}, 9), target = fpt::random_tensor({1, 3}, 10);
  const ScalarFn f = [&](Tape& tape, Var theta) {
    Var h = ad::tanh(ad::matmul(theta, tape.constant(w)));
    return ad::cosine(ad::layer_norm(ad::mean_rows(h), 1e-5), tape.constant(target));
  };
  const GradCheckResult r = grad_check(f, fpt::random_tensor({5, 4}, 11), 1e-5);
  CHECK(r.checked == 20);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("every tape op passes a gradient check") {
  const Tensor other = fpt::random_tensor({3, 4}, 12), row = fpt::random_tensor({1, 4}, 13);
  const std::vector<std::pair<const char*, ScalarFn>> cases = {
      {"matmul_nt", [&](Tape& t, Var x) { return ad::sum(ad::matmul_nt(x, t.constant(other))); }},
      {"sub/mul", [&](Tape& t, Var x) { return ad::sum(ad::mul(ad::sub(x, t.constant(other)), x)); }},
      {"rows", [&](Tape& t, Var x) { return ad::sum(ad::square(ad::mul_row(ad::add_row(x, t.constant(row)), t.constant(row)))); }},
      {"gelu", [](Tape&, Var x) { return ad::sum(ad::gelu(x)); }},
      {"silu", [](Tape&, Var x) { return ad::sum(ad::silu(x)); }},
      {"softmax", [&](Tape& t, Var x) { return ad::sum(ad::mul(ad::softmax_rows(x), t.constant(other))); }},
      {"layer_norm affine",
       [&](Tape& t, Var x) {
         return ad::sum(ad::mul(ad::layer_norm(x, t.constant(row), t.constant(row), 1e-5), t.constant(other)));
       }},
      {"slice/concat",
       [](Tape&, Var x) {
         return ad::sum(ad::square(ad::concat_cols({ad::slice_cols(x, 2, 4), ad::scale(ad::slice_cols(x, 0, 1), 3.0)})));
       }},
      {"mean/add_scalar", [](Tape&, Var x) { return ad::mean(ad::square(ad::add_scalar(x, 0.5))); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(grad_check(f, fpt::random_tensor({3, 4}, 14), 1e-5).max_rel_error < 1e-6);
  }
}

TEST_CASE("gather_rows gradient scatters into the table") {
  Parameter table("table", fpt::random_tensor({5, 3}, 15));
  const LossFn loss = [&](Tape& t) {
    return ad::sum(ad::square(ad::gather_rows(t.param(table), {4, 0, 4, 2})));
  };
  CHECK(grad_check_params(loss, {&table}, 15, Rng(1), 1e-5).max_rel_error < 1e-8);
}

TEST_CASE("grad_check on a quadratic is near exact") {
  const ScalarFn f = [](Tape&, Var x) { return ad::sum(ad::square(x)); };
  CHECK(grad_check(f, fpt::random_tensor({7}, 16), 1e-5).max_rel_error < 1e-8);
}

TEST_CASE("grad_check reports non-finite losses") {
  const ScalarFn f = [](Tape& t, Var x) { return ad::sum(ad::mul(x, t.constant(Tensor({2}, INFINITY)))); };
  CHECK_THROWS_AS(grad_check(f, Tensor({2}, 1.0), 1e-5), NumericError);
}

TEST_CASE("gradients reduce in item order") {
  Parameter p("p", Tensor::vector({1.0, 2.0}));
  std::vector<GradientList> items;
  for (double s : {0.1, 0.2, 0.3}) {
    Tape t;
    t.backward(ad::sum(ad::scale(t.param(p), s)));
    items.push_back(t.param_grads());
  }
  p.zero_grad();
  accumulate_gradients(items);
  CHECK(p.grad[0] == (0.0 + 0.1) + 0.2 + 0.3);
}

TEST_CASE("rng streams are deterministic and independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(42).split("x").next_u64() != Rng(42).split("y").next_u64());
  CHECK(Rng(42).split(std::uint64_t{1}).next_u64() != Rng(42).split(std::uint64_t{2}).next_u64());
  Rng n(7);
  double s = 0.0, s2 = 0.0;
  const int N = 20000;
  for (int i = 0; i < N; ++i) {
    const double x = n.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::fabs(s / N) < 0.03);
  CHECK(std::fabs(s2 / N - 1.0) < 0.05);
}

TEST_CASE("record blocks and named tensors round trip") {
  std::stringstream ss;
  const Tensor t = fpt::random_tensor({3, 2}, 17);
  binio::write_named_tensor(ss, "w", t);
  const auto [name, back] = binio::read_named_tensor(ss);
  CHECK(name == "w");
  CHECK(back == t);
  CHECK(binio::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(binio::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);

  std::stringstream bad("FPRX");
  CHECK_THROWS_AS(binio::read_records(bad), IoError);
}

TEST_CASE("key value text") {
  const kv::Pairs p = kv::parse("# comment\nseed = 7\n  topology=B  \n\n");
  REQUIRE(p.size() == 2);
  CHECK(kv::get(p, "seed") == "7");
  CHECK(kv::get(p, "topology") == "B");
  CHECK_THROWS_AS(kv::get(p, "missing"), ConfigError);
  CHECK_THROWS_AS(kv::to_int("k", "3x"), ConfigError);
  CHECK(kv::to_double("x", kv::format_double(0.1)) == 0.1);
  CHECK(kv::parse(kv::render(p)) == p);
}
