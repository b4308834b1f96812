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
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/evalreport.hpp"

using namespace flowprobe;

namespace {

FeatureStats stats_of(std::vector<double> mean, const Tensor& cov) {
  FeatureStats s;
  s.mean = Tensor({mean.size()}, mean);
  s.covariance = cov;
  s.n = 100;
  return s;
}

Tensor diag(std::vector<double> d) {
  Tensor m({d.size(), d.size()});
  for (std::size_t i = 0; i < d.size(); ++i) m.at(i, i) = d[i];
  return m;
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

AttributionProfile grid(int layers, int bins, std::uint64_t seed) {
  AttributionProfile p;
  p.metric = Metric::LASP;
  p.domain = ProfileDomain::Audio;
  p.t_bins = default_t_bins(bins);
  p.values = fpt::random_tensor({static_cast<std::size_t>(layers + 1), static_cast<std::size_t>(bins)}, seed);
  p.n = 64;
  p.config_digest = 0xabcdef0123456789ULL;
  return p;
}

}  // namespace

TEST_CASE("feature statistics") {
  const std::vector<Tensor> same(5, Tensor::vector({1.0, -2.0}));
  const FeatureStats s = feature_stats(same);
  CHECK(fpt::frob(s.covariance) == 0.0);
  CHECK(s.rank_warning == false);

  const FeatureStats two = feature_stats(std::vector<Tensor>{Tensor::vector({0.0}), Tensor::vector({2.0})});
  CHECK(two.mean[0] == 1.0);
  CHECK(two.covariance.at(0, 0) == 2.0);
  CHECK_FALSE(two.rank_warning);
  CHECK(feature_stats(std::vector<Tensor>{Tensor::vector({0, 1, 2}), Tensor::vector({1, 1, 1})}).rank_warning);

  std::vector<Tensor> pts;
  for (std::uint64_t i = 0; i < 200; ++i) pts.push_back(fpt::random_tensor({5}, i));
  const FeatureStats r = feature_stats(pts);
  std::vector<double> mu(5, 0.0);
  for (const Tensor& p : pts)
    for (std::size_t j = 0; j < 5; ++j) mu[j] += p[j];
  for (double& m : mu) m /= 200.0;
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(std::fabs(r.mean[i] - mu[i]) < 1e-12);
    for (std::size_t j = 0; j < 5; ++j) {
      double c = 0.0;
      for (const Tensor& p : pts) c += (p[i] - mu[i]) * (p[j] - mu[j]);
      c /= 199.0;
      CHECK(std::fabs(r.covariance.at(i, j) - c) < 1e-10);
      CHECK(std::fabs(r.covariance.at(i, j) - r.covariance.at(j, i)) < 1e-12);
    }
  }
  const SymmetricEigen e = jacobi_eigen(r.covariance);
  for (double v : e.values) CHECK(v >= -1e-10);
}

TEST_CASE("jacobi eigensolver reconstructs its input") {
  Tensor a = fpt::random_tensor({6, 6}, 3);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) a.at(j, i) = a.at(i, j);
  const SymmetricEigen e = jacobi_eigen(a);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 6; ++k) acc += e.vectors.at(i, k) * e.values[k] * e.vectors.at(j, k);
      CHECK(std::fabs(acc - a.at(i, j)) < 1e-10);
    }
  const Tensor r = sqrt_psd(diag({4.0, 9.0, 0.0}));
  CHECK(std::fabs(r.at(1, 1) - 3.0) < 1e-12);
  CHECK_THROWS_AS(sqrt_psd(diag({1.0, -0.5})), NumericError);
  CHECK_NOTHROW(sqrt_psd(diag({1.0, -1e-12})));
  CHECK_THROWS_AS(jacobi_eigen(Tensor({2, 3})), DimensionError);
}

TEST_CASE("frechet distance closed forms") {
  const FeatureStats a = stats_of({1, 2, 3}, diag({1, 2, 3}));
  CHECK(frechet_distance(a, a) < 1e-9);

  const FeatureStats p = stats_of({0, 0, 0}, diag({1, 1, 1})), q = stats_of({1, -2, 0.5}, diag({1, 1, 1}));
  CHECK(std::fabs(frechet_distance(p, q) - 5.25) < 1e-9);

  CHECK(std::fabs(frechet_distance(stats_of({0, 0}, diag({1, 4})), stats_of({0, 0}, diag({4, 1}))) - 2.0) < 1e-8);

  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> da, db, ma, mb;
    double want = 0.0;
    for (int i = 0; i < 5; ++i) {
      da.push_back(0.1 + 3 * rng.uniform());
      db.push_back(0.1 + 3 * rng.uniform());
      ma.push_back(rng.normal());
      mb.push_back(rng.normal());
      want += (ma.back() - mb.back()) * (ma.back() - mb.back()) +
              (std::sqrt(da.back()) - std::sqrt(db.back())) * (std::sqrt(da.back()) - std::sqrt(db.back()));
    }
    const FeatureStats x = stats_of(ma, diag(da)), y = stats_of(mb, diag(db));
    CHECK(std::fabs(frechet_distance(x, y) - want) < 1e-8);
  }

  std::vector<Tensor> s1, s2;
  for (std::uint64_t i = 0; i < 40; ++i) {
    s1.push_back(fpt::random_tensor({4}, i));
    s2.push_back(fpt::random_tensor({4}, 1000 + i, 1.5));
  }
  const FeatureStats f1 = feature_stats(s1), f2 = feature_stats(s2);
  CHECK(std::fabs(frechet_distance(f1, f2) - frechet_distance(f2, f1)) < 1e-9);
  CHECK(frechet_distance(f1, f2) > 0.0);
  CHECK_THROWS_AS(frechet_distance(f1, a), DimensionError);
}

TEST_CASE("steps to threshold") {
  const Trajectory t{{100, 2.0}, {200, 1.4}};
  CHECK(steps_to_threshold(t, 1.5) == 200);
  CHECK_FALSE(steps_to_threshold(t, 1.0).has_value());
  CHECK(steps_to_threshold(t, 1.4) == 200);
  CHECK_THROWS_AS(steps_to_threshold(Trajectory{}, 1.0), ConfigError);
}

TEST_CASE("profile CSV round trip") {
  const AttributionProfile a = grid(12, 10, 1);
  AttributionProfile b = grid(3, 2, 2);
  b.metric = Metric::FoGA;
  b.domain = ProfileDomain::Pooled;
  const AttributionProfile* both[] = {&a, &b};
  std::stringstream ss;
  write_profile_csv(ss, both);
  CHECK(ss.str().rfind("metric,domain,layer,t_bin,value,n\n", 0) == 0);
  const auto back = read_profile_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].metric == Metric::LASP);
  CHECK(back[0].domain == ProfileDomain::Audio);
  CHECK(back[0].n == 64);
  CHECK(max_abs_diff(back[0].values, a.values) < 1e-12);
  CHECK(max_abs_diff(back[1].values, b.values) < 1e-12);
  for (std::size_t i = 0; i < a.t_bins.size(); ++i) CHECK(std::fabs(back[0].t_bins[i] - a.t_bins[i]) < 1e-12);

  std::stringstream bad("metric,domain\n");
  CHECK_THROWS_AS(read_profile_csv(bad), IoError);
}

TEST_CASE("heatmap SVG") {
  const AttributionProfile a = grid(11, 10, 1);
  const std::string svg = render_heatmap_svg(a);
  CHECK(count_of(svg, "<rect class=\"cell\"") == 120);
  CHECK(svg == render_heatmap_svg(a));
  CHECK(svg.find("lasp") != std::string::npos);
  CHECK(svg.find("href") == std::string::npos);

  AttributionProfile flat = a;
  for (double& x : flat.values.data()) x = 0.3;
  const std::string fs = render_heatmap_svg(flat);
  std::set<std::string> fills;
  for (std::size_t p = fs.find("<rect class=\"cell\""); p != std::string::npos; p = fs.find("<rect class=\"cell\"", p + 1)) {
    const std::size_t f = fs.find("fill=\"", p) + 6;
    fills.insert(fs.substr(f, fs.find('"', f) - f));
  }
  CHECK(fills.size() == 1);

  fpt::TempDir dir("heat");
  emit_heatmap(a, dir.path / "lasp_audio");
  std::ifstream csv(dir.path / "lasp_audio.csv");
  const auto back = read_profile_csv(csv);
  REQUIRE(back.size() == 1);
  CHECK(max_abs_diff(back[0].values, a.values) < 1e-12);
  CHECK(std::filesystem::exists(dir.path / "lasp_audio.svg"));
  CHECK_THROWS_AS(emit_heatmap(a, dir.path / "missing" / "x"), IoError);
}

TEST_CASE("summary CSV") {
  fpt::TempDir dir("summary");
  const std::vector<SummaryRow> rows{{"foga", "speech", 1.25, 40, 1}, {"random", "audio", 2.5, std::nullopt, 2}};
  write_summary_csv(dir.path / "s.csv", rows);
  std::ifstream in(dir.path / "s.csv");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  CHECK(text.rfind("strategy,domain,ffd,steps_to_threshold,seed\n", 0) == 0);
  CHECK(text.find("foga,speech,1.25,40,1") != std::string::npos);
}
