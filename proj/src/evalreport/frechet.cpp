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
#include <cmath>

#include "flowprobe/error.hpp"
#include "flowprobe/evalreport.hpp"

namespace flowprobe {

namespace {

constexpr double kPsdTolerance = 1e-10;

void require_square(const Tensor& a, const char* what) {
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw DimensionError(std::string(what) + " needs a square matrix, got " + shape_str(a.shape()));
  }
}

double off_diagonal_norm(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a.at(i, j) * a.at(i, j);
  return std::sqrt(s);
}

}  // namespace

FeatureStats feature_stats(std::span<const Tensor> embeddings) {
  if (embeddings.empty()) throw ConfigError("feature_stats of no samples");
  const std::size_t d = embeddings.front().numel();
  const std::size_t n = embeddings.size();
  FeatureStats s;
  s.n = static_cast<int>(n);
  s.rank_warning = n < d + 1;
  s.mean = Tensor({d});
  for (const Tensor& e : embeddings) {
    if (e.numel() != d) throw DimensionError("feature_stats: embeddings differ in width");
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += e[j];
  }
  for (std::size_t j = 0; j < d; ++j) s.mean[j] /= static_cast<double>(n);
  s.covariance = Tensor({d, d});
  if (n < 2) return s;
  for (const Tensor& e : embeddings)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) s.covariance.at(i, j) += (e[i] - s.mean[i]) * (e[j] - s.mean[j]);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      s.covariance.at(i, j) /= static_cast<double>(n - 1);
      s.covariance.at(j, i) = s.covariance.at(i, j);
    }
  return s;
}

FeatureStats feature_stats(const TeacherEncoder& teacher, std::span<const Tensor> samples) {
  std::vector<Tensor> emb;
  emb.reserve(samples.size());
  for (const Tensor& x : samples) emb.push_back(teacher.encode(x));
  return feature_stats(emb);
}

SymmetricEigen jacobi_eigen(const Tensor& input, double tol, int max_sweeps) {
  require_square(input, "jacobi_eigen");
  const std::size_t n = input.rows();
  Tensor a = input;
  Tensor v({n, n});
  for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;
  double scale = 0.0;
  for (double x : a.data()) scale += x * x;
  const double stop = std::max(tol, 1e-15 * std::sqrt(scale));
  SymmetricEigen out;
  while (off_diagonal_norm(a) >= stop) {
    if (out.sweeps == max_sweeps) {
      throw NumericError("Jacobi eigensolver did not converge in " + std::to_string(max_sweeps) +
                         " sweeps");
    }
    ++out.sweeps;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
  }
  for (std::size_t i = 0; i < n; ++i) out.values.push_back(a.at(i, i));
  out.vectors = std::move(v);
  return out;
}

Tensor sqrt_psd(const Tensor& a) {
  require_square(a, "sqrt_psd");
  const std::size_t n = a.rows();
  Tensor sym = a;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sym.at(i, j) = sym.at(j, i) = 0.5 * (a.at(i, j) + a.at(j, i));
  const SymmetricEigen eig = jacobi_eigen(sym);
  std::vector<double> root(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = eig.values[i];
    if (lam < -kPsdTolerance) {
      throw NumericError("matrix is not positive semidefinite (eigenvalue " + std::to_string(lam) + ")");
    }
    root[i] = lam > 0.0 ? std::sqrt(lam) : 0.0;
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += eig.vectors.at(i, k) * root[k] * eig.vectors.at(j, k);
      out.at(i, j) = acc;
    }
  return out;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.numel() != b.mean.numel() || a.covariance.shape() != b.covariance.shape()) {
    throw DimensionError("frechet_distance: statistics have different dimensions");
  }
  const std::size_t d = a.mean.numel();
  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

  const Tensor ra = sqrt_psd(a.covariance);
  const Tensor inner = matmul(matmul(ra, b.covariance), ra);
  Tensor sym = inner;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) sym.at(i, j) = sym.at(j, i) = 0.5 * (inner.at(i, j) + inner.at(j, i));
  const SymmetricEigen eig = jacobi_eigen(sym);
  double cross = 0.0;
  for (double lam : eig.values) {
    if (lam < -kPsdTolerance) {
      throw NumericError("covariance product is not positive semidefinite (eigenvalue " +
                         std::to_string(lam) + ")");
    }
    if (lam > 0.0) cross += std::sqrt(lam);
  }
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += a.covariance.at(i, i) + b.covariance.at(i, i);
  return std::max(0.0, mean_term + trace - 2.0 * cross);
}

std::optional<long> steps_to_threshold(std::span<const std::pair<long, double>> trajectory,
                                       double threshold) {
  if (trajectory.empty()) throw ConfigError("steps_to_threshold of an empty trajectory");
  for (const auto& [step, value] : trajectory)
    if (value <= threshold) return step;
  return std::nullopt;
}

}  // namespace flowprobe
