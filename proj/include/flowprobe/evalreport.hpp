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
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowprobe/probes.hpp"
#include "flowprobe/teachers.hpp"

namespace flowprobe {

struct FeatureStats {
  Tensor mean;        // [D]
  Tensor covariance;  // D x D, unbiased
  int n = 0;
  bool rank_warning = false;  // n < D + 1
};

FeatureStats feature_stats(std::span<const Tensor> embeddings);
FeatureStats feature_stats(const TeacherEncoder& teacher, std::span<const Tensor> samples);

struct SymmetricEigen {
  std::vector<double> values;
  Tensor vectors;  // columns are eigenvectors
  int sweeps = 0;
};

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm is below `tol`.
SymmetricEigen jacobi_eigen(const Tensor& a, double tol = 1e-12, int max_sweeps = 100);

/// Square root of a symmetric PSD matrix. Eigenvalues in [-1e-10, 0) are
/// clamped to 0; anything lower throws NumericError.
Tensor sqrt_psd(const Tensor& a);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

using Trajectory = std::vector<std::pair<long, double>>;  // (step, metric)

/// First step whose metric is <= threshold.
std::optional<long> steps_to_threshold(std::span<const std::pair<long, double>> trajectory,
                                       double threshold);

// Profile CSV: metric,domain,layer,t_bin,value,n (t_bin holds the bin center).
void write_profile_csv(std::ostream& os, std::span<const AttributionProfile* const> profiles);
std::vector<AttributionProfile> read_profile_csv(std::istream& is);

std::string render_heatmap_svg(const AttributionProfile& profile);
/// Writes <stem>.csv and <stem>.svg.
void emit_heatmap(const AttributionProfile& profile, const std::filesystem::path& stem);

struct SummaryRow {
  std::string strategy;
  std::string domain;
  double ffd = 0.0;
  std::optional<long> steps_to_threshold;
  std::uint64_t seed = 0;
};
void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRow> rows);

}  // namespace flowprobe
