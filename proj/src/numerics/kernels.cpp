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

#include "flowprobe/kernels.hpp"

#include <omp.h>

#include <exception>
#include <vector>

namespace flowprobe::kernels {

namespace {

constexpr std::size_t kParallelMinWork = 1u << 18;

// One output row. The three layouts keep the per-element inner index
// ascending, which is what makes row partitioning bit-stable.
inline void gemm_row(Transpose ta, Transpose tb, std::size_t i, std::size_t m, std::size_t n,
                     std::size_t k, const double* a, const double* b, double* c,
                     bool accumulate) {
  double* ci = c + i * n;
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
  }
  if (tb == Transpose::Yes) {
    // op(B)[p][j] = B[j][p]; dot product per element.
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = ci[j];
      if (ta == Transpose::No) {
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      } else {
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * bj[p];
      }
      ci[j] = acc;
    }
    return;
  }
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = ta == Transpose::No ? a[i * k + p] : a[p * m + i];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

}  // namespace

void gemm_serial(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(ta, tb, i, m, n, k, a, b, c, accumulate);
}

void gemm_omp(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k,
              const double* a, const double* b, double* c, bool accumulate) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) {
    gemm_row(ta, tb, static_cast<std::size_t>(i), m, n, k, a, b, c, accumulate);
  }
}

void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  if (m * n * k >= kParallelMinWork && m > 1 && !omp_in_parallel() && omp_get_max_threads() > 1) {
    gemm_omp(ta, tb, m, n, k, a, b, c, accumulate);
  } else {
    gemm_serial(ta, tb, m, n, k, a, b, c, accumulate);
  }
}

void for_each_index(std::size_t n, Policy policy, const std::function<void(std::size_t)>& body) {
  if (policy == Policy::Serial || n < 2 || omp_in_parallel()) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  // Report the failure with the lowest index, as the serial loop would.
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace flowprobe::kernels
