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

#include <cstddef>
#include <functional>

namespace flowprobe::kernels {

enum class Transpose { No, Yes };

// C[m×n] (+)= op(A) · op(B), row-major, op(A) is m×k and op(B) is k×n.
//
// Every output element is accumulated over the inner index in ascending
// order starting from either 0 or the existing C value. The serial and
// OpenMP variants partition work by output row only, so they produce
// bit-identical results for any thread count.
void gemm_serial(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c, bool accumulate);
void gemm_omp(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k,
              const double* a, const double* b, double* c, bool accumulate);

// Picks gemm_omp for large products when not already inside a parallel region.
void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

enum class Policy { Serial, Parallel };

// Runs body(i) for i in [0, n). Each index must write only to its own slot;
// callers reduce the slots afterwards in index order.
void for_each_index(std::size_t n, Policy policy, const std::function<void(std::size_t)>& body);

int max_threads();

}  // namespace flowprobe::kernels
