#pragma once

#include <cstddef>

namespace stainkit::detail {

/// C[m×n] = op(A)·op(B) + beta·C, row-major, single-threaded.
/// op(A) is m×k (A stored k×m when trans_a); op(B) is k×n (B stored n×k when trans_b).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
          const float* b, float* c, float beta);

}  // namespace stainkit::detail
