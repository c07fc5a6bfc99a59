#include "stainkit/gemm.hpp"

#include <algorithm>
#include <vector>

namespace stainkit::detail {
namespace {

void transpose(const float* src, std::size_t rows, std::size_t cols, float* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
          const float* b, float* c, float beta) {
  std::vector<float> a_buf, b_buf;
  if (trans_a) {
    a_buf.resize(m * k);
    transpose(a, k, m, a_buf.data());
    a = a_buf.data();
  }
  if (trans_b) {
    b_buf.resize(k * n);
    transpose(b, n, k, b_buf.data());
    b = b_buf.data();
  }
  if (beta == 0.0f) {
    std::fill(c, c + m * n, 0.0f);
  } else if (beta != 1.0f) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] *= beta;
  }
  // i-k-j order keeps the inner loop contiguous in both B and C.
  constexpr std::size_t kBlock = 128;
  for (std::size_t k0 = 0; k0 < k; k0 += kBlock) {
    const std::size_t k1 = std::min(k, k0 + kBlock);
    for (std::size_t i = 0; i < m; ++i) {
      float* __restrict crow = c + i * n;
      const float* arow = a + i * k;
      for (std::size_t p = k0; p < k1; ++p) {
        const float av = arow[p];
        if (av == 0.0f) continue;
        const float* __restrict brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace stainkit::detail
