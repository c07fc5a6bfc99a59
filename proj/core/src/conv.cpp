#include <algorithm>

#include "stainkit/diagnostics.hpp"
#include "stainkit/gemm.hpp"
#include "stainkit/ops.hpp"

namespace stainkit::ops {
namespace {

struct Geometry {
  std::size_t channels, height, width;  // the "image" side of im2col
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;             // the "column" side
};

// cols[(c·kh + i)·kw + j][oy·out_w + ox] = img[c][oy·s + i - p][ox·s + j - p]
void im2col(const float* img, const Geometry& g, float* cols) {
  const std::size_t ncols = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        float* dst = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.padding);
          float* row = dst + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(row, g.out_w, 0.0f);
            continue;
          }
          const float* src = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
            row[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0f : src[x];
          }
        }
      }
}

// Adjoint of im2col: scatter-adds columns back into the image.
void col2im(const float* cols, const Geometry& g, float* img) {
  const std::size_t ncols = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const float* src = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          float* dst = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          const float* row = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width)) dst[x] += row[ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    throw Error("conv2d: input " + shape_to_string(input.shape()) + " incompatible with kernel " +
                shape_to_string(kernel.shape()));
  }
  if (stride == 0) throw Error("conv2d: stride must be positive");
  const std::size_t batch = input.dim(0), outc = kernel.dim(0);
  Geometry g{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3), stride, padding, 0, 0};
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding) {
    throw Error("conv2d: kernel " + shape_to_string(kernel.shape()) + " larger than padded input " +
                shape_to_string(input.shape()));
  }
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;
  const std::size_t patch = g.channels * g.kh * g.kw, ncols = g.out_h * g.out_w;
  const std::size_t in_plane = g.channels * g.height * g.width, out_plane = outc * ncols;

  std::vector<float> out(batch * out_plane), cols(patch * ncols);
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(input.data().data() + b * in_plane, g, cols.data());
    detail::gemm(false, false, outc, ncols, patch, kernel.data().data(), cols.data(), out.data() + b * out_plane, 0.0f);
  }
  Tensor result = detail::make_result({batch, outc, g.out_h, g.out_w}, std::move(out));
  if (detail::needs_record({&input, &kernel})) {
    auto xi = input.impl_ptr(), ki = kernel.impl_ptr(), oi = result.impl_ptr();
    detail::record(result, [xi, ki, oi, g, batch, outc, patch, ncols, in_plane, out_plane] {
      std::vector<float> cols(patch * ncols);
      for (std::size_t b = 0; b < batch; ++b) {
        const float* gout = oi->grad.data() + b * out_plane;
        if (detail::wants_grad(ki)) {  // dK += dOut · colsᵀ
          im2col(xi->data.data() + b * in_plane, g, cols.data());
          ki->ensure_grad();
          detail::gemm(false, true, outc, patch, ncols, gout, cols.data(), ki->grad.data(), 1.0f);
        }
        if (detail::wants_grad(xi)) {  // dcols = Kᵀ · dOut
          detail::gemm(true, false, patch, ncols, outc, ki->data.data(), gout, cols.data(), 0.0f);
          xi->ensure_grad();
          col2im(cols.data(), g, xi->grad.data() + b * in_plane);
        }
      }
    });
  }
  return result;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(0)) {
    throw Error("conv_transpose2d: input " + shape_to_string(input.shape()) + " incompatible with kernel " +
                shape_to_string(kernel.shape()));
  }
  if (stride == 0) throw Error("conv_transpose2d: stride must be positive");
  const std::size_t batch = input.dim(0), inc = input.dim(1), outc = kernel.dim(1);
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3), h = input.dim(2), w = input.dim(3);
  if ((h - 1) * stride + kh <= 2 * padding || (w - 1) * stride + kw <= 2 * padding) {
    throw Error("conv_transpose2d: padding leaves an empty output");
  }
  const std::size_t out_h = (h - 1) * stride + kh - 2 * padding;
  const std::size_t out_w = (w - 1) * stride + kw - 2 * padding;
  // The output image plays the im2col "image" role; the input grid is the column grid.
  const Geometry g{outc, out_h, out_w, kh, kw, stride, padding, h, w};
  const std::size_t patch = outc * kh * kw, ncols = h * w;
  const std::size_t in_plane = inc * ncols, out_plane = outc * out_h * out_w;

  std::vector<float> out(batch * out_plane, 0.0f), cols(patch * ncols);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::gemm(true, false, patch, ncols, inc, kernel.data().data(), input.data().data() + b * in_plane, cols.data(),
                 0.0f);
    col2im(cols.data(), g, out.data() + b * out_plane);
  }
  Tensor result = detail::make_result({batch, outc, out_h, out_w}, std::move(out));
  if (detail::needs_record({&input, &kernel})) {
    auto xi = input.impl_ptr(), ki = kernel.impl_ptr(), oi = result.impl_ptr();
    detail::record(result, [xi, ki, oi, g, batch, inc, patch, ncols, in_plane, out_plane] {
      std::vector<float> cols(patch * ncols);
      for (std::size_t b = 0; b < batch; ++b) {
        im2col(oi->grad.data() + b * out_plane, g, cols.data());
        if (detail::wants_grad(xi)) {  // dX = K · im2col(dOut)
          xi->ensure_grad();
          detail::gemm(false, false, inc, ncols, patch, ki->data.data(), cols.data(), xi->grad.data() + b * in_plane,
                       1.0f);
        }
        if (detail::wants_grad(ki)) {  // dK += X · im2col(dOut)ᵀ
          ki->ensure_grad();
          detail::gemm(false, true, inc, patch, ncols, xi->data.data() + b * in_plane, cols.data(), ki->grad.data(),
                       1.0f);
        }
      }
    });
  }
  return result;
}

}  // namespace stainkit::ops
