#include "stainkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stainkit/diagnostics.hpp"
#include "stainkit/gemm.hpp"

namespace stainkit::ops {

using detail::ImplPtr;
using detail::make_result;
using detail::needs_record;
using detail::record;
using detail::wants_grad;

namespace {

std::vector<float>& grad_buf(const ImplPtr& p) {
  p->ensure_grad();
  return p->grad;
}

void require(bool cond, const std::string& message) {
  if (!cond) throw Error(message);
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast binary_layout(const Tensor& a, const Tensor& b, const char* name) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.numel() == 1) return Broadcast::kRightScalar;
  if (a.numel() == 1) return Broadcast::kLeftScalar;
  throw Error(std::string(name) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
              shape_to_string(b.shape()));
}

// Shared driver for add/sub/mul: fwd(x, y) and partials dfdx(x, y), dfdy(x, y).
template <class Fwd, class Dx, class Dy>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Dx dx, Dy dy) {
  const auto layout = binary_layout(a, b, name);
  const Shape& out_shape = layout == Broadcast::kLeftScalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  auto ia = [&](std::size_t i) { return layout == Broadcast::kLeftScalar ? 0 : i; };
  auto ib = [&](std::size_t i) { return layout == Broadcast::kRightScalar ? 0 : i; };
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[ia(i)], bd[ib(i)]);
  Tensor result = make_result(out_shape, std::move(out));
  if (needs_record({&a, &b})) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), oi = result.impl_ptr();
    record(result, [ai, bi, oi, layout, n, dx, dy] {
      auto at = [&](std::size_t i) { return layout == Broadcast::kLeftScalar ? 0 : i; };
      auto bt = [&](std::size_t i) { return layout == Broadcast::kRightScalar ? 0 : i; };
      const auto& g = oi->grad;
      if (wants_grad(ai)) {
        auto& ga = grad_buf(ai);
        for (std::size_t i = 0; i < n; ++i) ga[at(i)] += g[i] * dx(ai->data[at(i)], bi->data[bt(i)]);
      }
      if (wants_grad(bi)) {
        auto& gb = grad_buf(bi);
        for (std::size_t i = 0; i < n; ++i) gb[bt(i)] += g[i] * dy(ai->data[at(i)], bi->data[bt(i)]);
      }
    });
  }
  return result;
}

// Shared driver for pointwise unary ops whose derivative depends on (x, y).
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  Tensor result = make_result(x.shape(), std::move(out));
  if (needs_record({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, oi, deriv] {
      auto& gx = grad_buf(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i] * deriv(xi->data[i], oi->data[i]);
    });
  }
  return result;
}

// Applies a fixed index permutation: out[i] = in[perm[i]].
Tensor permuted(const Tensor& x, Shape out_shape, std::vector<std::size_t> perm) {
  const auto xd = x.data();
  std::vector<float> out(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = xd[perm[i]];
  Tensor result = make_result(std::move(out_shape), std::move(out));
  if (needs_record({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, oi, perm = std::move(perm)] {
      auto& gx = grad_buf(xi);
      for (std::size_t i = 0; i < perm.size(); ++i) gx[perm[i]] += oi->grad[i];
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
      [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
      [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](float x, float y) { return x * y; }, [](float, float y) { return y; },
      [](float x, float) { return x; });
}

Tensor scale(const Tensor& x, float factor) {
  return unary(x, [factor](float v) { return v * factor; }, [factor](float, float) { return factor; });
}

Tensor add_scalar(const Tensor& x, float value) {
  return unary(x, [value](float v) { return v + value; }, [](float, float) { return 1.0f; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3;
  require((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3),
          "matmul: expected two rank-2 or two rank-3 tensors, got " + shape_to_string(a.shape()) + " and " +
              shape_to_string(b.shape()));
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  require(k == kb, "matmul: inner extents differ " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  require(!batched || b.dim(0) == batch, "matmul: batch extents differ");

  std::vector<float> out(batch * m * n);
  for (std::size_t s = 0; s < batch; ++s) {
    detail::gemm(false, false, m, n, k, a.data().data() + s * m * k, b.data().data() + s * k * n,
                 out.data() + s * m * n, 0.0f);
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor result = make_result(shape, std::move(out));
  if (needs_record({&a, &b})) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), oi = result.impl_ptr();
    record(result, [ai, bi, oi, batch, m, n, k] {
      for (std::size_t s = 0; s < batch; ++s) {
        const float* g = oi->grad.data() + s * m * n;
        if (wants_grad(ai)) {  // dA = dC · Bᵀ
          detail::gemm(false, true, m, k, n, g, bi->data.data() + s * k * n, grad_buf(ai).data() + s * m * k, 1.0f);
        }
        if (wants_grad(bi)) {  // dB = Aᵀ · dC
          detail::gemm(true, false, k, n, m, ai->data.data() + s * m * k, g, grad_buf(bi).data() + s * k * n, 1.0f);
        }
      }
    });
  }
  return result;
}

Tensor transpose_last(const Tensor& x) {
  require(x.rank() == 2 || x.rank() == 3, "transpose_last: rank must be 2 or 3");
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  std::vector<std::size_t> perm(batch * r * c);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t i = 0; i < r; ++i) perm[s * r * c + j * r + i] = s * r * c + i * c + j;
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return permuted(x, shape, std::move(perm));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: " + shape_to_string(x.shape()) + " to " + shape_to_string(shape) + " changes element count");
  std::vector<float> out(x.data().begin(), x.data().end());
  Tensor result = make_result(shape, std::move(out));
  if (needs_record({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, oi] {
      auto& gx = grad_buf(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
    });
  }
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() >= 1 && bias.rank() == 1 && bias.dim(0) == x.dim(x.rank() - 1),
          "add_bias: bias " + shape_to_string(bias.shape()) + " does not match last axis of " +
              shape_to_string(x.shape()));
  const std::size_t n = bias.dim(0), rows = x.numel() / n;
  const auto xd = x.data(), bd = bias.data();
  std::vector<float> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xd[r * n + j] + bd[j];
  Tensor result = make_result(x.shape(), std::move(out));
  if (needs_record({&x, &bias})) {
    ImplPtr xi = x.impl_ptr(), bi = bias.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, bi, oi, rows, n] {
      const auto& g = oi->grad;
      if (wants_grad(xi)) {
        auto& gx = grad_buf(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (wants_grad(bi)) {
        auto& gb = grad_buf(bi);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
    });
  }
  return result;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() == 4 && bias.rank() == 1 && bias.dim(0) == x.dim(1),
          "add_channel_bias: bias " + shape_to_string(bias.shape()) + " vs input " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto xd = x.data(), bd = bias.data();
  std::vector<float> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = xd[off + i] + bd[c];
    }
  Tensor result = make_result(x.shape(), std::move(out));
  if (needs_record({&x, &bias})) {
    ImplPtr xi = x.impl_ptr(), bi = bias.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, bi, oi, batch, channels, plane] {
      const auto& g = oi->grad;
      if (wants_grad(xi)) {
        auto& gx = grad_buf(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (wants_grad(bi)) {
        auto& gb = grad_buf(bi);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (b * channels + c) * plane;
            float acc = 0.0f;
            for (std::size_t i = 0; i < plane; ++i) acc += g[off + i];
            gb[c] += acc;
          }
      }
    });
  }
  return result;
}

Tensor map_to_tokens(const Tensor& x) {
  require(x.rank() == 4, "map_to_tokens: expected NCHW input, got " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<std::size_t> perm(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < plane; ++t)
      for (std::size_t c = 0; c < channels; ++c)
        perm[(b * plane + t) * channels + c] = (b * channels + c) * plane + t;
  return permuted(x, {batch, plane, channels}, std::move(perm));
}

Tensor tokens_to_map(const Tensor& x, std::size_t height, std::size_t width) {
  require(x.rank() == 3 && x.dim(1) == height * width,
          "tokens_to_map: " + shape_to_string(x.shape()) + " cannot form a " + std::to_string(height) + "x" +
              std::to_string(width) + " map");
  const std::size_t batch = x.dim(0), plane = x.dim(1), channels = x.dim(2);
  std::vector<std::size_t> perm(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < plane; ++t)
        perm[(b * channels + c) * plane + t] = (b * plane + t) * channels + c;
  return permuted(x, {batch, channels, height, width}, std::move(perm));
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  require(x.rank() == 3 && heads > 0 && x.dim(2) % heads == 0,
          "split_heads: width of " + shape_to_string(x.shape()) + " not divisible by heads");
  const std::size_t batch = x.dim(0), tokens = x.dim(1), width = x.dim(2), dh = width / heads;
  std::vector<std::size_t> perm(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < tokens; ++t)
        for (std::size_t j = 0; j < dh; ++j)
          perm[((b * heads + h) * tokens + t) * dh + j] = (b * tokens + t) * width + h * dh + j;
  return permuted(x, {batch * heads, tokens, dh}, std::move(perm));
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  require(x.rank() == 3 && heads > 0 && x.dim(0) % heads == 0, "merge_heads: leading extent not divisible by heads");
  const std::size_t batch = x.dim(0) / heads, tokens = x.dim(1), dh = x.dim(2), width = dh * heads;
  std::vector<std::size_t> perm(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dh; ++j)
          perm[(b * tokens + t) * width + h * dh + j] = ((b * heads + h) * tokens + t) * dh + j;
  return permuted(x, {batch, tokens, width}, std::move(perm));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis " + std::to_string(axis) + " invalid for " + shape_to_string(x.shape()));
  const auto& s = x.shape();
  const std::size_t len = s[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t outer = x.numel() / (len * inner);
  const auto xd = x.data();
  std::vector<float> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      float mx = -INFINITY;
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xd[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const float e = std::exp(xd[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      const float inv = static_cast<float>(1.0 / total);
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] *= inv;
    }
  Tensor result = make_result(s, std::move(out));
  if (needs_record({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, oi, outer, inner, len] {
      auto& gx = grad_buf(xi);
      const auto& y = oi->data;
      const auto& g = oi->grad;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          float dot = 0.0f;
          for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t k = base + i * inner;
            gx[k] += y[k] * (g[k] - dot);
          }
        }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require(x.rank() >= 1, "layer_norm: rank-0 input");
  const std::size_t d = x.dim(x.rank() - 1), rows = x.numel() / d;
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
          "layer_norm: gamma/beta must have shape (" + std::to_string(d) + ")");
  const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  std::vector<float> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = static_cast<float>(1.0 / std::sqrt(var + eps));
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = static_cast<float>((row[j] - mu) * inv_std[r]);
      out[r * d + j] = xhat[r * d + j] * gd[j] + bd[j];
    }
  }
  Tensor result = make_result(x.shape(), std::move(out));
  if (needs_record({&x, &gamma, &beta})) {
    ImplPtr xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, gi, bi, oi, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const auto& g = oi->grad;
      if (wants_grad(gi)) {
        auto& gg = grad_buf(gi);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
      }
      if (wants_grad(bi)) {
        auto& gb = grad_buf(bi);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (wants_grad(xi)) {
        auto& gx = grad_buf(xi);
        const auto& gamma_v = gi->data;
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[r * d + j] * gamma_v[j];
            m1 += dxh;
            m2 += dxh * xhat[r * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[r * d + j] * gamma_v[j];
            gx[r * d + j] += static_cast<float>(inv_std[r] * (dxh - m1 - xhat[r * d + j] * m2));
          }
        }
      }
    });
  }
  return result;
}

Tensor instance_norm(const Tensor& x, float eps) {
  require(x.rank() == 4, "instance_norm: expected NCHW input");
  const std::size_t planes = x.dim(0) * x.dim(1), n = x.dim(2) * x.dim(3);
  const auto xd = x.data();
  std::vector<float> out(x.numel()), inv_std(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* v = xd.data() + p * n;
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += v[i];
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (v[i] - mu) * (v[i] - mu);
    var /= static_cast<double>(n);
    inv_std[p] = static_cast<float>(1.0 / std::sqrt(var + eps));
    for (std::size_t i = 0; i < n; ++i) out[p * n + i] = static_cast<float>((v[i] - mu) * inv_std[p]);
  }
  Tensor result = make_result(x.shape(), std::move(out));
  if (needs_record({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, oi, planes, n, inv_std = std::move(inv_std)] {
      auto& gx = grad_buf(xi);
      const auto& y = oi->data;
      const auto& g = oi->grad;
      for (std::size_t p = 0; p < planes; ++p) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          m1 += g[p * n + i];
          m2 += g[p * n + i] * y[p * n + i];
        }
        m1 /= static_cast<double>(n);
        m2 /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          gx[p * n + i] += static_cast<float>(inv_std[p] * (g[p * n + i] - m1 - y[p * n + i] * m2));
      }
    });
  }
  return result;
}

Tensor gelu(const Tensor& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  constexpr float kInvSqrt2Pi = 0.39894228040143268f;
  return unary(
      x, [](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); },
      [](float v, float) {
        const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
        return cdf + v * kInvSqrt2Pi * std::exp(-0.5f * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](float v) {
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor sum(const Tensor& x) {
  const auto xd = x.data();
  double total = 0.0;
  for (float v : xd) total += v;
  Tensor result = make_result({}, {static_cast<float>(total)});
  if (needs_record({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, oi] {
      auto& gx = grad_buf(xi);
      const float g = oi->grad[0];
      for (auto& v : gx) v += g;
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean of an empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.rank() == 4, "global_avg_pool: expected NCHW input");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto xd = x.data();
  std::vector<float> out(batch * channels);
  for (std::size_t p = 0; p < batch * channels; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xd[p * plane + i];
    out[p] = static_cast<float>(acc / static_cast<double>(plane));
  }
  Tensor result = make_result({batch, channels}, std::move(out));
  if (needs_record({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, oi, plane] {
      auto& gx = grad_buf(xi);
      const float inv = 1.0f / static_cast<float>(plane);
      for (std::size_t p = 0; p < oi->grad.size(); ++p)
        for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] += oi->grad[p] * inv;
    });
  }
  return result;
}

Tensor row_norms(const Tensor& x) {
  require(x.rank() == 2, "row_norms: expected [n, d] input, got " + shape_to_string(x.shape()));
  const std::size_t rows = x.dim(0), d = x.dim(1);
  const auto xd = x.data();
  std::vector<float> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(xd[r * d + j]) * xd[r * d + j];
    out[r] = static_cast<float>(std::sqrt(acc));
  }
  Tensor result = make_result({rows}, std::move(out));
  if (needs_record({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = result.impl_ptr();
    record(result, [xi, oi, rows, d] {
      auto& gx = grad_buf(xi);
      for (std::size_t r = 0; r < rows; ++r) {
        const float nrm = oi->data[r];
        if (nrm == 0.0f) continue;
        const float s = oi->grad[r] / nrm;
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += s * xi->data[r * d + j];
      }
    });
  }
  return result;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, float eps) {
  require(a.numel() == b.numel() && a.numel() > 0,
          "cosine_similarity: shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  const auto ad = a.data(), bd = b.data();
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    dot += static_cast<double>(ad[i]) * bd[i];
    aa += static_cast<double>(ad[i]) * ad[i];
    bb += static_cast<double>(bd[i]) * bd[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double denom = na * nb + eps;
  if (na == 0.0 && nb == 0.0) ++diagnostics().cosine_zero_guard;
  Tensor result = make_result({}, {static_cast<float>(dot / denom)});
  if (needs_record({&a, &b})) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), oi = result.impl_ptr();
    record(result, [ai, bi, oi, dot, na, nb, denom] {
      const double g = oi->grad[0];
      // d/da [dot / (|a||b| + eps)] = b/denom - dot·|b|·a / (|a|·denom²)
      auto accumulate = [&](const ImplPtr& self, const ImplPtr& other, double n_self, double n_other) {
        auto& gs = grad_buf(self);
        const double radial = n_self > 0.0 ? dot * n_other / (n_self * denom * denom) : 0.0;
        for (std::size_t i = 0; i < gs.size(); ++i)
          gs[i] += static_cast<float>(g * (other->data[i] / denom - radial * self->data[i]));
      };
      if (wants_grad(ai)) accumulate(ai, bi, na, nb);
      if (wants_grad(bi)) accumulate(bi, ai, nb, na);
    });
  }
  return result;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mse: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                      shape_to_string(b.shape()));
  const auto d = sub(a, b);
  return mean(mul(d, d));
}

Tensor stop_gradient(const Tensor& x) { return x.detach(); }

Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> indices) {
  require(table.rank() == 2, "gather_rows: table must be [K, d]");
  const std::size_t k = table.dim(0), d = table.dim(1);
  const auto td = table.data();
  std::vector<float> out(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < k, "gather_rows: index out of range");
    std::copy_n(td.begin() + indices[r] * d, d, out.begin() + r * d);
  }
  Tensor result = make_result({indices.size(), d}, std::move(out));
  if (needs_record({&table})) {
    ImplPtr ti = table.impl_ptr(), oi = result.impl_ptr();
    std::vector<std::uint32_t> idx(indices.begin(), indices.end());
    record(result, [ti, oi, d, idx = std::move(idx)] {
      auto& gt = grad_buf(ti);
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += oi->grad[r * d + j];
    });
  }
  return result;
}

Tensor straight_through_select(const Tensor& input, const Tensor& table, std::span<const std::uint32_t> indices) {
  require(input.rank() == 2 && table.rank() == 2 && input.dim(1) == table.dim(1) && input.dim(0) == indices.size(),
          "straight_through_select: input " + shape_to_string(input.shape()) + " incompatible with table " +
              shape_to_string(table.shape()));
  const std::size_t d = table.dim(1);
  const auto td = table.data();
  std::vector<float> out(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < table.dim(0), "straight_through_select: index out of range");
    std::copy_n(td.begin() + indices[r] * d, d, out.begin() + r * d);
  }
  Tensor result = make_result(input.shape(), std::move(out));
  if (needs_record({&input, &table})) {
    ImplPtr ii = input.impl_ptr(), ti = table.impl_ptr(), oi = result.impl_ptr();
    std::vector<std::uint32_t> idx(indices.begin(), indices.end());
    record(result, [ii, ti, oi, d, idx = std::move(idx)] {
      const auto& g = oi->grad;
      if (wants_grad(ii)) {
        auto& gi = grad_buf(ii);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
      if (wants_grad(ti)) {
        auto& gt = grad_buf(ti);
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += g[r * d + j];
      }
    });
  }
  return result;
}

}  // namespace stainkit::ops
