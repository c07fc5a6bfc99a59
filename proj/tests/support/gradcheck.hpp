#pragma once

// Central finite-difference gradient checking for the autodiff engine.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stainkit/ops.hpp"
#include "stainkit/tensor.hpp"

namespace gradcheck {

using stainkit::Shape;
using stainkit::Tensor;
using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(stainkit::shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v));
}

struct Result {
  double max_relative_error = 0.0;  // worst input, norm-wise
  double analytic_norm = 0.0;
};

/// Scalarizes f's output with fixed random weights, then compares the taped
/// gradient with central differences (step h) for every input element. The
/// error per input is ‖g_a − g_n‖ / max(‖g_a‖, ‖g_n‖, 1e-6).
inline Result check(const Fn& f, std::vector<Tensor> inputs, std::uint64_t seed, double h = 1e-3) {
  for (auto& t : inputs) t.set_requires_grad(true);
  std::vector<float> weights;
  {
    const Tensor probe = f(inputs);
    std::mt19937_64 rng(seed ^ 0xabcdefull);
    std::uniform_real_distribution<float> dist(0.5f, 1.5f);
    weights.resize(probe.numel());
    for (auto& w : weights) w = dist(rng);
  }
  auto scalar = [&](const Tensor& out) {
    double acc = 0.0;
    const auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) acc += static_cast<double>(d[i]) * weights[i];
    return acc;
  };

  std::vector<std::vector<float>> analytic;
  {
    stainkit::Tape tape;
    stainkit::Tape::Scope scope(tape);
    const Tensor out = f(inputs);
    const Tensor w = Tensor::from(out.shape(), weights);
    stainkit::backward(stainkit::ops::sum(stainkit::ops::mul(out, w)));
    for (auto& t : inputs) {
      analytic.emplace_back(t.has_grad() ? std::vector<float>(t.grad().begin(), t.grad().end())
                                         : std::vector<float>(t.numel(), 0.0f));
      t.clear_grad();
    }
  }

  Result result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float saved = data[i];
      data[i] = saved + static_cast<float>(h);
      const double up = scalar(f(inputs));
      data[i] = saved - static_cast<float>(h);
      const double down = scalar(f(inputs));
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-6});
    result.max_relative_error = std::max(result.max_relative_error, std::sqrt(diff2) / denom);
    result.analytic_norm += std::sqrt(a2);
  }
  return result;
}

/// One differentiable op under test with a generator for its random inputs.
struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make_inputs;
  Fn fn;
};

inline std::vector<OpCase> op_cases() {
  namespace ops = stainkit::ops;
  using Inputs = std::vector<Tensor>;
  auto r = [](const Shape& s) {
    return [s](std::mt19937_64& rng) { return Inputs{random_tensor(s, rng)}; };
  };
  auto r2 = [](const Shape& a, const Shape& b) {
    return [a, b](std::mt19937_64& rng) { return Inputs{random_tensor(a, rng), random_tensor(b, rng)}; };
  };
  std::vector<OpCase> cases;
  cases.push_back({"add", r2({3, 4}, {3, 4}), [](const Inputs& x) { return ops::add(x[0], x[1]); }});
  cases.push_back({"add_scalar_broadcast", r2({3, 4}, {1}), [](const Inputs& x) { return ops::add(x[0], x[1]); }});
  cases.push_back({"sub", r2({2, 5}, {2, 5}), [](const Inputs& x) { return ops::sub(x[0], x[1]); }});
  cases.push_back({"mul", r2({2, 3, 4}, {2, 3, 4}), [](const Inputs& x) { return ops::mul(x[0], x[1]); }});
  cases.push_back({"mul_broadcast", r2({1}, {4, 4}), [](const Inputs& x) { return ops::mul(x[0], x[1]); }});
  cases.push_back({"scale", r({4, 4}), [](const Inputs& x) { return ops::scale(x[0], -1.7f); }});
  cases.push_back({"add_scalar", r({6}), [](const Inputs& x) { return ops::add_scalar(x[0], 0.3f); }});
  cases.push_back({"matmul", r2({3, 4}, {4, 2}), [](const Inputs& x) { return ops::matmul(x[0], x[1]); }});
  cases.push_back({"matmul_batched", r2({2, 3, 4}, {2, 4, 3}), [](const Inputs& x) { return ops::matmul(x[0], x[1]); }});
  cases.push_back({"transpose_last", r({2, 3, 5}), [](const Inputs& x) { return ops::transpose_last(x[0]); }});
  cases.push_back({"reshape", r({2, 3, 4}), [](const Inputs& x) { return ops::reshape(x[0], {6, 4}); }});
  cases.push_back({"add_bias", r2({3, 2, 4}, {4}), [](const Inputs& x) { return ops::add_bias(x[0], x[1]); }});
  cases.push_back({"add_channel_bias", r2({2, 3, 2, 2}, {3}),
                   [](const Inputs& x) { return ops::add_channel_bias(x[0], x[1]); }});
  cases.push_back({"map_to_tokens", r({2, 3, 2, 4}), [](const Inputs& x) { return ops::map_to_tokens(x[0]); }});
  cases.push_back({"tokens_to_map", r({2, 6, 4}), [](const Inputs& x) { return ops::tokens_to_map(x[0], 2, 3); }});
  cases.push_back({"split_heads", r({2, 3, 8}), [](const Inputs& x) { return ops::split_heads(x[0], 2); }});
  cases.push_back({"merge_heads", r({4, 3, 4}), [](const Inputs& x) { return ops::merge_heads(x[0], 2); }});
  cases.push_back({"softmax_last", r({3, 5}), [](const Inputs& x) { return ops::softmax(x[0], 1); }});
  cases.push_back({"softmax_middle", r({2, 4, 3}), [](const Inputs& x) { return ops::softmax(x[0], 1); }});
  cases.push_back({"layer_norm",
                   [](std::mt19937_64& rng) {
                     return Inputs{random_tensor({4, 6}, rng), random_tensor({6}, rng, 0.5f, 1.5f),
                                   random_tensor({6}, rng)};
                   },
                   [](const Inputs& x) { return ops::layer_norm(x[0], x[1], x[2]); }});
  cases.push_back({"instance_norm", r({2, 2, 3, 3}), [](const Inputs& x) { return ops::instance_norm(x[0]); }});
  cases.push_back({"gelu", r({20}), [](const Inputs& x) { return ops::gelu(ops::scale(x[0], 3.0f)); }});
  cases.push_back({"sigmoid", r({20}), [](const Inputs& x) { return ops::sigmoid(ops::scale(x[0], 4.0f)); }});
  cases.push_back({"sum", r({3, 7}), [](const Inputs& x) { return ops::sum(x[0]); }});
  cases.push_back({"mean", r({3, 7}), [](const Inputs& x) { return ops::mean(x[0]); }});
  cases.push_back({"global_avg_pool", r({2, 3, 3, 3}), [](const Inputs& x) { return ops::global_avg_pool(x[0]); }});
  cases.push_back({"row_norms", r({5, 4}), [](const Inputs& x) { return ops::row_norms(x[0]); }});
  cases.push_back({"cosine_similarity", r2({12}, {12}),
                   [](const Inputs& x) { return ops::cosine_similarity(x[0], x[1]); }});
  cases.push_back({"mse", r2({3, 5}, {3, 5}), [](const Inputs& x) { return ops::mse(x[0], x[1]); }});
  cases.push_back({"gather_rows", r({5, 3}), [](const Inputs& x) {
                     const std::uint32_t idx[] = {4, 0, 4, 2};
                     return ops::gather_rows(x[0], idx);
                   }});
  cases.push_back({"conv2d", r2({1, 2, 5, 5}, {3, 2, 3, 3}),
                   [](const Inputs& x) { return ops::conv2d(x[0], x[1], 1, 1); }});
  cases.push_back({"conv2d_strided", r2({1, 1, 6, 6}, {2, 1, 3, 3}),
                   [](const Inputs& x) { return ops::conv2d(x[0], x[1], 2, 1); }});
  cases.push_back({"conv_transpose2d", r2({1, 2, 3, 3}, {2, 2, 4, 4}),
                   [](const Inputs& x) { return ops::conv_transpose2d(x[0], x[1], 2, 1); }});
  return cases;
}

}  // namespace gradcheck
