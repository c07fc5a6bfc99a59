#include "stainkit/optim.hpp"

#include <cmath>

#include "stainkit/diagnostics.hpp"

namespace stainkit {

void AdamW::step(std::span<Tensor> params) {
  std::vector<std::span<const float>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.has_grad() ? p.grad() : std::span<const float>{});
  step(params, grads);
}

void AdamW::step(std::span<Tensor> params, std::span<const std::span<const float>> grads) {
  if (grads.size() != params.size()) throw Error("adamw: gradient count does not match parameter count");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0f);
      v_.emplace_back(p.numel(), 0.0f);
    }
  }
  if (m_.size() != params.size()) throw Error("adamw: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].size() != params[i].numel()) throw Error("adamw: moment buffer shape mismatch");
    if (!grads[i].empty() && grads[i].size() != params[i].numel()) throw Error("adamw: gradient shape mismatch");
  }

  ++step_;
  const auto& o = options_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(o.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(o.beta2), static_cast<double>(step_));
  const auto step_size = static_cast<float>(o.learning_rate / bc1);
  const auto inv_bc2_sqrt = static_cast<float>(1.0 / std::sqrt(bc2));
  const float decay = 1.0f - o.learning_rate * o.weight_decay;

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].empty()) continue;
    auto w = params[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0f - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0f - o.beta2) * g[j] * g[j];
      w[j] *= decay;
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_bc2_sqrt + o.epsilon);
    }
  }
}

void AdamW::zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace stainkit
