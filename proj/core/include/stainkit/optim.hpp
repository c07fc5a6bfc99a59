#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stainkit/tensor.hpp"

namespace stainkit {

struct AdamWOptions {
  float learning_rate = 1.5e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float epsilon = 1e-8f;
  float weight_decay = 0.01f;
};

/// AdamW with bias-corrected moments and decoupled weight decay.
///
/// Moment buffers are created lazily on the first step and bound to the
/// parameter order of that call; later calls must pass the same list.
/// Parameters without an accumulated gradient (unreachable from the loss)
/// are skipped entirely, weight decay included.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  void step(std::span<Tensor> params);
  /// Explicit-gradient form: grads[i] must match params[i] in size.
  void step(std::span<Tensor> params, std::span<const std::span<const float>> grads);
  static void zero_grad(std::span<Tensor> params);

  const AdamWOptions& options() const { return options_; }
  std::uint64_t step_count() const { return step_; }
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }

 private:
  AdamWOptions options_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

}  // namespace stainkit
