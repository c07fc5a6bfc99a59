#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stainkit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  const Tape* producer = nullptr;  // tape that recorded this value, null for leaves

  bool is_leaf() const { return producer == nullptr; }
  void ensure_grad();
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

/// Dense float32 array of rank 0..4 with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is how
/// parameters are shared between a model and its optimizer. Values are
/// treated as immutable once an op has consumed them; only optimizers and
/// initializers write through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, float value);
  static Tensor ones(const Shape& shape) { return full(shape, 1.0f); }
  static Tensor scalar(float value);
  static Tensor from(const Shape& shape, std::vector<float> values);
  static Tensor ones_like(const Tensor& other) { return ones(other.shape()); }
  static Tensor zeros_like(const Tensor& other) { return zeros(other.shape()); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float operator[](std::size_t i) const { return data()[i]; }
  /// Value of a single-element tensor.
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  /// Accumulated gradient; empty span when none has been accumulated.
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();
  /// Releases the gradient buffer so has_grad() becomes false.
  void clear_grad();

  /// Copy of the values with no gradient history.
  Tensor detach() const;
  bool all_finite() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const detail::ImplPtr& impl_ptr() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::ImplPtr impl_;
};

/// Define-by-run record of differentiable operations.
///
/// Ops record onto the tape that is active on the calling thread (see
/// Tape::Scope) whenever at least one input requires a gradient. backward()
/// replays the records in reverse execution order. Leaves accumulate into
/// their gradient across calls; intermediate gradients are reset per call.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  /// RAII activation of a tape on the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return records_.size(); }

  /// Used by op implementations.
  void record(detail::ImplPtr output, std::function<void()> backward_fn);

 private:
  struct Record {
    detail::ImplPtr output;
    std::function<void()> backward_fn;
  };
  std::vector<Record> records_;
};

/// Runs backward on the tape that produced `loss`, which must be active.
void backward(const Tensor& loss);

namespace detail {

/// True when an op over `inputs` should be recorded on the active tape.
bool needs_record(std::initializer_list<const Tensor*> inputs);

Tensor make_result(Shape shape, std::vector<float> values);

/// Registers `backward_fn` for `output` on the active tape.
void record(const Tensor& output, std::function<void()> backward_fn);

inline bool wants_grad(const ImplPtr& impl) { return impl && impl->requires_grad; }

}  // namespace detail

}  // namespace stainkit
