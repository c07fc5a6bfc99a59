#include "stainkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stainkit/diagnostics.hpp"

namespace stainkit {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

}  // namespace detail

namespace {

detail::ImplPtr new_impl(const Shape& shape, std::vector<float> values) {
  if (shape.size() > 4) throw Error("tensor rank above 4: " + shape_to_string(shape));
  if (shape_numel(shape) != values.size()) {
    throw Error("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                shape_to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  return impl;
}

const detail::TensorImpl& checked(const detail::ImplPtr& impl) {
  if (!impl) throw Error("use of an undefined tensor");
  return *impl;
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0f); }

Tensor Tensor::full(const Shape& shape, float value) {
  return Tensor(new_impl(shape, std::vector<float>(shape_numel(shape), value)));
}

Tensor Tensor::scalar(float value) { return Tensor(new_impl({}, {value})); }

Tensor Tensor::from(const Shape& shape, std::vector<float> values) {
  return Tensor(new_impl(shape, std::move(values)));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw Error("axis out of range for shape " + shape_to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const float> Tensor::data() const { return checked(impl_).data; }

std::span<float> Tensor::mutable_data() {
  checked(impl_);
  return impl_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw Error("item() on tensor of shape " + shape_to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  checked(impl_);
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const { return checked(impl_).grad; }

std::span<float> Tensor::mutable_grad() {
  checked(impl_);
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

void Tensor::clear_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

Tensor Tensor::detach() const {
  const auto& impl = checked(impl_);
  return Tensor(new_impl(impl.shape, impl.data));
}

bool Tensor::all_finite() const {
  const auto d = data();
  return std::all_of(d.begin(), d.end(), [](float v) { return std::isfinite(v); });
}

// --- Tape -------------------------------------------------------------------

namespace {
thread_local Tape* tls_active_tape = nullptr;
}

Tape::~Tape() { clear(); }

Tape::Scope::Scope(Tape& tape) : previous_(tls_active_tape) { tls_active_tape = &tape; }

Tape::Scope::~Scope() { tls_active_tape = previous_; }

Tape* Tape::active() { return tls_active_tape; }

void Tape::record(detail::ImplPtr output, std::function<void()> backward_fn) {
  output->producer = this;
  output->requires_grad = true;
  records_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::clear() {
  for (auto& r : records_) r.output->producer = nullptr;
  records_.clear();
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on an undefined tensor");
  if (loss.numel() != 1) throw Error("backward requires a scalar loss, got " + shape_to_string(loss.shape()));
  if (loss.impl()->producer != this) throw Error("backward on a loss that is detached from this tape");
  if (!loss.all_finite()) throw Error("non-finite loss value in backward");

  for (auto& r : records_) std::fill(r.output->grad.begin(), r.output->grad.end(), 0.0f);
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0f;

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward_fn();
  }
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw Error("backward called with no active tape");
  tape->backward(loss);
}

namespace detail {

bool needs_record(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<float> values) {
  return Tensor(new_impl(shape, std::move(values)));
}

void record(const Tensor& output, std::function<void()> backward_fn) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw Error("no active tape to record on");
  tape->record(output.impl_ptr(), std::move(backward_fn));
}

}  // namespace detail

}  // namespace stainkit
