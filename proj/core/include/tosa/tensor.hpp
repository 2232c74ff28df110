#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace tosa {

/// Dense n-dimensional array of 64-bit floats with optional gradient
/// storage. Copying a Tensor is cheap: copies share the underlying
/// storage (handle semantics). Values are written only by the ops in
/// ops.hpp; gradients are written only during GradTape::backward.
class Tensor {
 public:
  struct Impl {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
  };

  Tensor() : impl_(std::make_shared<Impl>()) {}

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double fill);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor scalar(double v) { return from_data({1}, {v}); }
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->value.size(); }
  bool empty() const { return impl_->value.empty(); }

  // rank-2 helpers
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return impl_->value.data(); }
  const double* data() const { return impl_->value.data(); }
  const std::vector<double>& values() const { return impl_->value; }

  double item() const;                       // scalar tensors only
  double at(std::size_t r, std::size_t c) const;  // rank-2 convenience

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& grad_mut();
  void zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->grad.size(), 0.0);
  }

  /// Value copy that does not participate in gradient flow.
  Tensor detach() const;
  /// Deep copy (value only), preserving requires_grad.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<Impl>& impl() const { return impl_; }

  std::string shape_string() const;

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_to_string(const std::vector<std::size_t>& shape);

/// Throws std::runtime_error naming `op` if any value is NaN/Inf.
void ensure_finite(const Tensor& t, const char* op);

}  // namespace tosa
