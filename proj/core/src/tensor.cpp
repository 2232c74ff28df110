#include "tosa/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tosa {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor shape has a zero extent");
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double fill) {
  auto impl = std::make_shared<Impl>();
  impl->value.assign(shape_numel(shape), fill);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_to_string(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->value = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows(): tensor is not rank 2, shape " + shape_string());
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols(): tensor is not rank 2, shape " + shape_string());
  return impl_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item(): tensor is not scalar, shape " + shape_string());
  return impl_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw std::invalid_argument("at(r,c): tensor is not rank 2");
  if (r >= impl_->shape[0] || c >= impl_->shape[1]) throw std::out_of_range("at(r,c): index out of range");
  return impl_->value[r * impl_->shape[1] + c];
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) throw std::runtime_error("tensor has no gradient; run backward first");
  return impl_->grad;
}

std::vector<double>& Tensor::grad_mut() {
  impl_->ensure_grad();
  return impl_->grad;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->value = impl_->value;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.set_requires_grad(impl_->requires_grad);
  return t;
}

std::string Tensor::shape_string() const { return shape_to_string(impl_->shape); }

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

void ensure_finite(const Tensor& t, const char* op) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in output");
    }
  }
}

}  // namespace tosa
