#include "plkrf/tensor.hpp"

#include <cmath>
#include <sstream>

#include "plkrf/error.hpp"

namespace plkrf {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}
}  // namespace

Tensor Tensor::zeros(Shape shape, Dtype dtype) {
  validate_shape(shape);
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->value.assign(shape_numel(shape), 0.0);
  t.node_->shape = std::move(shape);
  t.node_->dtype = dtype;
  return t;
}

Tensor Tensor::full(Shape shape, double value, Dtype dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  for (double& v : t.node_->value) v = value;
  t.quantize_storage();
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, Dtype dtype) {
  validate_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("from_data: " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " elements, got " +
                         std::to_string(data.size()));
  }
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->value = std::move(data);
  t.node_->dtype = dtype;
  t.quantize_storage();
  return t;
}

Tensor Tensor::scalar(double value, Dtype dtype) {
  return from_data({1}, {value}, dtype);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

Dtype Tensor::dtype() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->dtype;
}

double* Tensor::data() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value.data();
}

const double* Tensor::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value.data();
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, shape is " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw DimensionError("at(): index rank mismatch");
  std::size_t flat = 0;
  std::size_t dim = 0;
  for (std::size_t i : idx) {
    if (i >= s[dim]) throw DimensionError("at(): index out of range");
    flat = flat * s[dim] + i;
    ++dim;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::on_tape() const { return node_ && node_->on_tape; }

void Tensor::mark_on_tape() {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->on_tape = true;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

double* Tensor::grad() const {
  if (!has_grad()) throw ContractError("gradient not allocated");
  return node_->grad.data();
}

std::span<double> Tensor::grad_values() const { return {grad(), numel()}; }

void Tensor::ensure_grad() const {
  if (!node_) throw ContractError("use of undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::zero_grad() const {
  if (node_ && !node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::drop_grad() const {
  if (node_) {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

Tensor Tensor::clone() const {
  if (!node_) return {};
  Tensor t;
  t.node_ = std::make_shared<Node>(*node_);
  t.node_->on_tape = false;
  return t;
}

void Tensor::quantize_storage() {
  if (!node_ || node_->dtype != Dtype::f32) return;
  for (double& v : node_->value) v = static_cast<double>(static_cast<float>(v));
}

void Tensor::check_finite(const char* what) const {
  if (!node_) return;
  for (double v : node_->value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(what) + ": non-finite element " + std::to_string(v));
    }
  }
}

Dtype promote_dtype(Dtype a, Dtype b) {
  return (a == Dtype::f32 && b == Dtype::f32) ? Dtype::f32 : Dtype::f64;
}

}  // namespace plkrf
