#include "ctiq/tensor.hpp"

#include <sstream>
#include <stdexcept>

#include "ctiq/error.hpp"

namespace ctiq {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()), requires_grad_(requires_grad) {
  for (std::size_t axis = 0; axis < shape.size(); ++axis) {
    if (shape[axis] == 0) throw DimensionError("tensor", axis, 1, 0, "extents must be positive");
  }
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor", "shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                                       " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("dim", axis, s.size(), axis, "axis out of range");
  return s[axis];
}

std::size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item", "tensor " + to_string(shape()) + " is not a scalar");
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.requires_grad_ = false;
  return t;
}

Tensor Tensor::with_grad() const {
  Tensor t = *this;
  t.requires_grad_ = true;
  return t;
}

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, requires_grad_); }

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw DimensionError("reshape", "cannot view " + to_string(this->shape()) + " as " + to_string(shape));
  }
  return Tensor(std::move(shape), impl_->data, false);
}

void Tape::record(const Tensor& output, BackwardFn fn) {
  if (replayed_) throw std::logic_error("tape already replayed; start a new tape");
  produced_.insert(output.key());
  ops_.push_back(std::move(fn));
}

void Tape::backward(const Tensor& loss) {
  if (replayed_) throw std::logic_error("backward() called twice on the same tape");
  if (loss.size() != 1) {
    throw std::logic_error("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad() || !produced(loss)) {
    throw std::logic_error("backward(): loss was not produced on this tape");
  }
  grad_buffer(loss)[0] += 1.0;
  replayed_ = true;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
}

std::span<const double> Tape::grad(const Tensor& t) { return grad_buffer(t); }

std::span<double> Tape::grad_buffer(const Tensor& t) {
  auto [it, inserted] = grads_.try_emplace(t.key());
  if (inserted) it->second.assign(t.size(), 0.0);
  return it->second;
}

const std::vector<double>* Tape::find_grad(const Tensor& t) const {
  auto it = grads_.find(t.key());
  return it == grads_.end() ? nullptr : &it->second;
}

}  // namespace ctiq
