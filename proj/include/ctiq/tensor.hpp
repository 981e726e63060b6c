#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace ctiq {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// A Tensor is a cheap handle: copies share storage. `requires_grad` lives on
/// the handle, so `detach()` yields a view of the same values that no tape will
/// ever track. Gradients are not stored here; they belong to the Tape that
/// recorded the computation (see Tape::grad), which keeps concurrent forward
/// passes over shared parameters isolated from each other.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  /// Write access for initializers and optimizers. Never call this on a tensor
  /// whose values a live tape still depends on.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor detach() const;
  Tensor with_grad() const;
  /// Deep copy; the copy keeps this handle's requires_grad flag.
  Tensor clone() const;
  /// Same values, new shape of equal element count. Untracked.
  Tensor reshaped(Shape shape) const;

  const void* key() const noexcept { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
  };
  std::shared_ptr<Impl> impl_;
  bool requires_grad_ = false;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Ops append a backward closure as they execute, so the record is in
/// topological order by construction. backward() replays it once in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Register `output` as produced on this tape with its backward closure.
  void record(const Tensor& output, BackwardFn fn);

  /// Seed d(loss)/d(loss) = 1 and propagate. Throws std::logic_error if loss is
  /// not a scalar produced on this tape or the tape was already replayed.
  void backward(const Tensor& loss);

  /// Gradient accumulated for `t`; zeros if backward never reached it.
  std::span<const double> grad(const Tensor& t);
  /// Gradient buffer for accumulation, zero-initialised on first access.
  std::span<double> grad_buffer(const Tensor& t);
  /// Gradient if one was accumulated, otherwise nullptr.
  const std::vector<double>* find_grad(const Tensor& t) const;

  std::size_t recorded_ops() const noexcept { return ops_.size(); }
  bool produced(const Tensor& t) const { return produced_.contains(t.key()); }

 private:
  std::vector<BackwardFn> ops_;
  std::unordered_set<const void*> produced_;
  std::unordered_map<const void*, std::vector<double>> grads_;
  bool replayed_ = false;
};

}  // namespace ctiq
