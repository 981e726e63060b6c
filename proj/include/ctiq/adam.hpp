#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ctiq/tensor.hpp"

namespace ctiq {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are created on the first step and
/// bound positionally to the parameter list, which must keep its order.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(std::span<Tensor> params, std::span<const std::span<const double>> grads);
  void step(Tensor& param, std::span<const double> grad);

  std::int64_t steps() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return options_; }
  void set_lr(double lr) noexcept { options_.lr = lr; }

 private:
  AdamOptions options_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace ctiq
