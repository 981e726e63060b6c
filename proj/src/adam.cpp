#include "ctiq/adam.hpp"

#include <cmath>

#include "ctiq/error.hpp"

namespace ctiq {

void Adam::step(std::span<Tensor> params, std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) throw DimensionError("adam", 0, params.size(), grads.size(), "grad count");
  if (m_.empty()) {
    for (const Tensor& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw DimensionError("adam", 0, m_.size(), params.size(), "parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_data();
    const auto g = grads[k];
    if (g.size() != w.size() || m_[k].size() != w.size()) {
      throw DimensionError("adam", 0, w.size(), g.size(), "parameter " + std::to_string(k));
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      w[i] -= options_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
    }
  }
}

void Adam::step(Tensor& param, std::span<const double> grad) {
  std::span<const double> g[1] = {grad};
  step(std::span<Tensor>(&param, 1), g);
}

}  // namespace ctiq
