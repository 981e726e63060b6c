#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ctiq/ops.hpp"
#include "ctiq/rng.hpp"
#include "ctiq/tensor.hpp"

namespace ctiq::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool grad = false) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v), grad);
}

inline Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi, bool grad = false) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

/// Builds a scalar loss on `tape` from the leaves.
using LossBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

/// sum(out * proj): turns any op output into a scalar that exercises the whole Jacobian.
inline Tensor project(Tape& tape, const Tensor& out, const Tensor& proj) {
  return ops::sum(tape, ops::mul(tape, out, proj));
}

/// Largest norm-wise relative error ||g - g_fd|| / ||g_fd|| over the leaves,
/// with g_fd from central differences of step h.
inline double gradient_error(const LossBuilder& build, const std::vector<Tensor>& leaves, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    const Tensor loss = build(tape, leaves);
    tape.backward(loss);
    for (const Tensor& leaf : leaves) {
      const auto g = tape.grad(leaf);
      analytic.emplace_back(g.begin(), g.end());
    }
  }
  auto value = [&] {
    Tape tape;
    return build(tape, leaves).item();
  };
  double worst = 0.0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor leaf = leaves[l];
    auto d = leaf.mutable_data();
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double keep = d[i];
      d[i] = keep + h;
      const double up = value();
      d[i] = keep - h;
      const double down = value();
      d[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      diff2 += (fd - analytic[l][i]) * (fd - analytic[l][i]);
      ref2 += fd * fd;
    }
    worst = std::max(worst, std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12));
  }
  return worst;
}

/// Values nudged away from a kink at `at`, so central differences stay on one side.
inline void avoid_kink(Tensor& t, double at, double margin) {
  for (double& v : t.mutable_data()) {
    if (std::abs(v - at) < margin) v = at + (v < at ? -margin : margin);
  }
}

}  // namespace ctiq::testing
