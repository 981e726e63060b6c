#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctiq/models.hpp"

namespace ctiq {

/// How Q(y) is computed: the bare metric, or the median over n noisy copies of
/// y (optionally denoised first).
struct QualityBackend {
  std::string name;  ///< "undefended", "ms", "dms", "dms_iqa"
  bool smoothed = false;
  const DenoiserModel* denoiser = nullptr;
};

struct OptConfig {
  std::size_t steps = 1000;
  double lr = 1e-5;
  std::size_t n_samples = 100;
  double sigma = 0.18;  ///< smoothing noise for smoothed backends
  std::uint64_t seed = 0;
  double quality_weight = 1.0;  ///< 0 leaves only the anchor term
  std::size_t log_every = 50;
};

struct OptStep {
  std::size_t step;
  double loss;
  double q_value;
  double rmse_vs_clean;
};

struct OptResult {
  Tensor y;  ///< final image, clamped to [0,1]
  std::vector<OptStep> trajectory;
  double min_pixel = 0.0;  ///< extremes of y over all steps, before the final clamp
  double max_pixel = 0.0;
};

/// Adam on the pixels of y (from y = x_noisy) for
///   loss = 1 - w Q(y) / range + MSE(y, x_noisy) / 1000.
/// For smoothed backends the gradient of Q is the mean over the n draws of
/// grad M(D(y + sigma r_i)) with fresh draws every step, while the logged
/// q_value is their median. x_clean only feeds the logged RMSE.
OptResult optimize_image(const Tensor& x_noisy, const Tensor& x_clean, const QualityModel& metric,
                         const QualityBackend& backend, const OptConfig& cfg);

/// step,loss,q_value,rmse_vs_clean
std::string trajectory_csv(const std::vector<OptStep>& trajectory);

double rmse(const Tensor& a, const Tensor& b);

}  // namespace ctiq
