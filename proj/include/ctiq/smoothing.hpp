#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctiq/models.hpp"
#include "ctiq/tensor.hpp"

namespace ctiq {

/// Certification contract: noise sd sigma, certified L2 radius epsilon, sample
/// count n and the seed of the noise substreams. Build with make(), which
/// enforces ceil(Phi(epsilon/sigma) * n) < n.
struct SmoothingConfig {
  double sigma = 0.12;
  double epsilon = 0.06;
  std::size_t n = 2000;
  std::uint64_t seed = 0;
  /// 0 disables the binomial index adjustment; otherwise the one-sided
  /// coverage probability of each bound, in (0,1).
  double confidence = 0.0;

  static SmoothingConfig make(double sigma, double epsilon, std::size_t n, std::uint64_t seed,
                              double confidence = 0.0);
  double p_lower() const;
  double p_upper() const;
};

/// Named (sigma, epsilon) use cases.
struct Preset {
  std::string name;
  double sigma;
  double epsilon;
};

/// "weak" = (0.12, 0.06), "strong" = (0.18, 0.36). ConfigError("preset") otherwise.
Preset preset(const std::string& name);

/// 1-based order-statistic indices used by certify().
struct OrderIndices {
  std::size_t lower;
  std::size_t median;
  std::size_t upper;
};

/// lower = max(1, floor(p_lower n)), median = ceil(n / 2), upper = ceil(p_upper n),
/// or the binomially adjusted pair when cfg.confidence > 0.
/// Throws CertificationError when an index falls outside [1, n - 1] for the upper
/// bound or below 1 for the lower one.
OrderIndices certification_indices(const SmoothingConfig& cfg);

struct CertifiedScore {
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double cd_pct = 0.0;
  std::vector<double> samples;  ///< ascending; empty unless retained
};

/// Scores a batch [B,3,H,W] to B values. Must be callable concurrently.
using BatchScoreFn = std::function<std::vector<double>(const Tensor&)>;

/// M(x) or, with a denoiser, M(D(x)), as a batch score function.
BatchScoreFn make_score_fn(const Scorer& metric, const DenoiserModel* denoiser = nullptr);

/// x + sigma * r_i for noise draw i of cfg. x is [3,H,W] or [1,3,H,W]; the
/// result has the shape of x and is never clamped.
Tensor noisy_copy(const Tensor& x, const SmoothingConfig& cfg, std::size_t i);

/// Evaluate all n noise draws and return the scores ascending. The result does
/// not depend on `workers`.
std::vector<double> sample_scores(const BatchScoreFn& score_fn, const Tensor& x, const SmoothingConfig& cfg,
                                  std::size_t workers = 1);
std::vector<double> sample_scores(const Scorer& metric, const Tensor& x, const SmoothingConfig& cfg,
                                  const DenoiserModel* denoiser = nullptr, std::size_t workers = 1);

/// Median and percentile bounds from a sample set (any order). cd_pct is
/// 100 (upper - lower) / range_width.
CertifiedScore certify(std::vector<double> samples, const SmoothingConfig& cfg, double range_width,
                       bool keep_samples = false);

/// sample_scores followed by certify.
CertifiedScore certify_image(const Scorer& metric, const Tensor& x, const SmoothingConfig& cfg,
                             const DenoiserModel* denoiser = nullptr, std::size_t workers = 1,
                             bool keep_samples = false);

/// Plain mean of the samples: the uncertified mean-smoothing baseline.
double mean_smooth(const std::vector<double>& samples);
double mean_smooth(const Scorer& metric, const Tensor& x, const SmoothingConfig& cfg,
                   const DenoiserModel* denoiser = nullptr, std::size_t workers = 1);

/// Largest epsilon/sigma certifiable with n samples: Phi^-1((n - 1) / n).
double max_ratio(std::size_t n);
/// Smallest n with ceil(Phi(ratio) n) < n.
std::size_t min_samples(double ratio);

/// {image_id, sigma, epsilon, n, median, lower, upper, cd_pct, seed} as one JSON object.
std::string certificate_json(const std::string& image_id, const SmoothingConfig& cfg, const CertifiedScore& c);

}  // namespace ctiq
