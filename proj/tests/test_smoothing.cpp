#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ctiq/attack.hpp"
#include "ctiq/error.hpp"
#include "ctiq/gaussian.hpp"
#include "ctiq/smoothing.hpp"
#include "support.hpp"

using namespace ctiq;
using namespace ctiq::testing;

namespace {

// Phi(z) by composite Simpson integration of the density from 0 to z.
double simpson_cdf(double z) {
  const int n = 20000;
  const double h = z / n;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); };
  double acc = pdf(0.0) + pdf(z);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  return 0.5 + acc * h / 3.0;
}

BatchScoreFn linear_fn(const std::vector<double>& w) {
  return [w](const Tensor& batch) {
    const std::size_t per = w.size(), n = batch.size() / per;
    std::vector<double> out(n);
    for (std::size_t b = 0; b < n; ++b) {
      double acc = 0.0;
      for (std::size_t p = 0; p < per; ++p) acc += w[p] * batch.at(b * per + p);
      out[b] = acc;
    }
    return out;
  };
}

double dot(const std::vector<double>& w, const Tensor& x) {
  double acc = 0.0;
  for (std::size_t p = 0; p < w.size(); ++p) acc += w[p] * x.at(p);
  return acc;
}

double norm(const std::vector<double>& w) { return std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0)); }

std::vector<double> one_to(std::size_t n) {
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 1.0);
  return v;
}

}  // namespace

TEST(Gaussian, CdfValues) {
  EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(2.0), simpson_cdf(2.0), 1e-9);
  EXPECT_NEAR(normal_cdf(2.0), 0.977250, 1e-6);
  for (double z : {0.3, 1.0, 2.5, 4.0}) EXPECT_NEAR(normal_cdf(-z), 1.0 - normal_cdf(z), 1e-15);
}

TEST(Gaussian, QuantileRoundTrip) {
  EXPECT_NEAR(normal_quantile(normal_cdf(1.3)), 1.3, 1e-6);
  for (double z = -6.0; z <= 6.0; z += 0.25) EXPECT_NEAR(normal_quantile(normal_cdf(z)), z, 1e-6);
  EXPECT_THROW(normal_quantile(0.0), DomainError);
  EXPECT_THROW(normal_quantile(1.0), DomainError);
  EXPECT_THROW(normal_quantile(-0.2), DomainError);
}

TEST(Feasibility, MaxRatioForTwoThousandSamples) {
  const double r = max_ratio(2000);
  EXPECT_GE(r, 3.28);
  EXPECT_LE(r, 3.30);
  EXPECT_NEAR(simpson_cdf(r), 1999.0 / 2000.0, 1e-8);
  EXPECT_THROW(max_ratio(1), DomainError);
}

TEST(Feasibility, MinSamplesMatchesUpwardEnumeration) {
  auto brute = [](double ratio) {
    const double p = simpson_cdf(ratio);
    for (std::size_t n = 2;; ++n) {
      if (static_cast<std::size_t>(std::ceil(p * static_cast<double>(n))) < n) return n;
    }
  };
  EXPECT_LE(min_samples(0.5), 4u);
  std::size_t prev = 0;
  for (double r : {0.5, 1.0, 2.0, 3.0}) {
    const std::size_t n = min_samples(r);
    EXPECT_EQ(n, brute(r)) << "ratio " << r;
    EXPECT_GE(n, prev);
    prev = n;
  }
}

TEST(Feasibility, InfeasibleConfigRejected) {
  EXPECT_THROW(SmoothingConfig::make(0.1, 0.34, 2000, 0), CertificationError);
  EXPECT_NO_THROW(SmoothingConfig::make(0.1, 0.32, 2000, 0));
  EXPECT_THROW(SmoothingConfig::make(0.0, 0.1, 2000, 0), ConfigError);
  EXPECT_THROW(SmoothingConfig::make(0.1, -0.1, 2000, 0), ConfigError);
}

TEST(Indices, StrongPreset) {
  const auto idx = certification_indices(SmoothingConfig::make(0.18, 0.36, 2000, 0));
  EXPECT_EQ(idx.lower, 45u);
  EXPECT_EQ(idx.median, 1000u);
  EXPECT_EQ(idx.upper, 1955u);
  EXPECT_EQ(static_cast<std::size_t>(std::floor(simpson_cdf(-2.0) * 2000)), 45u);
  EXPECT_EQ(static_cast<std::size_t>(std::ceil(simpson_cdf(2.0) * 2000)), 1955u);
}

TEST(Indices, ZeroRadiusCoincide) {
  const auto idx = certification_indices(SmoothingConfig::make(0.18, 0.0, 2000, 0));
  EXPECT_EQ(idx.lower, 1000u);
  EXPECT_EQ(idx.median, 1000u);
  EXPECT_EQ(idx.upper, 1000u);
}

TEST(Indices, WeakPresetAgainstOracle) {
  const auto idx = certification_indices(SmoothingConfig::make(0.12, 0.06, 2000, 0));
  EXPECT_EQ(idx.lower, static_cast<std::size_t>(std::floor(simpson_cdf(-0.5) * 2000)));
  EXPECT_EQ(idx.upper, static_cast<std::size_t>(std::ceil(simpson_cdf(0.5) * 2000)));
}

TEST(Indices, ConfidenceAdjustedBoundsAreWider) {
  const auto plain = certification_indices(SmoothingConfig::make(0.18, 0.36, 2000, 0));
  const auto conf = certification_indices(SmoothingConfig::make(0.18, 0.36, 2000, 0, 0.999));
  EXPECT_LT(conf.lower, plain.lower);
  EXPECT_GT(conf.upper, plain.upper);
  EXPECT_LT(conf.upper, 2000u);
}

TEST(Certify, SortedOneToTwoThousand) {
  auto s = one_to(2000);
  std::reverse(s.begin(), s.end());
  const auto cfg = SmoothingConfig::make(0.18, 0.36, 2000, 0);
  const CertifiedScore c = certify(s, cfg, 100.0);
  EXPECT_EQ(c.lower, 45.0);
  EXPECT_EQ(c.median, 1000.0);
  EXPECT_EQ(c.upper, 1955.0);
  // Width relative to the range is 19.10; cd_pct reports it in percent.
  EXPECT_DOUBLE_EQ((c.upper - c.lower) / 100.0, 19.10);
  EXPECT_DOUBLE_EQ(c.cd_pct, 1910.0);
  EXPECT_DOUBLE_EQ(certify(s, cfg, 10000.0).cd_pct, 19.10);
}

TEST(Certify, ZeroRadiusCollapsesInterval) {
  const CertifiedScore c = certify(one_to(2000), SmoothingConfig::make(0.12, 0.0, 2000, 0), 100.0);
  EXPECT_EQ(c.lower, c.median);
  EXPECT_EQ(c.upper, c.median);
  EXPECT_EQ(c.cd_pct, 0.0);
}

TEST(Certify, RejectsWrongCountAndRange) {
  const auto cfg = SmoothingConfig::make(0.12, 0.06, 100, 0);
  EXPECT_THROW(certify(one_to(99), cfg, 100.0), DimensionError);
  EXPECT_THROW(certify(one_to(100), cfg, 0.0), DomainError);
}

TEST(Certify, MonotoneNestingInEpsilon) {
  Rng rng(21);
  std::vector<double> s(2000);
  for (double& v : s) v = rng.normal();
  double lo = 0.0, hi = 0.0;
  for (double eps : {0.0, 0.03, 0.06, 0.12, 0.24, 0.36, 0.5}) {
    const CertifiedScore c = certify(s, SmoothingConfig::make(0.18, eps, 2000, 0), 1.0);
    EXPECT_LE(c.lower, c.median);
    EXPECT_LE(c.median, c.upper);
    if (eps > 0.0) {
      EXPECT_LE(c.lower, lo);
      EXPECT_GE(c.upper, hi);
    }
    lo = c.lower;
    hi = c.upper;
  }
}

TEST(Sampling, ConstantScoreFunction) {
  const auto cfg = SmoothingConfig::make(0.18, 0.36, 200, 3);
  const auto s = sample_scores([](const Tensor& b) { return std::vector<double>(b.dim(0), 4.25); },
                               Tensor::zeros({3, 8, 8}), cfg);
  ASSERT_EQ(s.size(), 200u);
  for (double v : s) EXPECT_EQ(v, 4.25);
  EXPECT_EQ(mean_smooth(s), 4.25);
}

TEST(Sampling, VanishingNoise) {
  Rng rng(22);
  const Tensor x = uniform_tensor({3, 4, 4}, rng, 0.0, 1.0);
  std::vector<double> w(x.size());
  for (double& v : w) v = rng.normal();
  const auto s = sample_scores(linear_fn(w), x, SmoothingConfig::make(1e-9, 0.0, 100, 4));
  for (double v : s) EXPECT_NEAR(v, dot(w, x), 1e-4);
}

TEST(Sampling, LinearSpreadMatchesGaussianPropagation) {
  Rng rng(23);
  const Tensor x = uniform_tensor({3, 8, 8}, rng, 0.0, 1.0);
  std::vector<double> w(x.size());
  for (double& v : w) v = rng.normal() / 8.0;
  const double sigma = 0.18;
  const auto s = sample_scores(linear_fn(w), x, SmoothingConfig::make(sigma, 0.36, 2000, 5));
  const double mean = mean_smooth(s);
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (s.size() - 1));
  EXPECT_NEAR(sd / (sigma * norm(w)), 1.0, 0.10);
  // CLT bound for the mean of n draws.
  EXPECT_LE(std::abs(mean - dot(w, x)), 3.0 * sigma * norm(w) / std::sqrt(2000.0));
}

TEST(Sampling, IndependentOfWorkerCount) {
  Rng rng(24);
  const Tensor x = uniform_tensor({3, 8, 8}, rng, 0.0, 1.0);
  std::vector<double> w(x.size());
  for (double& v : w) v = rng.normal();
  const auto cfg = SmoothingConfig::make(0.12, 0.06, 301, 6);
  const auto a = sample_scores(linear_fn(w), x, cfg, 1);
  const auto b = sample_scores(linear_fn(w), x, cfg, 4);
  EXPECT_EQ(a, b);
}

TEST(Sampling, NoisyCopiesAreNotClamped) {
  const Tensor x = Tensor::full({3, 4, 4}, 0.98);
  const auto cfg = SmoothingConfig::make(0.5, 0.0, 10, 7);
  bool above = false;
  for (std::size_t i = 0; i < 10; ++i) {
    const Tensor y = noisy_copy(x, cfg, i);
    for (double v : y.data()) above = above || v > 1.0;
  }
  EXPECT_TRUE(above);
}

TEST(MeanSmoothing, SymmetricSamplesGiveTheMedian) {
  std::vector<double> s{-3.0, -1.0, 0.5, 2.0, 4.0};
  EXPECT_DOUBLE_EQ(mean_smooth(s), 0.5);
  EXPECT_THROW(mean_smooth(std::vector<double>{}), DimensionError);
}

TEST(MedianSmoothing, RobustToOutliersUnlikeTheMean) {
  auto s = one_to(2001);
  const auto cfg = SmoothingConfig::make(0.18, 0.0, 2001, 0);
  const double before = certify(s, cfg, 1.0).median;
  for (std::size_t i = 1990; i < 2001; ++i) s[i] = 1e9;
  EXPECT_EQ(certify(s, cfg, 1.0).median, before);
  EXPECT_GT(mean_smooth(s), 1e6);
}

TEST(MedianSmoothing, LinearIntervalHalfWidthNearEpsilonNorm) {
  // Quick version of the converged-width check: for w^T x the certified
  // half-width tends to eps ||w||.
  Rng rng(25);
  const Tensor x = uniform_tensor({3, 8, 8}, rng, 0.0, 1.0);
  std::vector<double> w(x.size());
  for (double& v : w) v = rng.normal() / 8.0;
  const auto cfg = SmoothingConfig::make(0.18, 0.36, 20000, 8);
  const CertifiedScore c = certify(sample_scores(linear_fn(w), x, cfg), cfg, 1.0);
  EXPECT_NEAR(0.5 * (c.upper - c.lower) / (0.36 * norm(w)), 1.0, 0.05);
  EXPECT_LE(c.lower, dot(w, x));
  EXPECT_GE(c.upper, dot(w, x));
}

TEST(Certificates, JsonCarriesEveryField) {
  const auto cfg = SmoothingConfig::make(0.12, 0.06, 100, 9);
  const auto text = certificate_json("17", cfg, certify(one_to(100), cfg, 100.0));
  for (const char* key : {"image_id", "sigma", "epsilon", "\"n\"", "median", "lower", "upper", "cd_pct", "seed"}) {
    EXPECT_NE(text.find(key), std::string::npos) << key;
  }
}

TEST(Presets, NamedValues) {
  EXPECT_EQ(preset("weak").sigma, 0.12);
  EXPECT_EQ(preset("weak").epsilon, 0.06);
  EXPECT_EQ(preset("strong").sigma, 0.18);
  EXPECT_EQ(preset("strong").epsilon, 0.36);
  EXPECT_THROW(preset("medium"), ConfigError);
}
