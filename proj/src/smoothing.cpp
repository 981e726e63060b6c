#include "ctiq/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "ctiq/error.hpp"
#include "ctiq/gaussian.hpp"
#include "ctiq/parallel.hpp"
#include "ctiq/rng.hpp"

namespace ctiq {

namespace {

// Samples per forward pass. Small batches keep activations cache resident.
constexpr std::size_t kChunk = 4;

std::size_t ceil_index(double x) { return static_cast<std::size_t>(std::ceil(x)); }
std::size_t floor_index(double x) { return static_cast<std::size_t>(std::max(0.0, std::floor(x))); }

// P(Bin(n, p) <= k) for k = 0..n.
std::vector<double> binomial_cdf(std::size_t n, double p) {
  std::vector<double> cdf(n + 1);
  const double lp = std::log(p), lq = std::log1p(-p);
  double acc = 0.0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double lpmf = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * lp + (n - k) * lq;
    acc += std::exp(lpmf);
    cdf[k] = std::min(1.0, acc);
  }
  return cdf;
}

}  // namespace

Preset preset(const std::string& name) {
  if (name == "weak") return {"weak", 0.12, 0.06};
  if (name == "strong") return {"strong", 0.18, 0.36};
  throw ConfigError("preset", "unknown preset '" + name + "' (expected weak or strong)");
}

SmoothingConfig SmoothingConfig::make(double sigma, double epsilon, std::size_t n, std::uint64_t seed,
                                      double confidence) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma", "must be a positive real");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon", "must be a non-negative real");
  if (n < 2) throw ConfigError("n", "needs at least 2 samples");
  if (!(confidence == 0.0 || (confidence > 0.0 && confidence < 1.0))) {
    throw ConfigError("confidence", "must be 0 (off) or lie in (0,1)");
  }
  SmoothingConfig cfg{sigma, epsilon, n, seed, confidence};
  certification_indices(cfg);
  return cfg;
}

double SmoothingConfig::p_lower() const { return normal_cdf(-epsilon / sigma); }
double SmoothingConfig::p_upper() const { return normal_cdf(epsilon / sigma); }

OrderIndices certification_indices(const SmoothingConfig& cfg) {
  const std::size_t n = cfg.n;
  const double pl = cfg.p_lower(), pu = cfg.p_upper();
  OrderIndices idx{0, (n + 1) / 2, 0};
  if (cfg.confidence == 0.0) {
    idx.lower = std::max<std::size_t>(1, floor_index(pl * static_cast<double>(n)));
    idx.upper = ceil_index(pu * static_cast<double>(n));
  } else {
    // X_(k) >= q_pu with probability P(Bin(n, pu) <= k - 1); take the smallest k reaching the level.
    const auto cu = binomial_cdf(n, pu);
    idx.upper = n + 1;
    for (std::size_t k = 1; k <= n; ++k) {
      if (cu[k - 1] >= cfg.confidence) {
        idx.upper = k;
        break;
      }
    }
    // X_(k) <= q_pl with probability P(Bin(n, pl) >= k); take the largest such k.
    const auto cl = binomial_cdf(n, pl);
    idx.lower = 0;
    for (std::size_t k = n; k >= 1; --k) {
      if (1.0 - cl[k - 1] >= cfg.confidence) {
        idx.lower = k;
        break;
      }
    }
  }
  const double ratio = cfg.epsilon / cfg.sigma;
  if (idx.upper >= n) {
    throw CertificationError("ceil(p_upper * N) = " + std::to_string(idx.upper) + " is not below N = " +
                             std::to_string(n) + " for epsilon/sigma = " + std::to_string(ratio) +
                             "; use at least N = " + std::to_string(min_samples(ratio)) +
                             (cfg.confidence > 0.0 ? " (more with a confidence level)" : ""));
  }
  if (idx.lower < 1) {
    throw CertificationError("no order statistic reaches the requested confidence for the lower bound with N = " +
                             std::to_string(n) + "; increase N");
  }
  return idx;
}

BatchScoreFn make_score_fn(const Scorer& metric, const DenoiserModel* denoiser) {
  return [&metric, denoiser](const Tensor& batch) {
    Tape tape;
    const Tensor in = denoiser ? denoiser->forward(tape, batch) : batch;
    const Tensor s = metric.forward(tape, in);
    return std::vector<double>(s.data().begin(), s.data().end());
  };
}

namespace {

void write_noisy(std::span<const double> x, const SmoothingConfig& cfg, std::size_t i, double* out) {
  Rng rng(substream(cfg.seed, {i}));
  for (std::size_t p = 0; p < x.size(); ++p) out[p] = x[p] + cfg.sigma * rng.normal();
}

}  // namespace

Tensor noisy_copy(const Tensor& x, const SmoothingConfig& cfg, std::size_t i) {
  std::vector<double> out(x.size());
  write_noisy(x.data(), cfg, i, out.data());
  return Tensor(x.shape(), std::move(out));
}

std::vector<double> sample_scores(const BatchScoreFn& score_fn, const Tensor& x, const SmoothingConfig& cfg,
                                  std::size_t workers) {
  const Tensor image = as_batch(x);
  if (image.dim(0) != 1) throw DimensionError("sample_scores", 0, 1, image.dim(0), "expected a single image");
  const Shape& s = image.shape();
  const std::size_t per = image.size();
  std::vector<double> scores(cfg.n);
  const std::size_t chunks = (cfg.n + kChunk - 1) / kChunk;
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t count = std::min(kChunk, cfg.n - begin);
    std::vector<double> buf(count * per);
    for (std::size_t j = 0; j < count; ++j) write_noisy(image.data(), cfg, begin + j, buf.data() + j * per);
    const auto out = score_fn(Tensor({count, s[1], s[2], s[3]}, std::move(buf)));
    if (out.size() != count) throw DimensionError("sample_scores", 0, count, out.size(), "score function output");
    std::copy(out.begin(), out.end(), scores.begin() + static_cast<std::ptrdiff_t>(begin));
  });
  std::sort(scores.begin(), scores.end());
  return scores;
}

std::vector<double> sample_scores(const Scorer& metric, const Tensor& x, const SmoothingConfig& cfg,
                                  const DenoiserModel* denoiser, std::size_t workers) {
  return sample_scores(make_score_fn(metric, denoiser), x, cfg, workers);
}

CertifiedScore certify(std::vector<double> samples, const SmoothingConfig& cfg, double range_width,
                       bool keep_samples) {
  if (samples.size() != cfg.n) {
    throw DimensionError("certify", 0, cfg.n, samples.size(), "sample count must equal cfg.n");
  }
  if (!(range_width > 0.0)) throw DomainError("certify: metric range must be positive");
  const OrderIndices idx = certification_indices(cfg);
  std::sort(samples.begin(), samples.end());
  CertifiedScore c;
  c.lower = samples[idx.lower - 1];
  c.median = samples[idx.median - 1];
  c.upper = samples[idx.upper - 1];
  c.cd_pct = 100.0 * (c.upper - c.lower) / range_width;
  if (keep_samples) c.samples = std::move(samples);
  return c;
}

CertifiedScore certify_image(const Scorer& metric, const Tensor& x, const SmoothingConfig& cfg,
                             const DenoiserModel* denoiser, std::size_t workers, bool keep_samples) {
  return certify(sample_scores(metric, x, cfg, denoiser, workers), cfg, metric.range().width(), keep_samples);
}

double mean_smooth(const std::vector<double>& samples) {
  if (samples.empty()) throw DimensionError("mean_smooth", "no samples");
  return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
}

double mean_smooth(const Scorer& metric, const Tensor& x, const SmoothingConfig& cfg, const DenoiserModel* denoiser,
                   std::size_t workers) {
  return mean_smooth(sample_scores(metric, x, cfg, denoiser, workers));
}

double max_ratio(std::size_t n) {
  if (n < 2) throw DomainError("max_ratio: n must be at least 2");
  return normal_quantile(static_cast<double>(n - 1) / static_cast<double>(n));
}

std::size_t min_samples(double ratio) {
  if (!(ratio > 0.0)) throw DomainError("min_samples: ratio must be positive");
  const double p = normal_cdf(ratio);
  if (p >= 1.0) throw DomainError("min_samples: Phi(ratio) rounds to 1; no finite sample count works");
  // Start just below the closed-form estimate 1 / (1 - p) and walk up under the exact rule.
  const double guess = 1.0 / (1.0 - p);
  const auto estimate = static_cast<std::size_t>(guess);
  std::size_t n = estimate > 4 ? estimate - 2 : 2;
  while (ceil_index(p * static_cast<double>(n)) >= n) ++n;
  return n;
}

std::string certificate_json(const std::string& image_id, const SmoothingConfig& cfg, const CertifiedScore& c) {
  nlohmann::ordered_json j;
  j["image_id"] = image_id;
  j["sigma"] = cfg.sigma;
  j["epsilon"] = cfg.epsilon;
  j["n"] = cfg.n;
  j["median"] = c.median;
  j["lower"] = c.lower;
  j["upper"] = c.upper;
  j["cd_pct"] = c.cd_pct;
  j["seed"] = cfg.seed;
  return j.dump();
}

}  // namespace ctiq
