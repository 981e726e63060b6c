#include "ctiq/metric_opt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ctiq/adam.hpp"
#include "ctiq/error.hpp"
#include "ctiq/ops.hpp"
#include "ctiq/rng.hpp"
#include "ctiq/smoothing.hpp"

namespace ctiq {

namespace {

constexpr std::size_t kChunk = 4;

struct QualityEval {
  double q;
  std::vector<double> grad;  ///< dQ/dy, empty when not requested
};

QualityEval evaluate_quality(const Tensor& y, const QualityModel& metric, const QualityBackend& backend,
                             const OptConfig& cfg, std::size_t step, bool want_grad) {
  const Tensor yb = as_batch(y);
  QualityEval out{0.0, {}};
  if (want_grad) out.grad.assign(yb.size(), 0.0);
  if (!backend.smoothed) {
    Tape tape;
    const Tensor in = want_grad ? yb.with_grad() : yb.detach();
    const Tensor s = metric.forward(tape, in, ParamGrad::frozen);
    out.q = s.item();
    if (want_grad) {
      tape.backward(s);
      const auto g = tape.grad(in);
      std::copy(g.begin(), g.end(), out.grad.begin());
    }
    return out;
  }
  const SmoothingConfig draws{cfg.sigma, 0.0, cfg.n_samples, substream(cfg.seed, {step})};
  const std::size_t per = yb.size();
  const Shape& s = yb.shape();
  std::vector<double> scores;
  for (std::size_t begin = 0; begin < cfg.n_samples; begin += kChunk) {
    const std::size_t count = std::min(kChunk, cfg.n_samples - begin);
    std::vector<double> buf;
    buf.reserve(count * per);
    for (std::size_t j = 0; j < count; ++j) {
      const Tensor noisy = noisy_copy(yb, draws, begin + j);
      buf.insert(buf.end(), noisy.data().begin(), noisy.data().end());
    }
    Tape tape;
    const Tensor batch({count, s[1], s[2], s[3]}, std::move(buf), want_grad);
    const Tensor in = backend.denoiser ? backend.denoiser->forward(tape, batch, ParamGrad::frozen) : batch;
    const Tensor sc = metric.forward(tape, in, ParamGrad::frozen);
    scores.insert(scores.end(), sc.data().begin(), sc.data().end());
    if (want_grad) {
      tape.backward(ops::sum(tape, sc));
      const auto g = tape.grad(batch);
      for (std::size_t j = 0; j < count; ++j) {
        for (std::size_t p = 0; p < per; ++p) out.grad[p] += g[j * per + p];
      }
    }
  }
  if (want_grad) {
    for (double& g : out.grad) g /= static_cast<double>(cfg.n_samples);
  }
  std::sort(scores.begin(), scores.end());
  out.q = scores[(scores.size() + 1) / 2 - 1];
  return out;
}

double mse_values(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

double rmse(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("rmse", 0, a.size(), b.size(), "element count");
  return std::sqrt(mse_values(a.data(), b.data()));
}

OptResult optimize_image(const Tensor& x_noisy, const Tensor& x_clean, const QualityModel& metric,
                         const QualityBackend& backend, const OptConfig& cfg) {
  if (x_noisy.shape() != x_clean.shape()) {
    throw DimensionError("optimize_image", "noisy " + to_string(x_noisy.shape()) + " vs clean " + to_string(x_clean.shape()));
  }
  if (backend.smoothed && cfg.n_samples < 1) throw ConfigError("n", "smoothed backends need at least one sample");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr", "must be positive");
  if (cfg.log_every == 0) throw ConfigError("log_every", "must be positive");
  const double width = metric.range().width();
  const auto anchor = x_noisy.data();
  const std::size_t n = x_noisy.size();

  Tensor y = x_noisy.clone().detach();
  Adam opt({cfg.lr});
  OptResult result;
  result.min_pixel = *std::min_element(anchor.begin(), anchor.end());
  result.max_pixel = *std::max_element(anchor.begin(), anchor.end());
  auto log = [&](std::size_t step, double q, const Tensor& img) {
    const double loss = 1.0 - cfg.quality_weight * q / width + mse_values(img.data(), anchor) / 1000.0;
    result.trajectory.push_back({step, loss, q, rmse(img, x_clean)});
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const QualityEval qe = evaluate_quality(y, metric, backend, cfg, step, cfg.quality_weight != 0.0);
    if (step % cfg.log_every == 0) log(step, qe.q, y);
    std::vector<double> grad(n);
    const auto yv = y.data();
    for (std::size_t p = 0; p < n; ++p) {
      const double g_anchor = 2.0 * (yv[p] - anchor[p]) / (static_cast<double>(n) * 1000.0);
      const double g_quality = qe.grad.empty() ? 0.0 : -cfg.quality_weight * qe.grad[p] / width;
      grad[p] = g_anchor + g_quality;
    }
    opt.step(y, grad);
    const auto [mn, mx] = std::minmax_element(y.data().begin(), y.data().end());
    result.min_pixel = std::min(result.min_pixel, *mn);
    result.max_pixel = std::max(result.max_pixel, *mx);
  }

  std::vector<double> clamped(y.data().begin(), y.data().end());
  for (double& v : clamped) v = std::clamp(v, 0.0, 1.0);
  result.y = Tensor(x_noisy.shape(), std::move(clamped));
  log(cfg.steps, evaluate_quality(result.y, metric, backend, cfg, cfg.steps, false).q, result.y);
  return result;
}

std::string trajectory_csv(const std::vector<OptStep>& trajectory) {
  std::ostringstream os;
  os << "step,loss,q_value,rmse_vs_clean\n";
  for (const auto& s : trajectory) {
    os << s.step << ',' << num(s.loss) << ',' << num(s.q_value) << ',' << num(s.rmse_vs_clean) << '\n';
  }
  return os.str();
}

}  // namespace ctiq
