#include "ctiq/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "ctiq/adam.hpp"
#include "ctiq/error.hpp"
#include "ctiq/ops.hpp"
#include "ctiq/rng.hpp"
#include "ctiq/robust_eval.hpp"
#include "ctiq/smoothing.hpp"

namespace ctiq {

namespace {

enum : std::uint64_t { kShuffleStream = 11, kTrainNoiseStream = 12, kValNoiseStream = 13 };

std::vector<std::size_t> shuffled(std::vector<std::size_t> idx, std::uint64_t seed) {
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

Tensor gather(const Dataset& d, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  std::vector<Tensor> ims;
  for (std::size_t k = begin; k < end; ++k) ims.push_back(d.items[idx[k]].image);
  return stack_images(ims);
}

void adam_step(Adam& opt, ParameterSet& params, Tape& tape) {
  std::vector<Tensor> ts = params.tensors();
  std::vector<std::vector<double>> grads;
  grads.reserve(ts.size());
  for (const Tensor& t : ts) {
    const auto g = tape.grad(t);
    grads.emplace_back(g.begin(), g.end());
  }
  std::vector<std::span<const double>> views(grads.begin(), grads.end());
  opt.step(ts, views);
}

// sum_i (s_i - target_i)^2 / N with targets constant.
Tensor squared_error_to(Tape& tape, const Tensor& scores, const std::vector<double>& targets) {
  if (scores.size() != targets.size()) {
    throw DimensionError("target_loss", 0, targets.size(), scores.size(), "one score per target");
  }
  const Tensor tgt(scores.shape(), targets);
  return ops::mse(tape, scores, tgt);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

QualityModel train_metric(const Dataset& data, const MetricTrainConfig& cfg, std::vector<MetricEpoch>* history) {
  const auto train = data.indices(Split::train);
  const auto val = data.indices(Split::val);
  if (train.empty()) throw ConfigError("dataset", "train split is empty");
  if (val.size() < 3) throw ConfigError("dataset", "validation split needs at least 3 images");
  if (cfg.batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr", "must be positive");

  QualityModel model = QualityModel::init(cfg.seed);
  const auto val_images = data.image_list(Split::val);
  const auto val_mos = data.mos(Split::val);
  auto val_srocc = [&](const QualityModel& m) {
    std::vector<double> s;
    for (const Tensor& im : val_images) s.push_back(m.score(im));
    try {
      return srocc(s, val_mos);
    } catch (const UndefinedCorrelation&) {
      return 0.0;
    }
  };

  QualityModel best = model.clone();
  double best_srocc = val_srocc(model);
  Adam opt({cfg.lr});
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled(train, substream(cfg.seed, {kShuffleStream, epoch}));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::vector<double> target;
      for (std::size_t k = b; k < e; ++k) target.push_back(data.items[order[k]].mos / 100.0);
      Tape tape;
      const Tensor s = model.forward(tape, gather(data, order, b, e), ParamGrad::track);
      const Tensor loss = squared_error_to(tape, ops::mul_scalar(tape, s, 0.01), target);
      tape.backward(loss);
      adam_step(opt, model.parameters(), tape);
      loss_sum += loss.item();
      ++batches;
    }
    const double v = val_srocc(model);
    if (history) history->push_back({epoch, loss_sum / static_cast<double>(batches), v});
    if (v > best_srocc) {
      best_srocc = v;
      best = model.clone();
    }
  }
  return best;
}

Tensor mse_loss(Tape& tape, const Tensor& clean, const Tensor& denoised) { return ops::mse(tape, clean, denoised); }

std::vector<double> ranking_matrix(const std::vector<double>& p, const std::vector<double>& t) {
  if (p.size() != t.size()) throw DimensionError("ranking_matrix", 0, p.size(), t.size(), "p and t lengths");
  const std::size_t n = p.size();
  std::vector<double> r(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = t[j] - t[i];
      const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      r[i * n + j] = (p[i] - p[j]) * sign;
    }
  }
  return r;
}

Tensor rank_loss(Tape& tape, const Tensor& p, const std::vector<double>& t) {
  const std::vector<double> pv(p.data().begin(), p.data().end());
  const std::vector<double> r = ranking_matrix(pv, t);
  const std::size_t n = pv.size();
  double norm = 0.0, hinge = 0.0;
  for (double v : r) {
    norm = std::max(norm, std::abs(v));
    hinge += std::max(0.0, v);
  }
  const double scale = 1.0 / (static_cast<double>(n * n) * (1.0 + norm));
  Tensor out = Tensor::scalar(hinge * scale, p.requires_grad());
  if (p.requires_grad()) {
    tape.record(out, [p, out, r, t, n, scale](Tape& tp) {
      const auto* gy = tp.find_grad(out);
      if (!gy) return;
      auto gp = tp.grad_buffer(p);
      const double g = (*gy)[0] * scale;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (r[i * n + j] <= 0.0) continue;
          // d R_ij / d p_i = s_ij, d R_ij / d p_j = -s_ij.
          const double s = (t[j] > t[i]) ? 1.0 : -1.0;
          gp[i] += g * s;
          gp[j] -= g * s;
        }
      }
    });
  }
  return out;
}

Tensor target_loss(Tape& tape, const Scorer& metric, const Tensor& clean, const Tensor& denoised) {
  const std::vector<double> targets = metric.score_batch(clean);
  return squared_error_to(tape, metric.forward(tape, denoised, ParamGrad::frozen), targets);
}

LossTerms composite_loss(Tape& tape, const Scorer& metric, const DenoiserModel& denoiser, const Tensor& clean,
                         const Tensor& noisy, const std::vector<double>& mos, const LossWeights& weights,
                         ParamGrad mode) {
  if (clean.shape() != noisy.shape()) {
    throw DimensionError("composite_loss", "clean " + to_string(clean.shape()) + " vs noisy " + to_string(noisy.shape()));
  }
  if (mos.size() != clean.dim(0)) throw DimensionError("composite_loss", 0, clean.dim(0), mos.size(), "mos labels");
  LossTerms terms;
  const Tensor den = denoiser.forward(tape, noisy, mode);
  const Tensor p = metric.forward(tape, den, ParamGrad::frozen);
  terms.mse = mse_loss(tape, clean, den);
  terms.rank = rank_loss(tape, p, mos);
  terms.targ = squared_error_to(tape, p, metric.score_batch(clean));
  terms.total = ops::add(tape, terms.mse,
                         ops::add(tape, ops::mul_scalar(tape, terms.rank, weights.c_r),
                                  ops::mul_scalar(tape, terms.targ, weights.c_t)));
  return terms;
}

double proxy_srocc(const QualityModel& metric, const DenoiserModel* denoiser, const std::vector<Tensor>& images,
                   const std::vector<double>& mos, double sigma, std::uint64_t seed) {
  std::vector<double> scores;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const SmoothingConfig draw{sigma, 0.0, 2, substream(seed, {kValNoiseStream, i})};
    Tensor x = as_batch(noisy_copy(images[i], draw, 0));
    if (denoiser) x = denoiser->denoise(x);
    scores.push_back(metric.score(x));
  }
  try {
    return srocc(scores, mos);
  } catch (const UndefinedCorrelation&) {
    return 0.0;
  }
}

DenoiserTrainResult train_denoiser(const DenoiserModel& init, const QualityModel& metric, const Dataset& data,
                                   const TrainConfig& cfg, const LossWeights& weights) {
  const bool composite = cfg.mode == TrainMode::composite;
  if (!(cfg.sigma > 0.0)) throw ConfigError("sigma", "must be positive");
  if (cfg.batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (composite && cfg.batch_size < 2) throw ConfigError("batch_size", "composite mode needs at least 2 images per batch");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr", "must be positive");
  if (!(weights.c_r >= 0.0) || !(weights.c_t >= 0.0)) throw ConfigError("weights", "c_r and c_t must be non-negative");
  const auto train = data.indices(Split::train);
  if (train.empty()) throw ConfigError("dataset", "train split is empty");
  const auto val_images = data.image_list(Split::val);
  const auto val_mos = data.mos(Split::val);
  if (val_images.size() < 3) throw ConfigError("dataset", "validation split needs at least 3 images");

  DenoiserTrainResult result{init.clone(), {}, 0};
  DenoiserModel model = init.clone();
  const LossWeights used = composite ? weights : LossWeights{0.0, 0.0};

  // One pass over the train split; updates parameters when `opt` is given.
  auto run_epoch = [&](std::size_t epoch, Adam* opt) {
    const auto order = shuffled(train, substream(cfg.seed, {kShuffleStream, epoch}));
    double mse = 0.0, rank = 0.0, targ = 0.0, total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      // A single leftover image has no pairs to rank.
      if (composite && e - b < 2) continue;
      std::vector<Tensor> clean, noisy;
      std::vector<double> mos;
      for (std::size_t k = b; k < e; ++k) {
        const LabeledImage& item = data.items[order[k]];
        const SmoothingConfig draw{cfg.sigma, 0.0, 2, substream(cfg.seed, {kTrainNoiseStream, epoch, order[k]})};
        clean.push_back(item.image);
        noisy.push_back(noisy_copy(item.image, draw, 0));
        mos.push_back(item.mos);
      }
      Tape tape;
      const Tensor cb = stack_images(clean), nb = stack_images(noisy);
      LossTerms terms;
      if (composite) {
        terms = composite_loss(tape, metric, model, cb, nb, mos, used, opt ? ParamGrad::track : ParamGrad::frozen);
      } else {
        terms.total = terms.mse = mse_loss(tape, cb, model.forward(tape, nb, opt ? ParamGrad::track : ParamGrad::frozen));
      }
      if (opt) {
        tape.backward(terms.total);
        adam_step(*opt, model.parameters(), tape);
      }
      mse += terms.mse.item();
      if (composite) {
        rank += terms.rank.item();
        targ += terms.targ.item();
      }
      total += terms.total.item();
      ++batches;
    }
    const double nb = static_cast<double>(std::max<std::size_t>(1, batches));
    return EpochStats{epoch, mse / nb, rank / nb, targ / nb, total / nb, 0.0};
  };

  EpochStats start = run_epoch(0, nullptr);
  start.val_srocc = proxy_srocc(metric, &model, val_images, val_mos, cfg.sigma, cfg.seed);
  result.history.push_back(start);
  double best = start.val_srocc;

  Adam opt({cfg.lr});
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats s = run_epoch(epoch, &opt);
    s.val_srocc = proxy_srocc(metric, &model, val_images, val_mos, cfg.sigma, cfg.seed);
    result.history.push_back(s);
    if (s.val_srocc > best) {
      best = s.val_srocc;
      result.model = model.clone();
      result.best_epoch = epoch;
    }
  }
  return result;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << "epoch,mse,rank,targ,total,val_srocc\n";
  for (const auto& h : history) {
    os << h.epoch << ',' << num(h.mse) << ',' << num(h.rank) << ',' << num(h.targ) << ',' << num(h.total) << ','
       << num(h.val_srocc) << '\n';
  }
  return os.str();
}

}  // namespace ctiq
