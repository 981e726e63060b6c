#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctiq/dataset.hpp"
#include "ctiq/models.hpp"
#include "ctiq/tensor.hpp"

namespace ctiq {

// ---- quality metric -------------------------------------------------------

struct MetricTrainConfig {
  std::size_t epochs = 40;
  double lr = 2e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

struct MetricEpoch {
  std::size_t epoch;
  double train_loss;
  double val_srocc;
};

/// Regress M(x) on mos with loss mean(((M(x) - mos) / 100)^2) on the train
/// split; returns the weights best on validation SROCC.
QualityModel train_metric(const Dataset& data, const MetricTrainConfig& cfg, std::vector<MetricEpoch>* history = nullptr);

// ---- denoiser losses -------------------------------------------------------

struct LossWeights {
  double c_r = 1.0;
  double c_t = 1000.0;
};

/// (1 / (3 N d1 d2)) sum_i ||x_i - D(x~_i)||^2, i.e. the mean over all elements.
Tensor mse_loss(Tape& tape, const Tensor& clean, const Tensor& denoised);

/// R_ij = (p_i - p_j) sign(t_j - t_i), row-major N x N, sign(0) = 0.
std::vector<double> ranking_matrix(const std::vector<double>& p, const std::vector<double>& t);

/// (1 / N^2) sum_ij max(0, R_ij) / (1 + max_ij |R_ij|). The normaliser is a
/// constant for the backward pass. p holds N values (any shape), t N targets.
Tensor rank_loss(Tape& tape, const Tensor& p, const std::vector<double>& t);

/// (1 / N) sum_i (M(x_i) - M(D(x~_i)))^2 with M(x_i) as constants and M frozen.
Tensor target_loss(Tape& tape, const Scorer& metric, const Tensor& clean, const Tensor& denoised);

struct LossTerms {
  Tensor mse, rank, targ, total;
};

/// MSE + c_r RANK + c_t TARG with p = M(D(noisy)). Gradients reach only the
/// denoiser parameters (when `mode` is track) and `noisy` if it requires grad.
LossTerms composite_loss(Tape& tape, const Scorer& metric, const DenoiserModel& denoiser, const Tensor& clean,
                         const Tensor& noisy, const std::vector<double>& mos, const LossWeights& weights,
                         ParamGrad mode = ParamGrad::track);

// ---- denoiser training ----------------------------------------------------

enum class TrainMode { mse_only, composite };

struct TrainConfig {
  double sigma = 0.12;
  std::size_t batch_size = 15;
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::mse_only;
};

struct EpochStats {
  std::size_t epoch;  ///< 0 = the starting weights, evaluated without updates
  double mse;
  double rank;
  double targ;
  double total;
  double val_srocc;
};

struct DenoiserTrainResult {
  DenoiserModel model;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

/// Train on the train split, one noise draw per image per epoch. After every
/// epoch the validation proxy SROCC of M(D(x + r)) against mos (one fixed draw
/// per image) is logged; the best checkpoint, the starting weights included, is returned.
DenoiserTrainResult train_denoiser(const DenoiserModel& init, const QualityModel& metric, const Dataset& data,
                                   const TrainConfig& cfg, const LossWeights& weights = {});

/// Validation proxy SROCC for a denoiser (nullptr: plain metric on noisy images).
double proxy_srocc(const QualityModel& metric, const DenoiserModel* denoiser, const std::vector<Tensor>& images,
                   const std::vector<double>& mos, double sigma, std::uint64_t seed);

/// epoch,mse,rank,targ,total,val_srocc
std::string history_csv(const std::vector<EpochStats>& history);

}  // namespace ctiq
