#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctiq/dataset.hpp"
#include "ctiq/models.hpp"
#include "ctiq/robust_eval.hpp"
#include "ctiq/smoothing.hpp"
#include "ctiq/training.hpp"

namespace ctiq {

/// How each trained denoiser of a loss or batch sweep is scored: median
/// smoothing with the preset on the test split.
struct SweepEval {
  Preset preset{"strong", 0.18, 0.36};
  std::size_t n = 2000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct GridRow {
  double c_r = 0.0;
  double c_t = 0.0;
  std::size_t batch = 0;
  double tau_srocc = 0.0;
  double tau_plcc = 0.0;
  double mean_cd_pct = 0.0;
};

/// One composite fine-tune from `init` per (c_r, c_t) cell, c_r-major.
std::vector<GridRow> sweep_loss(const DenoiserModel& init, const QualityModel& metric, const Dataset& data,
                                const TrainConfig& train, const std::vector<double>& c_r,
                                const std::vector<double>& c_t, const SweepEval& eval);

/// One composite fine-tune from `init` per batch size.
std::vector<GridRow> sweep_batch(const DenoiserModel& init, const QualityModel& metric, const Dataset& data,
                                 const TrainConfig& train, const std::vector<std::size_t>& batches,
                                 const LossWeights& weights, const SweepEval& eval);

/// c_r,c_t,tau_srocc,tau_plcc,mean_cd_pct
std::string loss_grid_csv(const std::vector<GridRow>& rows);
/// batch,tau_srocc,tau_plcc,mean_cd_pct
std::string batch_grid_csv(const std::vector<GridRow>& rows);

struct EpsSigmaRow {
  std::string method;
  double sigma = 0.0;
  double epsilon = 0.0;
  bool feasible = false;  ///< false when epsilon / sigma > max_ratio(n)
  double srocc = 0.0;
  double plcc = 0.0;
  double tau_srocc = 0.0;
  double tau_plcc = 0.0;
  double mean_cd_pct = 0.0;
};

/// For every method and sigma the n draws per image are scored once; each
/// epsilon then reuses them, since the samples do not depend on epsilon.
/// Image i uses seed substream(seed, {i}), as in compare_methods.
std::vector<EpsSigmaRow> sweep_eps_sigma(const QualityModel& metric, const std::vector<Method>& methods,
                                         const std::vector<Tensor>& images, const std::vector<double>& mos,
                                         const std::vector<double>& sigmas, const std::vector<double>& epsilons,
                                         std::size_t n, std::uint64_t seed, std::size_t workers = 1);

/// method,sigma,epsilon,feasible,srocc,plcc,tau_srocc,tau_plcc,mean_cd_pct;
/// the five statistics are empty on infeasible rows.
std::string eps_sigma_csv(const std::vector<EpsSigmaRow>& rows);

}  // namespace ctiq
