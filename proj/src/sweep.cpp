#include "ctiq/sweep.hpp"

#include <cstdio>
#include <sstream>

#include "ctiq/error.hpp"

namespace ctiq {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

GridRow train_and_score(const DenoiserModel& init, const QualityModel& metric, const Dataset& data,
                        TrainConfig train, const LossWeights& weights, const SweepEval& eval) {
  train.mode = TrainMode::composite;
  const DenoiserTrainResult trained = train_denoiser(init, metric, data, train, weights);
  CompareOptions opt{{eval.preset}, eval.n, eval.seed, eval.workers};
  const CompareReport report =
      compare_methods(metric, {{"DMS-IQA", &trained.model}}, data.image_list(Split::test), data.mos(Split::test), opt);
  const CompareRow& r = report.row("DMS-IQA", eval.preset.name);
  GridRow row;
  row.c_r = weights.c_r;
  row.c_t = weights.c_t;
  row.batch = train.batch_size;
  row.tau_srocc = r.tau_srocc;
  row.tau_plcc = r.tau_plcc;
  row.mean_cd_pct = r.mean_cd_pct;
  return row;
}

}  // namespace

std::vector<GridRow> sweep_loss(const DenoiserModel& init, const QualityModel& metric, const Dataset& data,
                                const TrainConfig& train, const std::vector<double>& c_r,
                                const std::vector<double>& c_t, const SweepEval& eval) {
  std::vector<GridRow> rows;
  for (double r : c_r) {
    for (double t : c_t) rows.push_back(train_and_score(init, metric, data, train, {r, t}, eval));
  }
  return rows;
}

std::vector<GridRow> sweep_batch(const DenoiserModel& init, const QualityModel& metric, const Dataset& data,
                                 const TrainConfig& train, const std::vector<std::size_t>& batches,
                                 const LossWeights& weights, const SweepEval& eval) {
  std::vector<GridRow> rows;
  for (std::size_t b : batches) {
    if (b < 2) throw ConfigError("batches", "composite training needs batch sizes of at least 2");
    TrainConfig cfg = train;
    cfg.batch_size = b;
    rows.push_back(train_and_score(init, metric, data, cfg, weights, eval));
  }
  return rows;
}

std::string loss_grid_csv(const std::vector<GridRow>& rows) {
  std::ostringstream os;
  os << "c_r,c_t,tau_srocc,tau_plcc,mean_cd_pct\n";
  for (const auto& r : rows) {
    os << fmt(r.c_r) << ',' << fmt(r.c_t) << ',' << fmt(r.tau_srocc) << ',' << fmt(r.tau_plcc) << ','
       << fmt(r.mean_cd_pct) << '\n';
  }
  return os.str();
}

std::string batch_grid_csv(const std::vector<GridRow>& rows) {
  std::ostringstream os;
  os << "batch,tau_srocc,tau_plcc,mean_cd_pct\n";
  for (const auto& r : rows) {
    os << r.batch << ',' << fmt(r.tau_srocc) << ',' << fmt(r.tau_plcc) << ',' << fmt(r.mean_cd_pct) << '\n';
  }
  return os.str();
}

std::vector<EpsSigmaRow> sweep_eps_sigma(const QualityModel& metric, const std::vector<Method>& methods,
                                         const std::vector<Tensor>& images, const std::vector<double>& mos,
                                         const std::vector<double>& sigmas, const std::vector<double>& epsilons,
                                         std::size_t n, std::uint64_t seed, std::size_t workers) {
  if (images.size() != mos.size()) throw DimensionError("sweep_eps_sigma", 0, images.size(), mos.size(), "mos labels");
  std::vector<double> base(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) base[i] = metric.score(images[i]);
  const double width = metric.range().width();

  std::vector<EpsSigmaRow> rows;
  for (const Method& m : methods) {
    for (double sigma : sigmas) {
      std::vector<std::vector<double>> samples(images.size());
      for (std::size_t i = 0; i < images.size(); ++i) {
        const auto cfg = SmoothingConfig::make(sigma, 0.0, n, substream(seed, {i}));
        samples[i] = sample_scores(metric, images[i], cfg, m.denoiser, workers);
      }
      for (double eps : epsilons) {
        EpsSigmaRow row{m.name, sigma, eps};
        SmoothingConfig cfg;
        try {
          cfg = SmoothingConfig::make(sigma, eps, n, seed);
        } catch (const CertificationError&) {
          rows.push_back(row);
          continue;
        }
        row.feasible = true;
        std::vector<double> medians(images.size());
        double cd = 0.0;
        for (std::size_t i = 0; i < images.size(); ++i) {
          const CertifiedScore c = certify(samples[i], cfg, width);
          medians[i] = c.median;
          cd += c.cd_pct;
        }
        row.srocc = srocc(medians, mos);
        row.plcc = plcc(medians, mos);
        const TauCloseness tau = tau_closeness(base, medians, mos);
        row.tau_srocc = tau.tau_srocc;
        row.tau_plcc = tau.tau_plcc;
        row.mean_cd_pct = cd / static_cast<double>(images.size());
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string eps_sigma_csv(const std::vector<EpsSigmaRow>& rows) {
  std::ostringstream os;
  os << "method,sigma,epsilon,feasible,srocc,plcc,tau_srocc,tau_plcc,mean_cd_pct\n";
  for (const auto& r : rows) {
    os << r.method << ',' << fmt(r.sigma) << ',' << fmt(r.epsilon) << ',' << (r.feasible ? 1 : 0);
    if (r.feasible) {
      os << ',' << fmt(r.srocc) << ',' << fmt(r.plcc) << ',' << fmt(r.tau_srocc) << ',' << fmt(r.tau_plcc) << ','
         << fmt(r.mean_cd_pct);
    } else {
      os << ",,,,,";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace ctiq
