#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ctiq/models.hpp"
#include "ctiq/smoothing.hpp"

namespace ctiq {

/// 1-based ranks; tied values share the average of the ranks they span.
std::vector<double> average_ranks(const std::vector<double>& x);

/// Pearson correlation. Needs equal lengths >= 3 and non-zero variance in
/// both (UndefinedCorrelation otherwise).
double plcc(const std::vector<double>& x, const std::vector<double>& y);
/// Spearman correlation: Pearson of the average ranks.
double srocc(const std::vector<double>& x, const std::vector<double>& y);

struct TauCloseness {
  double tau_srocc;
  double tau_plcc;
};

/// |rho(metric, mos) - rho(defended, mos)| for Spearman and Pearson.
TauCloseness tau_closeness(const std::vector<double>& metric_scores, const std::vector<double>& defended_scores,
                           const std::vector<double>& mos);

/// Bound on how many of the m(m-1)/2 unordered pairs can change order between
/// undefended scores b and defended scores a with max_i |a_i - b_i| = delta_inf.
struct RankErrorCertificate {
  double delta_inf = 0.0;
  /// Pairs whose undefended gap is below 2 delta_inf. Only those can swap, so
  /// observed_errors <= t_bound always holds.
  std::size_t t_bound = 0;
  /// Pairs whose gap is at most delta_inf: the count the single-delta reading
  /// of the bound gives. Not a valid bound in general; kept for comparison.
  std::size_t t_single_delta = 0;
  std::size_t observed_errors = 0;
  std::size_t m = 0;
};

/// a: defended scores, b: undefended scores (aligned, m >= 2).
RankErrorCertificate rank_error_certificate(const std::vector<double>& a, const std::vector<double>& b);

/// Brute-force count of pairs with (R(a_i) - R(a_j)) (R(b_i) - R(b_j)) < 0.
std::size_t discordant_pairs(const std::vector<double>& a, const std::vector<double>& b);

struct Method {
  std::string name;                          ///< "MS", "DMS", "DMS-IQA", ...
  const DenoiserModel* denoiser = nullptr;   ///< nullptr: plain median smoothing
};

struct CompareOptions {
  std::vector<Preset> presets;
  std::size_t n = 2000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct CompareRow {
  std::string method;
  std::string preset;
  double sigma = 0.0;
  double epsilon = 0.0;
  double srocc = 0.0;
  double plcc = 0.0;
  double tau_srocc = 0.0;
  double tau_plcc = 0.0;
  double mean_cd_pct = std::numeric_limits<double>::infinity();
};

struct ImageCertificate {
  std::string method;
  std::string preset;
  std::size_t image = 0;
  double mos = 0.0;
  double score = 0.0;  ///< undefended M(x)
  CertifiedScore cert;
};

struct CompareReport {
  std::vector<CompareRow> rows;
  std::vector<ImageCertificate> images;

  std::string csv() const;
  std::string text() const;
  /// Rows plus every per-image certificate.
  std::string json() const;
  const CompareRow& row(const std::string& method, const std::string& preset) const;
};

/// For each preset: a No-Defence row (tau 0, cd infinite), then one row per
/// method, each certifying every image with seed substream(seed, {image index}).
CompareReport compare_methods(const QualityModel& metric, const std::vector<Method>& methods,
                              const std::vector<Tensor>& images, const std::vector<double>& mos,
                              const CompareOptions& opt);

}  // namespace ctiq
