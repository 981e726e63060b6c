#include "ctiq/robust_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "ctiq/error.hpp"
#include "ctiq/rng.hpp"

namespace ctiq {

namespace {

void require_pairable(const char* who, const std::vector<double>& x, const std::vector<double>& y,
                      std::size_t min_len) {
  if (x.size() != y.size()) throw DimensionError(who, 0, x.size(), y.size(), "vectors must have equal length");
  if (x.size() < min_len) {
    throw DimensionError(who, 0, min_len, x.size(), "needs at least " + std::to_string(min_len) + " elements");
  }
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

nlohmann::ordered_json json_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double plcc(const std::vector<double>& x, const std::vector<double>& y) {
  require_pairable("plcc", x, y, 3);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("correlation undefined: a vector has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double srocc(const std::vector<double>& x, const std::vector<double>& y) {
  require_pairable("srocc", x, y, 3);
  return plcc(average_ranks(x), average_ranks(y));
}

TauCloseness tau_closeness(const std::vector<double>& metric_scores, const std::vector<double>& defended_scores,
                           const std::vector<double>& mos) {
  return {std::abs(srocc(metric_scores, mos) - srocc(defended_scores, mos)),
          std::abs(plcc(metric_scores, mos) - plcc(defended_scores, mos))};
}

std::size_t discordant_pairs(const std::vector<double>& a, const std::vector<double>& b) {
  require_pairable("discordant_pairs", a, b, 2);
  const auto ra = average_ranks(a), rb = average_ranks(b);
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      if ((ra[i] - ra[j]) * (rb[i] - rb[j]) < 0.0) ++count;
    }
  }
  return count;
}

RankErrorCertificate rank_error_certificate(const std::vector<double>& a, const std::vector<double>& b) {
  require_pairable("rank_error_certificate", a, b, 2);
  RankErrorCertificate c;
  c.m = a.size();
  for (std::size_t i = 0; i < c.m; ++i) c.delta_inf = std::max(c.delta_inf, std::abs(a[i] - b[i]));
  // Sorted gap sequence; counts are positions in it.
  std::vector<double> gaps;
  gaps.reserve(c.m * (c.m - 1) / 2);
  for (std::size_t i = 0; i < c.m; ++i) {
    for (std::size_t j = i + 1; j < c.m; ++j) gaps.push_back(std::abs(b[i] - b[j]));
  }
  std::sort(gaps.begin(), gaps.end());
  c.t_bound = static_cast<std::size_t>(std::lower_bound(gaps.begin(), gaps.end(), 2.0 * c.delta_inf) - gaps.begin());
  c.t_single_delta = static_cast<std::size_t>(std::upper_bound(gaps.begin(), gaps.end(), c.delta_inf) - gaps.begin());
  c.observed_errors = discordant_pairs(a, b);
  return c;
}

const CompareRow& CompareReport::row(const std::string& method, const std::string& preset) const {
  for (const auto& r : rows) {
    if (r.method == method && r.preset == preset) return r;
  }
  throw std::out_of_range("no comparison row for " + method + "/" + preset);
}

std::string CompareReport::csv() const {
  std::ostringstream os;
  os << "method,preset,sigma,epsilon,srocc,plcc,tau_srocc,tau_plcc,mean_cd_pct\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.preset << ',' << fmt(r.sigma) << ',' << fmt(r.epsilon) << ',' << fmt(r.srocc) << ','
       << fmt(r.plcc) << ',' << fmt(r.tau_srocc) << ',' << fmt(r.tau_plcc) << ',' << fmt(r.mean_cd_pct) << '\n';
  }
  return os.str();
}

std::string CompareReport::text() const {
  const char* header[] = {"method", "preset", "sigma", "epsilon", "srocc", "plcc", "tau_srocc", "tau_plcc", "mean_cd_pct"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({r.method, r.preset, fmt(r.sigma), fmt(r.epsilon), fmt(r.srocc), fmt(r.plcc), fmt(r.tau_srocc),
                     fmt(r.tau_plcc), fmt(r.mean_cd_pct)});
  }
  std::vector<std::size_t> width(9);
  for (std::size_t c = 0; c < 9; ++c) {
    width[c] = std::string(header[c]).size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  auto line = [&](auto get) {
    for (std::size_t c = 0; c < 9; ++c) {
      const std::string s = get(c);
      // Text columns left aligned, numbers right aligned.
      if (c < 2) {
        os << s << std::string(width[c] - s.size(), ' ');
      } else {
        os << std::string(width[c] - s.size(), ' ') << s;
      }
      os << (c + 1 < 9 ? "  " : "\n");
    }
  };
  line([&](std::size_t c) { return std::string(header[c]); });
  for (const auto& row : cells) line([&](std::size_t c) { return row[c]; });
  return os.str();
}

std::string CompareReport::json() const {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"method", r.method},
                         {"preset", r.preset},
                         {"sigma", r.sigma},
                         {"epsilon", r.epsilon},
                         {"srocc", r.srocc},
                         {"plcc", r.plcc},
                         {"tau_srocc", r.tau_srocc},
                         {"tau_plcc", r.tau_plcc},
                         {"mean_cd_pct", json_number(r.mean_cd_pct)}});
  }
  j["images"] = nlohmann::ordered_json::array();
  for (const auto& im : images) {
    j["images"].push_back({{"method", im.method},
                           {"preset", im.preset},
                           {"image", im.image},
                           {"mos", im.mos},
                           {"score", im.score},
                           {"median", im.cert.median},
                           {"lower", im.cert.lower},
                           {"upper", im.cert.upper},
                           {"cd_pct", im.cert.cd_pct}});
  }
  return j.dump(2) + "\n";
}

CompareReport compare_methods(const QualityModel& metric, const std::vector<Method>& methods,
                              const std::vector<Tensor>& images, const std::vector<double>& mos,
                              const CompareOptions& opt) {
  if (images.size() != mos.size()) throw DimensionError("compare_methods", 0, images.size(), mos.size(), "mos labels");
  if (images.size() < 3) throw DimensionError("compare_methods", 0, 3, images.size(), "needs at least 3 images");
  std::vector<double> base(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) base[i] = metric.score(images[i]);
  const double base_srocc = srocc(base, mos), base_plcc = plcc(base, mos);
  const double width = metric.range().width();

  CompareReport report;
  for (const Preset& p : opt.presets) {
    report.rows.push_back({"No-Defence", p.name, p.sigma, p.epsilon, base_srocc, base_plcc, 0.0, 0.0,
                           std::numeric_limits<double>::infinity()});
    for (const Method& m : methods) {
      std::vector<double> medians(images.size());
      double cd_sum = 0.0;
      for (std::size_t i = 0; i < images.size(); ++i) {
        const auto cfg = SmoothingConfig::make(p.sigma, p.epsilon, opt.n, substream(opt.seed, {i}));
        CertifiedScore c = certify(sample_scores(metric, images[i], cfg, m.denoiser, opt.workers), cfg, width);
        medians[i] = c.median;
        cd_sum += c.cd_pct;
        report.images.push_back({m.name, p.name, i, mos[i], base[i], std::move(c)});
      }
      const TauCloseness tau = tau_closeness(base, medians, mos);
      report.rows.push_back({m.name, p.name, p.sigma, p.epsilon, srocc(medians, mos), plcc(medians, mos),
                             tau.tau_srocc, tau.tau_plcc, cd_sum / static_cast<double>(images.size())});
    }
  }
  return report;
}

}  // namespace ctiq
