// ctiq: command-line driver for data generation, training, certification,
// attacks, comparisons, metric-driven optimisation and parameter sweeps.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctiq/attack.hpp"
#include "ctiq/binary_io.hpp"
#include "ctiq/config.hpp"
#include "ctiq/dataset.hpp"
#include "ctiq/error.hpp"
#include "ctiq/manifest.hpp"
#include "ctiq/metric_opt.hpp"
#include "ctiq/models.hpp"
#include "ctiq/parallel.hpp"
#include "ctiq/robust_eval.hpp"
#include "ctiq/smoothing.hpp"
#include "ctiq/sweep.hpp"
#include "ctiq/training.hpp"

namespace fs = std::filesystem;
using namespace ctiq;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Reads typed values from the merged config and remembers every value it hands
// out, defaults included, so the manifest shows the fully resolved run.
class Settings {
 public:
  explicit Settings(KeyValueConfig kv) : kv_(std::move(kv)) {}

  std::string text(const std::string& key, const std::string& fallback) {
    return used_[key] = kv_.get(key, fallback);
  }
  std::string required(const std::string& key) { return used_[key] = kv_.require(key); }
  std::optional<std::string> optional_text(const std::string& key) {
    if (!kv_.has(key) || kv_.get(key, "").empty()) return std::nullopt;
    return used_[key] = kv_.get(key, "");
  }
  double real(const std::string& key, double fallback) {
    const double v = kv_.get_double(key, fallback);
    used_[key] = fmt(v);
    return v;
  }
  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    const auto v = kv_.get_u64(key, fallback);
    used_[key] = std::to_string(v);
    return v;
  }
  std::size_t size(const std::string& key, std::size_t fallback) {
    const auto v = kv_.get_size(key, fallback);
    used_[key] = std::to_string(v);
    return v;
  }
  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) {
    const auto v = kv_.get_doubles(key, fallback);
    std::string joined;
    for (double x : v) joined += (joined.empty() ? "" : ",") + fmt(x);
    used_[key] = joined;
    return v;
  }
  std::vector<std::size_t> sizes(const std::string& key, const std::vector<std::size_t>& fallback) {
    const auto v = kv_.get_sizes(key, fallback);
    std::string joined;
    for (auto x : v) joined += (joined.empty() ? "" : ",") + std::to_string(x);
    used_[key] = joined;
    return v;
  }
  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& fallback) {
    const auto v = kv_.get_strings(key, fallback);
    std::string joined;
    for (const auto& x : v) joined += (joined.empty() ? "" : ",") + x;
    used_[key] = joined;
    return v;
  }
  bool has(const std::string& key) const { return kv_.has(key); }
  const std::map<std::string, std::string>& used() const { return used_; }

 private:
  KeyValueConfig kv_;
  std::map<std::string, std::string> used_;
};

struct Run {
  Settings& s;
  fs::path out;
  RunManifest manifest;
  std::uint64_t seed;
  std::size_t workers;

  void write_text(const std::string& name, const std::string& text) {
    binio::write_file(out / name, std::span<const char>(text.data(), text.size()));
    manifest.add_artifact(out, name);
  }
  void finish() {
    manifest.set_config(s.used());
    manifest.write(out);
  }
};

fs::path input_file(Settings& s, const std::string& key) {
  const fs::path p = s.required(key);
  if (!fs::is_regular_file(p)) throw ConfigError(key, "no such file: " + p.string());
  return p;
}

std::optional<fs::path> optional_input(Settings& s, const std::string& key) {
  const auto v = s.optional_text(key);
  if (!v) return std::nullopt;
  const fs::path p = *v;
  if (!fs::is_regular_file(p)) throw ConfigError(key, "no such file: " + p.string());
  return p;
}

Split parse_split(const std::string& key, const std::string& v) {
  if (v == "train") return Split::train;
  if (v == "val") return Split::val;
  if (v == "test") return Split::test;
  throw ConfigError(key, "expected train, val or test, got '" + v + "'");
}

// Preset first, then explicit sigma/eps on top; "custom" needs both.
Preset resolve_preset(Settings& s, const std::string& fallback) {
  const std::string name = s.text("preset", fallback);
  if (name == "custom") {
    if (!s.has("sigma")) throw ConfigError("sigma", "preset custom needs sigma");
    if (!s.has("eps")) throw ConfigError("eps", "preset custom needs eps");
    return {"custom", s.real("sigma", 0.0), s.real("eps", 0.0)};
  }
  const Preset base = preset(name);
  const double sigma = s.real("sigma", base.sigma), eps = s.real("eps", base.epsilon);
  if (sigma != base.sigma || eps != base.epsilon) return {"custom", sigma, eps};
  return base;
}

SmoothingConfig resolve_smoothing(Settings& s, std::uint64_t seed, std::size_t default_n) {
  const Preset p = resolve_preset(s, "strong");
  const std::size_t n = s.size("n", default_n);
  const double confidence = s.real("confidence", 0.0);
  try {
    return SmoothingConfig::make(p.sigma, p.epsilon, n, seed, confidence);
  } catch (const ConfigError& e) {
    // Map library field names onto the flag names users type.
    throw ConfigError(e.field() == "epsilon" ? "eps" : e.field(), e.what());
  }
}

struct Selection {
  std::vector<Tensor> images;
  std::vector<double> mos;
  std::vector<std::string> ids;
  std::vector<std::size_t> index;
};

Selection select_images(Settings& s, const Dataset& d, const std::string& default_split, std::size_t default_limit) {
  const std::string split_name = s.text("split", default_split);
  std::vector<std::size_t> idx;
  if (split_name == "all") {
    for (std::size_t i = 0; i < d.size(); ++i) idx.push_back(i);
  } else {
    idx = d.indices(parse_split("split", split_name));
  }
  const std::size_t limit = s.size("limit", default_limit);
  if (limit > 0 && idx.size() > limit) idx.resize(limit);
  if (idx.empty()) throw ConfigError("split", "selects no images");
  Selection sel;
  for (std::size_t i : idx) {
    sel.images.push_back(d.items[i].image);
    sel.mos.push_back(d.items[i].mos);
    sel.ids.push_back(std::to_string(i));
    sel.index.push_back(i);
  }
  return sel;
}

// The three optional defence denoisers every evaluation command understands.
struct Denoisers {
  std::optional<DenoiserModel> dms, dms_iqa;
};

Denoisers load_denoisers(Settings& s, Run& run) {
  Denoisers d;
  if (auto p = optional_input(s, "dms")) {
    d.dms = DenoiserModel::load(*p);
    run.manifest.add_input(*p);
  }
  if (auto p = optional_input(s, "dms_iqa")) {
    d.dms_iqa = DenoiserModel::load(*p);
    run.manifest.add_input(*p);
  }
  return d;
}

QualityModel load_metric(Settings& s, Run& run) {
  const fs::path p = input_file(s, "metric");
  run.manifest.add_input(p);
  return QualityModel::load(p);
}

Dataset load_data(Settings& s, Run& run) {
  const fs::path p = input_file(s, "data");
  run.manifest.add_input(p);
  return load_dataset(p);
}

const DenoiserModel* pick(const Denoisers& d, const std::string& name, const std::string& key) {
  if (name == "dms") {
    if (!d.dms) throw ConfigError("dms", key + " lists dms but no dms denoiser is given");
    return &*d.dms;
  }
  if (name == "dms_iqa") {
    if (!d.dms_iqa) throw ConfigError("dms_iqa", key + " lists dms_iqa but no dms_iqa denoiser is given");
    return &*d.dms_iqa;
  }
  return nullptr;
}

std::vector<std::string> default_defenses(const Denoisers& d, const std::string& first) {
  std::vector<std::string> v{first, "ms"};
  if (d.dms) v.push_back("dms");
  if (d.dms_iqa) v.push_back("dms_iqa");
  return v;
}

// ---- subcommands -----------------------------------------------------------

void cmd_gen_data(Run& run) {
  Settings& s = run.s;
  GenerateOptions opt;
  opt.count = s.size("count", 500);
  opt.height = s.size("height", 32);
  opt.width = s.size("width", 32);
  opt.mos_noise = s.real("mos_noise", 0.0);
  opt.seed = run.seed;
  opt.workers = run.workers;
  if (opt.height == 0 || opt.height % 8) throw ConfigError("height", "must be a positive multiple of 8");
  if (opt.width == 0 || opt.width % 8) throw ConfigError("width", "must be a positive multiple of 8");
  if (opt.count < 10) throw ConfigError("count", "needs at least 10 images");
  if (opt.mos_noise < 0.0) throw ConfigError("mos_noise", "must be non-negative");
  const Dataset d = generate(opt);
  save_dataset(run.out / "dataset.ctds", d);
  run.manifest.add_artifact(run.out, "dataset.ctds");
  std::cout << "wrote " << d.size() << " images to " << (run.out / "dataset.ctds").string() << "\n";
}

void cmd_train_metric(Run& run) {
  Settings& s = run.s;
  MetricTrainConfig cfg;
  cfg.epochs = s.size("epochs", cfg.epochs);
  cfg.lr = s.real("lr", cfg.lr);
  cfg.batch_size = s.size("batch_size", cfg.batch_size);
  cfg.seed = run.seed;
  if (cfg.batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr", "must be positive");
  const Dataset d = load_data(s, run);

  std::vector<MetricEpoch> history;
  const QualityModel m = train_metric(d, cfg, &history);
  m.save(run.out / "metric.ctiq");
  run.manifest.add_artifact(run.out, "metric.ctiq");
  std::ostringstream csv;
  csv << "epoch,train_loss,val_srocc\n";
  for (const auto& h : history) csv << h.epoch << ',' << fmt(h.train_loss) << ',' << fmt(h.val_srocc) << '\n';
  run.write_text("metric_history.csv", csv.str());

  const auto test = d.image_list(Split::test);
  std::vector<double> scores;
  for (const auto& x : test) scores.push_back(m.score(x));
  const auto mos = d.mos(Split::test);
  std::cout << "test srocc " << fmt(srocc(scores, mos)) << " plcc " << fmt(plcc(scores, mos)) << "\n";
}

void cmd_train_denoiser(Run& run) {
  Settings& s = run.s;
  const std::string mode = s.text("mode", "mse");
  if (mode != "mse" && mode != "composite") throw ConfigError("mode", "expected mse or composite, got '" + mode + "'");
  const bool composite = mode == "composite";
  TrainConfig cfg;
  cfg.mode = composite ? TrainMode::composite : TrainMode::mse_only;
  cfg.sigma = resolve_preset(s, "strong").sigma;
  cfg.epochs = s.size("epochs", composite ? 50 : 30);
  cfg.lr = s.real("lr", composite ? 1e-4 : 1e-3);
  cfg.batch_size = s.size("batch_size", 15);
  cfg.seed = run.seed;
  LossWeights w{s.real("c_r", 1.0), s.real("c_t", 1000.0)};
  const std::string name = s.text("name", composite ? "dms_iqa" : "dms");
  if (cfg.batch_size < (composite ? 2u : 1u)) throw ConfigError("batch_size", composite ? "composite mode needs at least 2" : "must be positive");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr", "must be positive");
  if (name.empty() || name.find('/') != std::string::npos) throw ConfigError("name", "must be a plain file stem");

  const Dataset d = load_data(s, run);
  const QualityModel metric = load_metric(s, run);
  std::optional<DenoiserModel> init;
  if (auto p = optional_input(s, "init")) {
    init = DenoiserModel::load(*p);
    run.manifest.add_input(*p);
  } else {
    init = DenoiserModel::init(substream(run.seed, {0x1d}));
  }
  const DenoiserTrainResult r = train_denoiser(*init, metric, d, cfg, w);
  r.model.save(run.out / (name + ".ctiq"));
  run.manifest.add_artifact(run.out, name + ".ctiq");
  run.write_text(name + "_history.csv", history_csv(r.history));
  std::cout << "best epoch " << r.best_epoch << " val srocc " << fmt(r.history[r.best_epoch].val_srocc) << "\n";
}

void cmd_certify(Run& run) {
  Settings& s = run.s;
  const SmoothingConfig base = resolve_smoothing(s, run.seed, 2000);
  const Dataset d = load_data(s, run);
  const QualityModel metric = load_metric(s, run);
  std::optional<DenoiserModel> den;
  if (auto p = optional_input(s, "denoiser")) {
    den = DenoiserModel::load(*p);
    run.manifest.add_input(*p);
  }
  const Selection sel = select_images(s, d, "test", 0);
  std::string out;
  for (std::size_t i = 0; i < sel.images.size(); ++i) {
    SmoothingConfig cfg = base;
    cfg.seed = substream(run.seed, {i});
    const CertifiedScore c = certify_image(metric, sel.images[i], cfg, den ? &*den : nullptr, run.workers);
    out += certificate_json(sel.ids[i], cfg, c) + "\n";
  }
  run.write_text("certificates.jsonl", out);
  std::cout << "certified " << sel.images.size() << " images\n";
}

void cmd_attack(Run& run) {
  Settings& s = run.s;
  const SmoothingConfig smoothing = resolve_smoothing(s, run.seed, 2000);
  AttackConfig acfg;
  acfg.epsilon = smoothing.epsilon;
  acfg.steps = s.size("steps", acfg.steps);
  acfg.lr = s.real("lr", acfg.lr);
  acfg.seed = run.seed;
  if (!(acfg.epsilon > 0.0)) throw ConfigError("eps", "attack budget must be positive");
  if (!(acfg.lr > 0.0)) throw ConfigError("lr", "must be positive");
  const Dataset d = load_data(s, run);
  const QualityModel metric = load_metric(s, run);
  const Denoisers dn = load_denoisers(s, run);
  std::vector<Defense> defenses;
  for (const auto& name : s.strings("defenses", default_defenses(dn, "none"))) {
    if (name == "none") {
      defenses.push_back({"none", false, nullptr});
    } else if (name == "ms" || name == "dms" || name == "dms_iqa") {
      defenses.push_back({name, true, pick(dn, name, "defenses")});
    } else {
      throw ConfigError("defenses", "unknown defense '" + name + "'");
    }
  }
  const Selection sel = select_images(s, d, "test", 0);
  const UnderAttackReport r = evaluate_under_attack(metric, defenses, sel.images, sel.ids, acfg, smoothing, run.workers);
  run.write_text("attack.jsonl", r.jsonl());
  run.write_text("attack_summary.csv", r.summary_csv());
  std::cout << r.summary_csv();
}

std::string rank_errors_csv(const CompareReport& r) {
  std::ostringstream os;
  os << "method,preset,m,delta_inf,t_bound,t_single_delta,observed_errors\n";
  for (const auto& row : r.rows) {
    if (row.method == "No-Defence") continue;
    std::vector<double> a, b;
    for (const auto& im : r.images) {
      if (im.method == row.method && im.preset == row.preset) {
        a.push_back(im.cert.median);
        b.push_back(im.score);
      }
    }
    const RankErrorCertificate c = rank_error_certificate(a, b);
    os << row.method << ',' << row.preset << ',' << c.m << ',' << fmt(c.delta_inf) << ',' << c.t_bound << ','
       << c.t_single_delta << ',' << c.observed_errors << '\n';
  }
  return os.str();
}

void cmd_eval_compare(Run& run) {
  Settings& s = run.s;
  CompareOptions opt;
  opt.n = s.size("n", 2000);
  opt.seed = run.seed;
  opt.workers = run.workers;
  if (s.has("preset") || s.has("sigma") || s.has("eps")) {
    opt.presets = {resolve_preset(s, "strong")};
  } else {
    for (const auto& name : s.strings("presets", {"weak", "strong"})) opt.presets.push_back(preset(name));
  }
  for (const auto& p : opt.presets) {
    try {
      SmoothingConfig::make(p.sigma, p.epsilon, opt.n, opt.seed);
    } catch (const ConfigError& e) {
      throw ConfigError(e.field() == "epsilon" ? "eps" : e.field(), e.what());
    }
  }
  const Dataset d = load_data(s, run);
  const QualityModel metric = load_metric(s, run);
  const Denoisers dn = load_denoisers(s, run);
  std::vector<Method> methods{{"MS", nullptr}};
  if (dn.dms) methods.push_back({"DMS", &*dn.dms});
  if (dn.dms_iqa) methods.push_back({"DMS-IQA", &*dn.dms_iqa});
  const Selection sel = select_images(s, d, "test", 0);
  const CompareReport r = compare_methods(metric, methods, sel.images, sel.mos, opt);
  run.write_text("compare.csv", r.csv());
  run.write_text("compare.txt", r.text());
  run.write_text("compare.json", r.json());
  run.write_text("rank_errors.csv", rank_errors_csv(r));
  std::cout << r.text();
}

void cmd_optimize(Run& run) {
  Settings& s = run.s;
  OptConfig cfg;
  cfg.steps = s.size("steps", cfg.steps);
  cfg.lr = s.real("lr", cfg.lr);
  cfg.n_samples = s.size("n", cfg.n_samples);
  cfg.sigma = s.real("sigma", cfg.sigma);
  cfg.seed = run.seed;
  cfg.quality_weight = s.real("quality_weight", cfg.quality_weight);
  cfg.log_every = s.size("log_every", cfg.log_every);
  const double start_noise = s.real("start_noise", 0.1);
  if (!(cfg.sigma > 0.0)) throw ConfigError("sigma", "must be positive");
  if (cfg.n_samples == 0) throw ConfigError("n", "must be positive");
  if (cfg.log_every == 0) throw ConfigError("log_every", "must be positive");
  if (!(start_noise >= 0.0)) throw ConfigError("start_noise", "must be non-negative");

  const Dataset d = load_data(s, run);
  const QualityModel metric = load_metric(s, run);
  const Denoisers dn = load_denoisers(s, run);
  std::vector<QualityBackend> backends;
  for (const auto& name : s.strings("backends", default_defenses(dn, "undefended"))) {
    if (name == "undefended") {
      backends.push_back({name, false, nullptr});
    } else if (name == "ms" || name == "dms" || name == "dms_iqa") {
      backends.push_back({name, true, pick(dn, name, "backends")});
    } else {
      throw ConfigError("backends", "unknown backend '" + name + "'");
    }
  }
  const Selection sel = select_images(s, d, "test", 20);

  std::vector<Tensor> noisy;
  for (std::size_t i = 0; i < sel.images.size(); ++i) {
    Rng rng(substream(run.seed, {0x0e, i}));
    std::vector<double> v(sel.images[i].data().begin(), sel.images[i].data().end());
    for (double& x : v) x = std::clamp(x + start_noise * rng.normal(), 0.0, 1.0);
    noisy.emplace_back(sel.images[i].shape(), std::move(v));
  }

  std::ostringstream traj, summary;
  traj << "backend,image_id,step,loss,q_value,rmse_vs_clean\n";
  summary << "backend,count,mean_start_rmse,mean_final_rmse\n";
  for (const auto& b : backends) {
    std::vector<OptResult> results(sel.images.size());
    parallel_for(sel.images.size(), run.workers, [&](std::size_t i) {
      results[i] = optimize_image(noisy[i], sel.images[i], metric, b, cfg);
    });
    double start = 0.0, final = 0.0;
    Dataset finals;
    for (std::size_t i = 0; i < results.size(); ++i) {
      for (const auto& st : results[i].trajectory) {
        traj << b.name << ',' << sel.ids[i] << ',' << st.step << ',' << fmt(st.loss) << ',' << fmt(st.q_value) << ','
             << fmt(st.rmse_vs_clean) << '\n';
      }
      start += results[i].trajectory.front().rmse_vs_clean;
      final += results[i].trajectory.back().rmse_vs_clean;
      LabeledImage item = d.items[sel.index[i]];
      item.image = results[i].y;
      finals.items.push_back(std::move(item));
    }
    const double n = static_cast<double>(results.size());
    summary << b.name << ',' << results.size() << ',' << fmt(start / n) << ',' << fmt(final / n) << '\n';
    save_dataset(run.out / ("optimized_" + b.name + ".ctds"), finals);
    run.manifest.add_artifact(run.out, "optimized_" + b.name + ".ctds");
  }
  run.write_text("optimize.csv", traj.str());
  run.write_text("optimize_summary.csv", summary.str());
  std::cout << summary.str();
}

void cmd_sweep(Run& run) {
  Settings& s = run.s;
  const std::string grid = s.required("grid");
  if (grid != "loss" && grid != "batch" && grid != "eps-sigma") {
    throw ConfigError("grid", "expected loss, batch or eps-sigma, got '" + grid + "'");
  }
  const std::size_t n = s.size("n", 2000);
  if (grid == "eps-sigma") {
    const auto sigmas = s.reals("sigmas", {0.12, 0.18, 0.24, 0.3, 0.36, 0.42});
    const auto epsilons = s.reals("epsilons", {0.06, 0.12, 0.24, 0.36, 0.42, 0.5, 0.64, 0.72});
    for (double v : sigmas) {
      if (!(v > 0.0)) throw ConfigError("sigmas", "values must be positive");
    }
    for (double v : epsilons) {
      if (!(v >= 0.0)) throw ConfigError("epsilons", "values must be non-negative");
    }
    if (n < 2) throw ConfigError("n", "needs at least 2 samples");
    const Dataset d = load_data(s, run);
    const QualityModel metric = load_metric(s, run);
    const Denoisers dn = load_denoisers(s, run);
    std::vector<Method> methods{{"MS", nullptr}};
    if (dn.dms) methods.push_back({"DMS", &*dn.dms});
    if (dn.dms_iqa) methods.push_back({"DMS-IQA", &*dn.dms_iqa});
    const Selection sel = select_images(s, d, "test", 0);
    const auto rows = sweep_eps_sigma(metric, methods, sel.images, sel.mos, sigmas, epsilons, n, run.seed, run.workers);
    run.write_text("sweep_eps_sigma.csv", eps_sigma_csv(rows));
    std::cout << eps_sigma_csv(rows);
    return;
  }

  const Preset p = resolve_preset(s, "strong");
  try {
    SmoothingConfig::make(p.sigma, p.epsilon, n, run.seed);
  } catch (const ConfigError& e) {
    throw ConfigError(e.field() == "epsilon" ? "eps" : e.field(), e.what());
  }
  TrainConfig train;
  train.sigma = p.sigma;
  train.epochs = s.size("epochs", 50);
  train.lr = s.real("lr", 1e-4);
  train.batch_size = s.size("batch_size", 15);
  train.seed = run.seed;
  SweepEval eval{p, n, run.seed, run.workers};
  const Dataset d = load_data(s, run);
  const QualityModel metric = load_metric(s, run);
  const fs::path init_path = input_file(s, "init");
  run.manifest.add_input(init_path);
  const DenoiserModel init = DenoiserModel::load(init_path);
  if (grid == "loss") {
    if (train.batch_size < 2) throw ConfigError("batch_size", "composite mode needs at least 2");
    const auto c_r = s.reals("c_r", {1, 10, 100, 1000, 10000});
    const auto c_t = s.reals("c_t", {1, 10, 100, 1000, 10000});
    const auto rows = sweep_loss(init, metric, d, train, c_r, c_t, eval);
    run.write_text("sweep_loss.csv", loss_grid_csv(rows));
    std::cout << loss_grid_csv(rows);
  } else {
    const auto batches = s.sizes("batches", {3, 5, 7, 10, 15, 20});
    const LossWeights w{s.real("c_r", 1.0), s.real("c_t", 1000.0)};
    const auto rows = sweep_batch(init, metric, d, train, batches, w, eval);
    run.write_text("sweep_batch.csv", batch_grid_csv(rows));
    std::cout << batch_grid_csv(rows);
  }
}

// ---- command table ---------------------------------------------------------

struct FlagSpec {
  std::string flag;
  std::string help;
};

struct Command {
  std::string name;
  std::string help;
  std::vector<FlagSpec> flags;
  std::function<void(Run&)> body;
};

std::string key_of(const std::string& flag) {
  std::string k = flag.substr(2);
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

const std::vector<FlagSpec> kCommon = {
    {"--seed", "root seed (u64)"},
    {"--workers", "worker threads, 0 = all cores"},
    {"--out", "output directory (default: out)"},
};

const std::vector<FlagSpec> kSmoothing = {
    {"--preset", "weak | strong | custom"},
    {"--sigma", "smoothing noise sd (overrides the preset)"},
    {"--eps", "certified L2 radius (overrides the preset)"},
    {"--n", "number of noise samples"},
    {"--confidence", "binomial coverage per bound, 0 = off"},
};

const std::vector<FlagSpec> kSelect = {
    {"--data", "dataset file (.ctds)"},
    {"--metric", "quality model weights (.ctiq)"},
    {"--split", "train | val | test | all"},
    {"--limit", "use at most this many images, 0 = all"},
};

std::vector<FlagSpec> join(std::initializer_list<std::vector<FlagSpec>> parts) {
  std::vector<FlagSpec> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<Command> commands() {
  const std::vector<FlagSpec> defended = {{"--dms", "DMS denoiser weights"}, {"--dms-iqa", "DMS-IQA denoiser weights"}};
  return {
      {"gen-data", "generate the synthetic labelled dataset",
       join({kCommon,
             {{"--count", "number of images"},
              {"--height", "image height (multiple of 8)"},
              {"--width", "image width (multiple of 8)"},
              {"--mos-noise", "sd of label jitter"}}}),
       cmd_gen_data},
      {"train-metric", "train the toy quality metric",
       join({kCommon,
             {{"--data", "dataset file"},
              {"--epochs", "training epochs"},
              {"--lr", "Adam learning rate"},
              {"--batch-size", "minibatch size"}}}),
       cmd_train_metric},
      {"train-denoiser", "train a denoiser with the MSE or composite loss",
       join({kCommon,
             {{"--data", "dataset file"},
              {"--metric", "quality model weights"},
              {"--mode", "mse | composite"},
              {"--init", "starting denoiser weights (composite fine-tuning)"},
              {"--preset", "weak | strong: picks the training sigma"},
              {"--sigma", "training noise sd"},
              {"--epochs", "training epochs"},
              {"--lr", "Adam learning rate"},
              {"--batch-size", "minibatch size"},
              {"--c-r", "rank loss weight"},
              {"--c-t", "target loss weight"},
              {"--name", "output file stem"}}}),
       cmd_train_denoiser},
      {"certify", "certify images with median smoothing",
       join({kCommon, kSmoothing, kSelect, {{"--denoiser", "denoiser weights (denoised smoothing)"}}}),
       cmd_certify},
      {"attack", "attack the metric and score the attacked images under each defence",
       join({kCommon, kSmoothing, kSelect, defended,
             {{"--defenses", "comma list of none, ms, dms, dms_iqa"},
              {"--steps", "attack iterations"},
              {"--lr", "attack Adam learning rate"}}}),
       cmd_attack},
      {"eval-compare", "compare MS, DMS and DMS-IQA",
       join({kCommon, kSmoothing, kSelect, defended, {{"--presets", "comma list of presets when no --preset"}}}),
       cmd_eval_compare},
      {"optimize", "denoise images by optimising the (smoothed) metric",
       join({kCommon, kSelect, defended,
             {{"--backends", "comma list of undefended, ms, dms, dms_iqa"},
              {"--steps", "iterations"},
              {"--lr", "Adam learning rate"},
              {"--n", "noise samples per step"},
              {"--sigma", "smoothing noise sd"},
              {"--quality-weight", "weight of the quality term"},
              {"--log-every", "log interval in steps"},
              {"--start-noise", "sd of the noise added to the clean images"}}}),
       cmd_optimize},
      {"sweep", "loss-weight, batch-size or epsilon/sigma grids",
       join({kCommon, kSmoothing, kSelect, defended,
             {{"--grid", "loss | batch | eps-sigma"},
              {"--init", "MSE-trained denoiser to fine-tune from"},
              {"--epochs", "fine-tuning epochs"},
              {"--lr", "fine-tuning learning rate"},
              {"--batch-size", "minibatch size (loss grid)"},
              {"--c-r", "rank weights (comma list)"},
              {"--c-t", "target weights (comma list)"},
              {"--batches", "batch sizes (comma list)"},
              {"--sigmas", "sigma grid (comma list)"},
              {"--epsilons", "epsilon grid (comma list)"}}}),
       cmd_sweep},
  };
}

int run_command(const Command& c, const std::string& config_path, const std::map<std::string, std::string>& overrides) {
  try {
    std::set<std::string> allowed;
    for (const auto& f : c.flags) allowed.insert(key_of(f.flag));
    KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
    kv.require_known(allowed);
    for (const auto& [k, v] : overrides) kv.set(k, v);

    Settings s(std::move(kv));
    const fs::path out = s.text("out", "out");
    Run run{s, out, RunManifest(c.name), s.u64("seed", 0), resolve_workers(s.size("workers", 0))};
    run.manifest.add_seed("seed", run.seed);
    if (!config_path.empty()) run.manifest.add_input(config_path);
    fs::create_directories(out);
    c.body(run);
    run.finish();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"certified image-quality toolkit"};
  app.require_subcommand(1);
  const auto table = commands();
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::vector<CLI::App*> subs;
  for (const auto& c : table) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "key=value config file");
    for (const auto& f : c.flags) {
      const std::string key = key_of(f.flag);
      sub->add_option_function<std::string>(
          f.flag, [&overrides, key](const std::string& v) { overrides[key] = v; }, f.help);
    }
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (subs[i]->parsed()) return run_command(table[i], config_path, overrides);
  }
  return kExitConfig;
}
