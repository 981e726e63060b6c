#include "ctiq/attack.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "ctiq/adam.hpp"
#include "ctiq/error.hpp"
#include "ctiq/ops.hpp"
#include "ctiq/parallel.hpp"
#include "ctiq/rng.hpp"

namespace ctiq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::ordered_json json_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

AttackResult attack(const Scorer& metric, const Tensor& x, const AttackConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw ConfigError("eps", "attack budget must be positive");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr", "must be positive");
  const Tensor xb = as_batch(x).detach();
  const double width = metric.range().width();
  const double s0 = metric.score(xb);

  Tensor delta = Tensor::zeros(xb.shape(), true);
  Adam opt({cfg.lr});
  // Adam oscillates across the budget sphere, so the last iterate can sit well
  // inside it; keep the iterate with the lowest loss instead.
  std::vector<double> best(delta.data().begin(), delta.data().end());
  double best_loss = 0.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tape tape;
    const Tensor s = ops::sum(tape, metric.forward(tape, ops::add(tape, xb, delta), ParamGrad::frozen));
    const Tensor drop = ops::mul_scalar(tape, ops::add_scalar(tape, ops::mul_scalar(tape, s, -1.0), s0), 1.0 / width);
    const Tensor excess = ops::relu(tape, ops::add_scalar(tape, ops::l2_norm(tape, delta), -cfg.epsilon));
    const Tensor loss = ops::add(tape, drop, excess);
    if (loss.item() < best_loss) {
      best_loss = loss.item();
      best.assign(delta.data().begin(), delta.data().end());
    }
    tape.backward(loss);
    opt.step(delta, tape.grad(delta));
  }
  if (cfg.steps > 0) {
    Tape tape;
    const double s = metric.forward(tape, ops::add(tape, xb, delta), ParamGrad::frozen).item();
    double n2 = 0.0;
    for (double v : delta.data()) n2 += v * v;
    if ((s0 - s) / width + std::max(0.0, std::sqrt(n2) - cfg.epsilon) < best_loss) {
      best.assign(delta.data().begin(), delta.data().end());
    }
  }

  const std::vector<double>& d = best;
  double norm = 0.0;
  for (double v : d) norm += v * v;
  norm = std::sqrt(norm);
  const double shrink = norm > cfg.epsilon ? cfg.epsilon / norm : 1.0;
  std::vector<double> adv(xb.size());
  const auto xv = xb.data();
  double final_sq = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = std::clamp(xv[i] + shrink * d[i], 0.0, 1.0);
    final_sq += (adv[i] - xv[i]) * (adv[i] - xv[i]);
  }
  AttackResult r;
  r.x_adv = Tensor(x.shape(), std::move(adv));
  r.delta_norm = std::sqrt(final_sq);
  r.score_before = s0;
  r.score_after = metric.score(r.x_adv);
  r.adv_gain = (r.score_after - s0) / width;
  return r;
}

LinearScorer::LinearScorer(Tensor weight, double bias, ScoreRange range)
    : w_(weight.reshaped({1, weight.size()})), b_(Tensor::scalar(bias)), range_(range) {
  if (!(range.width() > 0.0)) throw DomainError("LinearScorer: range must have hi > lo");
}

Tensor LinearScorer::forward(Tape& tape, const Tensor& images, ParamGrad) const {
  if (images.size() % w_.size() != 0 || images.rank() < 1) {
    throw DimensionError("LinearScorer", "input " + to_string(images.shape()) + " does not hold whole weight vectors");
  }
  const std::size_t n = images.rank() == 4 ? images.dim(0) : images.size() / w_.size();
  if (n * w_.size() != images.size()) {
    throw DimensionError("LinearScorer", 1, w_.size(), images.size() / n, "features per image");
  }
  return ops::linear(tape, ops::reshape(tape, images, {n, w_.size()}), w_, b_);
}

std::string AttackRecord::json() const {
  nlohmann::ordered_json j;
  j["image_id"] = image_id;
  j["eps"] = eps;
  j["defense"] = defense;
  j["S"] = S;
  j["S_adv"] = S_adv;
  j["S_l"] = json_number(S_l);
  j["S_u"] = json_number(S_u);
  j["adv_gain"] = adv_gain;
  j["cd_l"] = json_number(cd_l);
  j["cd_u"] = json_number(cd_u);
  j["delta_norm"] = delta_norm;
  j["S_l_adv"] = json_number(S_l_adv);
  j["S_u_adv"] = json_number(S_u_adv);
  return j.dump();
}

std::string UnderAttackReport::jsonl() const {
  std::string out;
  for (const auto& r : records) out += r.json() + "\n";
  return out;
}

std::string UnderAttackReport::summary_csv() const {
  std::ostringstream os;
  os << "defense,count,mean_adv_gain,mean_abs_adv_gain,mean_cd_l,mean_cd_u,contained,contained_at_adv\n";
  for (const auto& s : summary) {
    os << s.defense << ',' << s.count << ',' << fmt(s.mean_adv_gain) << ',' << fmt(s.mean_abs_adv_gain) << ','
       << fmt(s.mean_cd_l) << ',' << fmt(s.mean_cd_u) << ',' << s.contained << ','
       << s.contained_at_adv << '\n';
  }
  return os.str();
}

UnderAttackReport evaluate_under_attack(const QualityModel& metric, const std::vector<Defense>& defenses,
                                        const std::vector<Tensor>& images, const std::vector<std::string>& ids,
                                        const AttackConfig& attack_cfg, const SmoothingConfig& smoothing,
                                        std::size_t workers) {
  if (ids.size() != images.size()) throw DimensionError("evaluate_under_attack", 0, images.size(), ids.size(), "ids");
  const double width = metric.range().width();
  std::vector<AttackResult> attacks(images.size());
  parallel_for(images.size(), workers, [&](std::size_t i) { attacks[i] = attack(metric, images[i], attack_cfg); });

  UnderAttackReport report;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (const Defense& d : defenses) {
      AttackRecord r;
      r.image_id = ids[i];
      r.eps = attack_cfg.epsilon;
      r.defense = d.name;
      r.delta_norm = attacks[i].delta_norm;
      if (!d.smoothed) {
        r.S = attacks[i].score_before;
        r.S_adv = attacks[i].score_after;
        r.S_l = -kInf;
        r.S_u = kInf;
        r.cd_l = r.cd_u = kInf;
        r.S_l_adv = -kInf;
        r.S_u_adv = kInf;
      } else {
        SmoothingConfig cfg = smoothing;
        cfg.seed = substream(smoothing.seed, {i});
        const CertifiedScore clean = certify(sample_scores(metric, images[i], cfg, d.denoiser, workers), cfg, width);
        const CertifiedScore adv =
            certify(sample_scores(metric, attacks[i].x_adv, cfg, d.denoiser, workers), cfg, width);
        r.S = clean.median;
        r.S_l = clean.lower;
        r.S_u = clean.upper;
        r.S_adv = adv.median;
        r.S_l_adv = adv.lower;
        r.S_u_adv = adv.upper;
        r.cd_l = (r.S - r.S_l) / width;
        r.cd_u = (r.S_u - r.S) / width;
      }
      r.adv_gain = (r.S_adv - r.S) / width;
      report.records.push_back(std::move(r));
    }
  }
  for (const Defense& d : defenses) {
    AdversarialSummary s;
    s.defense = d.name;
    for (const auto& r : report.records) {
      if (r.defense != d.name) continue;
      ++s.count;
      s.mean_adv_gain += r.adv_gain;
      s.mean_abs_adv_gain += std::abs(r.adv_gain);
      s.mean_cd_l += r.cd_l;
      s.mean_cd_u += r.cd_u;
      if (r.contained()) ++s.contained;
      if (r.contained_at_adv()) ++s.contained_at_adv;
    }
    if (s.count) {
      const double n = static_cast<double>(s.count);
      s.mean_adv_gain /= n;
      s.mean_abs_adv_gain /= n;
      s.mean_cd_l /= n;
      s.mean_cd_u /= n;
    }
    report.summary.push_back(s);
  }
  return report;
}

}  // namespace ctiq
