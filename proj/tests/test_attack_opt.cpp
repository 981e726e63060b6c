#include <gtest/gtest.h>

#include <cmath>

#include "ctiq/attack.hpp"
#include "ctiq/error.hpp"
#include "ctiq/metric_opt.hpp"
#include "support.hpp"

using namespace ctiq;
using namespace ctiq::testing;

namespace {

double norm(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v * v;
  return std::sqrt(acc);
}

double dist(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
  return std::sqrt(acc);
}

}  // namespace

TEST(Attack, ZeroStepsLeavesImage) {
  Rng rng(61);
  const QualityModel m = QualityModel::init(1);
  const Tensor x = uniform_tensor({3, 16, 16}, rng, 0.0, 1.0);
  const AttackResult r = attack(m, x, {.epsilon = 0.36, .steps = 0});
  EXPECT_EQ(dist(r.x_adv, x), 0.0);
  EXPECT_EQ(r.adv_gain, 0.0);
  EXPECT_EQ(r.x_adv.shape(), x.shape());
}

TEST(Attack, LinearSurrogateReachesClosedFormOptimum) {
  Rng rng(62);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor w = random_tensor({3 * 8 * 8}, rng, 0.2);
    const LinearScorer m(w, 1.0, {-10.0, 30.0});
    const Tensor x = uniform_tensor({3, 8, 8}, rng, 0.3, 0.7);
    const double eps = 0.36;
    const AttackResult r = attack(m, x, {.epsilon = eps, .steps = 1000, .lr = 5e-4});
    const double optimum = eps * norm(w) / m.range().width();
    EXPECT_GE(r.adv_gain, 0.95 * optimum) << "trial " << trial;
    EXPECT_LE(r.adv_gain, optimum * (1 + 1e-9));
    EXPECT_LE(r.delta_norm, eps + 1e-12);
    // Direction close to w / ||w||.
    double cosine = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) cosine += (r.x_adv.at(i) - x.at(i)) * w.at(i);
    EXPECT_GT(cosine / (r.delta_norm * norm(w)), 0.95);
  }
}

TEST(Attack, StaysInBudgetAndPixelRange) {
  Rng rng(63);
  const QualityModel m = QualityModel::init(2);
  const Tensor x = uniform_tensor({3, 16, 16}, rng, 0.0, 1.0);
  const AttackResult r = attack(m, x, {.epsilon = 0.5, .steps = 40, .lr = 5e-2});
  EXPECT_LE(dist(r.x_adv, x), 0.5 + 1e-12);
  for (double v : r.x_adv.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NEAR(r.adv_gain, (r.score_after - r.score_before) / 100.0, 1e-15);
  EXPECT_THROW(attack(m, x, {.epsilon = 0.0}), ConfigError);
}

TEST(UnderAttack, RecordsAndContainment) {
  Rng rng(64);
  const QualityModel m = QualityModel::init(3);
  const DenoiserModel d = DenoiserModel::init(4);
  std::vector<Tensor> images;
  for (int i = 0; i < 3; ++i) images.push_back(uniform_tensor({3, 8, 8}, rng, 0.1, 0.9));
  const std::vector<Defense> defenses{{"none", false, nullptr}, {"ms", true, nullptr}, {"dms", true, &d}};
  const auto smoothing = SmoothingConfig::make(0.18, 0.36, 200, 5);
  const auto report =
      evaluate_under_attack(m, defenses, images, {"a", "b", "c"}, {.epsilon = 0.36, .steps = 20, .lr = 1e-2}, smoothing);
  ASSERT_EQ(report.records.size(), 9u);
  for (const auto& rec : report.records) {
    EXPECT_EQ(rec.eps, 0.36);
    if (rec.defense == "none") {
      EXPECT_TRUE(std::isinf(rec.S_l) && rec.S_l < 0);
      EXPECT_TRUE(std::isinf(rec.S_u) && rec.S_u > 0);
      EXPECT_TRUE(std::isinf(rec.cd_l) && std::isinf(rec.cd_u));
    } else {
      EXPECT_LE(rec.S_l, rec.S);
      EXPECT_LE(rec.S, rec.S_u);
      EXPECT_TRUE(rec.contained_at_adv());
    }
    EXPECT_LE(rec.delta_norm, 0.36 + 1e-12);
  }
  ASSERT_EQ(report.summary.size(), 3u);
  EXPECT_EQ(report.summary[0].defense, "none");
  EXPECT_EQ(report.summary[0].count, 3u);
  const std::string csv = report.summary_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "defense,count,mean_adv_gain,mean_abs_adv_gain,mean_cd_l,mean_cd_u,contained,contained_at_adv");
  EXPECT_NE(report.jsonl().find("\"S_l\":\"-inf\""), std::string::npos);
}

TEST(UnderAttack, WorkerCountDoesNotChangeRecords) {
  Rng rng(65);
  const QualityModel m = QualityModel::init(6);
  std::vector<Tensor> images;
  for (int i = 0; i < 2; ++i) images.push_back(uniform_tensor({3, 8, 8}, rng, 0.1, 0.9));
  const std::vector<Defense> defenses{{"none", false, nullptr}, {"ms", true, nullptr}};
  const auto smoothing = SmoothingConfig::make(0.18, 0.36, 100, 7);
  const AttackConfig ac{.epsilon = 0.36, .steps = 5, .lr = 1e-2};
  const auto a = evaluate_under_attack(m, defenses, images, {"0", "1"}, ac, smoothing, 1);
  const auto b = evaluate_under_attack(m, defenses, images, {"0", "1"}, ac, smoothing, 3);
  EXPECT_EQ(a.jsonl(), b.jsonl());
  EXPECT_EQ(a.summary_csv(), b.summary_csv());
}

TEST(MetricOpt, ZeroStepsKeepsStart) {
  Rng rng(66);
  const QualityModel m = QualityModel::init(8);
  const Tensor clean = uniform_tensor({3, 8, 8}, rng, 0.2, 0.8);
  Tensor noisy = clean.clone();
  for (double& v : noisy.mutable_data()) v = std::clamp(v + 0.1 * rng.normal(), 0.0, 1.0);
  const OptResult r = optimize_image(noisy, clean, m, {"undefended", false, nullptr}, {.steps = 0});
  EXPECT_EQ(dist(r.y, noisy), 0.0);
  ASSERT_EQ(r.trajectory.size(), 1u);
  EXPECT_DOUBLE_EQ(r.trajectory[0].rmse_vs_clean, rmse(noisy, clean));
}

TEST(MetricOpt, ZeroQualityWeightLeavesOnlyTheAnchor) {
  Rng rng(67);
  const QualityModel m = QualityModel::init(9);
  const Tensor x = uniform_tensor({3, 8, 8}, rng, 0.0, 1.0);
  const OptResult r =
      optimize_image(x, x, m, {"ms", true, nullptr}, {.steps = 20, .lr = 1e-2, .n_samples = 8, .quality_weight = 0.0});
  EXPECT_EQ(dist(r.y, x), 0.0);
}

TEST(MetricOpt, FirstStepFollowsSurrogateGradient) {
  // One Adam step from zero state moves every pixel by lr against the sign of
  // the gradient; check that sign against finite differences of the mean score
  // over the same noise draws.
  Rng rng(68);
  const QualityModel m = QualityModel::init(10);
  const Tensor x = uniform_tensor({3, 8, 8}, rng, 0.2, 0.8);
  const OptConfig cfg{.steps = 1, .lr = 1e-3, .n_samples = 6, .sigma = 0.18, .seed = 11};
  const OptResult r = optimize_image(x, x, m, {"ms", true, nullptr}, cfg);
  const SmoothingConfig draws{cfg.sigma, 0.0, cfg.n_samples, substream(cfg.seed, {0})};
  auto mean_score = [&](const Tensor& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) acc += m.score(noisy_copy(y, draws, i));
    return acc / static_cast<double>(cfg.n_samples);
  };
  std::size_t checked = 0;
  for (std::size_t p = 0; p < x.size(); p += 7) {
    Tensor up = x.clone(), down = x.clone();
    up.mutable_data()[p] += 1e-5;
    down.mutable_data()[p] -= 1e-5;
    const double g = (mean_score(up) - mean_score(down)) / 2e-5;
    if (std::abs(g) < 1e-3) continue;
    const double moved = r.y.at(p) - x.at(p);
    EXPECT_NEAR(moved, g > 0 ? cfg.lr : -cfg.lr, 1e-6) << "pixel " << p;
    ++checked;
  }
  EXPECT_GT(checked, 10u);
}

TEST(MetricOpt, DeterministicAndClamped) {
  Rng rng(69);
  const QualityModel m = QualityModel::init(12);
  const DenoiserModel d = DenoiserModel::init(13);
  const Tensor clean = uniform_tensor({3, 8, 8}, rng, 0.0, 1.0);
  const OptConfig cfg{.steps = 6, .lr = 0.2, .n_samples = 4, .seed = 3, .log_every = 2};
  const OptResult a = optimize_image(clean, clean, m, {"dms", true, &d}, cfg);
  const OptResult b = optimize_image(clean, clean, m, {"dms", true, &d}, cfg);
  EXPECT_EQ(trajectory_csv(a.trajectory), trajectory_csv(b.trajectory));
  EXPECT_EQ(dist(a.y, b.y), 0.0);
  ASSERT_EQ(a.trajectory.size(), 4u);  // steps 0, 2, 4 and the final image
  EXPECT_EQ(a.trajectory.back().step, 6u);
  for (double v : a.y.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}
