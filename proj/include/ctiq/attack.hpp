#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctiq/models.hpp"
#include "ctiq/smoothing.hpp"

namespace ctiq {

struct AttackConfig {
  double epsilon = 0.36;
  std::size_t steps = 1000;
  double lr = 5e-4;
  std::uint64_t seed = 0;
};

struct AttackResult {
  Tensor x_adv;  ///< same shape as the input
  double delta_norm = 0.0;  ///< ||x_adv - x||_2 after projection and clamping
  double score_before = 0.0;
  double score_after = 0.0;
  double adv_gain = 0.0;  ///< (score_after - score_before) / range
};

/// Minimise (M(x) - M(x + d)) / range + max(0, ||d||_2 - eps) over d with Adam
/// from d = 0, then project d radially onto the eps-ball and clamp x + d to [0,1].
AttackResult attack(const Scorer& metric, const Tensor& x, const AttackConfig& cfg);

/// w^T vec(x) + b with a declared range: a scorer with a closed-form attack optimum.
class LinearScorer final : public Scorer {
 public:
  LinearScorer(Tensor weight, double bias, ScoreRange range);
  Tensor forward(Tape& tape, const Tensor& images, ParamGrad mode = ParamGrad::frozen) const override;
  ScoreRange range() const override { return range_; }
  const Tensor& weight() const { return w_; }

 private:
  Tensor w_;  ///< [1, D]
  Tensor b_;  ///< [1]
  ScoreRange range_;
};

struct Defense {
  std::string name;                         ///< "none", "ms", "dms", "dms_iqa"
  bool smoothed = false;
  const DenoiserModel* denoiser = nullptr;
};

/// One row of the adversarial evaluation. For the undefended metric S_l and S_u
/// are -inf / +inf and so are cd_l / cd_u and the bounds at x_adv.
struct AttackRecord {
  std::string image_id;
  double eps = 0.0;
  std::string defense;
  double S = 0.0;
  double S_adv = 0.0;
  double S_l = 0.0;
  double S_u = 0.0;
  double adv_gain = 0.0;
  double cd_l = 0.0;
  double cd_u = 0.0;
  double delta_norm = 0.0;
  double S_l_adv = 0.0;  ///< bounds certified at x_adv itself
  double S_u_adv = 0.0;

  /// S_adv inside the interval certified at the clean image.
  bool contained() const { return S_l <= S_adv && S_adv <= S_u; }
  bool contained_at_adv() const { return S_l_adv <= S_adv && S_adv <= S_u_adv; }
  std::string json() const;
};

struct AdversarialSummary {
  std::string defense;
  double mean_adv_gain = 0.0;
  double mean_abs_adv_gain = 0.0;
  double mean_cd_l = 0.0;
  double mean_cd_u = 0.0;
  std::size_t contained = 0;
  std::size_t contained_at_adv = 0;
  std::size_t count = 0;
};

struct UnderAttackReport {
  std::vector<AttackRecord> records;  ///< image-major, defenses in the given order
  std::vector<AdversarialSummary> summary;

  std::string jsonl() const;
  std::string summary_csv() const;
};

/// Attack the undefended metric on every image (transfer setting), then score
/// clean and attacked images under each defense. Smoothed defenses certify x
/// and x_adv with the same noise draws (seed substream(smoothing.seed, {i}));
/// S is the defended clean median, S_adv the defended attacked median, and
/// [S_l, S_u] the interval certified at the clean image.
UnderAttackReport evaluate_under_attack(const QualityModel& metric, const std::vector<Defense>& defenses,
                                        const std::vector<Tensor>& images, const std::vector<std::string>& ids,
                                        const AttackConfig& attack_cfg, const SmoothingConfig& smoothing,
                                        std::size_t workers = 1);

}  // namespace ctiq
