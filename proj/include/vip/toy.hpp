#pragma once

#include "vip/diffusion.hpp"
#include "vip/distill.hpp"
#include "vip/reward.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vip {

struct ScheduleConfig {
  int T = 100;
  double beta_min = 1e-4;
  double beta_max = 0.2;

  NoiseSchedule build() const { return NoiseSchedule::linear(T, beta_min, beta_max); }
};

// Teacher vs. low-capacity student on the 2-d mixture, then three distilled
// copies of the student that differ only in their loss.
struct ToyConfig {
  ScheduleConfig schedule;
  std::string teacher_preset = "teacher";
  std::string student_preset = "base_student";
  TrainOptions teacher_train{20000, 128, 1e-3};
  TrainOptions student_train{20000, 128, 1e-3};
  std::size_t n_teacher_candidates = 20000;  // winners are the ~10% landing in the target mode
  std::size_t n_student_candidates = 4000;
  std::size_t max_pairs = 2000;
  int distill_steps = 3000;
  DistillConfig distill;
  std::size_t n_eval = 2000;
  RewardSpec reward;
  int threads = 1;

  void validate() const;
};

struct ToyArm {
  std::string name;
  std::vector<std::size_t> mode_counts;
  std::size_t ood_count = 0;
  std::vector<LossBreakdown> loss_history;
  Matrix samples;
};

struct ToyReport {
  std::uint64_t seed = 0;
  std::size_t n_samples = 0;
  std::size_t target_mode = 1;
  std::size_t n_pairs = 0;
  ToyArm teacher;
  std::vector<ToyArm> arms;  // base, sft, dpo, redpo

  const ToyArm& arm(const std::string& name) const;
};

// Winners: teacher samples inside the target mode. Losers: student samples
// outside it (other modes or OOD). Paired in draw order, up to max_pairs.
PairBatch build_mode_preference_pairs(const Matrix& teacher_samples, const Matrix& student_samples,
                                      const GroundTruthMixture& mix, const RewardSpec& spec, std::size_t max_pairs);

ToyReport run_toy_experiment(std::uint64_t seed, const ToyConfig& cfg = {});

std::string toy_report_json(const ToyReport& r);
ToyReport parse_toy_report(const std::string& text);

}  // namespace vip
