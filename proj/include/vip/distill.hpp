#pragma once

#include "vip/autodiff.hpp"
#include "vip/diffusion.hpp"
#include "vip/rng.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace vip {

enum class DistillLoss { sft, dpo, redpo };

DistillLoss parse_distill_loss(const std::string& s);
std::string to_string(DistillLoss l);

struct DistillConfig {
  double beta = 50.0;          // DPO inverse temperature
  double omega = 1.0;          // constant weighting w(lambda_t)
  double w_sft = 1e4;          // weight of the SFT regularizer
  double learning_rate = 5e-4;
  int epochs = 2;
  int batch_size = 64;
  std::size_t max_steps = 0;   // stop after this many updates; 0 = no cap
  bool shared_t = true;        // one timestep per pair for both branches
  std::uint64_t seed = 0;

  // beta = 5000, lr = 6e-6, w_sft = 1e4 (the video-scale values).
  static DistillConfig video_preset();
  void validate(const std::string& prefix = "distill") const;
};

// Winner/loser samples, row i of each matrix forming pair i.
struct PairBatch {
  Matrix x_w;
  Matrix x_l;

  std::size_t size() const { return static_cast<std::size_t>(x_w.rows()); }
  PairBatch rows(const std::vector<std::size_t>& idx) const;
};

struct LossBreakdown {
  double dpo = 0.0;
  double sft = 0.0;
  double total = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

// Timesteps and noises for both branches. With shared_t, t_l == t_w.
struct BranchDraw {
  std::vector<int> t_w;
  std::vector<int> t_l;
  Matrix eps_w;
  Matrix eps_l;
};

// Draw order: t_w, [t_l if !shared_t], eps_w, eps_l.
BranchDraw draw_branches(const NoiseSchedule& s, std::size_t n, bool shared_t, Rng& rng);

// Mean over the batch of ||eps_theta(x_t^w, t) - eps_ref(x_t^w, t)||^2,
// with x_t^w = q_sample(x_w, t, eps). The teacher enters as a constant.
ad::Var loss_sft(ad::Tape& tape, const DiffusionModel& student, const DiffusionModel& teacher, const Matrix& x_w,
                 std::span<const int> t, const Matrix& eps);

// Diffusion-DPO on a batch of pairs: per pair
//   d_w = ||eps_w - eps_theta(x_t^w)||^2 - ||eps_w - eps_ref(x_t^w)||^2, d_l alike,
//   loss = -log sigmoid(-beta * T * omega * (d_w - d_l)),
// averaged over the batch. Noise is drawn from `rng` via draw_branches.
ad::Var loss_diff_dpo(ad::Tape& tape, const DiffusionModel& student, const DiffusionModel& teacher,
                      const PairBatch& pairs, const DistillConfig& cfg, Rng& rng);

// Per-pair diffusion-DPO values for an explicit draw (no gradient).
std::vector<double> diff_dpo_per_pair(const DiffusionModel& student, const DiffusionModel& teacher,
                                      const PairBatch& pairs, const DistillConfig& cfg, const BranchDraw& draw);

// L_diff-dpo + w_sft * L_SFT, the SFT term reusing the winner branch's (t, eps).
// Consumes exactly the same random draws as loss_diff_dpo.
std::pair<ad::Var, LossBreakdown> loss_redpo(ad::Tape& tape, const DiffusionModel& student,
                                             const DiffusionModel& teacher, const PairBatch& pairs,
                                             const DistillConfig& cfg, Rng& rng);

struct DistillResult {
  std::vector<LossBreakdown> history;  // per-epoch means
  std::size_t optimizer_steps = 0;
};

// Epochs over shuffled mini-batches with Adam. The teacher is never written.
// Throws NumericError naming the batch index if a loss turns non-finite.
DistillResult train_distill(DiffusionModel& student, const DiffusionModel& teacher, const PairBatch& dataset,
                            const DistillConfig& cfg, DistillLoss mode);

// CSV `epoch,dpo,sft,total`.
std::string loss_history_csv(const std::vector<LossBreakdown>& history);

}  // namespace vip
