#include "vip/distill.hpp"

#include "vip/error.hpp"
#include "vip/io.hpp"
#include "vip/optim.hpp"

#include <cmath>
#include <numeric>

namespace vip {

namespace {

void check_pairs(const PairBatch& p) {
  if (p.x_w.rows() == 0) throw Error("empty pair batch");
  if (p.x_w.rows() != p.x_l.rows()) throw ShapeError("batch", "winner and loser counts differ");
  if (p.x_w.cols() != 2 || p.x_l.cols() != 2) throw ShapeError("dim", "pairs must be 2-d samples");
}

void check_compatible(const DiffusionModel& student, const DiffusionModel& teacher) {
  if (student.schedule.T != teacher.schedule.T || student.schedule.beta != teacher.schedule.beta)
    throw Error("student and teacher use different noise schedules");
}

// Per-pair margin z = -beta*T*omega*(d_w - d_l) and the student's winner prediction.
struct DpoNodes {
  ad::Var z;
  ad::Var pred_w;
  Matrix ref_w;
};

DpoNodes dpo_nodes(ad::Tape& tape, const DiffusionModel& student, const DiffusionModel& teacher,
                   const PairBatch& pairs, const DistillConfig& cfg, const BranchDraw& d, bool trainable) {
  const auto& s = student.schedule;
  const Matrix xt_w = q_sample(s, pairs.x_w, d.t_w, d.eps_w);
  const Matrix xt_l = q_sample(s, pairs.x_l, d.t_l, d.eps_l);

  const Matrix ref_w = predict_noise(teacher.net, xt_w, d.t_w);
  const Matrix ref_l = predict_noise(teacher.net, xt_l, d.t_l);
  const Matrix ref_err_w = (d.eps_w - ref_w).rowwise().squaredNorm();
  const Matrix ref_err_l = (d.eps_l - ref_l).rowwise().squaredNorm();

  ad::Var pred_w = student.net.forward(tape, tape.constant(xt_w), d.t_w, trainable);
  ad::Var pred_l = student.net.forward(tape, tape.constant(xt_l), d.t_l, trainable);
  ad::Var d_w = ad::sub(ad::row_sq_norm(ad::sub(tape.constant(d.eps_w), pred_w)), tape.constant(ref_err_w));
  ad::Var d_l = ad::sub(ad::row_sq_norm(ad::sub(tape.constant(d.eps_l), pred_l)), tape.constant(ref_err_l));
  const double k = cfg.beta * static_cast<double>(s.T) * cfg.omega;
  return {ad::scale(ad::sub(d_w, d_l), -k), pred_w, ref_w};
}

ad::Var sft_from_prediction(ad::Tape& tape, ad::Var pred_w, const Matrix& ref_w) {
  return ad::mean(ad::row_sq_norm(ad::sub(pred_w, tape.constant(ref_w))));
}

std::pair<ad::Var, LossBreakdown> objective(ad::Tape& tape, const DiffusionModel& student,
                                            const DiffusionModel& teacher, const PairBatch& pairs,
                                            const DistillConfig& cfg, const BranchDraw& draw, DistillLoss mode) {
  auto nodes = dpo_nodes(tape, student, teacher, pairs, cfg, draw, true);
  ad::Var dpo = ad::scale(ad::mean(ad::log_sigmoid(nodes.z)), -1.0);
  ad::Var sft = sft_from_prediction(tape, nodes.pred_w, nodes.ref_w);
  LossBreakdown b;
  b.dpo = dpo.scalar();
  b.sft = sft.scalar();
  switch (mode) {
    case DistillLoss::sft:
      b.total = b.sft;
      return {sft, b};
    case DistillLoss::dpo:
      b.total = b.dpo;
      return {dpo, b};
    case DistillLoss::redpo:
      b.total = b.dpo + cfg.w_sft * b.sft;
      // With w_sft == 0 the total is the DPO node itself, so gradients match
      // the pure DPO objective bit for bit.
      if (cfg.w_sft == 0.0) return {dpo, b};
      return {ad::add(dpo, ad::scale(sft, cfg.w_sft)), b};
  }
  throw Error("unknown distillation loss");
}

}  // namespace

DistillLoss parse_distill_loss(const std::string& s) {
  if (s == "sft") return DistillLoss::sft;
  if (s == "dpo") return DistillLoss::dpo;
  if (s == "redpo") return DistillLoss::redpo;
  throw ConfigError("loss", "unknown loss '" + s + "' (expected sft, dpo or redpo)");
}

std::string to_string(DistillLoss l) {
  switch (l) {
    case DistillLoss::sft: return "sft";
    case DistillLoss::dpo: return "dpo";
    case DistillLoss::redpo: return "redpo";
  }
  return "?";
}

DistillConfig DistillConfig::video_preset() {
  DistillConfig c;
  c.beta = 5000.0;
  c.learning_rate = 6e-6;
  c.w_sft = 1e4;
  return c;
}

void DistillConfig::validate(const std::string& prefix) const {
  if (!(beta > 0) || !std::isfinite(beta)) throw ConfigError(prefix + ".beta", "must be positive");
  if (!(omega > 0) || !std::isfinite(omega)) throw ConfigError(prefix + ".omega", "must be positive");
  if (!(w_sft >= 0) || !std::isfinite(w_sft)) throw ConfigError(prefix + ".w_sft", "must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError(prefix + ".learning_rate", "must be positive");
  if (epochs < 1) throw ConfigError(prefix + ".epochs", "must be at least 1");
  if (batch_size < 1) throw ConfigError(prefix + ".batch_size", "must be positive");
}

PairBatch PairBatch::rows(const std::vector<std::size_t>& idx) const {
  PairBatch out;
  out.x_w.resize(static_cast<Eigen::Index>(idx.size()), x_w.cols());
  out.x_l.resize(static_cast<Eigen::Index>(idx.size()), x_l.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.x_w.row(static_cast<Eigen::Index>(i)) = x_w.row(static_cast<Eigen::Index>(idx[i]));
    out.x_l.row(static_cast<Eigen::Index>(i)) = x_l.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

BranchDraw draw_branches(const NoiseSchedule& s, std::size_t n, bool shared_t, Rng& rng) {
  BranchDraw d;
  d.t_w = draw_timesteps(s, n, rng);
  d.t_l = shared_t ? d.t_w : draw_timesteps(s, n, rng);
  d.eps_w = draw_noise(static_cast<Eigen::Index>(n), 2, rng);
  d.eps_l = draw_noise(static_cast<Eigen::Index>(n), 2, rng);
  return d;
}

ad::Var loss_sft(ad::Tape& tape, const DiffusionModel& student, const DiffusionModel& teacher, const Matrix& x_w,
                 std::span<const int> t, const Matrix& eps) {
  check_compatible(student, teacher);
  const Matrix xt = q_sample(student.schedule, x_w, t, eps);
  const Matrix ref = predict_noise(teacher.net, xt, t);
  return sft_from_prediction(tape, student.net.forward(tape, tape.constant(xt), t, true), ref);
}

ad::Var loss_diff_dpo(ad::Tape& tape, const DiffusionModel& student, const DiffusionModel& teacher,
                      const PairBatch& pairs, const DistillConfig& cfg, Rng& rng) {
  check_pairs(pairs);
  check_compatible(student, teacher);
  const auto draw = draw_branches(student.schedule, pairs.size(), cfg.shared_t, rng);
  auto nodes = dpo_nodes(tape, student, teacher, pairs, cfg, draw, true);
  return ad::scale(ad::mean(ad::log_sigmoid(nodes.z)), -1.0);
}

std::vector<double> diff_dpo_per_pair(const DiffusionModel& student, const DiffusionModel& teacher,
                                      const PairBatch& pairs, const DistillConfig& cfg, const BranchDraw& draw) {
  check_pairs(pairs);
  check_compatible(student, teacher);
  ad::Tape tape;
  auto nodes = dpo_nodes(tape, student, teacher, pairs, cfg, draw, false);
  const Matrix v = ad::scale(ad::log_sigmoid(nodes.z), -1.0).value();
  return {v.data(), v.data() + v.size()};
}

std::pair<ad::Var, LossBreakdown> loss_redpo(ad::Tape& tape, const DiffusionModel& student,
                                             const DiffusionModel& teacher, const PairBatch& pairs,
                                             const DistillConfig& cfg, Rng& rng) {
  check_pairs(pairs);
  check_compatible(student, teacher);
  const auto draw = draw_branches(student.schedule, pairs.size(), cfg.shared_t, rng);
  return objective(tape, student, teacher, pairs, cfg, draw, DistillLoss::redpo);
}

DistillResult train_distill(DiffusionModel& student, const DiffusionModel& teacher, const PairBatch& dataset,
                            const DistillConfig& cfg, DistillLoss mode) {
  cfg.validate();
  check_pairs(dataset);
  check_compatible(student, teacher);
  Rng shuffle_rng(derive_seed(cfg.seed, 11));
  Rng noise_rng(derive_seed(cfg.seed, 12));
  auto opt = OptimizerState::adam(cfg.learning_rate);
  const auto shapes = student.net.param_shapes();
  const std::size_t n = dataset.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  DistillResult result;
  std::vector<std::size_t> order(n);
  std::size_t batch_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    LossBreakdown acc;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += bs, ++batch_index, ++batches) {
      if (cfg.max_steps != 0 && result.optimizer_steps == cfg.max_steps) break;
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
      const PairBatch batch = dataset.rows(idx);
      const auto draw = draw_branches(student.schedule, batch.size(), cfg.shared_t, noise_rng);
      ad::Tape tape;
      auto [loss, b] = objective(tape, student, teacher, batch, cfg, draw, mode);
      if (!std::isfinite(loss.scalar()))
        throw NumericError("train_distill: non-finite loss at batch " + std::to_string(batch_index));
      step(opt, student.net, tape.backward(loss, shapes));
      ++result.optimizer_steps;
      acc.dpo += b.dpo;
      acc.sft += b.sft;
      acc.total += b.total;
    }
    if (batches == 0) break;
    const auto k = static_cast<double>(batches);
    result.history.push_back({acc.dpo / k, acc.sft / k, acc.total / k});
  }
  return result;
}

std::string loss_history_csv(const std::vector<LossBreakdown>& history) {
  std::string out = "epoch,dpo,sft,total\n";
  for (std::size_t i = 0; i < history.size(); ++i)
    out += std::to_string(i) + "," + format_double(history[i].dpo) + "," + format_double(history[i].sft) + "," +
           format_double(history[i].total) + "\n";
  return out;
}

}  // namespace vip
