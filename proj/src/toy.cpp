#include "vip/toy.hpp"

#include "vip/error.hpp"
#include "vip/io.hpp"

#include <json.hpp>

namespace vip {

using nlohmann::ordered_json;

void ToyConfig::validate() const {
  schedule.build();
  preset_arch(teacher_preset);
  preset_arch(student_preset);
  if (teacher_train.steps < 1) throw ConfigError("toy.teacher_train.steps", "must be positive");
  if (student_train.steps < 1) throw ConfigError("toy.student_train.steps", "must be positive");
  if (n_teacher_candidates < 1) throw ConfigError("toy.n_teacher_candidates", "must be positive");
  if (n_student_candidates < 1) throw ConfigError("toy.n_student_candidates", "must be positive");
  if (max_pairs < 1) throw ConfigError("toy.max_pairs", "must be positive");
  if (distill_steps < 1) throw ConfigError("toy.distill_steps", "must be positive");
  if (n_eval < 100) throw ConfigError("toy.n_eval", "must be at least 100");
  distill.validate("toy.distill");
  reward.validate(GroundTruthMixture::standard());
}

const ToyArm& ToyReport::arm(const std::string& name) const {
  for (const auto& a : arms)
    if (a.name == name) return a;
  throw Error("toy report has no arm '" + name + "'");
}

PairBatch build_mode_preference_pairs(const Matrix& teacher_samples, const Matrix& student_samples,
                                      const GroundTruthMixture& mix, const RewardSpec& spec, std::size_t max_pairs) {
  std::vector<Eigen::Index> winners, losers;
  for (Eigen::Index i = 0; i < teacher_samples.rows(); ++i) {
    auto k = assign_mode(mix, teacher_samples.row(i).transpose(), spec.r_ood);
    if (k && *k == spec.target_mode) winners.push_back(i);
  }
  for (Eigen::Index i = 0; i < student_samples.rows(); ++i) {
    auto k = assign_mode(mix, student_samples.row(i).transpose(), spec.r_ood);
    if (!k || *k != spec.target_mode) losers.push_back(i);
  }
  const std::size_t n = std::min({winners.size(), losers.size(), max_pairs});
  PairBatch p;
  p.x_w.resize(static_cast<Eigen::Index>(n), 2);
  p.x_l.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    p.x_w.row(static_cast<Eigen::Index>(i)) = teacher_samples.row(winners[i]);
    p.x_l.row(static_cast<Eigen::Index>(i)) = student_samples.row(losers[i]);
  }
  return p;
}

namespace {

ToyArm evaluate_arm(std::string name, const DiffusionModel& model, const ToyConfig& cfg, const GroundTruthMixture& mix,
                    std::uint64_t eval_seed) {
  ToyArm arm;
  arm.name = std::move(name);
  arm.samples = sample(model, cfg.n_eval, eval_seed, {cfg.threads});
  const auto report = score_samples(arm.samples, cfg.reward, mix);
  arm.mode_counts = report.mode_counts;
  arm.ood_count = report.ood_count;
  return arm;
}

}  // namespace

ToyReport run_toy_experiment(std::uint64_t seed, const ToyConfig& cfg) {
  cfg.validate();
  const auto mix = GroundTruthMixture::standard();
  const auto schedule = cfg.schedule.build();
  const DataSampler data = [&mix](std::size_t n, Rng& rng) { return sample_gt(mix, n, rng); };

  DiffusionModel teacher{EpsilonNet::create(preset_arch(cfg.teacher_preset), derive_seed(seed, 100)), schedule};
  train_diffusion(teacher, data, cfg.teacher_train, derive_seed(seed, 101));
  DiffusionModel student{EpsilonNet::create(preset_arch(cfg.student_preset), derive_seed(seed, 200)), schedule};
  train_diffusion(student, data, cfg.student_train, derive_seed(seed, 201));

  const Matrix teacher_cands = sample(teacher, cfg.n_teacher_candidates, derive_seed(seed, 300), {cfg.threads});
  const Matrix student_cands = sample(student, cfg.n_student_candidates, derive_seed(seed, 301), {cfg.threads});
  const PairBatch pairs = build_mode_preference_pairs(teacher_cands, student_cands, mix, cfg.reward, cfg.max_pairs);
  if (pairs.size() == 0) throw Error("toy: no preference pairs could be formed");

  const std::uint64_t eval_seed = derive_seed(seed, 400);
  ToyReport report;
  report.seed = seed;
  report.n_samples = cfg.n_eval;
  report.target_mode = cfg.reward.target_mode;
  report.n_pairs = pairs.size();
  report.teacher = evaluate_arm("teacher", teacher, cfg, mix, eval_seed);
  report.arms.push_back(evaluate_arm("base", student, cfg, mix, eval_seed));

  DistillConfig dcfg = cfg.distill;
  dcfg.seed = derive_seed(seed, 500);
  dcfg.max_steps = static_cast<std::size_t>(cfg.distill_steps);
  const std::size_t per_epoch = (pairs.size() + static_cast<std::size_t>(dcfg.batch_size) - 1) /
                                static_cast<std::size_t>(dcfg.batch_size);
  dcfg.epochs = static_cast<int>((dcfg.max_steps + per_epoch - 1) / per_epoch);

  for (auto mode : {DistillLoss::sft, DistillLoss::dpo, DistillLoss::redpo}) {
    DiffusionModel arm_model = student;
    auto result = train_distill(arm_model, teacher, pairs, dcfg, mode);
    auto arm = evaluate_arm(to_string(mode), arm_model, cfg, mix, eval_seed);
    arm.loss_history = std::move(result.history);
    report.arms.push_back(std::move(arm));
  }
  return report;
}

namespace {

ordered_json arm_json(const ToyArm& a) {
  ordered_json j;
  j["name"] = a.name;
  j["mode_counts"] = a.mode_counts;
  j["ood_count"] = a.ood_count;
  ordered_json hist = ordered_json::array();
  for (const auto& b : a.loss_history) hist.push_back({{"dpo", b.dpo}, {"sft", b.sft}, {"total", b.total}});
  j["loss_history"] = hist;
  return j;
}

ToyArm parse_arm(const ordered_json& j) {
  ToyArm a;
  a.name = j.at("name").get<std::string>();
  a.mode_counts = j.at("mode_counts").get<std::vector<std::size_t>>();
  a.ood_count = j.at("ood_count").get<std::size_t>();
  for (const auto& h : j.at("loss_history"))
    a.loss_history.push_back({h.at("dpo").get<double>(), h.at("sft").get<double>(), h.at("total").get<double>()});
  return a;
}

}  // namespace

std::string toy_report_json(const ToyReport& r) {
  ordered_json j;
  j["seed"] = r.seed;
  j["n_samples"] = r.n_samples;
  j["target_mode"] = r.target_mode;
  j["n_pairs"] = r.n_pairs;
  j["teacher"] = arm_json(r.teacher);
  j["arms"] = ordered_json::array();
  for (const auto& a : r.arms) j["arms"].push_back(arm_json(a));
  return j.dump(2) + "\n";
}

ToyReport parse_toy_report(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    ToyReport r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.target_mode = j.at("target_mode").get<std::size_t>();
    r.n_pairs = j.at("n_pairs").get<std::size_t>();
    r.teacher = parse_arm(j.at("teacher"));
    for (const auto& a : j.at("arms")) r.arms.push_back(parse_arm(a));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("toy report: ") + e.what());
  }
}

}  // namespace vip
