#include "vip/pipeline.hpp"

#include "vip/checkpoint.hpp"
#include "vip/error.hpp"
#include "vip/hash.hpp"
#include "vip/io.hpp"

#include <algorithm>
#include <iostream>

namespace vip {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

PipelineMode parse_pipeline_mode(const std::string& s) {
  if (s == "vip") return PipelineMode::vip;
  if (s == "offline") return PipelineMode::offline;
  if (s == "sft_baseline") return PipelineMode::sft_baseline;
  if (s == "dpo_only") return PipelineMode::dpo_only;
  throw ConfigError("plan.mode", "unknown mode '" + s + "'");
}

std::string to_string(PipelineMode m) {
  switch (m) {
    case PipelineMode::vip: return "vip";
    case PipelineMode::offline: return "offline";
    case PipelineMode::sft_baseline: return "sft_baseline";
    case PipelineMode::dpo_only: return "dpo_only";
  }
  return "?";
}

DistillLoss loss_for(PipelineMode m) {
  switch (m) {
    case PipelineMode::sft_baseline: return DistillLoss::sft;
    case PipelineMode::dpo_only: return DistillLoss::dpo;
    default: return DistillLoss::redpo;
  }
}

void StagePlan::validate(const EpsilonNet& teacher, const GroundTruthMixture& mix) const {
  if (n_stages < 1) throw ConfigError("plan.n_stages", "must be at least 1");
  if (k_per_stage < 0) throw ConfigError("plan.k_per_stage", "must be non-negative");
  if (static_cast<std::size_t>(n_stages) * static_cast<std::size_t>(k_per_stage) >= teacher.active_blocks())
    throw ConfigError("plan.k_per_stage", "n_stages * k_per_stage must leave at least one active block");
  if (n_eval_samples < 100) throw ConfigError("plan.n_eval_samples", "must be at least 100");
  if (n_candidates < 2) throw ConfigError("plan.n_candidates", "must be at least 2");
  if (!(tau_percentile >= 0 && tau_percentile <= 100)) throw ConfigError("plan.tau_percentile", "must lie in [0,100]");
  if (threads < 1) throw ConfigError("threads", "must be positive");
  curation.validate("curation");
  distill.validate("distill");
  reward.validate(mix);
  if (curation.target != "auto" &&
      std::find(reward.properties.begin(), reward.properties.end(), curation.target) == reward.properties.end())
    throw ConfigError("curation.target", "'" + curation.target + "' is not a configured property");
}

std::uint64_t stage_seed(std::uint64_t run_seed, int stage) {
  return derive_seed(run_seed, 1000 + static_cast<std::uint64_t>(stage));
}

namespace {

ArtifactRef write_artifact(const fs::path& run_dir, const std::string& rel, const std::string& text) {
  write_text_file(run_dir / rel, text);
  return {rel, sha256_hex(text)};
}

std::vector<std::string> resolve_targets(const StagePlan& plan, const EvalReport& full, const EvalReport& pruned,
                                         StageRecord& rec) {
  if (plan.curation.target != "auto") return {plan.curation.target};
  auto dropped = compare_reports(full, pruned);
  if (!dropped.empty()) return {dropped.front()};
  // Nothing dropped: train on the property that improved least.
  std::string best;
  double best_gap = 0.0;
  for (const auto& [name, v] : full.property_means) {
    const double gap = v - pruned.property_means.at(name);
    if (best.empty() || gap > best_gap) {
      best = name;
      best_gap = gap;
    }
  }
  rec.target_fallback = true;
  rec.warnings.push_back("no property dropped after pruning; targeting least-improved property '" + best + "'");
  return {best};
}

}  // namespace

StageRecord run_stage(PipelineState& state, const StagePlan& plan, int stage_idx, std::uint64_t seed,
                      const fs::path& run_dir, const GroundTruthMixture& mix) {
  const bool offline = plan.mode == PipelineMode::offline;
  const auto k = static_cast<std::size_t>(plan.k_per_stage) * (offline ? static_cast<std::size_t>(plan.n_stages) : 1);
  const std::string dir = "stage_" + std::to_string(stage_idx) + "/";

  StageRecord rec;
  rec.stage = stage_idx;
  rec.stage_seed = seed;
  rec.eval_seed = derive_seed(seed, 1);
  rec.candidate_seed = derive_seed(seed, 2);
  rec.distill_seed = derive_seed(seed, 3);
  rec.loss = to_string(loss_for(plan.mode));
  rec.input_checkpoint = state.student_checkpoint;

  DiffusionModel student = state.student;
  const auto metric = fixed_seed_metric(plan.reward, mix, plan.n_eval_samples, rec.eval_seed, plan.threads);

  // Prune.
  if (k > 0) {
    const auto table = block_importance(student, metric, plan.threads);
    rec.importance = write_artifact(run_dir, dir + "importance.csv", importance_csv(table));
    const auto pruned = apply_prune(student, select_blocks(table, k), stage_idx);
    rec.pruned_block_ids = pruned.pruned_block_ids;
    rec.params_before = pruned.params_before;
    rec.params_after = pruned.params_after;
  } else {
    rec.params_before = rec.params_after = param_count(student.net);
  }
  rec.block_mask_after = student.net.block_mask();
  rec.pruned_checkpoint = write_artifact(run_dir, dir + "pruned.ckpt.json", checkpoint_json(student.net, seed));

  // Evaluate against the full model.
  rec.full_report = metric(state.teacher);
  rec.pre_report = metric(student);
  rec.targets = resolve_targets(plan, rec.full_report, rec.pre_report, rec);

  // Curate: chain i of both models shares a noise stream, so condition id i
  // pairs the teacher's and the student's generation from the same seed.
  const Matrix winners = sample(state.teacher, plan.n_candidates, rec.candidate_seed, {plan.threads});
  const Matrix losers = sample(student, plan.n_candidates, rec.candidate_seed, {plan.threads});
  rec.winner_samples = write_artifact(run_dir, dir + "winner_samples.csv", samples_csv(winners));
  rec.loser_samples = write_artifact(run_dir, dir + "loser_samples.csv", samples_csv(losers));
  const auto teacher_cands = make_candidates(winners, Source::teacher, plan.reward, mix);
  const auto student_cands = make_candidates(losers, Source::student, plan.reward, mix);

  CurationConfig ccfg = plan.curation;
  for (const auto& [p, v] : score_percentiles(teacher_cands, plan.tau_percentile)) ccfg.tau.emplace(p, v);
  rec.tau = ccfg.tau;
  const auto survivors = filter_losers(student_cands, rec.targets, ccfg.alpha);
  const auto filter = make_candidate_filter(ccfg.candidate_filter, mix, plan.reward.target_mode);
  const auto pairs = build_pairs(teacher_cands, survivors, rec.targets, ccfg, stage_idx, filter);
  if (pairs.empty())
    throw StageError(stage_idx, "no preference pairs survived curation; lower curation.tau or raise curation.alpha");
  rec.n_pairs = pairs.size();
  rec.dataset = write_artifact(run_dir, dir + "pairs.jsonl", pairs_jsonl(pairs));

  // Distill.
  DistillConfig dcfg = plan.distill;
  dcfg.seed = rec.distill_seed;
  if (offline) dcfg.epochs *= plan.n_stages;
  const auto result = train_distill(student, state.teacher, to_pair_batch(pairs), dcfg, loss_for(plan.mode));
  rec.loss_history = write_artifact(run_dir, dir + "loss.csv", loss_history_csv(result.history));
  rec.output_checkpoint = write_artifact(run_dir, dir + "student.ckpt.json", checkpoint_json(student.net, seed));
  rec.post_report = metric(student);
  rec.teacher_hash = sha256_hex(checkpoint_json(state.teacher.net, 0));

  state.student = std::move(student);
  state.student_checkpoint = rec.output_checkpoint;
  return rec;
}

RunManifest run_vip(const DiffusionModel& teacher, const StagePlan& plan, std::uint64_t seed, const fs::path& run_dir,
                    const GroundTruthMixture& mix, const ordered_json& config_echo) {
  plan.validate(teacher.net, mix);
  fs::create_directories(run_dir);

  RunManifest m;
  m.seed = seed;
  m.mode = to_string(plan.mode);
  m.config = config_echo;
  m.teacher_checkpoint = write_artifact(run_dir, "teacher.ckpt.json", checkpoint_json(teacher.net, 0));
  m.teacher_report = score_model(teacher, plan.reward, mix, plan.n_eval_samples, derive_seed(seed, 7), plan.threads);

  PipelineState state{teacher, m.teacher_checkpoint.sha256, m.teacher_report, teacher, m.teacher_checkpoint};
  const int n = plan.mode == PipelineMode::offline ? 1 : plan.n_stages;
  for (int i = 0; i < n; ++i) {
    try {
      m.stages.push_back(run_stage(state, plan, i, stage_seed(seed, i), run_dir, mix));
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(i, e.what());
    }
    for (const auto& w : m.stages.back().warnings) std::cerr << "warning: stage " << i << ": " << w << "\n";
  }
  write_text_file(run_dir / "manifest.json", manifest_json(m).dump(2) + "\n");
  return m;
}

std::string replay_stage(const RunManifest& manifest, const StageRecord& record, const DiffusionModel& teacher,
                         const StagePlan& plan, const fs::path& run_dir, const fs::path& scratch_dir,
                         const GroundTruthMixture& mix) {
  const auto input_text = read_text_file(run_dir / record.input_checkpoint.path);
  if (sha256_hex(input_text) != record.input_checkpoint.sha256) throw Error("replay: input checkpoint hash mismatch");
  PipelineState state{teacher, manifest.teacher_checkpoint.sha256, manifest.teacher_report,
                      DiffusionModel{parse_checkpoint(input_text).net, teacher.schedule}, record.input_checkpoint};
  return run_stage(state, plan, record.stage, record.stage_seed, scratch_dir, mix).output_checkpoint.sha256;
}

std::vector<SweepRow> sweep_wsft(std::vector<double> grid, const DiffusionModel& teacher, const StagePlan& plan,
                                 std::uint64_t seed, const fs::path& out_dir, const GroundTruthMixture& mix) {
  if (grid.empty()) throw ConfigError("sweep.grid", "must not be empty");
  std::sort(grid.begin(), grid.end());
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    StagePlan p = plan;
    p.mode = PipelineMode::vip;
    p.distill.w_sft = grid[i];
    const auto m = run_vip(teacher, p, seed, out_dir / ("wsft_" + std::to_string(i)), mix);
    SweepRow row;
    row.w_sft = grid[i];
    for (const auto& s : m.stages) {
      row.stage_reports.push_back(s.post_report);
      row.checkpoint_hashes.push_back(s.output_checkpoint.sha256);
      row.dataset_hashes.push_back(s.dataset.sha256);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::vector<std::string> props;
  if (!rows.empty() && !rows.front().stage_reports.empty())
    for (const auto& [p, v] : rows.front().stage_reports.front().property_means) props.push_back(p);
  std::string out = "w_sft,stage,total";
  for (const auto& p : props) out += "," + p;
  out += ",ood_count,checkpoint_sha256\n";
  for (const auto& r : rows)
    for (std::size_t s = 0; s < r.stage_reports.size(); ++s) {
      const auto& rep = r.stage_reports[s];
      out += format_double(r.w_sft) + "," + std::to_string(s) + "," + format_double(rep.total);
      for (const auto& p : props) out += "," + format_double(rep.property_means.at(p));
      out += "," + std::to_string(rep.ood_count) + "," + r.checkpoint_hashes[s] + "\n";
    }
  return out;
}

namespace {

ordered_json ref_json(const ArtifactRef& r) { return {{"path", r.path}, {"sha256", r.sha256}}; }
ArtifactRef parse_ref(const ordered_json& j) { return {j.at("path").get<std::string>(), j.at("sha256").get<std::string>()}; }
ordered_json report_json(const EvalReport& r) { return ordered_json::parse(eval_report_json(r)); }
EvalReport parse_report(const ordered_json& j) { return parse_eval_report(j.dump()); }

}  // namespace

ordered_json manifest_json(const RunManifest& m) {
  ordered_json j;
  j["format_version"] = 1;
  j["seed"] = m.seed;
  j["mode"] = m.mode;
  j["teacher_checkpoint"] = ref_json(m.teacher_checkpoint);
  j["teacher_report"] = report_json(m.teacher_report);
  j["config"] = m.config;
  j["stages"] = ordered_json::array();
  for (const auto& s : m.stages) {
    ordered_json st;
    st["stage"] = s.stage;
    st["seeds"] = {{"stage", s.stage_seed}, {"eval", s.eval_seed}, {"candidates", s.candidate_seed},
                   {"distill", s.distill_seed}};
    st["pruned_block_ids"] = s.pruned_block_ids;
    st["block_mask_after"] = s.block_mask_after;
    st["params_before"] = s.params_before;
    st["params_after"] = s.params_after;
    st["targets"] = s.targets;
    st["target_fallback"] = s.target_fallback;
    st["tau"] = s.tau;
    st["n_pairs"] = s.n_pairs;
    st["loss"] = s.loss;
    st["full_report"] = report_json(s.full_report);
    st["pre_report"] = report_json(s.pre_report);
    st["post_report"] = report_json(s.post_report);
    st["teacher_hash"] = s.teacher_hash;
    st["input_checkpoint"] = ref_json(s.input_checkpoint);
    st["pruned_checkpoint"] = ref_json(s.pruned_checkpoint);
    st["output_checkpoint"] = ref_json(s.output_checkpoint);
    st["importance"] = ref_json(s.importance);
    st["winner_samples"] = ref_json(s.winner_samples);
    st["loser_samples"] = ref_json(s.loser_samples);
    st["dataset"] = ref_json(s.dataset);
    st["loss_history"] = ref_json(s.loss_history);
    st["warnings"] = s.warnings;
    j["stages"].push_back(std::move(st));
  }
  return j;
}

RunManifest parse_manifest(const ordered_json& j) {
  try {
    RunManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.mode = j.at("mode").get<std::string>();
    m.teacher_checkpoint = parse_ref(j.at("teacher_checkpoint"));
    m.teacher_report = parse_report(j.at("teacher_report"));
    m.config = j.at("config");
    for (const auto& st : j.at("stages")) {
      StageRecord s;
      s.stage = st.at("stage").get<int>();
      const auto& seeds = st.at("seeds");
      s.stage_seed = seeds.at("stage").get<std::uint64_t>();
      s.eval_seed = seeds.at("eval").get<std::uint64_t>();
      s.candidate_seed = seeds.at("candidates").get<std::uint64_t>();
      s.distill_seed = seeds.at("distill").get<std::uint64_t>();
      s.pruned_block_ids = st.at("pruned_block_ids").get<std::vector<std::size_t>>();
      s.block_mask_after = st.at("block_mask_after").get<std::vector<bool>>();
      s.params_before = st.at("params_before").get<std::size_t>();
      s.params_after = st.at("params_after").get<std::size_t>();
      s.targets = st.at("targets").get<std::vector<std::string>>();
      s.target_fallback = st.at("target_fallback").get<bool>();
      s.tau = st.at("tau").get<std::map<std::string, double>>();
      s.n_pairs = st.at("n_pairs").get<std::size_t>();
      s.loss = st.at("loss").get<std::string>();
      s.full_report = parse_report(st.at("full_report"));
      s.pre_report = parse_report(st.at("pre_report"));
      s.post_report = parse_report(st.at("post_report"));
      s.teacher_hash = st.at("teacher_hash").get<std::string>();
      s.input_checkpoint = parse_ref(st.at("input_checkpoint"));
      s.pruned_checkpoint = parse_ref(st.at("pruned_checkpoint"));
      s.output_checkpoint = parse_ref(st.at("output_checkpoint"));
      s.importance = parse_ref(st.at("importance"));
      s.winner_samples = parse_ref(st.at("winner_samples"));
      s.loser_samples = parse_ref(st.at("loser_samples"));
      s.dataset = parse_ref(st.at("dataset"));
      s.loss_history = parse_ref(st.at("loss_history"));
      s.warnings = st.at("warnings").get<std::vector<std::string>>();
      m.stages.push_back(std::move(s));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("manifest: ") + e.what());
  }
}

}  // namespace vip
