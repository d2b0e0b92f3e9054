#pragma once

#include "vip/curation.hpp"
#include "vip/distill.hpp"
#include "vip/error.hpp"
#include "vip/pruning.hpp"
#include "vip/reward.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vip {

// vip: online ReDPO per stage. offline: prune every stage's blocks at once and
// train once. sft_baseline / dpo_only: the vip loop with a different loss.
enum class PipelineMode { vip, offline, sft_baseline, dpo_only };

PipelineMode parse_pipeline_mode(const std::string& s);
std::string to_string(PipelineMode m);
DistillLoss loss_for(PipelineMode m);

struct StagePlan {
  int n_stages = 2;
  int k_per_stage = 1;
  CurationConfig curation;
  DistillConfig distill;  // per-stage; the stage seed overrides distill.seed
  RewardSpec reward;
  std::size_t n_eval_samples = 1000;
  std::size_t n_candidates = 2000;
  double tau_percentile = 25.0;  // default loser floor when curation.tau omits a property
  PipelineMode mode = PipelineMode::vip;
  int threads = 1;

  // Checks every field and that n_stages * k_per_stage leaves a block active.
  void validate(const EpsilonNet& teacher, const GroundTruthMixture& mix) const;
};

struct ArtifactRef {
  std::string path;  // relative to the run directory
  std::string sha256;

  bool operator==(const ArtifactRef&) const = default;
};

struct StageRecord {
  int stage = 0;
  std::uint64_t stage_seed = 0;
  std::uint64_t eval_seed = 0;
  std::uint64_t candidate_seed = 0;
  std::uint64_t distill_seed = 0;
  std::vector<std::size_t> pruned_block_ids;
  std::vector<bool> block_mask_after;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  std::vector<std::string> targets;
  bool target_fallback = false;  // no property dropped; trained on the least-improved one
  std::map<std::string, double> tau;
  std::size_t n_pairs = 0;
  std::string loss;
  EvalReport full_report;  // teacher, same evaluation seed as the stage reports
  EvalReport pre_report;   // pruned, before distillation
  EvalReport post_report;  // after distillation
  std::string teacher_hash;
  ArtifactRef input_checkpoint;
  ArtifactRef pruned_checkpoint;
  ArtifactRef output_checkpoint;
  ArtifactRef importance;
  ArtifactRef winner_samples;
  ArtifactRef loser_samples;
  ArtifactRef dataset;
  ArtifactRef loss_history;
  std::vector<std::string> warnings;
};

struct RunManifest {
  std::uint64_t seed = 0;
  std::string mode;
  ArtifactRef teacher_checkpoint;
  EvalReport teacher_report;
  nlohmann::ordered_json config;  // effective configuration echo
  std::vector<StageRecord> stages;
};

nlohmann::ordered_json manifest_json(const RunManifest& m);
RunManifest parse_manifest(const nlohmann::ordered_json& j);

// Mutable run state: the frozen teacher and the evolving student.
struct PipelineState {
  DiffusionModel teacher;
  std::string teacher_hash;
  EvalReport teacher_report;
  DiffusionModel student;
  ArtifactRef student_checkpoint;  // latest student checkpoint on disk
};

// Failure inside a stage; the state passed in is left unchanged.
class StageError : public Error {
 public:
  StageError(int stage, const std::string& what)
      : Error("stage " + std::to_string(stage) + ": " + what), stage_(stage) {}
  int stage() const noexcept { return stage_; }

 private:
  int stage_;
};

std::uint64_t stage_seed(std::uint64_t run_seed, int stage);

// prune -> evaluate -> curate -> distill, with every random draw derived from
// `seed`. Artifacts go to run_dir/stage_<i>/. On success the student in
// `state` is replaced; on failure `state` is untouched.
StageRecord run_stage(PipelineState& state, const StagePlan& plan, int stage_idx, std::uint64_t seed,
                      const std::filesystem::path& run_dir, const GroundTruthMixture& mix);

// Runs every stage with `teacher` frozen as reference and winner generator.
// Writes manifest.json plus all artifacts into run_dir.
RunManifest run_vip(const DiffusionModel& teacher, const StagePlan& plan, std::uint64_t seed,
                    const std::filesystem::path& run_dir, const GroundTruthMixture& mix,
                    const nlohmann::ordered_json& config_echo = {});

// Re-runs the recorded stage from its input checkpoint and seed; returns the
// SHA-256 of the reproduced output checkpoint.
std::string replay_stage(const RunManifest& manifest, const StageRecord& record, const DiffusionModel& teacher,
                         const StagePlan& plan, const std::filesystem::path& run_dir,
                         const std::filesystem::path& scratch_dir, const GroundTruthMixture& mix);

struct SweepRow {
  double w_sft = 0.0;
  std::vector<EvalReport> stage_reports;  // post-distillation report per stage
  std::vector<std::string> checkpoint_hashes;
  std::vector<std::string> dataset_hashes;
};

// One vip run per w_sft value, rows sorted by w_sft ascending. Run i lives in
// out_dir/wsft_<index>.
std::vector<SweepRow> sweep_wsft(std::vector<double> grid, const DiffusionModel& teacher, const StagePlan& plan,
                                 std::uint64_t seed, const std::filesystem::path& out_dir,
                                 const GroundTruthMixture& mix);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace vip
