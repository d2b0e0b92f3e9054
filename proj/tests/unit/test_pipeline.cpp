#include "vip/checkpoint.hpp"
#include "vip/error.hpp"
#include "vip/hash.hpp"
#include "vip/io.hpp"
#include "vip/pipeline.hpp"

#include <doctest.h>

#include <filesystem>

using namespace vip;
namespace fs = std::filesystem;

namespace {

const DiffusionModel& small_teacher() {
  static const DiffusionModel m = [] {
    DiffusionModel t{EpsilonNet::create({2, 8, 16, 4}, 5), NoiseSchedule::linear(20, 1e-3, 0.3)};
    const auto mix = GroundTruthMixture::standard();
    train_diffusion(t, [&](std::size_t n, Rng& rng) { return sample_gt(mix, n, rng); }, {400, 64, 3e-3}, 9);
    return t;
  }();
  return m;
}

StagePlan small_plan() {
  StagePlan p;
  p.n_stages = 2;
  p.k_per_stage = 1;
  p.n_eval_samples = 150;
  p.n_candidates = 120;
  p.tau_percentile = 0;
  p.curation.alpha = 3.0;
  p.distill.epochs = 1;
  p.distill.batch_size = 32;
  p.distill.beta = 5.0;
  return p;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("vip_pipeline_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("two-stage run") {
  const auto mix = GroundTruthMixture::standard();
  const auto& teacher = small_teacher();
  const auto plan = small_plan();
  const auto dir = scratch("run");
  const auto m = run_vip(teacher, plan, 42, dir, mix);
  REQUIRE(m.stages.size() == 2);

  // Parameter ledger strictly decreases and chains across stages.
  CHECK(m.stages[0].params_after < m.stages[0].params_before);
  CHECK(m.stages[1].params_before == m.stages[0].params_after);
  CHECK(m.stages[1].params_after < m.stages[1].params_before);
  CHECK(m.stages[0].params_before == param_count(teacher.net));
  CHECK(m.stages[0].params_before - m.stages[1].params_after == 4 * (16 * 16 + 16));

  // The frozen teacher never changes.
  const auto teacher_hash = sha256_hex(checkpoint_json(teacher.net, 0));
  CHECK(m.teacher_checkpoint.sha256 == teacher_hash);
  for (const auto& s : m.stages) CHECK(s.teacher_hash == teacher_hash);

  // Seeds derive from the run seed.
  CHECK(m.stages[1].stage_seed == stage_seed(42, 1));
  CHECK(m.stages[1].distill_seed == derive_seed(stage_seed(42, 1), 3));

  // Every artifact on disk matches its recorded hash.
  for (const auto& s : m.stages)
    for (const auto* a : {&s.importance, &s.pruned_checkpoint, &s.output_checkpoint, &s.winner_samples,
                          &s.loser_samples, &s.dataset, &s.loss_history})
      CHECK(sha256_file(dir / a->path) == a->sha256);

  // Stage 1 losers come from the stage 0 student.
  CHECK(m.stages[1].input_checkpoint == m.stages[0].output_checkpoint);
  const auto stage0_student = parse_checkpoint(read_text_file(dir / m.stages[0].output_checkpoint.path));
  auto pruned_again = DiffusionModel{stage0_student.net, teacher.schedule};
  for (auto id : m.stages[1].pruned_block_ids) pruned_again.net.set_block_active(id, false);
  const Matrix losers = sample(pruned_again, plan.n_candidates, m.stages[1].candidate_seed);
  CHECK(sha256_hex(samples_csv(losers)) == m.stages[1].loser_samples.sha256);

  // Manifest survives a JSON round trip.
  const auto text = read_text_file(dir / "manifest.json");
  const auto back = parse_manifest(nlohmann::ordered_json::parse(text));
  CHECK(manifest_json(back).dump(2) + "\n" == text);

  SUBCASE("same seed reproduces every hash") {
    const auto again = run_vip(teacher, plan, 42, scratch("run_again"), mix);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(again.stages[i].output_checkpoint == m.stages[i].output_checkpoint);
      CHECK(again.stages[i].dataset == m.stages[i].dataset);
    }
  }
  SUBCASE("replay reproduces a stage") {
    CHECK(replay_stage(m, m.stages[1], teacher, plan, dir, scratch("replay"), mix) ==
          m.stages[1].output_checkpoint.sha256);
  }
}

TEST_CASE("offline mode prunes everything in one stage") {
  const auto mix = GroundTruthMixture::standard();
  auto plan = small_plan();
  plan.mode = PipelineMode::offline;
  const auto m = run_vip(small_teacher(), plan, 3, scratch("offline"), mix);
  REQUIRE(m.stages.size() == 1);
  CHECK(m.stages[0].pruned_block_ids.size() == 2);
  CHECK(m.stages[0].loss == "redpo");
  CHECK(m.mode == "offline");
}

TEST_CASE("k = 0 is pure distillation") {
  const auto mix = GroundTruthMixture::standard();
  auto plan = small_plan();
  plan.k_per_stage = 0;
  plan.n_stages = 1;
  const auto& teacher = small_teacher();
  // An unpruned copy of the teacher would generate identical candidates, so
  // start from a student that already lost a block.
  auto student = teacher;
  student.net.set_block_active(2, false);
  PipelineState state{teacher, "", {}, student, {}};
  const auto dir = scratch("k0");
  const auto rec = run_stage(state, plan, 0, 3, dir, mix);
  CHECK(rec.pruned_block_ids.empty());
  CHECK(rec.importance.path.empty());
  CHECK(rec.params_before == rec.params_after);
  CHECK(rec.block_mask_after == std::vector<bool>{true, true, false, true});
  CHECK(rec.n_pairs > 0);
  CHECK(state_hash(state.student.net) != state_hash(student.net));
  CHECK(sha256_file(dir / rec.output_checkpoint.path) == state.student_checkpoint.sha256);
}

TEST_CASE("empty curation fails the stage and leaves the state alone") {
  const auto mix = GroundTruthMixture::standard();
  auto plan = small_plan();
  plan.curation.tau = {{"quality", 1e9}, {"target_affinity", 1e9}};
  const auto& teacher = small_teacher();
  PipelineState state{teacher, "", {}, teacher, {"teacher.ckpt.json", "abc"}};
  const auto before = state_hash(state.student.net);
  try {
    run_stage(state, plan, 0, 1, scratch("empty"), mix);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == 0);
    CHECK(std::string(e.what()).find("curation.tau") != std::string::npos);
  }
  CHECK(state_hash(state.student.net) == before);
  CHECK(state.student_checkpoint.sha256 == "abc");
  CHECK_THROWS_AS(run_vip(teacher, plan, 1, scratch("empty_run"), mix), StageError);
}

TEST_CASE("sweep rows") {
  const auto mix = GroundTruthMixture::standard();
  auto plan = small_plan();
  plan.n_stages = 1;
  const auto& teacher = small_teacher();
  const auto rows = sweep_wsft({10.0, 0.0}, teacher, plan, 8, scratch("sweep"), mix);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].w_sft == 0.0);
  CHECK(rows[1].w_sft == 10.0);

  auto dpo = plan;
  dpo.mode = PipelineMode::dpo_only;
  const auto m = run_vip(teacher, dpo, 8, scratch("dpo"), mix);
  CHECK(m.stages[0].loss == "dpo");
  CHECK(rows[0].checkpoint_hashes[0] == m.stages[0].output_checkpoint.sha256);
  CHECK(rows[0].dataset_hashes[0] == m.stages[0].dataset.sha256);
  CHECK(rows[1].checkpoint_hashes[0] != rows[0].checkpoint_hashes[0]);

  const auto csv = sweep_csv(rows);
  CHECK(csv.rfind("w_sft,stage,total,quality,target_affinity,ood_count,checkpoint_sha256\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK_THROWS_AS(sweep_wsft({}, teacher, plan, 8, scratch("sweep_empty"), mix), ConfigError);
}

TEST_CASE("plan validation") {
  const auto mix = GroundTruthMixture::standard();
  const auto& teacher = small_teacher();
  const auto field = [&](const StagePlan& p) {
    try {
      p.validate(teacher.net, mix);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string();
  };
  auto p = small_plan();
  CHECK(field(p).empty());
  p.n_stages = 4;
  CHECK(field(p) == "plan.k_per_stage");
  p = small_plan();
  p.n_eval_samples = 10;
  CHECK(field(p) == "plan.n_eval_samples");
  p = small_plan();
  p.curation.target = "smell";
  CHECK(field(p) == "curation.target");
  p = small_plan();
  p.tau_percentile = 101;
  CHECK(field(p) == "plan.tau_percentile");
  CHECK(parse_pipeline_mode("dpo_only") == PipelineMode::dpo_only);
  CHECK(loss_for(PipelineMode::sft_baseline) == DistillLoss::sft);
  CHECK_THROWS_AS(parse_pipeline_mode("online"), ConfigError);
}
