#pragma once

#include "vip/curation.hpp"
#include "vip/distill.hpp"
#include "vip/pipeline.hpp"
#include "vip/reward.hpp"
#include "vip/toy.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vip {

struct ModelConfig {
  std::string preset;
  TrainOptions train;
};

// Everything a CLI invocation can configure. Every section is optional in the
// JSON file; missing keys keep their defaults, unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
  ScheduleConfig schedule;
  std::vector<MixtureMode> mixture = GroundTruthMixture::standard().modes();
  RewardSpec reward;
  ModelConfig teacher{"vip_teacher", {20000, 128, 1e-3}};
  ModelConfig student{"base_student", {20000, 128, 1e-3}};
  CurationConfig curation;
  DistillConfig distill;
  // StagePlan fields other than curation/distill/reward/threads.
  int n_stages = 2;
  int k_per_stage = 1;
  std::size_t n_eval_samples = 1000;
  std::size_t n_candidates = 2000;
  double tau_percentile = 25.0;
  PipelineMode mode = PipelineMode::vip;
  ToyConfig toy;  // its distill, reward and threads are taken from the sections above
  std::vector<double> sweep_grid{0, 1e3, 1e4, 3e4, 1e5, 1e6};

  GroundTruthMixture mix() const { return GroundTruthMixture(mixture); }
  StagePlan plan() const;
  ToyConfig toy_config() const;
  // Module-level checks that do not need a trained teacher.
  void validate() const;
};

// Applies `j` on top of `base`. Throws ConfigError naming the offending key.
RunConfig parse_config(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
// Effective configuration, in a form parse_config accepts.
nlohmann::ordered_json config_json(const RunConfig& c);

}  // namespace vip
