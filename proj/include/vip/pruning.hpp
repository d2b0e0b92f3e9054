#pragma once

#include "vip/diffusion.hpp"
#include "vip/reward.hpp"

#include <functional>
#include <string>
#include <vector>

namespace vip {

struct ImportanceEntry {
  std::size_t block_id = 0;
  double delta = 0.0;  // total(model) - total(model without this block)
  EvalReport report_without;
};

using ImportanceTable = std::vector<ImportanceEntry>;

// Model-level metric used to rank blocks; must be deterministic.
using ModelMetric = std::function<EvalReport(const DiffusionModel&)>;

// score_model with one evaluation seed shared by every call.
ModelMetric fixed_seed_metric(RewardSpec spec, GroundTruthMixture mix, std::size_t n, std::uint64_t seed,
                              int threads = 1);

// One entry per active block, in block order. Each block is masked on a
// private copy, so the input model is never touched. Needs >= 2 active blocks.
ImportanceTable block_importance(const DiffusionModel& model, const ModelMetric& metric, int threads = 1);

// The k blocks with smallest delta; ties go to the higher `secondary_key`
// score of report_without, then to the lower block id. Requires
// k <= table.size() - 1.
std::vector<std::size_t> select_blocks(const ImportanceTable& table, std::size_t k,
                                       const std::string& secondary_key = "quality");

struct PruneStageResult {
  int stage = 0;
  std::vector<std::size_t> pruned_block_ids;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
};

// Masks the given blocks. Throws if an id is already inactive or if no block
// would remain active; the model is unchanged on error.
PruneStageResult apply_prune(DiffusionModel& model, const std::vector<std::size_t>& block_ids, int stage = 0);

// CSV `block_id,delta,total_without,quality_without`.
std::string importance_csv(const ImportanceTable& table);

}  // namespace vip
