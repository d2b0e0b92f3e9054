#include "vip/pruning.hpp"

#include "vip/error.hpp"
#include "vip/io.hpp"

#include <algorithm>
#include <limits>
#include <thread>

namespace vip {

ModelMetric fixed_seed_metric(RewardSpec spec, GroundTruthMixture mix, std::size_t n, std::uint64_t seed, int threads) {
  return [spec = std::move(spec), mix = std::move(mix), n, seed, threads](const DiffusionModel& m) {
    return score_model(m, spec, mix, n, seed, threads);
  };
}

ImportanceTable block_importance(const DiffusionModel& model, const ModelMetric& metric, int threads) {
  if (model.net.active_blocks() < 2) throw Error("block_importance: need at least two active blocks");
  const EvalReport base = metric(model);

  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < model.net.n_blocks(); ++i)
    if (model.net.block_active(i)) active.push_back(i);

  ImportanceTable table(active.size());
  const auto evaluate = [&](std::size_t j) {
    DiffusionModel without = model;
    without.net.set_block_active(active[j], false);
    auto report = metric(without);
    table[j] = {active[j], base.total - report.total, std::move(report)};
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), active.size());
  if (workers <= 1) {
    for (std::size_t j = 0; j < active.size(); ++j) evaluate(j);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t j = w; j < active.size(); j += workers) evaluate(j);
      });
  }
  return table;
}

std::vector<std::size_t> select_blocks(const ImportanceTable& table, std::size_t k, const std::string& secondary_key) {
  if (table.empty() ? k > 0 : k > table.size() - 1)
    throw Error("select_blocks: cannot prune " + std::to_string(k) + " of " + std::to_string(table.size()) +
                " active blocks");
  const auto secondary = [&](const ImportanceEntry& e) {
    auto it = e.report_without.property_means.find(secondary_key);
    return it == e.report_without.property_means.end() ? -std::numeric_limits<double>::infinity() : it->second;
  };
  std::vector<const ImportanceEntry*> order;
  for (const auto& e : table) order.push_back(&e);
  std::sort(order.begin(), order.end(), [&](const ImportanceEntry* a, const ImportanceEntry* b) {
    if (a->delta != b->delta) return a->delta < b->delta;
    const double sa = secondary(*a), sb = secondary(*b);
    if (sa != sb) return sa > sb;
    return a->block_id < b->block_id;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(order[i]->block_id);
  return out;
}

PruneStageResult apply_prune(DiffusionModel& model, const std::vector<std::size_t>& block_ids, int stage) {
  auto& net = model.net;
  for (std::size_t i = 0; i < block_ids.size(); ++i) {
    const auto id = block_ids[i];
    if (id >= net.n_blocks()) throw Error("apply_prune: block " + std::to_string(id) + " does not exist");
    if (!net.block_active(id)) throw Error("apply_prune: block " + std::to_string(id) + " is already inactive");
    for (std::size_t j = 0; j < i; ++j)
      if (block_ids[j] == id) throw Error("apply_prune: block " + std::to_string(id) + " listed twice");
  }
  if (!block_ids.empty() && block_ids.size() >= net.active_blocks())
    throw Error("apply_prune: at least one block must stay active");

  PruneStageResult r;
  r.stage = stage;
  r.pruned_block_ids = block_ids;
  r.params_before = param_count(net);
  for (auto id : block_ids) net.set_block_active(id, false);
  r.params_after = param_count(net);
  return r;
}

std::string importance_csv(const ImportanceTable& table) {
  std::string out = "block_id,delta,total_without,quality_without\n";
  for (const auto& e : table) {
    auto q = e.report_without.property_means.find("quality");
    out += std::to_string(e.block_id) + "," + format_double(e.delta) + "," + format_double(e.report_without.total) +
           "," + (q == e.report_without.property_means.end() ? std::string() : format_double(q->second)) + "\n";
  }
  return out;
}

}  // namespace vip
