#pragma once

#include "vip/distill.hpp"
#include "vip/reward.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace vip {

enum class Source { teacher, student };

struct Candidate {
  Eigen::Vector2d sample;
  PropertyScores scores;
  Source source = Source::student;
  std::size_t condition_id = 0;  // teacher and student candidates pair on equal ids
};

struct PreferencePair {
  int stage = 0;
  std::string target;  // primary target property
  std::size_t condition_id = 0;
  Eigen::Vector2d x_w;
  Eigen::Vector2d x_l;
  PropertyScores scores_w;
  PropertyScores scores_l;

  bool operator==(const PreferencePair&) const = default;
};

struct CurationConfig {
  std::map<std::string, double> tau;  // per-property loser floor; missing = no floor
  double alpha = 0.3;                 // loser bound: score >= mean - alpha * std
  std::string target = "auto";        // property name, or "auto" = largest drop after pruning
  std::size_t max_pairs = 2000;
  std::string candidate_filter;       // "" or "target-mode-relevant"

  void validate(const std::string& prefix = "curation") const;
};

// Pair-level predicate applied after the score rules.
using PairFilter = std::function<bool(const Candidate& winner, const Candidate& loser)>;

// "target-mode-relevant": either member's nearest mode is the target mode.
// An empty id yields an empty (accept-all) filter.
PairFilter make_candidate_filter(const std::string& id, const GroundTruthMixture& mix, std::size_t target_mode);

// Scores every row of `samples`, condition id = row index.
std::vector<Candidate> make_candidates(const Matrix& samples, Source source, const RewardSpec& spec,
                                       const GroundTruthMixture& mix);

// Keeps students whose score on every target is >= mean - alpha*std, using
// population statistics over the given candidates. Needs >= 2 candidates.
std::vector<Candidate> filter_losers(const std::vector<Candidate>& students, const std::vector<std::string>& targets,
                                     double alpha);

// Condition-matched winner/loser pairs satisfying, for every target p,
//   s_w[p] > s_l[p] > tau[p]   and   s_w[p]-s_l[p] > s_w[q]-s_l[q] for every non-target q.
// Sorted by descending primary-target gap (condition id ascending on ties),
// truncated to max_pairs. `students` should already be filter_losers output.
std::vector<PreferencePair> build_pairs(const std::vector<Candidate>& teachers, const std::vector<Candidate>& students,
                                        const std::vector<std::string>& targets, const CurationConfig& cfg, int stage,
                                        const PairFilter& filter = {});

// Linear-interpolated percentile (q in [0,100]) of each property over candidates.
std::map<std::string, double> score_percentiles(const std::vector<Candidate>& cands, double q);

PairBatch to_pair_batch(const std::vector<PreferencePair>& pairs);

// JSON lines, one pair per line, fixed field order:
// {"stage","target","condition_id","x_w":[f,f],"x_l":[f,f],"scores_w":{},"scores_l":{}}
std::string pairs_jsonl(const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> parse_pairs_jsonl(const std::string& text);
void save_pairs(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path);
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path);

}  // namespace vip
