#pragma once

#include "vip/diffusion.hpp"
#include "vip/rng.hpp"
#include "vip/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vip {

struct MixtureMode {
  Eigen::Vector2d mean;
  double sigma = 1.0;
  double weight = 1.0;
};

// Isotropic 2-d Gaussian mixture standing in for the data distribution.
class GroundTruthMixture {
 public:
  // Validates weights (positive, sum to 1) and mode separation (> 6 max sigma).
  explicit GroundTruthMixture(std::vector<MixtureMode> modes);
  // Skips the separation and positivity checks; for degenerate test mixtures.
  static GroundTruthMixture unchecked(std::vector<MixtureMode> modes);
  // Three modes at radius 2 with weights (0.45, 0.10, 0.45); index 1 is the
  // underweighted mode.
  static GroundTruthMixture standard();

  const std::vector<MixtureMode>& modes() const noexcept { return modes_; }
  std::size_t size() const noexcept { return modes_.size(); }
  double max_sigma() const;
  double log_pdf(const Eigen::Vector2d& x) const;

 private:
  GroundTruthMixture() = default;
  std::vector<MixtureMode> modes_;
};

Matrix sample_gt(const GroundTruthMixture& mix, std::size_t n, Rng& rng);

inline constexpr double kDefaultOodRadius = 4.0;

// Nearest mean wins (lowest index on ties). Returns nullopt (OOD) when the
// distance to that mean exceeds r_ood times its sigma.
std::optional<std::size_t> assign_mode(const GroundTruthMixture& mix, const Eigen::Vector2d& x,
                                       double r_ood = kDefaultOodRadius);
std::size_t nearest_mode(const GroundTruthMixture& mix, const Eigen::Vector2d& x);

using PropertyScores = std::map<std::string, double>;

// Which properties to score and which mode the target_affinity reward favours.
// Known properties: "target_affinity" (-distance to the target mean) and
// "quality" (ground-truth log density).
struct RewardSpec {
  std::vector<std::string> properties{"target_affinity", "quality"};
  std::size_t target_mode = 1;
  double r_ood = kDefaultOodRadius;

  void validate(const GroundTruthMixture& mix) const;
};

PropertyScores score_sample(const RewardSpec& spec, const GroundTruthMixture& mix, const Eigen::Vector2d& x);

struct EvalReport {
  std::map<std::string, double> property_means;
  std::vector<std::size_t> mode_counts;
  std::size_t ood_count = 0;
  std::size_t n_samples = 0;
  double total = 0.0;  // unweighted mean of property_means
  std::uint64_t seed = 0;

  bool operator==(const EvalReport&) const = default;
};

// Aggregates per-sample scores and mode tallies over a batch of samples.
EvalReport score_samples(const Matrix& samples, const RewardSpec& spec, const GroundTruthMixture& mix);
// Samples n >= 100 points from the model and scores them.
EvalReport score_model(const DiffusionModel& model, const RewardSpec& spec, const GroundTruthMixture& mix,
                       std::size_t n, std::uint64_t seed, int threads = 1);

// Properties whose pruned mean fell below the full mean, largest drop first
// (name ascending on equal drops). Throws if the property sets differ.
std::vector<std::string> compare_reports(const EvalReport& full, const EvalReport& pruned);

std::string eval_report_json(const EvalReport& r);
EvalReport parse_eval_report(const std::string& text);

}  // namespace vip
