#include "vip/reward.hpp"

#include "vip/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vip {

using nlohmann::ordered_json;

GroundTruthMixture::GroundTruthMixture(std::vector<MixtureMode> modes) : modes_(std::move(modes)) {
  if (modes_.empty()) throw ConfigError("mixture.modes", "at least one mode required");
  double wsum = 0.0;
  for (std::size_t i = 0; i < modes_.size(); ++i) {
    const auto& m = modes_[i];
    const auto field = "mixture.modes[" + std::to_string(i) + "]";
    if (!(m.sigma > 0) || !std::isfinite(m.sigma)) throw ConfigError(field + ".sigma", "must be positive");
    if (!(m.weight > 0)) throw ConfigError(field + ".weight", "must be positive");
    if (!m.mean.allFinite()) throw ConfigError(field + ".mean", "must be finite");
    wsum += m.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("mixture.modes", "weights must sum to 1");
  const double min_sep = 6.0 * max_sigma();
  for (std::size_t i = 0; i < modes_.size(); ++i)
    for (std::size_t j = i + 1; j < modes_.size(); ++j)
      if (!((modes_[i].mean - modes_[j].mean).norm() > min_sep))
        throw ConfigError("mixture.modes", "modes " + std::to_string(i) + " and " + std::to_string(j) +
                                               " are closer than 6 * max sigma");
}

GroundTruthMixture GroundTruthMixture::unchecked(std::vector<MixtureMode> modes) {
  GroundTruthMixture m;
  m.modes_ = std::move(modes);
  return m;
}

GroundTruthMixture GroundTruthMixture::standard() {
  return GroundTruthMixture({{{0.0, 2.0}, 0.15, 0.45}, {{-1.732, -1.0}, 0.15, 0.10}, {{1.732, -1.0}, 0.15, 0.45}});
}

double GroundTruthMixture::max_sigma() const {
  double s = 0.0;
  for (const auto& m : modes_) s = std::max(s, m.sigma);
  return s;
}

double GroundTruthMixture::log_pdf(const Eigen::Vector2d& x) const {
  // log sum_k w_k N(x; mu_k, sigma_k^2 I), via log-sum-exp.
  std::vector<double> terms;
  terms.reserve(modes_.size());
  for (const auto& m : modes_) {
    const double s2 = m.sigma * m.sigma;
    terms.push_back(std::log(m.weight) - std::log(2.0 * std::numbers::pi * s2) - (x - m.mean).squaredNorm() / (2.0 * s2));
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

Matrix sample_gt(const GroundTruthMixture& mix, std::size_t n, Rng& rng) {
  const auto& modes = mix.modes();
  Matrix out(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double cum = modes[0].weight;
    while (u >= cum && k + 1 < modes.size()) cum += modes[++k].weight;
    // Skip zero-weight trailing modes that the float sum could land on.
    while (modes[k].weight <= 0.0 && k > 0) --k;
    const double zx = rng.normal();
    const double zy = rng.normal();
    out(i, 0) = modes[k].mean.x() + modes[k].sigma * zx;
    out(i, 1) = modes[k].mean.y() + modes[k].sigma * zy;
  }
  return out;
}

std::size_t nearest_mode(const GroundTruthMixture& mix, const Eigen::Vector2d& x) {
  std::size_t best = 0;
  double best_d = (x - mix.modes()[0].mean).norm();
  for (std::size_t k = 1; k < mix.size(); ++k) {
    const double d = (x - mix.modes()[k].mean).norm();
    if (d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

std::optional<std::size_t> assign_mode(const GroundTruthMixture& mix, const Eigen::Vector2d& x, double r_ood) {
  const std::size_t k = nearest_mode(mix, x);
  if ((x - mix.modes()[k].mean).norm() > r_ood * mix.modes()[k].sigma) return std::nullopt;
  return k;
}

void RewardSpec::validate(const GroundTruthMixture& mix) const {
  if (properties.empty()) throw ConfigError("reward.properties", "at least one property required");
  for (std::size_t i = 0; i < properties.size(); ++i) {
    const auto& p = properties[i];
    if (p != "target_affinity" && p != "quality") throw ConfigError("reward.properties", "unknown property '" + p + "'");
    for (std::size_t j = 0; j < i; ++j)
      if (properties[j] == p) throw ConfigError("reward.properties", "duplicate property '" + p + "'");
  }
  if (target_mode >= mix.size()) throw ConfigError("reward.target_mode", "no such mode");
  if (!(r_ood > 0)) throw ConfigError("reward.r_ood", "must be positive");
}

PropertyScores score_sample(const RewardSpec& spec, const GroundTruthMixture& mix, const Eigen::Vector2d& x) {
  PropertyScores s;
  for (const auto& p : spec.properties) {
    if (p == "target_affinity")
      s[p] = -(x - mix.modes().at(spec.target_mode).mean).norm();
    else if (p == "quality")
      s[p] = mix.log_pdf(x);
    else
      throw ConfigError("reward.properties", "unknown property '" + p + "'");
  }
  return s;
}

EvalReport score_samples(const Matrix& samples, const RewardSpec& spec, const GroundTruthMixture& mix) {
  if (samples.cols() != 2) throw ShapeError("cols", "score_samples: expected 2 columns");
  EvalReport r;
  r.n_samples = static_cast<std::size_t>(samples.rows());
  r.mode_counts.assign(mix.size(), 0);
  for (const auto& p : spec.properties) r.property_means[p] = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Eigen::Vector2d x = samples.row(i).transpose();
    for (const auto& [name, v] : score_sample(spec, mix, x)) r.property_means[name] += v;
    if (auto k = assign_mode(mix, x, spec.r_ood))
      ++r.mode_counts[*k];
    else
      ++r.ood_count;
  }
  double total = 0.0;
  for (auto& [name, v] : r.property_means) {
    if (r.n_samples > 0) v /= static_cast<double>(r.n_samples);
    total += v;
  }
  r.total = total / static_cast<double>(r.property_means.size());
  return r;
}

EvalReport score_model(const DiffusionModel& model, const RewardSpec& spec, const GroundTruthMixture& mix,
                       std::size_t n, std::uint64_t seed, int threads) {
  if (n < 100) throw ConfigError("eval.n_samples", "must be at least 100");
  auto r = score_samples(sample(model, n, seed, {threads}), spec, mix);
  r.seed = seed;
  return r;
}

std::vector<std::string> compare_reports(const EvalReport& full, const EvalReport& pruned) {
  if (full.property_means.size() != pruned.property_means.size())
    throw Error("compare_reports: property sets differ");
  std::vector<std::pair<std::string, double>> drops;
  for (const auto& [name, v] : full.property_means) {
    auto it = pruned.property_means.find(name);
    if (it == pruned.property_means.end()) throw Error("compare_reports: property '" + name + "' missing");
    const double drop = v - it->second;
    if (drop > 0) drops.emplace_back(name, drop);
  }
  std::stable_sort(drops.begin(), drops.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (auto& d : drops) out.push_back(d.first);
  return out;
}

std::string eval_report_json(const EvalReport& r) {
  ordered_json j;
  j["properties"] = ordered_json::object();
  for (const auto& [name, v] : r.property_means) j["properties"][name] = v;
  j["total"] = r.total;
  j["mode_counts"] = r.mode_counts;
  j["ood_count"] = r.ood_count;
  j["n_samples"] = r.n_samples;
  j["seed"] = r.seed;
  return j.dump(2) + "\n";
}

EvalReport parse_eval_report(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    EvalReport r;
    for (const auto& [name, v] : j.at("properties").items()) r.property_means[name] = v.get<double>();
    r.total = j.at("total").get<double>();
    r.mode_counts = j.at("mode_counts").get<std::vector<std::size_t>>();
    r.ood_count = j.at("ood_count").get<std::size_t>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("eval report: ") + e.what());
  }
}

}  // namespace vip
