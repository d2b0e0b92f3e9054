#include "vip/curation.hpp"

#include "vip/error.hpp"
#include "vip/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace vip {

void CurationConfig::validate(const std::string& prefix) const {
  if (!(alpha >= 0) || !std::isfinite(alpha)) throw ConfigError(prefix + ".alpha", "must be non-negative");
  if (max_pairs == 0) throw ConfigError(prefix + ".max_pairs", "must be positive");
  if (target.empty()) throw ConfigError(prefix + ".target", "must name a property or be \"auto\"");
  for (const auto& [p, v] : tau)
    if (!std::isfinite(v)) throw ConfigError(prefix + ".tau." + p, "must be finite");
  if (!candidate_filter.empty() && candidate_filter != "target-mode-relevant")
    throw ConfigError(prefix + ".candidate_filter", "unknown filter '" + candidate_filter + "'");
}

PairFilter make_candidate_filter(const std::string& id, const GroundTruthMixture& mix, std::size_t target_mode) {
  if (id.empty()) return {};
  if (id == "target-mode-relevant")
    return [mix, target_mode](const Candidate& w, const Candidate& l) {
      return nearest_mode(mix, w.sample) == target_mode || nearest_mode(mix, l.sample) == target_mode;
    };
  throw ConfigError("curation.candidate_filter", "unknown filter '" + id + "'");
}

std::vector<Candidate> make_candidates(const Matrix& samples, Source source, const RewardSpec& spec,
                                       const GroundTruthMixture& mix) {
  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Eigen::Vector2d x = samples.row(i).transpose();
    out.push_back({x, score_sample(spec, mix, x), source, static_cast<std::size_t>(i)});
  }
  return out;
}

std::vector<Candidate> filter_losers(const std::vector<Candidate>& students, const std::vector<std::string>& targets,
                                     double alpha) {
  if (students.size() < 2) throw Error("filter_losers: need at least two student candidates");
  std::map<std::string, double> bound;
  for (const auto& p : targets) {
    double mean = 0.0;
    for (const auto& c : students) mean += c.scores.at(p);
    mean /= static_cast<double>(students.size());
    double var = 0.0;
    for (const auto& c : students) var += (c.scores.at(p) - mean) * (c.scores.at(p) - mean);
    var /= static_cast<double>(students.size());
    bound[p] = mean - alpha * std::sqrt(var);
  }
  std::vector<Candidate> out;
  for (const auto& c : students) {
    bool keep = true;
    for (const auto& p : targets) keep = keep && c.scores.at(p) >= bound[p];
    if (keep) out.push_back(c);
  }
  return out;
}

std::vector<PreferencePair> build_pairs(const std::vector<Candidate>& teachers, const std::vector<Candidate>& students,
                                        const std::vector<std::string>& targets, const CurationConfig& cfg, int stage,
                                        const PairFilter& filter) {
  if (targets.empty()) throw Error("build_pairs: no target property");
  std::unordered_map<std::size_t, const Candidate*> by_id;
  for (const auto& t : teachers)
    if (!by_id.emplace(t.condition_id, &t).second)
      throw Error("build_pairs: duplicate teacher condition id " + std::to_string(t.condition_id));

  const auto is_target = [&](const std::string& p) { return std::find(targets.begin(), targets.end(), p) != targets.end(); };
  std::vector<std::pair<double, PreferencePair>> kept;
  for (const auto& l : students) {
    auto it = by_id.find(l.condition_id);
    if (it == by_id.end()) continue;
    const Candidate& w = *it->second;
    bool ok = true;
    for (const auto& p : targets) {
      const double sw = w.scores.at(p), sl = l.scores.at(p);
      auto tau = cfg.tau.find(p);
      if (!(sw > sl)) ok = false;
      if (tau != cfg.tau.end() && !(sl > tau->second)) ok = false;
      const double gap = sw - sl;
      for (const auto& [q, qw] : w.scores)
        if (!is_target(q) && !(gap > qw - l.scores.at(q))) ok = false;
    }
    if (!ok || (filter && !filter(w, l))) continue;
    PreferencePair pair{stage, targets.front(), l.condition_id, w.sample, l.sample, w.scores, l.scores};
    kept.emplace_back(w.scores.at(targets.front()) - l.scores.at(targets.front()), std::move(pair));
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second.condition_id < b.second.condition_id;
  });
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < kept.size() && i < cfg.max_pairs; ++i) out.push_back(std::move(kept[i].second));
  return out;
}

std::map<std::string, double> score_percentiles(const std::vector<Candidate>& cands, double q) {
  if (cands.empty()) throw Error("score_percentiles: no candidates");
  std::map<std::string, double> out;
  for (const auto& [p, unused] : cands.front().scores) {
    std::vector<double> v;
    v.reserve(cands.size());
    for (const auto& c : cands) v.push_back(c.scores.at(p));
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    out[p] = v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  }
  return out;
}

PairBatch to_pair_batch(const std::vector<PreferencePair>& pairs) {
  PairBatch b;
  b.x_w.resize(static_cast<Eigen::Index>(pairs.size()), 2);
  b.x_l.resize(static_cast<Eigen::Index>(pairs.size()), 2);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    b.x_w.row(static_cast<Eigen::Index>(i)) = pairs[i].x_w.transpose();
    b.x_l.row(static_cast<Eigen::Index>(i)) = pairs[i].x_l.transpose();
  }
  return b;
}

namespace {

std::string scores_json(const PropertyScores& s) {
  std::string out = "{";
  bool first = true;
  for (const auto& [name, v] : s) {
    out += (first ? "\"" : ",\"") + name + "\":" + format_double(v);
    first = false;
  }
  return out + "}";
}

std::string vec_json(const Eigen::Vector2d& v) { return "[" + format_double(v.x()) + "," + format_double(v.y()) + "]"; }

Eigen::Vector2d parse_vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw Error("expected a 2-element array");
  return {j[0].get<double>(), j[1].get<double>()};
}

PropertyScores parse_scores(const nlohmann::json& j) {
  PropertyScores s;
  for (const auto& [k, v] : j.items()) s[k] = v.get<double>();
  return s;
}

}  // namespace

std::string pairs_jsonl(const std::vector<PreferencePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += "{\"stage\":" + std::to_string(p.stage) + ",\"target\":" + nlohmann::json(p.target).dump() +
           ",\"condition_id\":" + std::to_string(p.condition_id) + ",\"x_w\":" + vec_json(p.x_w) +
           ",\"x_l\":" + vec_json(p.x_l) + ",\"scores_w\":" + scores_json(p.scores_w) +
           ",\"scores_l\":" + scores_json(p.scores_l) + "}\n";
  }
  return out;
}

std::vector<PreferencePair> parse_pairs_jsonl(const std::string& text) {
  std::vector<PreferencePair> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PreferencePair p;
      p.stage = j.at("stage").get<int>();
      p.target = j.at("target").get<std::string>();
      p.condition_id = j.at("condition_id").get<std::size_t>();
      p.x_w = parse_vec(j.at("x_w"));
      p.x_l = parse_vec(j.at("x_l"));
      p.scores_w = parse_scores(j.at("scores_w"));
      p.scores_l = parse_scores(j.at("scores_l"));
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(lineno, e.what());
    } catch (const Error& e) {
      throw FormatError(lineno, e.what());
    }
  }
  return out;
}

void save_pairs(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path) {
  write_text_file(path, pairs_jsonl(pairs));
}

std::vector<PreferencePair> load_pairs(const std::filesystem::path& path) { return parse_pairs_jsonl(read_text_file(path)); }

}  // namespace vip
