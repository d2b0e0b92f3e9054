#include "vip/config.hpp"

#include "vip/error.hpp"
#include "vip/io.hpp"

#include <cmath>
#include <set>

namespace vip {

using nlohmann::json;
using nlohmann::ordered_json;

StagePlan RunConfig::plan() const {
  StagePlan p;
  p.n_stages = n_stages;
  p.k_per_stage = k_per_stage;
  p.curation = curation;
  p.distill = distill;
  p.reward = reward;
  p.n_eval_samples = n_eval_samples;
  p.n_candidates = n_candidates;
  p.tau_percentile = tau_percentile;
  p.mode = mode;
  p.threads = threads;
  return p;
}

ToyConfig RunConfig::toy_config() const {
  ToyConfig t = toy;
  t.schedule = schedule;
  t.distill = distill;
  t.reward = reward;
  t.threads = threads;
  return t;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads", "must be positive");
  schedule.build();
  const auto m = mix();
  reward.validate(m);
  preset_arch(teacher.preset);
  preset_arch(student.preset);
  for (const auto* mc : {&teacher, &student}) {
    const std::string f = mc == &teacher ? "teacher.train" : "student.train";
    if (mc->train.steps < 0) throw ConfigError(f + ".steps", "must be non-negative");
    if (mc->train.batch_size < 1) throw ConfigError(f + ".batch_size", "must be positive");
    if (!(mc->train.learning_rate > 0)) throw ConfigError(f + ".learning_rate", "must be positive");
  }
  curation.validate("curation");
  distill.validate("distill");
  if (n_stages < 1) throw ConfigError("plan.n_stages", "must be at least 1");
  if (k_per_stage < 0) throw ConfigError("plan.k_per_stage", "must be non-negative");
  if (n_eval_samples < 100) throw ConfigError("plan.n_eval_samples", "must be at least 100");
  if (n_candidates < 2) throw ConfigError("plan.n_candidates", "must be at least 2");
  if (!(tau_percentile >= 0 && tau_percentile <= 100)) throw ConfigError("plan.tau_percentile", "must lie in [0,100]");
  toy_config().validate();
  if (sweep_grid.empty()) throw ConfigError("sweep.grid", "must not be empty");
  for (double w : sweep_grid)
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("sweep.grid", "values must be non-negative");
}

namespace {

// Reads keys out of one JSON object, remembering which were consumed so that
// leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw ConfigError(field(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
        if (std::is_unsigned_v<T> && v->is_number_integer() && !v->is_number_unsigned())
          throw ConfigError(field(key), "must be non-negative");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw ConfigError(field(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw ConfigError(field(key), "expected a string");
      }
      out = v->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  Section sub(const std::string& key) {
    const json* v = find(key);
    static const json empty = json::object();
    return Section(v ? *v : empty, field(key));
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(field(k), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(Section s, TrainOptions& t) {
  s.read("steps", t.steps);
  s.read("batch_size", t.batch_size);
  s.read("learning_rate", t.learning_rate);
  s.finish();
}

ordered_json train_json(const TrainOptions& t) {
  return {{"steps", t.steps}, {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate}};
}

}  // namespace

RunConfig parse_config(const json& j, RunConfig c) {
  Section root(j, "");
  root.read("seed", c.seed);
  root.read("threads", c.threads);
  root.read("out", c.out);

  {
    auto s = root.sub("schedule");
    s.read("T", c.schedule.T);
    s.read("beta_min", c.schedule.beta_min);
    s.read("beta_max", c.schedule.beta_max);
    s.finish();
  }
  {
    auto s = root.sub("mixture");
    if (const json* modes = s.find("modes")) {
      if (!modes->is_array()) throw ConfigError("mixture.modes", "expected an array");
      c.mixture.clear();
      for (std::size_t i = 0; i < modes->size(); ++i) {
        Section m((*modes)[i], "mixture.modes[" + std::to_string(i) + "]");
        std::vector<double> mean;
        MixtureMode mode;
        m.read("mean", mean);
        if (mean.size() != 2) throw ConfigError(m.field("mean"), "expected two numbers");
        mode.mean = {mean[0], mean[1]};
        m.read("sigma", mode.sigma);
        m.read("weight", mode.weight);
        m.finish();
        c.mixture.push_back(mode);
      }
    }
    s.finish();
  }
  {
    auto s = root.sub("reward");
    s.read("properties", c.reward.properties);
    s.read("target_mode", c.reward.target_mode);
    s.read("r_ood", c.reward.r_ood);
    s.finish();
  }
  for (auto [key, mc] : {std::pair{"teacher", &c.teacher}, std::pair{"student", &c.student}}) {
    auto s = root.sub(key);
    s.read("preset", mc->preset);
    read_train(s.sub("train"), mc->train);
    s.finish();
  }
  {
    auto s = root.sub("curation");
    s.read("tau", c.curation.tau);
    s.read("alpha", c.curation.alpha);
    s.read("target", c.curation.target);
    s.read("max_pairs", c.curation.max_pairs);
    s.read("candidate_filter", c.curation.candidate_filter);
    s.finish();
  }
  {
    auto s = root.sub("distill");
    s.read("beta", c.distill.beta);
    s.read("omega", c.distill.omega);
    s.read("w_sft", c.distill.w_sft);
    s.read("learning_rate", c.distill.learning_rate);
    s.read("epochs", c.distill.epochs);
    s.read("batch_size", c.distill.batch_size);
    s.read("max_steps", c.distill.max_steps);
    s.read("shared_t", c.distill.shared_t);
    s.finish();
  }
  {
    auto s = root.sub("plan");
    s.read("n_stages", c.n_stages);
    s.read("k_per_stage", c.k_per_stage);
    s.read("n_eval_samples", c.n_eval_samples);
    s.read("n_candidates", c.n_candidates);
    s.read("tau_percentile", c.tau_percentile);
    std::string mode = to_string(c.mode);
    s.read("mode", mode);
    c.mode = parse_pipeline_mode(mode);
    s.finish();
  }
  {
    auto s = root.sub("toy");
    s.read("teacher_preset", c.toy.teacher_preset);
    s.read("student_preset", c.toy.student_preset);
    read_train(s.sub("teacher_train"), c.toy.teacher_train);
    read_train(s.sub("student_train"), c.toy.student_train);
    s.read("n_teacher_candidates", c.toy.n_teacher_candidates);
    s.read("n_student_candidates", c.toy.n_student_candidates);
    s.read("max_pairs", c.toy.max_pairs);
    s.read("distill_steps", c.toy.distill_steps);
    s.read("n_eval", c.toy.n_eval);
    s.finish();
  }
  {
    auto s = root.sub("sweep");
    s.read("grid", c.sweep_grid);
    s.finish();
  }
  root.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config", path.string() + ": " + e.what());
  }
  return parse_config(j);
}

ordered_json config_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["out"] = c.out;
  j["schedule"] = {{"T", c.schedule.T}, {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max}};
  ordered_json modes = ordered_json::array();
  for (const auto& m : c.mixture)
    modes.push_back({{"mean", {m.mean.x(), m.mean.y()}}, {"sigma", m.sigma}, {"weight", m.weight}});
  j["mixture"] = {{"modes", modes}};
  j["reward"] = {{"properties", c.reward.properties}, {"target_mode", c.reward.target_mode}, {"r_ood", c.reward.r_ood}};
  j["teacher"] = {{"preset", c.teacher.preset}, {"train", train_json(c.teacher.train)}};
  j["student"] = {{"preset", c.student.preset}, {"train", train_json(c.student.train)}};
  j["curation"] = {{"tau", c.curation.tau},
                   {"alpha", c.curation.alpha},
                   {"target", c.curation.target},
                   {"max_pairs", c.curation.max_pairs},
                   {"candidate_filter", c.curation.candidate_filter}};
  const auto& d = c.distill;
  j["distill"] = {{"beta", d.beta},         {"omega", d.omega},         {"w_sft", d.w_sft},
                  {"learning_rate", d.learning_rate}, {"epochs", d.epochs}, {"batch_size", d.batch_size},
                  {"max_steps", d.max_steps}, {"shared_t", d.shared_t}};
  j["plan"] = {{"n_stages", c.n_stages},
               {"k_per_stage", c.k_per_stage},
               {"n_eval_samples", c.n_eval_samples},
               {"n_candidates", c.n_candidates},
               {"tau_percentile", c.tau_percentile},
               {"mode", to_string(c.mode)}};
  const auto& t = c.toy;
  j["toy"] = {{"teacher_preset", t.teacher_preset},
              {"student_preset", t.student_preset},
              {"teacher_train", train_json(t.teacher_train)},
              {"student_train", train_json(t.student_train)},
              {"n_teacher_candidates", t.n_teacher_candidates},
              {"n_student_candidates", t.n_student_candidates},
              {"max_pairs", t.max_pairs},
              {"distill_steps", t.distill_steps},
              {"n_eval", t.n_eval}};
  j["sweep"] = {{"grid", c.sweep_grid}};
  return j;
}

}  // namespace vip
