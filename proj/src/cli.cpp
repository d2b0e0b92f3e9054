#include "vip/cli.hpp"

#include "vip/checkpoint.hpp"
#include "vip/config.hpp"
#include "vip/error.hpp"
#include "vip/hash.hpp"
#include "vip/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <ostream>
#include <sstream>

namespace vip {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

struct Flags {
  CommonFlags common;
  std::string model, teacher, student, pairs, input, loss, target, mode, grid;
  std::optional<double> w_sft;
  std::optional<std::size_t> k, n;
};

void add_common(CLI::App* cmd, CommonFlags& c, bool out_required) {
  cmd->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

// File, then flags, then VIP_SEED.
RunConfig resolve_config(const Flags& f) {
  RunConfig c = f.common.config.empty() ? RunConfig{} : load_config(f.common.config);
  if (!f.common.out.empty()) c.out = f.common.out;
  if (f.common.seed) c.seed = *f.common.seed;
  if (f.common.threads) c.threads = *f.common.threads;
  if (const char* env = std::getenv("VIP_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(env, &used);
      if (env[used] != '\0') throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError("VIP_SEED", std::string("not an unsigned integer: '") + env + "'");
    }
  }
  if (f.w_sft) c.distill.w_sft = *f.w_sft;
  if (!f.mode.empty()) c.mode = parse_pipeline_mode(f.mode);
  if (!f.target.empty()) c.curation.target = f.target;
  if (f.k) c.k_per_stage = static_cast<int>(*f.k);
  if (f.n) c.n_eval_samples = *f.n;
  if (!f.grid.empty()) {
    c.sweep_grid.clear();
    std::string item;
    std::istringstream in(f.grid);
    while (std::getline(in, item, ',')) {
      try {
        c.sweep_grid.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("sweep.grid", "not a number: '" + item + "'");
      }
    }
  }
  c.validate();
  return c;
}

DiffusionModel load_model(const std::string& path, const RunConfig& c) {
  return {load_checkpoint(path).net, c.schedule.build()};
}

DiffusionModel train_preset(const ModelConfig& mc, const RunConfig& c, std::uint64_t init_stream) {
  const auto mix = c.mix();
  DiffusionModel m{EpsilonNet::create(preset_arch(mc.preset), derive_seed(c.seed, init_stream)), c.schedule.build()};
  const DataSampler data = [&mix](std::size_t n, Rng& rng) { return sample_gt(mix, n, rng); };
  train_diffusion(m, data, mc.train, derive_seed(c.seed, init_stream + 1));
  return m;
}

EvalReport model_report(const DiffusionModel& m, const RunConfig& c) {
  return score_model(m, c.reward, c.mix(), c.n_eval_samples, derive_seed(c.seed, 7), c.threads);
}

void emit(std::ostream& out, const ordered_json& j) { out << j.dump() << "\n"; }

int cmd_train(const Flags& f, bool teacher, std::ostream& out) {
  const auto c = resolve_config(f);
  const auto& mc = teacher ? c.teacher : c.student;
  const auto m = train_preset(mc, c, teacher ? 100 : 200);
  const fs::path dir = c.out;
  const std::string name = teacher ? "teacher" : "student";
  const auto hash = save_checkpoint(m.net, c.seed, dir / (name + ".ckpt.json"));
  const auto report = model_report(m, c);
  write_text_file(dir / "report.json", eval_report_json(report));
  emit(out, {{"command", "train-" + name},
             {"checkpoint", (dir / (name + ".ckpt.json")).string()},
             {"sha256", hash},
             {"params", param_count(m.net)},
             {"total", report.total},
             {"ood_count", report.ood_count}});
  return 0;
}

int cmd_prune(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  auto m = load_model(f.model, c);
  const fs::path dir = c.out;
  const auto metric = fixed_seed_metric(c.reward, c.mix(), c.n_eval_samples, derive_seed(c.seed, 1), c.threads);
  const auto table = block_importance(m, metric, c.threads);
  write_text_file(dir / "importance.csv", importance_csv(table));
  const auto res = apply_prune(m, select_blocks(table, static_cast<std::size_t>(c.k_per_stage)));
  const auto hash = save_checkpoint(m.net, c.seed, dir / "pruned.ckpt.json");
  emit(out, {{"command", "prune"},
             {"pruned_block_ids", res.pruned_block_ids},
             {"params_before", res.params_before},
             {"params_after", res.params_after},
             {"checkpoint", (dir / "pruned.ckpt.json").string()},
             {"sha256", hash}});
  return 0;
}

int cmd_curate(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  const auto mix = c.mix();
  const auto teacher = load_model(f.teacher, c);
  const auto student = load_model(f.student, c);
  const fs::path dir = c.out;

  std::vector<std::string> targets{c.curation.target};
  if (c.curation.target == "auto") {
    const auto metric = fixed_seed_metric(c.reward, mix, c.n_eval_samples, derive_seed(c.seed, 1), c.threads);
    targets = compare_reports(metric(teacher), metric(student));
    if (targets.empty()) throw Error("no property dropped between teacher and student; pass --target");
    targets.resize(1);
  }
  const auto cand_seed = derive_seed(c.seed, 2);
  const auto tc = make_candidates(sample(teacher, c.n_candidates, cand_seed, {c.threads}), Source::teacher, c.reward, mix);
  const auto sc = make_candidates(sample(student, c.n_candidates, cand_seed, {c.threads}), Source::student, c.reward, mix);
  CurationConfig cc = c.curation;
  for (const auto& [p, v] : score_percentiles(tc, c.tau_percentile)) cc.tau.emplace(p, v);
  const auto filter = make_candidate_filter(cc.candidate_filter, mix, c.reward.target_mode);
  const auto pairs = build_pairs(tc, filter_losers(sc, targets, cc.alpha), targets, cc, 0, filter);
  if (pairs.empty()) throw Error("no preference pairs survived curation; lower curation.tau or raise curation.alpha");
  const auto text = pairs_jsonl(pairs);
  write_text_file(dir / "pairs.jsonl", text);
  emit(out, {{"command", "curate"},
             {"targets", targets},
             {"n_pairs", pairs.size()},
             {"pairs", (dir / "pairs.jsonl").string()},
             {"sha256", sha256_hex(text)}});
  return 0;
}

int cmd_distill(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  const auto teacher = load_model(f.teacher, c);
  auto student = load_model(f.student, c);
  const auto pairs = load_pairs(f.pairs);
  if (pairs.empty()) throw Error("pair file " + f.pairs + " is empty");
  DistillConfig d = c.distill;
  d.seed = c.seed;
  const auto res = train_distill(student, teacher, to_pair_batch(pairs), d, parse_distill_loss(f.loss));
  const fs::path dir = c.out;
  write_text_file(dir / "loss.csv", loss_history_csv(res.history));
  const auto hash = save_checkpoint(student.net, c.seed, dir / "student.ckpt.json");
  emit(out, {{"command", "distill"},
             {"loss", f.loss},
             {"optimizer_steps", res.optimizer_steps},
             {"checkpoint", (dir / "student.ckpt.json").string()},
             {"sha256", hash}});
  return 0;
}

DiffusionModel pipeline_teacher(const Flags& f, const RunConfig& c) {
  return f.teacher.empty() ? train_preset(c.teacher, c, 100) : load_model(f.teacher, c);
}

int cmd_run(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  const auto mix = c.mix();
  const auto teacher = pipeline_teacher(f, c);
  const auto m = run_vip(teacher, c.plan(), c.seed, c.out, mix, config_json(c));
  ordered_json stages = ordered_json::array();
  for (const auto& s : m.stages)
    stages.push_back({{"stage", s.stage},
                      {"pruned", s.pruned_block_ids},
                      {"params", s.params_after},
                      {"targets", s.targets},
                      {"n_pairs", s.n_pairs},
                      {"total", s.post_report.total}});
  emit(out, {{"command", "run"}, {"manifest", (fs::path(c.out) / "manifest.json").string()}, {"stages", stages}});
  return 0;
}

int cmd_toy(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  const auto r = run_toy_experiment(c.seed, c.toy_config());
  const fs::path dir = c.out;
  write_text_file(dir / "toy_report.json", toy_report_json(r));
  save_samples_csv(r.teacher.samples, dir / "samples_teacher.csv");
  ordered_json arms = ordered_json::object();
  for (const auto& a : r.arms) {
    save_samples_csv(a.samples, dir / ("samples_" + a.name + ".csv"));
    arms[a.name] = {{"mode_counts", a.mode_counts}, {"ood", a.ood_count}};
  }
  emit(out, {{"command", "toy"}, {"seed", r.seed}, {"n_pairs", r.n_pairs}, {"arms", arms}});
  return 0;
}

int cmd_sweep(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  const auto teacher = pipeline_teacher(f, c);
  const auto rows = sweep_wsft(c.sweep_grid, teacher, c.plan(), c.seed, c.out, c.mix());
  write_text_file(fs::path(c.out) / "sweep.csv", sweep_csv(rows));
  emit(out, {{"command", "sweep-wsft"}, {"rows", rows.size()}, {"table", (fs::path(c.out) / "sweep.csv").string()}});
  return 0;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  const auto m = load_model(f.model, c);
  const auto text = eval_report_json(model_report(m, c));
  if (!c.out.empty()) write_text_file(fs::path(c.out) / "report.json", text);
  out << text;
  return 0;
}

int cmd_export(const Flags& f, std::ostream& out) {
  const auto files = export_plot_data(f.input, f.common.out);
  ordered_json list = ordered_json::array();
  for (const auto& p : files) list.push_back(p.string());
  emit(out, {{"command", "export"}, {"files", list}});
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string counts_header(std::size_t k) {
  std::string h;
  for (std::size_t i = 0; i < k; ++i) h += ",mode" + std::to_string(i);
  return h + ",ood";
}

std::string counts_cells(const std::vector<std::size_t>& counts, std::size_t ood) {
  std::string s;
  for (auto v : counts) s += "," + std::to_string(v);
  return s + "," + std::to_string(ood);
}

}  // namespace

std::vector<fs::path> export_toy(const ToyReport& r, const fs::path& out_dir) {
  std::vector<fs::path> files;
  const std::size_t k = r.arms.empty() ? r.teacher.mode_counts.size() : r.arms.front().mode_counts.size();
  std::string counts = "arm" + counts_header(k) + "\n";
  for (const auto& a : r.arms) counts += a.name + counts_cells(a.mode_counts, a.ood_count) + "\n";
  files.push_back(out_dir / "counts.csv");
  write_text_file(files.back(), counts);
  for (const auto& a : r.arms) {
    files.push_back(out_dir / ("loss_" + a.name + ".csv"));
    write_text_file(files.back(), loss_history_csv(a.loss_history));
  }
  return files;
}

std::vector<fs::path> export_manifest(const RunManifest& m, const fs::path& run_dir, const fs::path& out_dir) {
  std::vector<fs::path> files;
  std::vector<std::string> props;
  for (const auto& [p, v] : m.teacher_report.property_means) props.push_back(p);

  std::string metrics = "stage,phase,total";
  for (const auto& p : props) metrics += "," + p;
  metrics += ",ood_count\n";
  const std::size_t k = m.teacher_report.mode_counts.size();
  std::string counts = "stage,phase" + counts_header(k) + "\n";
  for (const auto& s : m.stages) {
    for (const auto& [phase, rep] : {std::pair<const char*, const EvalReport*>{"full", &s.full_report},
                                     {"pre", &s.pre_report},
                                     {"post", &s.post_report}}) {
      const std::string lead = std::to_string(s.stage) + "," + phase;
      metrics += lead + "," + format_double(rep->total);
      for (const auto& p : props) metrics += "," + format_double(rep->property_means.at(p));
      metrics += "," + std::to_string(rep->ood_count) + "\n";
      counts += lead + counts_cells(rep->mode_counts, rep->ood_count) + "\n";
    }
  }
  files.push_back(out_dir / "stage_metrics.csv");
  write_text_file(files.back(), metrics);
  files.push_back(out_dir / "stage_counts.csv");
  write_text_file(files.back(), counts);
  for (const auto& s : m.stages) {
    const auto text = read_text_file(run_dir / s.loss_history.path);
    if (sha256_hex(text) != s.loss_history.sha256) throw Error("export: hash mismatch for " + s.loss_history.path);
    files.push_back(out_dir / ("loss_stage_" + std::to_string(s.stage) + ".csv"));
    write_text_file(files.back(), text);
  }
  return files;
}

std::vector<fs::path> export_plot_data(const fs::path& input, const fs::path& out_dir) {
  const auto text = read_text_file(input);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(0, input.string() + ": " + e.what());
  }
  if (j.contains("stages")) return export_manifest(parse_manifest(j), input.parent_path(), out_dir);
  if (j.contains("arms")) return export_toy(parse_toy_report(text), out_dir);
  throw Error(input.string() + " is neither a run manifest nor a toy report");
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Iterative preference distillation for small diffusion models", "vip"};
  app.require_subcommand(1);
  Flags f;

  auto* tt = app.add_subcommand("train-teacher", "train the teacher preset on the ground-truth mixture");
  add_common(tt, f.common, true);
  auto* ts = app.add_subcommand("train-student", "train the base-student preset on the ground-truth mixture");
  add_common(ts, f.common, true);

  auto* pr = app.add_subcommand("prune", "mask the least important blocks of a checkpoint");
  add_common(pr, f.common, true);
  pr->add_option("--model", f.model, "checkpoint to prune")->required()->check(CLI::ExistingFile);
  pr->add_option("--k", f.k, "blocks to remove");

  auto* cu = app.add_subcommand("curate", "build preference pairs from teacher and student samples");
  add_common(cu, f.common, true);
  cu->add_option("--teacher", f.teacher, "teacher checkpoint")->required()->check(CLI::ExistingFile);
  cu->add_option("--student", f.student, "student checkpoint")->required()->check(CLI::ExistingFile);
  cu->add_option("--target", f.target, "target property or auto");

  auto* di = app.add_subcommand("distill", "distill a student on a preference dataset");
  add_common(di, f.common, true);
  di->add_option("--teacher", f.teacher, "teacher checkpoint")->required()->check(CLI::ExistingFile);
  di->add_option("--student", f.student, "student checkpoint")->required()->check(CLI::ExistingFile);
  di->add_option("--pairs", f.pairs, "pairs.jsonl")->required()->check(CLI::ExistingFile);
  di->add_option("--loss", f.loss, "sft, dpo or redpo")->required()->check(CLI::IsMember({"sft", "dpo", "redpo"}));
  di->add_option("--w-sft", f.w_sft, "SFT weight");

  auto* ru = app.add_subcommand("run", "full staged pipeline");
  add_common(ru, f.common, true);
  ru->add_option("--teacher", f.teacher, "teacher checkpoint (trained from the config if omitted)")
      ->check(CLI::ExistingFile);
  ru->add_option("--mode", f.mode, "vip, offline, sft_baseline or dpo_only")
      ->check(CLI::IsMember({"vip", "offline", "sft_baseline", "dpo_only"}));
  ru->add_option("--w-sft", f.w_sft, "SFT weight");

  auto* to = app.add_subcommand("toy", "teacher/student toy experiment with four student arms");
  add_common(to, f.common, true);

  auto* sw = app.add_subcommand("sweep-wsft", "one pipeline run per SFT weight");
  add_common(sw, f.common, true);
  sw->add_option("--teacher", f.teacher, "teacher checkpoint (trained from the config if omitted)")
      ->check(CLI::ExistingFile);
  sw->add_option("--grid", f.grid, "comma-separated SFT weights");

  auto* ev = app.add_subcommand("eval", "score a checkpoint");
  add_common(ev, f.common, false);
  ev->add_option("--model", f.model, "checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--n", f.n, "evaluation samples");

  auto* ex = app.add_subcommand("export", "plot-ready CSVs from a manifest or toy report");
  add_common(ex, f.common, true);
  ex->add_option("--input", f.input, "manifest.json or toy_report.json")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n" << app.help();
    return 2;
  }

  try {
    if (tt->parsed()) return cmd_train(f, true, out);
    if (ts->parsed()) return cmd_train(f, false, out);
    if (pr->parsed()) return cmd_prune(f, out);
    if (cu->parsed()) return cmd_curate(f, out);
    if (di->parsed()) return cmd_distill(f, out);
    if (ru->parsed()) return cmd_run(f, out);
    if (to->parsed()) return cmd_toy(f, out);
    if (sw->parsed()) return cmd_sweep(f, out);
    if (ev->parsed()) return cmd_eval(f, out);
    if (ex->parsed()) return cmd_export(f, out);
  } catch (const ConfigError& e) {
    err << "error: config: " << one_line(e.what()) << "\n";
    return 3;
  } catch (const StageError& e) {
    err << "error: stage: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const FormatError& e) {
    err << "error: format: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: runtime: " << one_line(e.what()) << "\n";
    return 1;
  }
  err << "error: usage: no subcommand\n";
  return 2;
}

}  // namespace vip
