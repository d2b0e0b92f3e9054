// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any fails. Optional arguments select criteria by name.

#include "oracles.hpp"

#include "vip/checkpoint.hpp"
#include "vip/cli.hpp"
#include "vip/config.hpp"
#include "vip/curation.hpp"
#include "vip/diffusion.hpp"
#include "vip/distill.hpp"
#include "vip/hash.hpp"
#include "vip/io.hpp"
#include "vip/pipeline.hpp"
#include "vip/pruning.hpp"
#include "vip/toy.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace vip;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path work_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "vip_acceptance" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---- toy experiment -------------------------------------------------------

Outcome toy_reproduction() {
  int passed = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_toy_experiment(seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& base = r.arm("base");
    const auto& sft = r.arm("sft");
    const auto& dpo = r.arm("dpo");
    const auto& redpo = r.arm("redpo");
    const std::size_t m = r.target_mode;
    const bool c1 = sft.ood_count > base.ood_count;
    const bool c2 = redpo.ood_count < sft.ood_count;
    const bool c3 = redpo.ood_count < dpo.ood_count;
    const bool c4 = redpo.mode_counts[m] >= base.mode_counts[m];
    const bool ok = c1 && c2 && c3 && c4;
    passed += ok;
    std::cout << fmt("    seed %d: ood base=%zu sft=%zu dpo=%zu redpo=%zu, target mode base=%zu redpo=%zu "
                     "teacher=%zu/%zu | %d%d%d%d %s (%.0fs)\n",
                     static_cast<int>(seed), base.ood_count, sft.ood_count, dpo.ood_count, redpo.ood_count,
                     base.mode_counts[m], redpo.mode_counts[m], r.teacher.mode_counts[m], r.teacher.ood_count, c1,
                     c2, c3, c4, ok ? "ok" : "miss", secs)
              << std::flush;
  }
  return {passed >= 4, fmt("%d/5 seeds satisfy all four orderings (need 4)", passed)};
}

// ---- loss identities ------------------------------------------------------

NetArch small_arch(Rng& rng) {
  NetArch a;
  a.hidden_width = 3 + static_cast<int>(rng.below(6));
  a.time_embed_dim = 2 + 2 * static_cast<int>(rng.below(3));
  a.n_blocks = 1 + static_cast<int>(rng.below(3));
  return a;
}

PairBatch random_pairs(Rng& rng, std::size_t n) {
  PairBatch p;
  p.x_w.resize(static_cast<Eigen::Index>(n), 2);
  p.x_l.resize(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < p.x_w.size(); ++i) {
    p.x_w.data()[i] = 2 * rng.normal();
    p.x_l.data()[i] = 2 * rng.normal();
  }
  return p;
}

Outcome loss_identities() {
  Rng rng(11);
  const NoiseSchedule sched = NoiseSchedule::linear(100, 1e-4, 0.2);
  const DiffusionModel ref{EpsilonNet::create(preset_arch("teacher"), 1), sched};

  // theta = ref: every per-pair value is ln 2.
  DistillConfig cfg;
  const auto pairs = random_pairs(rng, 1000);
  const auto draw = draw_branches(sched, 1000, true, rng);
  double worst = 0;
  for (double v : diff_dpo_per_pair(ref, ref, pairs, cfg, draw)) worst = std::max(worst, std::abs(v - std::numbers::ln2));
  const bool ln2_ok = worst <= 1e-9;

  // w_sft = 0: identical value, gradients and RNG consumption.
  bool stream_ok = true;
  bool total_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const DiffusionModel t{EpsilonNet::create(small_arch(rng), rng.engine()()), sched};
    DiffusionModel s{EpsilonNet::create(t.net.arch(), rng.engine()()), sched};
    const auto batch = random_pairs(rng, 1 + rng.below(20));
    DistillConfig c;
    c.beta = 0.01 + rng.uniform();
    c.shared_t = rng.uniform() < 0.5;
    c.w_sft = 0;
    const auto seed = rng.engine()();
    Rng a(seed), b(seed);
    ad::Tape ta, tb;
    const auto dpo = loss_diff_dpo(ta, s, t, batch, c, a);
    auto [redpo, br] = loss_redpo(tb, s, t, batch, c, b);
    const auto ga = ta.backward(dpo, s.net.param_shapes());
    const auto gb = tb.backward(redpo, s.net.param_shapes());
    stream_ok = stream_ok && dpo.scalar() == redpo.scalar() && ga == gb && a.engine()() == b.engine()();

    c.w_sft = std::pow(10.0, 6 * rng.uniform());
    Rng r(seed);
    ad::Tape tr;
    auto [loss, bd] = loss_redpo(tr, s, t, batch, c, r);
    total_ok = total_ok && bd.total == bd.dpo + c.w_sft * bd.sft && loss.scalar() == bd.total;
  }
  return {ln2_ok && stream_ok && total_ok,
          fmt("max |L - ln2| = %.3g over 1000 pairs; w_sft=0 stream-identical: %s; total == dpo + w*sft: %s", worst,
              stream_ok ? "yes" : "no", total_ok ? "yes" : "no")};
}

// ---- gradients ------------------------------------------------------------

Outcome gradient_soundness() {
  Rng rng(12);
  double worst[4] = {0, 0, 0, 0};
  std::size_t entries = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const int T = 5 + static_cast<int>(rng.below(50));
    const NoiseSchedule sched = NoiseSchedule::linear(T, 1e-3, 0.05 + 0.3 * rng.uniform());
    const auto arch = small_arch(rng);
    const DiffusionModel teacher{EpsilonNet::create(arch, rng.engine()()), sched};
    DiffusionModel student{EpsilonNet::create(arch, rng.engine()()), sched};
    if (arch.n_blocks > 1 && rng.uniform() < 0.3) student.net.set_block_active(rng.below(arch.n_blocks), false);
    const auto pairs = random_pairs(rng, 1 + rng.below(5));
    DistillConfig cfg;
    cfg.beta = (0.005 + 0.1 * rng.uniform()) * 20.0 / T;
    cfg.w_sft = 0.1 + 3 * rng.uniform();
    cfg.shared_t = rng.uniform() < 0.5;
    const std::uint64_t seed = rng.engine()();
    const auto shapes = student.net.param_shapes();

    Rng dr(seed);
    const auto draw = draw_branches(sched, pairs.size(), cfg.shared_t, dr);
    const auto as_model = [&](const EpsilonNet& n) { return DiffusionModel{n, sched}; };

    const oracle::LossFn f_sft = [&](const EpsilonNet& n) {
      ad::Tape t;
      return loss_sft(t, as_model(n), teacher, pairs.x_w, draw.t_w, draw.eps_w).scalar();
    };
    const oracle::LossFn f_dpo = [&](const EpsilonNet& n) {
      ad::Tape t;
      Rng r(seed);
      return loss_diff_dpo(t, as_model(n), teacher, pairs, cfg, r).scalar();
    };
    const oracle::LossFn f_redpo = [&](const EpsilonNet& n) {
      ad::Tape t;
      Rng r(seed);
      return loss_redpo(t, as_model(n), teacher, pairs, cfg, r).first.scalar();
    };
    const oracle::LossFn f_train = [&](const EpsilonNet& n) {
      ad::Tape t;
      Rng r(seed);
      return diffusion_train_loss(t, as_model(n), pairs.x_w, r).scalar();
    };
    const oracle::LossFn fns[4] = {f_sft, f_dpo, f_redpo, f_train};
    for (int k = 0; k < 4; ++k) {
      ad::Tape tape;
      Rng r(seed);
      ad::Var loss;
      switch (k) {
        case 0: loss = loss_sft(tape, student, teacher, pairs.x_w, draw.t_w, draw.eps_w); break;
        case 1: loss = loss_diff_dpo(tape, student, teacher, pairs, cfg, r); break;
        case 2: loss = loss_redpo(tape, student, teacher, pairs, cfg, r).first; break;
        default: loss = diffusion_train_loss(tape, student, pairs.x_w, r); break;
      }
      const auto g = tape.backward(loss, shapes);
      const auto check = oracle::finite_difference(student.net, g, fns[k]);
      worst[k] = std::max(worst[k], check.max_rel_err);
      entries += check.entries;
    }
  }
  const double all = std::max({worst[0], worst[1], worst[2], worst[3]});
  return {all <= 1e-4, fmt("max rel err sft=%.2g dpo=%.2g redpo=%.2g train=%.2g over %zu entries (limit 1e-4)",
                           worst[0], worst[1], worst[2], worst[3], entries)};
}

// ---- curation -------------------------------------------------------------

bool subset(const std::vector<oracle::PairKey>& a, const std::vector<oracle::PairKey>& b) {
  std::set<std::pair<std::size_t, double>> sb;
  for (const auto& k : b) sb.insert({k.condition_id, k.gap});
  for (const auto& k : a)
    if (!sb.count({k.condition_id, k.gap})) return false;
  return true;
}

Outcome curation_soundness() {
  Rng rng(13);
  const std::vector<std::string> target{"target_affinity"};
  std::vector<Candidate> teachers, students;
  int equal = 0, tau_mono = 0, alpha_mono = 0;
  std::size_t emitted = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    oracle::random_candidates(rng, teachers, students);
    CurationConfig cfg;
    cfg.alpha = 0.3;
    cfg.tau["target_affinity"] = rng.normal();
    cfg.max_pairs = 1 + rng.below(40);
    const auto got =
        oracle::keys_of(build_pairs(teachers, filter_losers(students, target, cfg.alpha), target, cfg, 0));
    equal += got == oracle::brute_force_pairs(teachers, students, target, cfg.tau, cfg.alpha, cfg.max_pairs);
    emitted += got.size();

    const auto all = [&](double tau, double alpha) {
      CurationConfig c;
      c.alpha = alpha;
      c.tau["target_affinity"] = tau;
      c.max_pairs = 1u << 20;
      return oracle::keys_of(build_pairs(teachers, filter_losers(students, target, alpha), target, c, 0));
    };
    const double tau = cfg.tau["target_affinity"];
    const auto base = all(tau, 0.3);
    tau_mono += subset(all(tau + std::abs(rng.normal()), 0.3), base);
    // Raising alpha lowers the bound mean - alpha*std: pairs can only be added.
    alpha_mono += subset(base, all(tau, 0.3 + std::abs(rng.normal())));
  }
  return {equal == 1000 && tau_mono == 1000 && alpha_mono == 1000,
          fmt("oracle agreement %d/1000 (%zu pairs); tau monotone %d/1000; alpha monotone %d/1000", equal, emitted,
              tau_mono, alpha_mono)};
}

// ---- pruning --------------------------------------------------------------

Outcome pruning_oracle() {
  Rng rng(14);
  int equal = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto table = oracle::random_table(rng);
    const std::size_t k = rng.below(table.size());
    equal += select_blocks(table, k) == oracle::exhaustive_select(table, k);
  }
  DiffusionModel m{EpsilonNet::create(preset_arch("vip_teacher"), 3), NoiseSchedule::linear(100, 1e-4, 0.2)};
  const auto before = state_hash(m.net);
  const auto ckpt_before = sha256_hex(checkpoint_json(m.net, 0));
  block_importance(m, fixed_seed_metric(RewardSpec{}, GroundTruthMixture::standard(), 200, 5), 2);
  const bool unchanged = state_hash(m.net) == before && sha256_hex(checkpoint_json(m.net, 0)) == ckpt_before;
  return {equal == 1000 && unchanged,
          fmt("exhaustive agreement %d/1000; model hash unchanged by block_importance: %s", equal,
              unchanged ? "yes" : "no")};
}

// ---- diffusion sanity -----------------------------------------------------

Outcome diffusion_sanity() {
  const ToyConfig toy;
  const auto mix = GroundTruthMixture::standard();
  const auto sched = toy.schedule.build();
  DiffusionModel teacher{EpsilonNet::create(preset_arch("teacher"), derive_seed(0, 100)), sched};

  // Fixed evaluation batch for the epsilon-MSE before and after training.
  Rng er(77);
  const Matrix x0 = sample_gt(mix, 8192, er);
  const auto mse = [&](const DiffusionModel& m) {
    Rng r(78);
    ad::Tape tape;
    return diffusion_train_loss(tape, m, x0, r).scalar();
  };
  const double initial = mse(teacher);
  const DataSampler data = [&](std::size_t n, Rng& rng) { return sample_gt(mix, n, rng); };
  train_diffusion(teacher, data, toy.teacher_train, derive_seed(0, 101));
  const double final_mse = mse(teacher);
  const auto report = score_model(teacher, RewardSpec{}, mix, 2000, 79);
  const double ood = static_cast<double>(report.ood_count) / 2000.0;

  // q_sample marginals at a few timesteps: x0 fixed, eps ~ N(0, I).
  double worst = 0;
  Rng qr(80);
  const std::size_t n = 100000;
  for (int t : {0, sched.T / 4, sched.T / 2, sched.T - 1}) {
    Matrix x(1, 2);
    x << 1.3, -0.7;
    const Matrix x0s = x.replicate(static_cast<Eigen::Index>(n), 1);
    const Matrix eps = draw_noise(static_cast<Eigen::Index>(n), 2, qr);
    const Matrix xt = q_sample(sched, x0s, t, eps);
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    for (int d = 0; d < 2; ++d) {
      const double mean = xt.col(d).mean();
      const double sd = std::sqrt((xt.col(d).array() - mean).square().mean());
      const double want_mean = std::sqrt(ab) * x(0, d);
      const double want_sd = std::sqrt(1 - ab);
      // Relative error for the spread; the mean is compared on the scale of the spread.
      worst = std::max(worst, std::abs(sd - want_sd) / want_sd);
      worst = std::max(worst, std::abs(mean - want_mean) / std::max(std::abs(want_mean), want_sd));
    }
  }
  const bool ok = final_mse <= 0.5 * initial && ood <= 0.05 && worst <= 0.02;
  return {ok, fmt("eps-MSE %.4f -> %.4f (%.1f%% of initial, limit 50%%); OOD %.2f%% (limit 5%%); "
                  "q_sample max rel err %.4f (limit 0.02)",
                  initial, final_mse, 100 * final_mse / initial, 100 * ood, worst)};
}

// ---- pipeline -------------------------------------------------------------

struct Cli {
  int code;
  std::string err;
};

Cli cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, err.str()};
}

RunManifest load_manifest(const fs::path& dir) {
  return parse_manifest(nlohmann::ordered_json::parse(read_text_file(dir / "manifest.json")));
}

// Shared between the pipeline and sweep criteria: one teacher trained by the CLI.
fs::path pipeline_teacher(const fs::path& root) {
  static fs::path path;
  if (!path.empty()) return path;
  const auto dir = root / "teacher";
  const auto r = cli({"train-teacher", "--out", dir.string(), "--seed", "0"});
  if (r.code != 0) throw Error("train-teacher failed: " + r.err);
  path = dir / "teacher.ckpt.json";
  return path;
}

fs::path shared_root() {
  static const fs::path root = work_dir("shared");
  return root;
}

Outcome pipeline_reproducibility() {
  const auto teacher = pipeline_teacher(shared_root()).string();
  const auto dir = work_dir("pipeline");
  for (const auto* name : {"a", "b"}) {
    const auto r = cli({"run", "--teacher", teacher, "--seed", "3", "--out", (dir / name).string()});
    if (r.code != 0) return {false, "run failed: " + r.err};
  }
  const auto a = load_manifest(dir / "a"), b = load_manifest(dir / "b");
  bool same = a.stages.size() == b.stages.size() && a.teacher_checkpoint == b.teacher_checkpoint;
  std::size_t compared = 0;
  for (std::size_t i = 0; same && i < a.stages.size(); ++i) {
    const auto& x = a.stages[i];
    const auto& y = b.stages[i];
    for (const auto& [p, q] : {std::pair{&x.input_checkpoint, &y.input_checkpoint},
                               {&x.pruned_checkpoint, &y.pruned_checkpoint},
                               {&x.output_checkpoint, &y.output_checkpoint},
                               {&x.dataset, &y.dataset}}) {
      same = same && *p == *q;
      ++compared;
    }
  }
  std::set<std::string> teacher_hashes;
  for (const auto& s : a.stages) teacher_hashes.insert(s.teacher_hash);
  const bool frozen = teacher_hashes.size() == 1 && *teacher_hashes.begin() == a.teacher_checkpoint.sha256;
  std::vector<std::size_t> params;
  for (const auto& s : a.stages) params.push_back(s.params_after);
  return {same && frozen && a.stages.size() >= 2,
          fmt("%zu stages, %zu checkpoint/dataset hashes identical across runs: %s; teacher hash constant: %s", 
              a.stages.size(), compared, same ? "yes" : "no", frozen ? "yes" : "no")};
}

Outcome sweep_fidelity() {
  const auto teacher = pipeline_teacher(shared_root()).string();
  const auto dir = work_dir("sweep");
  auto r = cli({"sweep-wsft", "--teacher", teacher, "--seed", "4", "--grid", "0", "--out", (dir / "zero").string()});
  if (r.code != 0) return {false, "sweep failed: " + r.err};
  r = cli({"run", "--teacher", teacher, "--seed", "4", "--mode", "dpo_only", "--out", (dir / "dpo").string()});
  if (r.code != 0) return {false, "dpo_only run failed: " + r.err};
  const auto zero = load_manifest(dir / "zero" / "wsft_0");
  const auto dpo = load_manifest(dir / "dpo");
  bool same = zero.stages.size() == dpo.stages.size();
  for (std::size_t i = 0; same && i < zero.stages.size(); ++i)
    same = zero.stages[i].output_checkpoint == dpo.stages[i].output_checkpoint &&
           zero.stages[i].dataset == dpo.stages[i].dataset;

  r = cli({"sweep-wsft", "--teacher", teacher, "--seed", "4", "--grid", "1e7,1e2,1e5,1e3,1e6,1e4", "--out",
           (dir / "grid").string()});
  if (r.code != 0) return {false, "sweep failed: " + r.err};
  const auto csv = read_text_file(dir / "grid" / "sweep.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<double> ws;
  while (std::getline(in, line)) {
    const double w = std::stod(line.substr(0, line.find(',')));
    if (ws.empty() || ws.back() != w) ws.push_back(w);
  }
  const bool six = ws.size() == 6 && std::is_sorted(ws.begin(), ws.end());
  return {same && six, fmt("grid {0} matches dpo_only hashes: %s; 6-value grid emitted %zu sorted rows", 
                           same ? "yes" : "no", ws.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"toy_reproduction", toy_reproduction},
      {"loss_identities", loss_identities},
      {"gradient_soundness", gradient_soundness},
      {"curation_soundness", curation_soundness},
      {"pruning_oracle", pruning_oracle},
      {"diffusion_sanity", diffusion_sanity},
      {"pipeline_reproducibility", pipeline_reproducibility},
      {"sweep_fidelity", sweep_fidelity},
  };
  const std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << fmt(" [%.0fs]", secs) << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
