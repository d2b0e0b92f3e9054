#include "vip/checkpoint.hpp"
#include "vip/cli.hpp"
#include "vip/curation.hpp"
#include "vip/diffusion.hpp"
#include "vip/distill.hpp"
#include "vip/hash.hpp"
#include "vip/pruning.hpp"
#include "vip/reward.hpp"
#include "vip/toy.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <sstream>

namespace py = pybind11;
using namespace vip;

namespace {

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["properties"] = r.property_means;
  d["total"] = r.total;
  d["mode_counts"] = r.mode_counts;
  d["ood_count"] = r.ood_count;
  d["n_samples"] = r.n_samples;
  return d;
}

NoiseSchedule schedule(int T, double beta_min, double beta_max) { return NoiseSchedule::linear(T, beta_min, beta_max); }

}  // namespace

PYBIND11_MODULE(vipdistill, m) {
  m.doc() = "Pruning and preference distillation for small 2-d diffusion models";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<Error>(m, "VipError", PyExc_RuntimeError);

  py::class_<DiffusionModel>(m, "Model")
      .def(py::init([](const std::string& preset, std::uint64_t seed, int T, double beta_min, double beta_max) {
             return DiffusionModel{EpsilonNet::create(preset_arch(preset), seed), schedule(T, beta_min, beta_max)};
           }),
           py::arg("preset") = "teacher", py::arg("seed") = 0, py::arg("T") = 100, py::arg("beta_min") = 1e-4,
           py::arg("beta_max") = 0.2)
      .def_static(
          "load",
          [](const std::string& path, int T, double beta_min, double beta_max) {
            return DiffusionModel{load_checkpoint(path).net, schedule(T, beta_min, beta_max)};
          },
          py::arg("path"), py::arg("T") = 100, py::arg("beta_min") = 1e-4, py::arg("beta_max") = 0.2)
      .def("save", [](const DiffusionModel& self, const std::string& path) { return save_checkpoint(self.net, 0, path); })
      .def(
          "train",
          [](DiffusionModel& self, int steps, int batch_size, double lr, std::uint64_t seed) {
            const auto mix = GroundTruthMixture::standard();
            py::gil_scoped_release release;
            return train_diffusion(self, [&](std::size_t n, Rng& rng) { return sample_gt(mix, n, rng); },
                                   {steps, batch_size, lr}, seed);
          },
          py::arg("steps"), py::arg("batch_size") = 128, py::arg("learning_rate") = 1e-3, py::arg("seed") = 0,
          "Fit to the standard mixture; returns the per-step loss.")
      .def(
          "sample",
          [](const DiffusionModel& self, std::size_t n, std::uint64_t seed, int threads) {
            py::gil_scoped_release release;
            return sample(self, n, seed, {threads});
          },
          py::arg("n"), py::arg("seed") = 0, py::arg("threads") = 1)
      .def("predict_noise",
           [](const DiffusionModel& self, const Matrix& x, const std::vector<int>& t) {
             return predict_noise(self.net, x, t);
           })
      .def("score",
           [](const DiffusionModel& self, std::size_t n, std::uint64_t seed) {
             return report_dict(score_model(self, RewardSpec{}, GroundTruthMixture::standard(), n, seed));
           },
           py::arg("n") = 1000, py::arg("seed") = 0)
      .def("block_importance",
           [](const DiffusionModel& self, std::size_t n, std::uint64_t seed) {
             py::list out;
             for (const auto& e :
                  block_importance(self, fixed_seed_metric(RewardSpec{}, GroundTruthMixture::standard(), n, seed)))
               out.append(py::make_tuple(e.block_id, e.delta, e.report_without.property_means.at("quality")));
             return out;
           },
           py::arg("n") = 200, py::arg("seed") = 0, "List of (block_id, delta, quality_without).")
      .def("prune", [](DiffusionModel& self, const std::vector<std::size_t>& ids) {
        const auto r = apply_prune(self, ids);
        return py::make_tuple(r.params_before, r.params_after);
      })
      .def_property_readonly("n_blocks", [](const DiffusionModel& self) { return self.net.n_blocks(); })
      .def_property_readonly("block_mask", [](const DiffusionModel& self) { return self.net.block_mask(); })
      .def_property_readonly("param_count", [](const DiffusionModel& self) { return param_count(self.net); })
      .def_property_readonly("state_hash", [](const DiffusionModel& self) { return state_hash(self.net); })
      .def("copy", [](const DiffusionModel& self) { return self; });

  m.def("sample_gt",
        [](std::size_t n, std::uint64_t seed) {
          Rng rng(seed);
          return sample_gt(GroundTruthMixture::standard(), n, rng);
        },
        py::arg("n"), py::arg("seed") = 0);

  m.def("score_samples",
        [](const Matrix& x) { return report_dict(score_samples(x, RewardSpec{}, GroundTruthMixture::standard())); });

  m.def("assign_mode", [](double x, double y) {
    return assign_mode(GroundTruthMixture::standard(), Eigen::Vector2d(x, y));
  });

  m.def(
      "select_blocks",
      [](const std::vector<std::tuple<std::size_t, double, double>>& rows, std::size_t k) {
        ImportanceTable t;
        for (const auto& [id, delta, quality] : rows) {
          ImportanceEntry e;
          e.block_id = id;
          e.delta = delta;
          e.report_without.property_means = {{"quality", quality}};
          t.push_back(e);
        }
        return select_blocks(t, k);
      },
      py::arg("rows"), py::arg("k"), "rows: (block_id, delta, quality_without).");

  m.def(
      "filter_losers",
      [](const std::vector<double>& scores, double alpha) {
        std::vector<Candidate> c;
        for (std::size_t i = 0; i < scores.size(); ++i) {
          Candidate x;
          x.condition_id = i;
          x.scores = {{"target_affinity", scores[i]}};
          c.push_back(x);
        }
        std::vector<std::size_t> kept;
        for (const auto& x : filter_losers(c, {"target_affinity"}, alpha)) kept.push_back(x.condition_id);
        return kept;
      },
      py::arg("scores"), py::arg("alpha") = 0.3, "Indices of the scores kept by the mean - alpha*std bound.");

  m.def(
      "dpo_per_pair",
      [](const DiffusionModel& student, const DiffusionModel& teacher, const Matrix& x_w, const Matrix& x_l,
         double beta, std::uint64_t seed) {
        DistillConfig cfg;
        cfg.beta = beta;
        Rng rng(seed);
        const PairBatch pairs{x_w, x_l};
        return diff_dpo_per_pair(student, teacher, pairs, cfg, draw_branches(student.schedule, pairs.size(), true, rng));
      },
      py::arg("student"), py::arg("teacher"), py::arg("x_w"), py::arg("x_l"), py::arg("beta") = 50.0,
      py::arg("seed") = 0);

  m.def(
      "distill",
      [](DiffusionModel& student, const DiffusionModel& teacher, const Matrix& x_w, const Matrix& x_l,
         const std::string& loss, double beta, double w_sft, double lr, int steps, int batch_size,
         std::uint64_t seed) {
        DistillConfig cfg;
        cfg.beta = beta;
        cfg.w_sft = w_sft;
        cfg.learning_rate = lr;
        cfg.batch_size = batch_size;
        cfg.max_steps = static_cast<std::size_t>(steps);
        cfg.epochs = steps;
        cfg.seed = seed;
        const PairBatch pairs{x_w, x_l};
        py::gil_scoped_release release;
        const auto r = train_distill(student, teacher, pairs, cfg, parse_distill_loss(loss));
        std::vector<std::tuple<double, double, double>> hist;
        for (const auto& b : r.history) hist.emplace_back(b.dpo, b.sft, b.total);
        return hist;
      },
      py::arg("student"), py::arg("teacher"), py::arg("x_w"), py::arg("x_l"), py::arg("loss") = "redpo",
      py::arg("beta") = 50.0, py::arg("w_sft") = 1e4, py::arg("learning_rate") = 5e-4, py::arg("steps") = 100,
      py::arg("batch_size") = 64, py::arg("seed") = 0, "Trains `student` in place; returns per-epoch (dpo, sft, total).");

  m.def("sha256", [](const std::string& bytes) { return sha256_hex(bytes); });

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli_main(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
