#include "vip/error.hpp"
#include "vip/reward.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace vip;

namespace {

// Direct mixture density, no log-sum-exp.
double gt_pdf(const GroundTruthMixture& mix, const Eigen::Vector2d& x) {
  double p = 0;
  for (const auto& m : mix.modes())
    p += m.weight * std::exp(-(x - m.mean).squaredNorm() / (2 * m.sigma * m.sigma)) /
         (2 * std::numbers::pi * m.sigma * m.sigma);
  return p;
}

EvalReport report(std::map<std::string, double> means) {
  EvalReport r;
  r.property_means = std::move(means);
  return r;
}

}  // namespace

TEST_CASE("standard mixture") {
  const auto mix = GroundTruthMixture::standard();
  REQUIRE(mix.size() == 3);
  CHECK(mix.modes()[1].weight == doctest::Approx(0.10));
  CHECK(mix.max_sigma() == doctest::Approx(0.15));
  for (const auto& m : mix.modes()) {
    CHECK(m.mean.norm() == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(std::abs(m.mean.x()) <= 3);
    CHECK(std::abs(m.mean.y()) <= 3);
  }
}

TEST_CASE("mixture validation names the offending field") {
  const auto bad = [](std::vector<MixtureMode> modes, const std::string& field) {
    try {
      GroundTruthMixture m(std::move(modes));
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == field);
    }
  };
  bad({{{0, 0}, 0.1, 0.5}, {{3, 0}, 0.1, 0.6}}, "mixture.modes");
  bad({{{0, 0}, 0.1, 0.5}, {{0.5, 0}, 0.1, 0.5}}, "mixture.modes");
  bad({{{0, 0}, -0.1, 1.0}}, "mixture.modes[0].sigma");
  bad({{{0, 0}, 0.1, 1.0}, {{5, 0}, 0.1, 0.0}}, "mixture.modes[1].weight");
}

TEST_CASE("sample_gt") {
  SUBCASE("degenerate sigma") {
    const auto mix = GroundTruthMixture::unchecked({{{1.5, -2.0}, 1e-300, 1.0}});
    Rng rng(1);
    const Matrix x = sample_gt(mix, 50, rng);
    CHECK((x.col(0).array() == 1.5).all());
    CHECK((x.col(1).array() == -2.0).all());
  }
  SUBCASE("zero-weight modes are never drawn") {
    const auto mix = GroundTruthMixture::unchecked({{{0, 2}, 0.1, 1.0}, {{-2, -1}, 0.1, 0.0}, {{2, -1}, 0.1, 0.0}});
    Rng rng(2);
    const Matrix x = sample_gt(mix, 1000, rng);
    for (Eigen::Index i = 0; i < x.rows(); ++i) CHECK(nearest_mode(mix, x.row(i).transpose()) == 0);
  }
  SUBCASE("empirical weights and OOD rate") {
    const auto mix = GroundTruthMixture::standard();
    Rng rng(3);
    const std::size_t n = 100000;
    const Matrix x = sample_gt(mix, n, rng);
    std::vector<std::size_t> counts(3, 0);
    std::size_t ood = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      auto k = assign_mode(mix, x.row(i).transpose());
      if (k)
        ++counts[*k];
      else
        ++ood;
    }
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(std::abs(static_cast<double>(counts[k]) / n - mix.modes()[k].weight) <= 0.01);
    // Chi-square(2) tail at r = 4 is exp(-8) ~ 3.4e-4.
    CHECK(static_cast<double>(ood) / n < 1e-3);
  }
}

TEST_CASE("assign_mode") {
  const auto mix = GroundTruthMixture::standard();
  CHECK(assign_mode(mix, mix.modes()[1].mean) == std::optional<std::size_t>(1));
  const Eigen::Vector2d mid = 0.5 * (mix.modes()[0].mean + mix.modes()[2].mean);
  CHECK(nearest_mode(mix, mid) == 0);
  CHECK_FALSE(assign_mode(mix, mid).has_value());
  const Eigen::Vector2d edge = mix.modes()[2].mean + Eigen::Vector2d(0.6 - 1e-9, 0);
  CHECK(assign_mode(mix, edge) == std::optional<std::size_t>(2));
  const Eigen::Vector2d outside = mix.modes()[2].mean + Eigen::Vector2d(0.6 + 1e-9, 0);
  CHECK_FALSE(assign_mode(mix, outside).has_value());
  // Two equidistant modes: the lower index wins.
  const auto pair = GroundTruthMixture::unchecked({{{-1, 0}, 1.0, 0.5}, {{1, 0}, 1.0, 0.5}});
  CHECK(assign_mode(pair, {0, 0.3}) == std::optional<std::size_t>(0));
}

TEST_CASE("score_sample") {
  const auto mix = GroundTruthMixture::standard();
  const RewardSpec spec;
  const auto at_target = score_sample(spec, mix, mix.modes()[1].mean);
  CHECK(at_target.at("target_affinity") == 0.0);
  const auto off = score_sample(spec, mix, mix.modes()[1].mean + Eigen::Vector2d(0, 0.45));
  CHECK(off.at("target_affinity") == doctest::Approx(-0.45));
  CHECK(at_target.at("quality") > off.at("quality"));
  CHECK(at_target.at("quality") == doctest::Approx(std::log(gt_pdf(mix, mix.modes()[1].mean))));

  // quality ranks points exactly as the density does.
  Rng rng(4);
  std::vector<std::pair<double, double>> v;
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector2d x(3 * rng.normal(), 3 * rng.normal());
    v.push_back({gt_pdf(mix, x), score_sample(spec, mix, x).at("quality")});
  }
  std::sort(v.begin(), v.end());
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i].first > v[i - 1].first) CHECK(v[i].second >= v[i - 1].second);

  // Far in the tails the log density stays finite.
  CHECK(std::isfinite(score_sample(spec, mix, {60, -60}).at("quality")));
}

TEST_CASE("target affinity separates the target mode under the ground truth") {
  const auto mix = GroundTruthMixture::standard();
  const RewardSpec spec;
  Rng rng(6);
  const Matrix x = sample_gt(mix, 20000, rng);
  std::vector<double> sum(3, 0), n(3, 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto k = nearest_mode(mix, x.row(i).transpose());
    sum[k] += score_sample(spec, mix, x.row(i).transpose()).at("target_affinity");
    n[k] += 1;
  }
  CHECK(sum[1] / n[1] > sum[0] / n[0]);
  CHECK(sum[1] / n[1] > sum[2] / n[2]);
}

TEST_CASE("score_samples aggregates") {
  const auto mix = GroundTruthMixture::standard();
  const RewardSpec spec;
  Matrix x(4, 2);
  x.row(0) = mix.modes()[0].mean.transpose();
  x.row(1) = mix.modes()[1].mean.transpose();
  x.row(2) = mix.modes()[1].mean.transpose();
  x.row(3) << 0, 0;
  const auto r = score_samples(x, spec, mix);
  CHECK(r.n_samples == 4);
  CHECK(r.mode_counts == std::vector<std::size_t>{1, 2, 0});
  CHECK(r.ood_count == 1);
  CHECK(r.total == doctest::Approx((r.property_means.at("quality") + r.property_means.at("target_affinity")) / 2));

  Matrix rev = x.colwise().reverse();
  const auto r2 = score_samples(rev, spec, mix);
  CHECK(r2.mode_counts == r.mode_counts);
  CHECK(r2.total == doctest::Approx(r.total).epsilon(1e-14));

  Matrix only_target(5, 2);
  only_target.rowwise() = mix.modes()[1].mean.transpose();
  const auto stub = score_samples(only_target, spec, mix);
  CHECK(stub.property_means.at("target_affinity") == 0.0);
  CHECK(stub.ood_count == 0);
}

TEST_CASE("score_model contract") {
  DiffusionModel m{EpsilonNet::create(preset_arch("tiny"), 1), NoiseSchedule::linear(10, 1e-3, 0.2)};
  const auto mix = GroundTruthMixture::standard();
  const auto a = score_model(m, RewardSpec{}, mix, 100, 5);
  CHECK(a == score_model(m, RewardSpec{}, mix, 100, 5));
  std::size_t total = a.ood_count;
  for (auto c : a.mode_counts) total += c;
  CHECK(total == 100);
  try {
    score_model(m, RewardSpec{}, mix, 99, 5);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "eval.n_samples");
  }
}

TEST_CASE("compare_reports") {
  const auto full = report({{"vq", 2.627}, {"tc", 2.602}, {"dd", 2.728}, {"ta", 2.491}});
  const auto pruned = report({{"vq", 2.609}, {"tc", 2.588}, {"dd", 2.744}, {"ta", 2.487}});
  const auto drops = compare_reports(full, pruned);
  REQUIRE(drops.size() == 3);
  CHECK(drops[0] == "vq");
  CHECK(drops[1] == "tc");
  CHECK(drops[2] == "ta");
  CHECK(compare_reports(full, full).empty());
  CHECK(compare_reports(report({{"a", 1}, {"b", 1}}), report({{"a", 0.5}, {"b", 2}})) ==
        std::vector<std::string>{"a"});
  CHECK_THROWS_AS(compare_reports(full, report({{"vq", 1}})), Error);
}

TEST_CASE("scaling target affinity keeps the comparison order") {
  const auto full = report({{"target_affinity", -0.4}, {"quality", 0.1}});
  const auto pruned = report({{"target_affinity", -0.9}, {"quality", 0.05}});
  for (double c : {0.01, 1.0, 250.0}) {
    auto f = full, p = pruned;
    f.property_means["target_affinity"] *= c;
    p.property_means["target_affinity"] *= c;
    CHECK(compare_reports(f, p).front() == (c * 0.5 > 0.05 ? "target_affinity" : "quality"));
  }
}

TEST_CASE("report JSON round trip") {
  const auto mix = GroundTruthMixture::standard();
  Rng rng(3);
  auto r = score_samples(sample_gt(mix, 200, rng), RewardSpec{}, mix);
  r.seed = 1234567890123ull;
  const auto back = parse_eval_report(eval_report_json(r));
  CHECK(back == r);
  CHECK(eval_report_json(back) == eval_report_json(r));
}

TEST_CASE("reward spec validation") {
  const auto mix = GroundTruthMixture::standard();
  RewardSpec s;
  s.target_mode = 3;
  CHECK_THROWS_AS(s.validate(mix), ConfigError);
  s = {};
  s.properties = {"quality", "quality"};
  CHECK_THROWS_AS(s.validate(mix), ConfigError);
  s.properties = {"smell"};
  CHECK_THROWS_AS(s.validate(mix), ConfigError);
}
