#include "vip/diffusion.hpp"

#include "vip/error.hpp"
#include "vip/optim.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace vip {

namespace {

constexpr std::size_t kChunk = 256;

}  // namespace

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule.T", "must be at least 1");
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw ConfigError("schedule.beta", "every beta must lie in (0,1)");
    if (i > 0 && !(betas[i] > betas[i - 1])) throw ConfigError("schedule.beta", "betas must be strictly increasing");
  }
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.beta = std::move(betas);
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.beta.size(); ++i) {
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

NoiseSchedule NoiseSchedule::linear(int T, double beta_min, double beta_max) {
  if (T < 1) throw ConfigError("schedule.T", "must be at least 1");
  if (!(beta_min > 0.0 && beta_min < 1.0)) throw ConfigError("schedule.beta_min", "must lie in (0,1)");
  if (!(beta_max > 0.0 && beta_max < 1.0)) throw ConfigError("schedule.beta_max", "must lie in (0,1)");
  if (T > 1 && !(beta_max > beta_min)) throw ConfigError("schedule.beta_max", "must exceed beta_min");
  std::vector<double> b(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i)
    b[static_cast<std::size_t>(i)] = T == 1 ? beta_min : beta_min + (beta_max - beta_min) * i / (T - 1);
  return from_betas(std::move(b));
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 0 || t >= T) throw Error("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
}

Matrix q_sample(const NoiseSchedule& s, const Matrix& x0, std::span<const int> t, const Matrix& eps) {
  if (x0.rows() != eps.rows()) throw ShapeError("batch", "q_sample: x0 and eps batch sizes differ");
  if (x0.cols() != eps.cols()) throw ShapeError("dim", "q_sample: x0 and eps dimensions differ");
  if (static_cast<std::size_t>(x0.rows()) != t.size()) throw ShapeError("batch", "q_sample: one timestep per row");
  Matrix out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const int ti = t[static_cast<std::size_t>(i)];
    s.check_timestep(ti);
    const double ab = s.alpha_bar[static_cast<std::size_t>(ti)];
    out.row(i) = std::sqrt(ab) * x0.row(i) + std::sqrt(1.0 - ab) * eps.row(i);
  }
  return out;
}

Matrix q_sample(const NoiseSchedule& s, const Matrix& x0, int t, const Matrix& eps) {
  std::vector<int> ts(static_cast<std::size_t>(x0.rows()), t);
  return q_sample(s, x0, ts, eps);
}

std::vector<int> draw_timesteps(const NoiseSchedule& s, std::size_t n, Rng& rng) {
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
  return t;
}

Matrix draw_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

ad::Var diffusion_train_loss(ad::Tape& tape, const DiffusionModel& model, const Matrix& x0, Rng& rng) {
  if (x0.rows() == 0) throw Error("diffusion_train_loss: empty batch");
  const auto t = draw_timesteps(model.schedule, static_cast<std::size_t>(x0.rows()), rng);
  const Matrix eps = draw_noise(x0.rows(), x0.cols(), rng);
  const Matrix xt = q_sample(model.schedule, x0, t, eps);
  ad::Var pred = model.net.forward(tape, tape.constant(xt), t, true);
  return ad::mean(ad::row_sq_norm(ad::sub(tape.constant(eps), pred)));
}

namespace {

void sample_chunk(const DiffusionModel& model, std::size_t begin, std::size_t end, std::uint64_t seed, Matrix& out) {
  const auto& s = model.schedule;
  const auto dim = static_cast<Eigen::Index>(model.net.arch().input_dim);
  const auto n = static_cast<Eigen::Index>(end - begin);
  std::vector<Rng> streams;
  streams.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) streams.emplace_back(derive_seed(seed, i));

  Matrix x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index d = 0; d < dim; ++d) x(i, d) = streams[static_cast<std::size_t>(i)].normal();

  std::vector<int> ts(static_cast<std::size_t>(n));
  Denoiser denoise(model.net);
  for (int t = s.T - 1; t >= 0; --t) {
    std::fill(ts.begin(), ts.end(), t);
    const Matrix& eps = denoise(x, ts);
    const auto k = static_cast<std::size_t>(t);
    const double coef = s.beta[k] / std::sqrt(1.0 - s.alpha_bar[k]);
    x = (x - coef * eps) / std::sqrt(s.alpha[k]);
    if (t > 0) {
      const double sigma = std::sqrt(s.beta[k]);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index d = 0; d < dim; ++d) x(i, d) += sigma * streams[static_cast<std::size_t>(i)].normal();
    }
  }
  out.middleRows(static_cast<Eigen::Index>(begin), n) = x;
}

}  // namespace

Matrix sample(const DiffusionModel& model, std::size_t n, std::uint64_t seed, SampleOptions opts) {
  Matrix out(static_cast<Eigen::Index>(n), model.net.arch().input_dim);
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  const auto run = [&](std::size_t c) { sample_chunk(model, c * kChunk, std::min(n, (c + 1) * kChunk), seed, out); };
  const auto threads = static_cast<std::size_t>(std::max(1, opts.threads));
  if (threads == 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run(c);
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < std::min(threads, chunks); ++w)
    pool.emplace_back([&, w] {
      for (std::size_t c = w; c < chunks; c += threads) run(c);
    });
  pool.clear();
  return out;
}

std::vector<double> train_diffusion(DiffusionModel& model, const DataSampler& data, const TrainOptions& opts,
                                    std::uint64_t seed) {
  if (opts.steps < 0) throw ConfigError("train.steps", "must be non-negative");
  if (opts.batch_size < 1) throw ConfigError("train.batch_size", "must be positive");
  Rng data_rng(derive_seed(seed, 1));
  Rng noise_rng(derive_seed(seed, 2));
  auto opt = OptimizerState::adam(opts.learning_rate);
  const auto shapes = model.net.param_shapes();
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(opts.steps));
  for (int i = 0; i < opts.steps; ++i) {
    const Matrix x0 = data(static_cast<std::size_t>(opts.batch_size), data_rng);
    ad::Tape tape;
    ad::Var loss = diffusion_train_loss(tape, model, x0, noise_rng);
    history.push_back(loss.scalar());
    step(opt, model.net, tape.backward(loss, shapes));
  }
  return history;
}

}  // namespace vip
