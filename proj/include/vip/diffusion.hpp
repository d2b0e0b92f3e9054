#pragma once

#include "vip/autodiff.hpp"
#include "vip/nn.hpp"
#include "vip/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace vip {

// Discrete DDPM variance schedule.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  // Linear beta from beta_min to beta_max over T steps. Validates
  // 0 < beta_min < beta_max < 1 (beta_min < 1 when T == 1).
  static NoiseSchedule linear(int T, double beta_min, double beta_max);
  // Builds from explicit betas; throws ConfigError if not strictly increasing in (0,1).
  static NoiseSchedule from_betas(std::vector<double> betas);

  void check_timestep(int t) const;
};

struct DiffusionModel {
  EpsilonNet net;
  NoiseSchedule schedule;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, one timestep per row.
Matrix q_sample(const NoiseSchedule& s, const Matrix& x0, std::span<const int> t, const Matrix& eps);
Matrix q_sample(const NoiseSchedule& s, const Matrix& x0, int t, const Matrix& eps);

// Uniform timesteps in [0, T) and standard-normal noise, drawn row by row.
std::vector<int> draw_timesteps(const NoiseSchedule& s, std::size_t n, Rng& rng);
Matrix draw_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Mean over the batch of ||eps - eps_theta(x_t, t)||^2 with t ~ U[0,T), eps ~ N(0,I).
ad::Var diffusion_train_loss(ad::Tape& tape, const DiffusionModel& model, const Matrix& x0, Rng& rng);

struct SampleOptions {
  int threads = 1;
};

// Ancestral sampling from x_T ~ N(0, I) down to x_0. Chain i draws all of its
// noise from the stream derive_seed(seed, i), and chains are evaluated in
// fixed-size chunks, so results do not depend on the thread count.
Matrix sample(const DiffusionModel& model, std::size_t n, std::uint64_t seed, SampleOptions opts = {});

struct TrainOptions {
  int steps = 20000;
  int batch_size = 128;
  double learning_rate = 1e-3;
};

using DataSampler = std::function<Matrix(std::size_t n, Rng& rng)>;

// Fits the model to draws from `data` with Adam on the epsilon loss.
// Returns the per-step loss history.
std::vector<double> train_diffusion(DiffusionModel& model, const DataSampler& data, const TrainOptions& opts,
                                    std::uint64_t seed);

}  // namespace vip
