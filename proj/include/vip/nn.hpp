#pragma once

#include "vip/autodiff.hpp"
#include "vip/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vip {

struct Dense {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }
};

std::size_t param_count(const Dense& d);

// h -> h + dense2(silu(dense1(h))). Both layers are width x width so a
// masked block is an exact identity.
struct ResidualBlock {
  Dense dense1;
  Dense dense2;
};

struct NetArch {
  int input_dim = 2;
  int time_embed_dim = 16;
  int hidden_width = 64;
  int n_blocks = 4;

  bool operator==(const NetArch&) const = default;
};

// Named architectures. "teacher" and "base_student" are the toy-experiment
// pair; "vip_teacher" has six blocks so it can be pruned over several stages.
NetArch preset_arch(const std::string& name);

// Sinusoidal timestep features, one row per entry of t.
Matrix time_embedding(std::span<const int> t, int dim);

// Time-conditioned residual MLP predicting the noise added to a 2-d sample:
//   h = silu(embed([x, emb(t)])); h = block_i(h) for active i; out = head(h).
class EpsilonNet {
 public:
  EpsilonNet() = default;
  // He-style fan-in initialization from `seed`; biases start at zero.
  static EpsilonNet create(const NetArch& arch, std::uint64_t seed);
  // Rebuilds a net from flat parameters in params() order; shapes are checked.
  static EpsilonNet from_params(const NetArch& arch, std::vector<bool> mask, const std::vector<Matrix>& values);

  const NetArch& arch() const noexcept { return arch_; }
  std::size_t n_blocks() const noexcept { return blocks_.size(); }
  bool block_active(std::size_t i) const { return active_.at(i); }
  const std::vector<bool>& block_mask() const noexcept { return active_; }
  void set_block_active(std::size_t i, bool active);
  std::size_t active_blocks() const;

  Dense& embed() noexcept { return embed_; }
  const Dense& embed() const noexcept { return embed_; }
  Dense& head() noexcept { return head_; }
  const Dense& head() const noexcept { return head_; }
  ResidualBlock& block(std::size_t i) { return blocks_.at(i); }
  const ResidualBlock& block(std::size_t i) const { return blocks_.at(i); }

  // Flat parameter view in a fixed order: embed, blocks (dense1, dense2), head;
  // weights before biases. Inactive blocks are included.
  std::vector<std::string> param_names() const;
  std::vector<Matrix*> params();
  std::vector<const Matrix*> params() const;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> param_shapes() const;
  // False for parameters of masked blocks.
  std::vector<bool> param_active() const;

  // Records the forward pass on `tape`. With `trainable` the parameters are
  // bound to their flat slot index, otherwise they enter as constants.
  ad::Var forward(ad::Tape& tape, ad::Var x, std::span<const int> t, bool trainable) const;

 private:
  NetArch arch_;
  Dense embed_;
  std::vector<ResidualBlock> blocks_;
  std::vector<bool> active_;
  Dense head_;
};

// Inference-only forward. Throws ShapeError naming the offending dimension
// when x is not [batch, input_dim] or t has a different batch size.
Matrix predict_noise(const EpsilonNet& net, const Matrix& x, std::span<const int> t);

// Allocation-free inference for repeated evaluation (e.g. sampling loops).
// Holds a reference to the net, which must outlive it.
class Denoiser {
 public:
  explicit Denoiser(const EpsilonNet& net) : net_(net) {}
  const Matrix& operator()(const Matrix& x, std::span<const int> t);

 private:
  const EpsilonNet& net_;
  Matrix in_, h_, f_, g_, out_;
};

// Active parameters only: embed + head + active blocks.
std::size_t param_count(const EpsilonNet& net);

// SHA-256 over architecture, mask and raw parameter bytes.
std::string state_hash(const EpsilonNet& net);

}  // namespace vip
