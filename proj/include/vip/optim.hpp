#pragma once

#include "vip/autodiff.hpp"
#include "vip/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vip {

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<Matrix> m;  // first moments, one per parameter (adam)
  std::vector<Matrix> v;  // second moments

  static OptimizerState sgd(double lr);
  static OptimizerState adam(double lr);
};

// Applies one update in place. sgd: p -= lr*g. adam: bias-corrected update;
// moments are allocated lazily on the first call.
void step(OptimizerState& opt, EpsilonNet& net, const ad::Gradients& grads);

OptimizerKind parse_optimizer_kind(const std::string& s);

}  // namespace vip
