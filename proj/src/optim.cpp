#include "vip/optim.hpp"

#include "vip/error.hpp"

#include <cmath>

namespace vip {

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.kind = OptimizerKind::sgd;
  s.learning_rate = lr;
  return s;
}

OptimizerState OptimizerState::adam(double lr) {
  OptimizerState s;
  s.kind = OptimizerKind::adam;
  s.learning_rate = lr;
  return s;
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("optimizer", "unknown optimizer '" + s + "'");
}

void step(OptimizerState& opt, EpsilonNet& net, const ad::Gradients& grads) {
  if (!(opt.learning_rate > 0)) throw ConfigError("learning_rate", "must be positive");
  auto params = net.params();
  if (grads.size() != params.size())
    throw ShapeError("params", "step: " + std::to_string(grads.size()) + " gradients for " +
                                   std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols())
      throw ShapeError("param[" + std::to_string(i) + "]", "step: gradient shape mismatch");

  const auto live = net.param_active();
  ++opt.step_count;
  if (opt.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (live[i]) *params[i] -= opt.learning_rate * grads[i];
    return;
  }

  if (opt.m.empty()) {
    for (const Matrix* p : params) {
      opt.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      opt.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (opt.m.size() != params.size()) throw ShapeError("moments", "step: optimizer state built for another net");
  const double t = static_cast<double>(opt.step_count);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!live[i]) continue;
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * grads[i];
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * grads[i].cwiseAbs2();
    params[i]->array() -=
        opt.learning_rate * (opt.m[i].array() / c1) / ((opt.v[i].array() / c2).sqrt() + opt.epsilon);
  }
}

}  // namespace vip
