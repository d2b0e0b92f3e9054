#pragma once

#include "vip/tensor.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace vip::ad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  double scalar() const;  // value of a 1x1 node
  bool requires_grad() const;
};

using Gradients = std::vector<Matrix>;

// Reverse-mode tape over matrix-valued nodes. Parameter leaves are bound to a
// slot index so backward() can return one gradient per parameter; nodes that
// depend on no slot are treated as constants and never receive gradient.
class Tape {
 public:
  Var constant(Matrix value);
  Var parameter(const Matrix& value, std::size_t slot);

  // Gradients of a scalar node with respect to each slot in [0, n_slots).
  // Slots the loss does not reach get zero gradients of `shapes[i]`.
  // Throws NumericError if the loss is not finite.
  Gradients backward(Var loss, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& shapes);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend struct Var;
  friend struct TapeAccess;

  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    std::function<void(Tape&, std::size_t)> backward;
    long slot = -1;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Elementwise and linear-algebra ops. Shapes follow Eigen semantics; a
// mismatch throws ShapeError naming the offending dimension.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1xN row over every row of a
Var scale(Var a, double c);
Var silu(Var a);
Var log_sigmoid(Var a);
Var concat_cols(Var a, Var b);
Var row_sq_norm(Var a);  // Nx1 column of squared row norms
Var sum(Var a);          // 1x1
Var mean(Var a);         // 1x1

}  // namespace vip::ad
