#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace vip {

// Dense working matrix; rows index the batch.
using Matrix = Eigen::MatrixXd;

// Row-major n-d array used at serialization boundaries (checkpoints, dumps).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  static Tensor from_matrix(const Matrix& m);
  Matrix to_matrix() const;  // requires a 1-d or 2-d shape

  std::size_t numel() const;
  // Throws ShapeError if product(shape) != data.size(), Error on non-finite data.
  void validate(const std::string& name = "tensor") const;

  bool operator==(const Tensor&) const = default;
};

}  // namespace vip
