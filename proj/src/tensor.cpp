#include "vip/tensor.hpp"

#include "vip/error.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace vip {

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t;
  t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data[k++] = m(r, c);
  return t;
}

Matrix Tensor::to_matrix() const {
  validate();
  Eigen::Index rows = 0, cols = 0;
  if (shape.size() == 1) {
    rows = 1;
    cols = static_cast<Eigen::Index>(shape[0]);
  } else if (shape.size() == 2) {
    rows = static_cast<Eigen::Index>(shape[0]);
    cols = static_cast<Eigen::Index>(shape[1]);
  } else {
    throw ShapeError("rank", "expected rank 1 or 2, got " + std::to_string(shape.size()));
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++];
  return m;
}

std::size_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void Tensor::validate(const std::string& name) const {
  if (numel() != data.size())
    throw ShapeError("data", name + ": shape holds " + std::to_string(numel()) + " entries but data has " +
                                 std::to_string(data.size()));
  for (double v : data)
    if (!std::isfinite(v)) throw NumericError(name + ": non-finite entry");
}

}  // namespace vip
