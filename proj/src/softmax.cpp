#include "spangrad/softmax.hpp"

#include <cmath>
#include <string>

namespace spangrad {

Matrix apply_causal_mask(const Matrix& scores) {
  Matrix out = scores;
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = i + 1; j < out.cols(); ++j) out(i, j) = kMaskValue;
  }
  return out;
}

Matrix softmax_rows(const Matrix& scores) {
  const Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
  for (Index i = 0; i < scores.rows(); ++i) {
    if (!(row_max(i) > kMaskValue)) {
      throw DegenerateRow("softmax row " + std::to_string(i) +
                          " is fully masked");
    }
  }
  const Eigen::ArrayXXd shifted =
      scores.array().colwise() - row_max.array();
  // Below the double underflow threshold exp is exactly zero, as std::exp.
  Matrix out = (shifted < kExpUnderflow).select(0.0, shifted.exp()).matrix();
  const Eigen::VectorXd total = out.rowwise().sum();
  out.array().colwise() /= total.array();
  return out;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs) {
  require_same_shape(probs, d_probs, "softmax_backward");
  const Eigen::VectorXd row_dot = probs.cwiseProduct(d_probs).rowwise().sum();
  return probs.cwiseProduct(d_probs - row_dot.replicate(1, probs.cols()));
}

}  // namespace spangrad
