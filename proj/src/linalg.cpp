#include "spangrad/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace spangrad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Smallest ridge used when the Gram trace itself is zero.
constexpr double kRidgeFloor = 1e-30;

}  // namespace

std::string_view to_string(SpanSource source) {
  switch (source) {
    case SpanSource::Q:
      return "Q";
    case SpanSource::K:
      return "K";
    case SpanSource::V:
      return "V";
  }
  return "?";
}

RegularizationPolicy RegularizationPolicy::exact() { return {}; }

RegularizationPolicy RegularizationPolicy::relative_ridge(const Matrix& source,
                                                          double scale) {
  RegularizationPolicy policy;
  const double trace = source.squaredNorm();  // trace(M^T M)
  const double d = static_cast<double>(std::max<Index>(source.cols(), 1));
  policy.ridge_epsilon = std::max(scale * trace / d, kRidgeFloor);
  return policy;
}

void RegularizationPolicy::validate() const {
  if (!(ridge_epsilon >= 0.0) || !std::isfinite(ridge_epsilon)) {
    throw InvalidConfig("ridge_epsilon must be a finite non-negative number");
  }
  if (!(rank_tolerance >= 0.0 && rank_tolerance < 1.0)) {
    throw InvalidConfig("rank_tolerance must lie in [0, 1)");
  }
}

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    throw NonFiniteInput(std::string(what) + " contains NaN or Inf");
  }
}

void require_same_shape(const Matrix& a, const Matrix& b,
                        std::string_view what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch(std::string(what) + ": " + shape_str(a) + " vs " +
                            shape_str(b));
  }
}

void require_shape(const Matrix& m, Index rows, Index cols,
                   std::string_view what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionMismatch(std::string(what) + ": expected " +
                            std::to_string(rows) + "x" + std::to_string(cols) +
                            ", got " + shape_str(m));
  }
}

double relative_error(const Matrix& got, const Matrix& want, double floor) {
  return (got - want).norm() / std::max(want.norm(), floor);
}

double frobenius_inner(const Matrix& a, const Matrix& b) {
  return a.cwiseProduct(b).sum();
}

Matrix random_gaussian(Index rows, Index cols, std::mt19937_64& rng,
                       double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  // Fill in row-major order so a seed means the same matrix regardless of
  // Eigen's storage order.
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

Matrix gram(const Matrix& m) {
  require_finite(m, "gram input");
  Matrix g(m.cols(), m.cols());
  g.setZero();
  g.selfadjointView<Eigen::Lower>().rankUpdate(m.transpose());
  return g.selfadjointView<Eigen::Lower>();
}

Index numerical_rank(const Matrix& m, double tolerance) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tolerance * sv(0)) ++rank;
  }
  return rank;
}

Span span(const Matrix& m, const RegularizationPolicy& policy,
          SpanSource label) {
  policy.validate();
  if (m.rows() < 1 || m.cols() < 1) {
    throw DimensionMismatch("span source must be at least 1x1, got " +
                            shape_str(m));
  }
  require_finite(m, "span source");

  const Index t = m.rows();
  const Index d = m.cols();

  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  qr.setThreshold(policy.rank_tolerance);
  const Index rank = qr.maxPivot() > 0.0 ? qr.rank() : 0;

  Matrix g = gram(m);
  if (policy.ridge_epsilon == 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(g, Eigen::EigenvaluesOnly);
    const double lambda_max = eig.eigenvalues().maxCoeff();
    const double lambda_min = t < d ? 0.0 : eig.eigenvalues().minCoeff();
    if (lambda_max == 0.0 || lambda_min < policy.rank_tolerance * lambda_max) {
      throw SingularGram("Gram matrix of " + std::string(to_string(label)) +
                         " (" + shape_str(m) + ") is numerically singular: " +
                         "smallest eigenvalue " + std::to_string(lambda_min) +
                         ", largest " + std::to_string(lambda_max));
    }
  }

  g.diagonal().array() += policy.ridge_epsilon;

  Span out;
  out.projector.source_rank = rank;
  out.projector.source_label = label;

  Eigen::LLT<Matrix> llt(g);
  if (policy.ridge_epsilon == 0.0 && rank == d) {
    // M Pi = Q R with Pi a permutation: the projector is Q Q^T and
    // M^+ = Pi R^-1 Q^T, without squaring the condition number.
    const Matrix q = qr.householderQ() * Matrix::Identity(t, d);
    const auto r = qr.matrixR().topLeftCorner(d, d).triangularView<Eigen::Upper>();
    Matrix r_inv_qt = r.solve(q.transpose());
    Matrix r_inv = r.solve(Matrix::Identity(d, d));
    out.pseudoinverse.matrix = qr.colsPermutation() * r_inv_qt;
    const Matrix pr = qr.colsPermutation() * r_inv;
    out.pseudoinverse.gram_inverse.noalias() = pr * pr.transpose();
    out.projector.parallel.noalias() = q * q.transpose();
  } else if (llt.info() == Eigen::Success) {
    // G = L L^T. With Y^T = L^-1 M^T the projector is Y Y^T (exactly
    // symmetric) and the pseudoinverse is L^-T Y^T.
    const auto lower = llt.matrixL();
    Matrix yt = lower.solve(m.transpose());
    out.pseudoinverse.matrix = llt.matrixU().solve(yt);
    out.pseudoinverse.gram_inverse = llt.solve(Matrix::Identity(d, d));
    out.projector.parallel.noalias() = yt.transpose() * yt;
  } else {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(g);
    out.pseudoinverse.gram_inverse = cod.pseudoInverse();
    out.pseudoinverse.matrix = out.pseudoinverse.gram_inverse * m.transpose();
    out.projector.parallel.noalias() = m * out.pseudoinverse.matrix;
  }
  out.projector.orthogonal = Matrix::Identity(t, t) - out.projector.parallel;
  return out;
}

Pseudoinverse pseudoinverse(const Matrix& m,
                            const RegularizationPolicy& policy) {
  return span(m, policy).pseudoinverse;
}

ProjectorPair projector(const Matrix& m, const RegularizationPolicy& policy,
                        SpanSource label) {
  return span(m, policy, label).projector;
}

}  // namespace spangrad
