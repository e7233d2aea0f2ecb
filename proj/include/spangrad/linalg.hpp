#pragma once

// Gram matrices, pseudoinverses and column-span projectors.
//
// All matrices are float64. A projector onto span(M) for a T x d matrix M is
// the T x T matrix M (M^T M)^-1 M^T; its complement is I minus that. The Gram
// matrix is factored with a Cholesky decomposition (ridge-shifted when
// requested) and falls back to an SVD pseudo-inverse if the factorization
// breaks down numerically.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string_view>

#include "spangrad/errors.hpp"

namespace spangrad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class SpanSource { Q, K, V };

std::string_view to_string(SpanSource source);

struct RegularizationPolicy {
  // Added to the diagonal of the Gram matrix before inversion.
  double ridge_epsilon = 0.0;
  // Singular-value cutoff relative to the largest singular value.
  double rank_tolerance = 1e-10;

  // No ridge; singular inputs are an error. Used by every verification path.
  static RegularizationPolicy exact();

  // ridge_epsilon = scale * trace(M^T M) / d, floored so that an all-zero M
  // still factors. Training never hard-fails on a rank-deficient head.
  static RegularizationPolicy relative_ridge(const Matrix& source,
                                             double scale = 1e-8);

  void validate() const;
};

struct Pseudoinverse {
  Matrix matrix;        // d x T
  Matrix gram_inverse;  // d x d, (M^T M + eps I)^-1
};

struct ProjectorPair {
  Matrix parallel;    // T x T
  Matrix orthogonal;  // T x T, identity - parallel
  Index source_rank = 0;
  SpanSource source_label = SpanSource::K;
};

// Projector and pseudoinverse computed from one factorization.
struct Span {
  ProjectorPair projector;
  Pseudoinverse pseudoinverse;
};

Matrix gram(const Matrix& m);

Pseudoinverse pseudoinverse(const Matrix& m, const RegularizationPolicy& policy);

ProjectorPair projector(const Matrix& m, const RegularizationPolicy& policy,
                        SpanSource label = SpanSource::K);

Span span(const Matrix& m, const RegularizationPolicy& policy,
          SpanSource label = SpanSource::K);

// Number of singular values above tolerance * largest.
Index numerical_rank(const Matrix& m, double tolerance);

void require_finite(const Matrix& m, std::string_view what);
void require_same_shape(const Matrix& a, const Matrix& b, std::string_view what);
void require_shape(const Matrix& m, Index rows, Index cols, std::string_view what);

// ||got - want||_F / max(||want||_F, floor).
double relative_error(const Matrix& got, const Matrix& want,
                      double floor = 1e-300);

// Frobenius inner product Tr(A^T B).
double frobenius_inner(const Matrix& a, const Matrix& b);

Matrix random_gaussian(Index rows, Index cols, std::mt19937_64& rng,
                       double stddev = 1.0);

}  // namespace spangrad
