#include "spangrad/scores.hpp"

#include <algorithm>
#include <cmath>

namespace spangrad {

namespace {

void require_projectors(const Matrix& q, const Matrix& k,
                        const ProjectorPair& proj_k,
                        const ProjectorPair& proj_v) {
  require_same_shape(q, k, "Q and K");
  const Index t = q.rows();
  require_shape(proj_k.parallel, t, t, "K projector");
  require_shape(proj_k.orthogonal, t, t, "K projector complement");
  require_shape(proj_v.parallel, t, t, "V projector");
  require_shape(proj_v.orthogonal, t, t, "V projector complement");
}

int side_bit(Side s) { return s == Side::orthogonal ? 1 : 0; }

}  // namespace

bool is_exception_pair(int a, int b) {
  for (const auto& pair : kExceptionPairs) {
    if ((pair[0] == a && pair[1] == b) || (pair[0] == b && pair[1] == a)) {
      return true;
    }
  }
  return false;
}

const Matrix& select(const ProjectorPair& pair, Side side) {
  return side == Side::parallel ? pair.parallel : pair.orthogonal;
}

Matrix score(const Matrix& q, const Matrix& k) {
  require_same_shape(q, k, "score(Q, K)");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix s(q.rows(), k.rows());
  s.noalias() = scale * q * k.transpose();
  return s;
}

UnidirectionalSplit split_unidirectional(const Matrix& s,
                                         const ProjectorPair& proj_k) {
  require_shape(proj_k.parallel, s.rows(), s.rows(), "split_unidirectional");
  require_shape(proj_k.orthogonal, s.rows(), s.rows(), "split_unidirectional");
  UnidirectionalSplit out;
  out.s_parallel.noalias() = proj_k.parallel * s;
  out.s_orthogonal.noalias() = proj_k.orthogonal * s;
  return out;
}

Matrix ScoreBlocks::sum() const {
  Matrix total = blocks[0];
  for (int b = 1; b < kNumBlocks; ++b) total += blocks[b];
  return total;
}

ScoreBlocks decompose_bidirectional(const Matrix& q, const Matrix& k,
                                    const ProjectorPair& proj_k,
                                    const ProjectorPair& proj_v) {
  require_projectors(q, k, proj_k, proj_v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));

  // left[a][b] = P_V^a P_K^b Q / sqrt(d)   (T x d)
  // right[e]   = K^T P_K P_V^e             (d x T)
  std::array<Matrix, 2> k_side_q;
  k_side_q[0].noalias() = proj_k.parallel * q;
  k_side_q[1].noalias() = proj_k.orthogonal * q;
  std::array<std::array<Matrix, 2>, 2> left;
  for (int a = 0; a < 2; ++a) {
    const Matrix& pv = a == 0 ? proj_v.parallel : proj_v.orthogonal;
    for (int b = 0; b < 2; ++b) {
      left[a][b].noalias() = scale * pv * k_side_q[b];
    }
  }
  Matrix kt_pk(k.cols(), k.rows());
  kt_pk.noalias() = k.transpose() * proj_k.parallel;
  std::array<Matrix, 2> right;
  right[0].noalias() = kt_pk * proj_v.parallel;
  right[1].noalias() = kt_pk * proj_v.orthogonal;

  ScoreBlocks out;
  for (int b = 1; b <= kNumBlocks; ++b) {
    const BlockPattern& p = kBlockPatterns[b - 1];
    out.at(b).noalias() =
        left[side_bit(p.left_v)][side_bit(p.left_k)] * right[side_bit(p.right_v)];
  }
  return out;
}

double vanishing_block_check(const Matrix& q, const Matrix& k,
                             const ProjectorPair& proj_k,
                             const ProjectorPair& proj_v) {
  require_projectors(q, k, proj_k, proj_v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const std::array<const Matrix*, 2> pv = {&proj_v.parallel,
                                           &proj_v.orthogonal};
  const std::array<const Matrix*, 2> pk = {&proj_k.parallel,
                                           &proj_k.orthogonal};
  Matrix kt_pk_perp = k.transpose() * proj_k.orthogonal;
  double largest = 0.0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      Matrix left = scale * (*pv[a]) * ((*pk[b]) * q);
      for (int e = 0; e < 2; ++e) {
        Matrix term = left * (kt_pk_perp * (*pv[e]));
        largest = std::max(largest, term.norm());
      }
    }
  }
  return largest;
}

Matrix orthogonality_table(const ScoreBlocks& blocks) {
  Matrix table(kNumBlocks, kNumBlocks);
  for (int a = 0; a < kNumBlocks; ++a) {
    for (int b = a; b < kNumBlocks; ++b) {
      const double v = frobenius_inner(blocks.blocks[a], blocks.blocks[b]);
      table(a, b) = v;
      table(b, a) = v;
    }
  }
  return table;
}

}  // namespace spangrad
