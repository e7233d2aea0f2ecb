#pragma once

// Attention score matrix and its span decompositions.
//
// With Q split as (P_V + P_V^perp)(P_K + P_K^perp) Q and K as
// (P_V + P_V^perp) K, the score S = Q K^T / sqrt(d) splits into 16 terms
//   P_V^a P_K^b Q K^T P_K^c P_V^e / sqrt(d).
// K^T P_K^perp = 0, so the 8 terms with c = perp vanish and the remaining 8
// blocks are indexed B = 1..8 with (a, b, e) read as a 3-bit number B - 1,
// "perp" being 1:
//
//   B  left V  left K  right V   violation order
//   1    par     par     par           0
//   2    par     par     perp          1
//   3    par     perp    par           1
//   4    par     perp    perp          2
//   5    perp    par     par           1
//   6    perp    par     perp          2
//   7    perp    perp    par           2
//   8    perp    perp    perp          3

#include <array>

#include "spangrad/linalg.hpp"

namespace spangrad {

inline constexpr int kNumBlocks = 8;
inline constexpr int kNumOrders = 4;

enum class Side { parallel, orthogonal };

struct BlockPattern {
  Side left_v;
  Side left_k;
  Side right_v;
};

// Indexed by B - 1.
inline constexpr std::array<BlockPattern, kNumBlocks> kBlockPatterns = {{
    {Side::parallel, Side::parallel, Side::parallel},
    {Side::parallel, Side::parallel, Side::orthogonal},
    {Side::parallel, Side::orthogonal, Side::parallel},
    {Side::parallel, Side::orthogonal, Side::orthogonal},
    {Side::orthogonal, Side::parallel, Side::parallel},
    {Side::orthogonal, Side::parallel, Side::orthogonal},
    {Side::orthogonal, Side::orthogonal, Side::parallel},
    {Side::orthogonal, Side::orthogonal, Side::orthogonal},
}};

// Violation order of block B (1-based): the number of perp projectors in it.
inline constexpr std::array<int, kNumBlocks> kViolationOrder = {0, 1, 1, 2,
                                                                1, 2, 2, 3};

constexpr int violation_order(int block) { return kViolationOrder[block - 1]; }

// Pairs (B, B') that differ only in the left K projector. These are the only
// blocks that are not Frobenius-orthogonal, and their gradient differences
// drive the K cross terms.
inline constexpr std::array<std::array<int, 2>, 4> kExceptionPairs = {
    {{1, 3}, {2, 4}, {5, 7}, {6, 8}}};

bool is_exception_pair(int a, int b);

const Matrix& select(const ProjectorPair& pair, Side side);

// Q K^T / sqrt(d), d = Q.cols().
Matrix score(const Matrix& q, const Matrix& k);

struct UnidirectionalSplit {
  Matrix s_parallel;    // P_K S
  Matrix s_orthogonal;  // P_K^perp S
};

UnidirectionalSplit split_unidirectional(const Matrix& s,
                                         const ProjectorPair& proj_k);

struct ScoreBlocks {
  std::array<Matrix, kNumBlocks> blocks;

  // 1-based block access.
  const Matrix& at(int block) const { return blocks.at(block - 1); }
  Matrix& at(int block) { return blocks.at(block - 1); }

  Matrix sum() const;
};

ScoreBlocks decompose_bidirectional(const Matrix& q, const Matrix& k,
                                    const ProjectorPair& proj_k,
                                    const ProjectorPair& proj_v);

// Builds the 8 omitted terms (P_K^perp right of K^T) explicitly and returns
// the largest Frobenius norm among them.
double vanishing_block_check(const Matrix& q, const Matrix& k,
                             const ProjectorPair& proj_k,
                             const ProjectorPair& proj_v);

// 8 x 8 table of <S^A, S^B> = Tr(S^A^T S^B), row/column A - 1, B - 1.
Matrix orthogonality_table(const ScoreBlocks& blocks);

}  // namespace spangrad
