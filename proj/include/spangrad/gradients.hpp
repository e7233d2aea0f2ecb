#pragma once

// Backward-pass variants for the attention score S = Q K^T / sqrt(d).
//
// Every routine takes the upstream gradient(s) w.r.t. S and returns gradients
// w.r.t. Q and K. The decomposed variants split those gradients by violation
// order (see scores.hpp for the block layout) so the orders can be re-weighted
// before they reach W^Q and W^K. The V gradient is never re-weighted.

#include <array>
#include <string>
#include <string_view>

#include "spangrad/linalg.hpp"
#include "spangrad/scores.hpp"

namespace spangrad {

// Order-wise weights [a0 a1 a2 a3].
struct ScaleConfig {
  std::array<double, kNumOrders> alpha{1.0, 1.0, 1.0, 1.0};

  // Accepts "1,0,0,0", "[1,0,0,0]" or the compact "1000" form.
  static ScaleConfig parse(std::string_view text);
  void validate() const;
  // "[1000]" for 0/1 vectors, "[a0,a1,a2,a3]" otherwise.
  std::string label() const;
};

// Binary switches on the Q, K and V gradients.
struct QKVModulation {
  bool q = true;
  bool k = true;
  bool v = true;

  // Accepts "QKV101" or "101".
  static QKVModulation parse(std::string_view text);
  std::string label() const;  // "QKV101"
  bool all_enabled() const { return q && k && v; }
};

struct SimplestScales {
  double parallel = 1.0;
  double orthogonal = 1.0;

  void validate() const;
};

// routed: every block receives the full score gradient.
// per_block_softmax: each block gets the gradient of softmax(mask(S^B)) V.
enum class BlockGradMode { routed, per_block_softmax };

BlockGradMode parse_block_grad_mode(std::string_view text);
std::string_view to_string(BlockGradMode mode);

struct QKGradients {
  Matrix dq;
  Matrix dk;
};

struct QKVGradients {
  Matrix dq;
  Matrix dk;
  Matrix dv;
};

using BlockGradients = std::array<Matrix, kNumBlocks>;
using OrderTerms = std::array<Matrix, kNumOrders>;

struct KOrderGradients {
  OrderTerms direct;
  OrderTerms cross;  // cross[0] is identically zero
};

struct GradientBundle {
  OrderTerms dq_by_order;
  OrderTerms dk_by_order_direct;
  OrderTerms dk_by_order_cross;
  Matrix dv;
  Matrix scaled_dq;
  Matrix scaled_dk;
};

QKGradients grad_standard(const Matrix& d_scores, const Matrix& q,
                          const Matrix& k);

// A^T dAttn.
Matrix grad_v(const Matrix& attn_weights, const Matrix& d_attn_out);

// Gradients for S split as P_K S + P_K^perp S with separate upstream
// gradients for each part. The K gradient includes the d(P_K)/dK terms
// weighted by (dS_par - dS_perp).
QKGradients grad_unidirectional(const Matrix& d_parallel,
                                const Matrix& d_orthogonal, const Matrix& q,
                                const Matrix& k, const ProjectorPair& proj_k,
                                const Pseudoinverse& k_plus);

// (a_par P_K + a_perp P_K^perp) applied to the standard dQ and dK.
QKGradients grad_simplest(const Matrix& d_scores, const Matrix& q,
                          const Matrix& k, const ProjectorPair& proj_k,
                          const SimplestScales& scales);

// [P_K P_V P_K, P_K P_V^perp P_K, P_K^perp P_V P_K^perp,
//  P_K^perp P_V^perp P_K^perp]; they sum to the identity.
std::array<Matrix, 4> reductionistic_projectors(const ProjectorPair& proj_k,
                                                const ProjectorPair& proj_v);

QKGradients grad_reductionistic(const Matrix& d_scores, const Matrix& q,
                                const Matrix& k,
                                const std::array<Matrix, 4>& projectors,
                                const ScaleConfig& config);

// dL/dS^B for the 8 blocks. dS_total is only read in routed mode; blocks,
// V and dAttn only in per-block mode.
BlockGradients block_gradients(const ScoreBlocks& blocks,
                               const Matrix& d_scores_total, const Matrix& v,
                               const Matrix& d_attn_out, BlockGradMode mode,
                               bool causal);

OrderTerms grad_q_by_order(const BlockGradients& block_grads,
                           const ProjectorPair& proj_k,
                           const ProjectorPair& proj_v, const Matrix& k);

KOrderGradients grad_k_by_order(const BlockGradients& block_grads,
                                const Matrix& q, const Matrix& k,
                                const ProjectorPair& proj_k,
                                const ProjectorPair& proj_v,
                                const Pseudoinverse& k_plus);

QKGradients combine_scaled(const OrderTerms& dq_by_order,
                           const OrderTerms& dk_direct,
                           const OrderTerms& dk_cross,
                           const ScaleConfig& config);

QKVGradients baseline_modulate(QKVGradients grads, const QKVModulation& mod);

// Per-order Q/K gradients plus their scaled sums; dv is passed through.
GradientBundle decomposed_gradients(const BlockGradients& block_grads,
                                    const Matrix& q, const Matrix& k,
                                    const ProjectorPair& proj_k,
                                    const ProjectorPair& proj_v,
                                    const Pseudoinverse& k_plus, Matrix dv,
                                    const ScaleConfig& config);

}  // namespace spangrad
