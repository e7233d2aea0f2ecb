#pragma once

#include <optional>

#include "spangrad/gradients.hpp"
#include "spangrad/linalg.hpp"
#include "spangrad/model_config.hpp"

namespace spangrad {

struct AttentionForward {
  Matrix out;      // A V
  Matrix weights;  // A, row-stochastic over unmasked positions
  Matrix scores;   // Q K^T / sqrt(d), masked entries set to kMaskValue
};

// softmax(mask(Q K^T / sqrt(d))) V. The forward pass never depends on the
// gradient method.
AttentionForward attention_forward(const Matrix& q, const Matrix& k,
                                   const Matrix& v, bool causal);

// Everything one head's backward pass needs.
struct HeadCache {
  Matrix q;
  Matrix k;
  Matrix v;
  Matrix scores;
  Matrix weights;
  std::optional<Span> span_k;  // present when the method needs projectors
  std::optional<Span> span_v;
};

HeadCache make_head_cache(Matrix q, Matrix k, Matrix v,
                          const AttentionForward& fwd,
                          const ModelConfig& config);

// dS through the softmax Jacobian, dV = A^T dAttn, then (dQ, dK) from the
// configured method, then the QKV modulation switches.
QKVGradients attention_backward(const HeadCache& cache,
                                const Matrix& d_attn_out,
                                const ModelConfig& config);

}  // namespace spangrad
