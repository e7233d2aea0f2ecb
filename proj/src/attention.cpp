#include "spangrad/attention.hpp"

#include "spangrad/scores.hpp"
#include "spangrad/softmax.hpp"

namespace spangrad {

AttentionForward attention_forward(const Matrix& q, const Matrix& k,
                                   const Matrix& v, bool causal) {
  require_same_shape(q, k, "attention Q/K");
  if (v.rows() != k.rows()) {
    throw DimensionMismatch("attention: V must have as many rows as K");
  }
  require_finite(q, "Q");
  require_finite(k, "K");
  require_finite(v, "V");

  AttentionForward out;
  out.scores = score(q, k);
  if (causal) {
    for (Index i = 0; i < out.scores.rows(); ++i) {
      for (Index j = i + 1; j < out.scores.cols(); ++j) {
        out.scores(i, j) = kMaskValue;
      }
    }
  }
  out.weights = softmax_rows(out.scores);
  out.out.noalias() = out.weights * v;
  return out;
}

HeadCache make_head_cache(Matrix q, Matrix k, Matrix v,
                          const AttentionForward& fwd,
                          const ModelConfig& config) {
  HeadCache cache;
  if (config.needs_projectors()) {
    cache.span_k = span(k, config.policy_for(k), SpanSource::K);
    cache.span_v = span(v, config.policy_for(v), SpanSource::V);
  }
  cache.q = std::move(q);
  cache.k = std::move(k);
  cache.v = std::move(v);
  cache.scores = fwd.scores;
  cache.weights = fwd.weights;
  return cache;
}

QKVGradients attention_backward(const HeadCache& cache,
                                const Matrix& d_attn_out,
                                const ModelConfig& config) {
  require_shape(d_attn_out, cache.v.rows(), cache.v.cols(), "dAttn");

  Matrix d_probs(cache.weights.rows(), cache.weights.cols());
  d_probs.noalias() = d_attn_out * cache.v.transpose();
  const Matrix d_scores = softmax_backward(cache.weights, d_probs);

  QKVGradients out;
  out.dv = grad_v(cache.weights, d_attn_out);

  if (config.needs_projectors() && (!cache.span_k || !cache.span_v)) {
    throw InvalidConfig("head cache lacks projectors for method " +
                        std::string(to_string(config.grad_method)));
  }

  QKGradients qk;
  switch (config.grad_method) {
    case GradMethod::standard:
      qk = grad_standard(d_scores, cache.q, cache.k);
      break;
    case GradMethod::unidirectional:
      qk = grad_unidirectional(config.simplest_scales.parallel * d_scores,
                               config.simplest_scales.orthogonal * d_scores,
                               cache.q, cache.k, cache.span_k->projector,
                               cache.span_k->pseudoinverse);
      break;
    case GradMethod::simplest:
      qk = grad_simplest(d_scores, cache.q, cache.k, cache.span_k->projector,
                         config.simplest_scales);
      break;
    case GradMethod::reductionistic:
      qk = grad_reductionistic(
          d_scores, cache.q, cache.k,
          reductionistic_projectors(cache.span_k->projector,
                                    cache.span_v->projector),
          config.scale_config);
      break;
    case GradMethod::score_decomposition: {
      ScoreBlocks blocks;
      if (config.block_grad_mode == BlockGradMode::per_block_softmax) {
        blocks = decompose_bidirectional(cache.q, cache.k,
                                         cache.span_k->projector,
                                         cache.span_v->projector);
      }
      const BlockGradients block_grads =
          block_gradients(blocks, d_scores, cache.v, d_attn_out,
                          config.block_grad_mode, config.causal);
      const OrderTerms dq = grad_q_by_order(
          block_grads, cache.span_k->projector, cache.span_v->projector,
          cache.k);
      const KOrderGradients dk = grad_k_by_order(
          block_grads, cache.q, cache.k, cache.span_k->projector,
          cache.span_v->projector, cache.span_k->pseudoinverse);
      qk = combine_scaled(dq, dk.direct, dk.cross, config.scale_config);
      break;
    }
  }
  out.dq = std::move(qk.dq);
  out.dk = std::move(qk.dk);
  return baseline_modulate(std::move(out), config.qkv_modulation);
}

}  // namespace spangrad
