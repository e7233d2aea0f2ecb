#pragma once

#include <string>
#include <string_view>

#include "spangrad/gradients.hpp"
#include "spangrad/linalg.hpp"

namespace spangrad {

enum class GradMethod {
  standard,
  unidirectional,
  simplest,
  reductionistic,
  score_decomposition,
};

// Accepts the CLI names (standard, unidirectional, simplest, reductionistic,
// score) and score_decomposition.
GradMethod parse_grad_method(std::string_view text);
std::string_view to_string(GradMethod method);

struct ModelConfig {
  Index seq_len = 64;
  Index model_dim = 32;
  Index num_heads = 2;
  Index num_layers = 2;
  Index ffn_ratio = 4;
  double dropout_rate = 0.1;
  Index vocab_size = 256;
  bool causal = true;

  GradMethod grad_method = GradMethod::standard;
  ScaleConfig scale_config;         // reductionistic, score_decomposition
  SimplestScales simplest_scales;   // simplest, unidirectional
  QKVModulation qkv_modulation;     // applied after every method
  BlockGradMode block_grad_mode = BlockGradMode::routed;

  // Per-head Gram ridge as a fraction of trace(G)/d. Zero disables the ridge
  // and makes rank-deficient heads raise SingularGram.
  double ridge_scale = 1e-8;

  Index head_dim() const { return model_dim / num_heads; }
  Index ffn_dim() const { return model_dim * ffn_ratio; }
  bool needs_projectors() const;
  // Projectors of a T x head_dim slice have rank at most T; fewer positions
  // than head dimensions leaves every Gram singular.
  bool projector_rank_warning() const { return seq_len < head_dim(); }
  RegularizationPolicy policy_for(const Matrix& source) const;

  void validate() const;
  // Human-readable method description, e.g. "score[1000]/routed QKV111".
  std::string method_label() const;
};

}  // namespace spangrad
