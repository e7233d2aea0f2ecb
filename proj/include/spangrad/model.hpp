#pragma once

// Pre-layer-norm decoder-only transformer with hand-written backward pass.
//
//   x   = E_tok[tokens] + E_pos
//   per layer:
//     x += dropout(MHA(LN1(x)) W_o)
//     x += dropout(GELU(LN2(x) W_1 + b_1)) W_2 + b_2
//   logits = LN_f(x) W_vocab
//
// The attention backward of every head is delegated to attention_backward, so
// the gradient method only changes what reaches W^Q, W^K (and upstream).

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spangrad/attention.hpp"
#include "spangrad/linalg.hpp"
#include "spangrad/model_config.hpp"

namespace spangrad {

// splitmix64 finalizer; derives independent seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

struct LayerParams {
  Matrix ln1_gain;  // 1 x d
  Matrix ln1_bias;
  Matrix wq;        // d x d
  Matrix wk;
  Matrix wv;
  Matrix wo;
  Matrix ln2_gain;
  Matrix ln2_bias;
  Matrix w1;        // d x ffn
  Matrix b1;        // 1 x ffn
  Matrix w2;        // ffn x d
  Matrix b2;        // 1 x d
};

// Parameters, also used as the gradient container.
struct ModelState {
  Matrix token_embedding;     // vocab x d
  Matrix position_embedding;  // T x d
  std::vector<LayerParams> layers;
  Matrix final_ln_gain;       // 1 x d
  Matrix final_ln_bias;
  Matrix vocab_projection;    // d x vocab

  // Gaussian(0, 0.02) weights and embeddings, zero biases, unit gains.
  static ModelState initialize(const ModelConfig& config, std::uint64_t seed);
  // Every tensor zero, including gains.
  static ModelState zeros(const ModelConfig& config);

  template <typename F>
  void for_each(F&& f) {
    f(std::string("token_embedding"), token_embedding);
    f(std::string("position_embedding"), position_embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      LayerParams& lp = layers[l];
      f(p + "ln1_gain", lp.ln1_gain);
      f(p + "ln1_bias", lp.ln1_bias);
      f(p + "wq", lp.wq);
      f(p + "wk", lp.wk);
      f(p + "wv", lp.wv);
      f(p + "wo", lp.wo);
      f(p + "ln2_gain", lp.ln2_gain);
      f(p + "ln2_bias", lp.ln2_bias);
      f(p + "w1", lp.w1);
      f(p + "b1", lp.b1);
      f(p + "w2", lp.w2);
      f(p + "b2", lp.b2);
    }
    f(std::string("final_ln_gain"), final_ln_gain);
    f(std::string("final_ln_bias"), final_ln_bias);
    f(std::string("vocab_projection"), vocab_projection);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelState*>(this)->for_each(
        [&](const std::string& name, Matrix& m) { f(name, std::as_const(m)); });
  }

  std::size_t parameter_count() const;
  bool all_finite() const;
  void set_zero();
  // this += other, tensor by tensor.
  void add(const ModelState& other);
  void scale(double factor);
};

struct LayerNormCache {
  Matrix normalized;        // (x - mean) * inv_std
  Eigen::VectorXd inv_std;  // per row
};

struct LayerCache {
  LayerNormCache ln1;
  Matrix h1;
  std::vector<HeadCache> heads;
  Matrix attn_concat;  // T x d, heads side by side
  Matrix drop1_mask;   // empty when dropout is off
  LayerNormCache ln2;
  Matrix h2;
  Matrix ffn_pre;      // h2 W1 + b1
  Matrix ffn_cdf;      // standard normal CDF of ffn_pre
  Matrix ffn_act;      // GELU(ffn_pre) after dropout
  Matrix drop2_mask;
};

struct ForwardCache {
  std::vector<int> tokens;
  std::vector<LayerCache> layers;
  LayerNormCache final_ln;
  Matrix h_final;
};

struct ForwardOptions {
  std::uint64_t seed = 0;  // dropout masks are a function of this seed
  bool dropout = true;     // false: inference behaviour regardless of rate
  bool keep_cache = true;  // false: skip caches and projectors
};

struct ForwardResult {
  Matrix logits;  // T x vocab
  ForwardCache cache;
};

ForwardResult model_forward(const ModelState& state, std::span<const int> tokens,
                            const ModelConfig& config,
                            const ForwardOptions& options = {});

// Adds this sequence's parameter gradients into `grads`.
void accumulate_backward(const ModelState& state, const ForwardCache& cache,
                         const Matrix& d_logits, const ModelConfig& config,
                         ModelState& grads);

ModelState model_backward(const ModelState& state, const ForwardCache& cache,
                          const Matrix& d_logits, const ModelConfig& config);

// Mean next-token cross-entropy over rows. When d_logits is non-null it
// receives dLoss/dlogits.
double cross_entropy(const Matrix& logits, std::span<const int> targets,
                     Matrix* d_logits = nullptr);

// Forward + loss + backward for one window of T + 1 tokens; gradients are
// added into `grads` and the loss is returned.
double sequence_step(const ModelState& state, std::span<const int> window,
                     const ModelConfig& config, const ForwardOptions& options,
                     ModelState& grads);

// Loss for one window without dropout or caches.
double sequence_loss(const ModelState& state, std::span<const int> window,
                     const ModelConfig& config);

}  // namespace spangrad
