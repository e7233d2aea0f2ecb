#include "spangrad/model.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "spangrad/softmax.hpp"

namespace spangrad {

// ---------------------------------------------------------------------------
// ModelConfig

GradMethod parse_grad_method(std::string_view text) {
  if (text == "standard") return GradMethod::standard;
  if (text == "unidirectional") return GradMethod::unidirectional;
  if (text == "simplest") return GradMethod::simplest;
  if (text == "reductionistic") return GradMethod::reductionistic;
  if (text == "score" || text == "score_decomposition") {
    return GradMethod::score_decomposition;
  }
  throw InvalidConfig("unknown gradient method '" + std::string(text) + "'");
}

std::string_view to_string(GradMethod method) {
  switch (method) {
    case GradMethod::standard:
      return "standard";
    case GradMethod::unidirectional:
      return "unidirectional";
    case GradMethod::simplest:
      return "simplest";
    case GradMethod::reductionistic:
      return "reductionistic";
    case GradMethod::score_decomposition:
      return "score";
  }
  return "?";
}

bool ModelConfig::needs_projectors() const {
  return grad_method != GradMethod::standard;
}

RegularizationPolicy ModelConfig::policy_for(const Matrix& source) const {
  if (ridge_scale == 0.0) return RegularizationPolicy::exact();
  return RegularizationPolicy::relative_ridge(source, ridge_scale);
}

void ModelConfig::validate() const {
  if (seq_len < 1 || model_dim < 1 || num_heads < 1 || num_layers < 0 ||
      ffn_ratio < 1 || vocab_size < 1) {
    throw InvalidConfig("model sizes must be positive");
  }
  if (model_dim % num_heads != 0) {
    throw InvalidConfig("num_heads must divide model_dim");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw InvalidConfig("dropout_rate must lie in [0, 1)");
  }
  if (!(ridge_scale >= 0.0) || !std::isfinite(ridge_scale)) {
    throw InvalidConfig("ridge_scale must be finite and non-negative");
  }
  scale_config.validate();
  simplest_scales.validate();
}

std::string ModelConfig::method_label() const {
  std::string out(to_string(grad_method));
  switch (grad_method) {
    case GradMethod::score_decomposition:
      out += scale_config.label() + "/" +
             std::string(to_string(block_grad_mode));
      break;
    case GradMethod::reductionistic:
      out += scale_config.label();
      break;
    case GradMethod::simplest:
    case GradMethod::unidirectional: {
      std::ostringstream os;
      os << "(" << simplest_scales.parallel << "," << simplest_scales.orthogonal
         << ")";
      out += os.str();
      break;
    }
    case GradMethod::standard:
      break;
  }
  return out + " " + qkv_modulation.label();
}

// ---------------------------------------------------------------------------
// ModelState

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;

Matrix row_vector(Index n, double value) { return Matrix::Constant(1, n, value); }

}  // namespace

// splitmix64 finalizer; mixes a seed with a stream id.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}


ModelState ModelState::zeros(const ModelConfig& config) {
  config.validate();
  const Index d = config.model_dim;
  const Index f = config.ffn_dim();
  ModelState s;
  s.token_embedding = Matrix::Zero(config.vocab_size, d);
  s.position_embedding = Matrix::Zero(config.seq_len, d);
  s.layers.resize(config.num_layers);
  for (auto& l : s.layers) {
    l.ln1_gain = row_vector(d, 0.0);
    l.ln1_bias = row_vector(d, 0.0);
    l.wq = Matrix::Zero(d, d);
    l.wk = Matrix::Zero(d, d);
    l.wv = Matrix::Zero(d, d);
    l.wo = Matrix::Zero(d, d);
    l.ln2_gain = row_vector(d, 0.0);
    l.ln2_bias = row_vector(d, 0.0);
    l.w1 = Matrix::Zero(d, f);
    l.b1 = row_vector(f, 0.0);
    l.w2 = Matrix::Zero(f, d);
    l.b2 = row_vector(d, 0.0);
  }
  s.final_ln_gain = row_vector(d, 0.0);
  s.final_ln_bias = row_vector(d, 0.0);
  s.vocab_projection = Matrix::Zero(d, config.vocab_size);
  return s;
}

ModelState ModelState::initialize(const ModelConfig& config,
                                  std::uint64_t seed) {
  ModelState s = zeros(config);
  std::mt19937_64 rng(mix_seed(seed, 0x1417));
  s.for_each([&](const std::string& name, Matrix& m) {
    const bool is_gain = name.ends_with("_gain");
    const bool is_bias = name.ends_with("_bias") || name.ends_with(".b1") ||
                         name.ends_with(".b2");
    if (is_gain) {
      m.setOnes();
    } else if (!is_bias) {
      m = random_gaussian(m.rows(), m.cols(), rng, kInitStd);
    }
  });
  return s;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

bool ModelState::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

void ModelState::set_zero() {
  for_each([](const std::string&, Matrix& m) { m.setZero(); });
}

void ModelState::add(const ModelState& other) {
  std::vector<const Matrix*> src;
  other.for_each([&](const std::string&, const Matrix& m) { src.push_back(&m); });
  std::size_t i = 0;
  for_each([&](const std::string& name, Matrix& m) {
    require_same_shape(m, *src.at(i), name);
    m += *src[i++];
  });
}

void ModelState::scale(double factor) {
  for_each([&](const std::string&, Matrix& m) { m *= factor; });
}

// ---------------------------------------------------------------------------
// Forward

namespace {

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                  LayerNormCache* cache) {
  const Index n = x.cols();
  Matrix normalized(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() /
                       static_cast<double>(n);
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    normalized.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  Matrix y = (normalized.array().rowwise() * gain.row(0).array()).rowwise() +
             bias.row(0).array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

// Returns dL/dx and accumulates gain/bias gradients.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain,
                           const LayerNormCache& cache, Matrix& d_gain,
                           Matrix& d_bias) {
  const Index n = dy.cols();
  d_gain += dy.cwiseProduct(cache.normalized).colwise().sum();
  d_bias += dy.colwise().sum();
  const Matrix d_norm = dy.array().rowwise() * gain.row(0).array();
  Matrix dx(dy.rows(), n);
  for (Index i = 0; i < dy.rows(); ++i) {
    const double mean_dn = d_norm.row(i).mean();
    const double mean_dn_x =
        d_norm.row(i).dot(cache.normalized.row(i)) / static_cast<double>(n);
    dx.row(i) = cache.inv_std(i) *
                (d_norm.row(i).array() - mean_dn -
                 cache.normalized.row(i).array() * mean_dn_x);
  }
  return dx;
}

Matrix normal_cdf(const Matrix& x) {
  return x.unaryExpr([](double u) {
    return 0.5 * (1.0 + std::erf(u * std::numbers::sqrt2 / 2.0));
  });
}

// d/dx of x * cdf(x), given cdf(x).
Matrix gelu_grad(const Matrix& x, const Matrix& cdf) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return (cdf.array() +
          x.array() * (-0.5 * x.array().square()).exp() * inv_sqrt_2pi)
      .matrix();
}

// Inverted dropout mask: entries are 0 or 1 / (1 - p). Each entry draws a
// uniform from a hash of (seed, index), so masks are cheap and reproducible.
Matrix dropout_mask(Index rows, Index cols, double rate, std::uint64_t seed) {
  const double keep = 1.0 / (1.0 - rate);
  Matrix mask(rows, cols);
  std::uint64_t idx = 0;
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      const double u =
          static_cast<double>(mix_seed(seed, idx++) >> 11) * 0x1.0p-53;
      mask(i, j) = u < rate ? 0.0 : keep;
    }
  }
  return mask;
}

}  // namespace

ForwardResult model_forward(const ModelState& state, std::span<const int> tokens,
                            const ModelConfig& config,
                            const ForwardOptions& options) {
  config.validate();
  const Index t = static_cast<Index>(tokens.size());
  if (t < 1 || t > config.seq_len) {
    throw DimensionMismatch("sequence length " + std::to_string(t) +
                            " outside [1, " + std::to_string(config.seq_len) +
                            "]");
  }
  for (int tok : tokens) {
    if (tok < 0 || tok >= config.vocab_size) {
      throw TokenOutOfRange("token id " + std::to_string(tok) +
                            " outside vocabulary of size " +
                            std::to_string(config.vocab_size));
    }
  }

  const Index d = config.model_dim;
  const Index hd = config.head_dim();
  const bool use_dropout = options.dropout && config.dropout_rate > 0.0;

  ForwardResult result;
  ForwardCache& cache = result.cache;
  if (options.keep_cache) {
    cache.tokens.assign(tokens.begin(), tokens.end());
    cache.layers.resize(state.layers.size());
  }

  Matrix x(t, d);
  for (Index i = 0; i < t; ++i) {
    x.row(i) = state.token_embedding.row(tokens[i]) +
               state.position_embedding.row(i);
  }

  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const LayerParams& p = state.layers[l];
    LayerCache local;
    LayerCache& lc = options.keep_cache ? cache.layers[l] : local;
    const std::uint64_t layer_seed = mix_seed(options.seed, 2 * l + 1);

    lc.h1 = layer_norm(x, p.ln1_gain, p.ln1_bias, &lc.ln1);
    const Matrix q = lc.h1 * p.wq;
    const Matrix k = lc.h1 * p.wk;
    const Matrix v = lc.h1 * p.wv;

    lc.attn_concat.resize(t, d);
    lc.heads.clear();
    for (Index h = 0; h < config.num_heads; ++h) {
      Matrix qh = q.middleCols(h * hd, hd);
      Matrix kh = k.middleCols(h * hd, hd);
      Matrix vh = v.middleCols(h * hd, hd);
      AttentionForward fwd = attention_forward(qh, kh, vh, config.causal);
      lc.attn_concat.middleCols(h * hd, hd) = fwd.out;
      if (options.keep_cache) {
        lc.heads.push_back(make_head_cache(std::move(qh), std::move(kh),
                                           std::move(vh), fwd, config));
      }
    }

    Matrix attn_proj = lc.attn_concat * p.wo;
    if (use_dropout) {
      lc.drop1_mask = dropout_mask(t, d, config.dropout_rate, layer_seed);
      attn_proj.array() *= lc.drop1_mask.array();
    }
    x += attn_proj;

    lc.h2 = layer_norm(x, p.ln2_gain, p.ln2_bias, &lc.ln2);
    lc.ffn_pre = (lc.h2 * p.w1).rowwise() + p.b1.row(0);
    lc.ffn_cdf = normal_cdf(lc.ffn_pre);
    lc.ffn_act = lc.ffn_pre.cwiseProduct(lc.ffn_cdf);
    if (use_dropout) {
      lc.drop2_mask = dropout_mask(t, config.ffn_dim(), config.dropout_rate,
                                   mix_seed(layer_seed, 7));
      lc.ffn_act.array() *= lc.drop2_mask.array();
    }
    x += (lc.ffn_act * p.w2).rowwise() + p.b2.row(0);
  }

  LayerNormCache final_local;
  Matrix h_final = layer_norm(x, state.final_ln_gain, state.final_ln_bias,
                              options.keep_cache ? &cache.final_ln : &final_local);
  result.logits.noalias() = h_final * state.vocab_projection;
  if (options.keep_cache) cache.h_final = std::move(h_final);
  return result;
}

// ---------------------------------------------------------------------------
// Backward

void accumulate_backward(const ModelState& state, const ForwardCache& cache,
                         const Matrix& d_logits, const ModelConfig& config,
                         ModelState& grads) {
  const Index t = static_cast<Index>(cache.tokens.size());
  if (cache.layers.size() != state.layers.size() || t == 0) {
    throw InvalidConfig("forward cache does not match the model");
  }
  require_shape(d_logits, t, config.vocab_size, "dlogits");
  const Index d = config.model_dim;
  const Index hd = config.head_dim();

  grads.vocab_projection.noalias() += cache.h_final.transpose() * d_logits;
  Matrix dh(t, d);
  dh.noalias() = d_logits * state.vocab_projection.transpose();
  Matrix dx = layer_norm_backward(dh, state.final_ln_gain, cache.final_ln,
                                  grads.final_ln_gain, grads.final_ln_bias);

  for (std::size_t li = state.layers.size(); li-- > 0;) {
    const LayerParams& p = state.layers[li];
    const LayerCache& lc = cache.layers[li];
    LayerParams& g = grads.layers[li];

    // FFN block: x_out = x_mid + act W2 + b2.
    g.w2.noalias() += lc.ffn_act.transpose() * dx;
    g.b2 += dx.colwise().sum();
    Matrix d_act(t, config.ffn_dim());
    d_act.noalias() = dx * p.w2.transpose();
    if (lc.drop2_mask.size() > 0) d_act.array() *= lc.drop2_mask.array();
    const Matrix d_pre = d_act.cwiseProduct(gelu_grad(lc.ffn_pre, lc.ffn_cdf));
    g.w1.noalias() += lc.h2.transpose() * d_pre;
    g.b1 += d_pre.colwise().sum();
    dh.noalias() = d_pre * p.w1.transpose();
    dx += layer_norm_backward(dh, p.ln2_gain, lc.ln2, g.ln2_gain, g.ln2_bias);

    // Attention block: x_mid = x_in + dropout(concat W_o).
    Matrix d_proj = dx;
    if (lc.drop1_mask.size() > 0) d_proj.array() *= lc.drop1_mask.array();
    g.wo.noalias() += lc.attn_concat.transpose() * d_proj;
    Matrix d_concat(t, d);
    d_concat.noalias() = d_proj * p.wo.transpose();

    Matrix dq(t, d);
    Matrix dk(t, d);
    Matrix dv(t, d);
    for (Index h = 0; h < config.num_heads; ++h) {
      const QKVGradients hg = attention_backward(
          lc.heads[h], d_concat.middleCols(h * hd, hd), config);
      dq.middleCols(h * hd, hd) = hg.dq;
      dk.middleCols(h * hd, hd) = hg.dk;
      dv.middleCols(h * hd, hd) = hg.dv;
    }
    g.wq.noalias() += lc.h1.transpose() * dq;
    g.wk.noalias() += lc.h1.transpose() * dk;
    g.wv.noalias() += lc.h1.transpose() * dv;
    dh.noalias() = dq * p.wq.transpose();
    dh.noalias() += dk * p.wk.transpose();
    dh.noalias() += dv * p.wv.transpose();
    dx += layer_norm_backward(dh, p.ln1_gain, lc.ln1, g.ln1_gain, g.ln1_bias);
  }

  for (Index i = 0; i < t; ++i) {
    grads.token_embedding.row(cache.tokens[i]) += dx.row(i);
    grads.position_embedding.row(i) += dx.row(i);
  }
}

ModelState model_backward(const ModelState& state, const ForwardCache& cache,
                          const Matrix& d_logits, const ModelConfig& config) {
  ModelState grads = ModelState::zeros(config);
  accumulate_backward(state, cache, d_logits, config, grads);
  return grads;
}

double cross_entropy(const Matrix& logits, std::span<const int> targets,
                     Matrix* d_logits) {
  const Index t = logits.rows();
  if (static_cast<Index>(targets.size()) != t) {
    throw DimensionMismatch("cross_entropy: one target per row required");
  }
  for (int target : targets) {
    if (target < 0 || target >= logits.cols()) {
      throw TokenOutOfRange("target id " + std::to_string(target) +
                            " outside vocabulary");
    }
  }
  const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
  const Eigen::ArrayXXd shifted = logits.array().colwise() - row_max.array();
  const Eigen::ArrayXXd e =
      (shifted < kExpUnderflow).select(0.0, shifted.exp());
  const Eigen::ArrayXd sum = e.rowwise().sum();
  double total = 0.0;
  for (Index i = 0; i < t; ++i) {
    total += std::log(sum(i)) - shifted(i, targets[i]);
  }
  if (d_logits) {
    const double inv_t = 1.0 / static_cast<double>(t);
    *d_logits = (e.colwise() / (sum * static_cast<double>(t))).matrix();
    for (Index i = 0; i < t; ++i) (*d_logits)(i, targets[i]) -= inv_t;
  }
  return total / static_cast<double>(t);
}

double sequence_step(const ModelState& state, std::span<const int> window,
                     const ModelConfig& config, const ForwardOptions& options,
                     ModelState& grads) {
  if (window.size() < 2) {
    throw DimensionMismatch("a training window needs at least 2 tokens");
  }
  const auto inputs = window.first(window.size() - 1);
  const auto targets = window.subspan(1);
  ForwardOptions opts = options;
  opts.keep_cache = true;
  const ForwardResult fwd = model_forward(state, inputs, config, opts);
  Matrix d_logits;
  const double loss = cross_entropy(fwd.logits, targets, &d_logits);
  accumulate_backward(state, fwd.cache, d_logits, config, grads);
  return loss;
}

double sequence_loss(const ModelState& state, std::span<const int> window,
                     const ModelConfig& config) {
  if (window.size() < 2) {
    throw DimensionMismatch("a window needs at least 2 tokens");
  }
  ForwardOptions opts;
  opts.dropout = false;
  opts.keep_cache = false;
  const ForwardResult fwd =
      model_forward(state, window.first(window.size() - 1), config, opts);
  return cross_entropy(fwd.logits, window.subspan(1));
}

}  // namespace spangrad
