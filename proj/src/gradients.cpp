#include "spangrad/gradients.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "spangrad/softmax.hpp"

namespace spangrad {

namespace {

double inv_sqrt_dim(const Matrix& m) {
  return 1.0 / std::sqrt(static_cast<double>(m.cols()));
}

int bit(Side s) { return s == Side::orthogonal ? 1 : 0; }

// Block number (1-based) for a (left V, left K, right V) pattern.
int block_of(int left_v, int left_k, int right_v) {
  return 1 + 4 * left_v + 2 * left_k + right_v;
}

void require_block_grads(const BlockGradients& g, Index t) {
  for (int b = 0; b < kNumBlocks; ++b) {
    require_shape(g[b], t, t, "block gradient " + std::to_string(b + 1));
  }
}

void require_pair(const ProjectorPair& p, Index t, std::string_view what) {
  require_shape(p.parallel, t, t, what);
  require_shape(p.orthogonal, t, t, what);
}

bool all_blocks_equal(const BlockGradients& g) {
  for (int b = 1; b < kNumBlocks; ++b) {
    if (g[b].data() != g[0].data() && g[b] != g[0]) return false;
  }
  return true;
}

OrderTerms zero_terms(Index rows, Index cols) {
  OrderTerms out;
  for (auto& m : out) m = Matrix::Zero(rows, cols);
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration types

ScaleConfig ScaleConfig::parse(std::string_view text) {
  std::string s = trim(text);
  if (!s.empty() && s.front() == '[') s.erase(0, 1);
  if (!s.empty() && s.back() == ']') s.pop_back();
  s = trim(s);

  std::vector<double> values;
  if (s.find(',') == std::string::npos && s.size() == 4 &&
      std::all_of(s.begin(), s.end(),
                  [](char c) { return c == '0' || c == '1'; })) {
    for (char c : s) values.push_back(c == '1' ? 1.0 : 0.0);
  } else {
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        const std::string v = trim(item);
        values.push_back(std::stod(v, &used));
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw InvalidConfig("cannot parse scale vector '" + std::string(text) +
                            "'");
      }
    }
  }
  if (values.size() != kNumOrders) {
    throw InvalidConfig("scale vector needs 4 entries, got '" +
                        std::string(text) + "'");
  }
  ScaleConfig config;
  std::copy(values.begin(), values.end(), config.alpha.begin());
  config.validate();
  return config;
}

void ScaleConfig::validate() const {
  for (double a : alpha) {
    if (!(a >= 0.0) || !std::isfinite(a)) {
      throw InvalidConfig("scale factors must be finite and non-negative");
    }
  }
}

std::string ScaleConfig::label() const {
  const bool binary = std::all_of(alpha.begin(), alpha.end(),
                                  [](double a) { return a == 0.0 || a == 1.0; });
  std::string out = "[";
  for (int i = 0; i < kNumOrders; ++i) {
    if (binary) {
      out += alpha[i] == 1.0 ? '1' : '0';
    } else {
      if (i > 0) out += ',';
      out += format_number(alpha[i]);
    }
  }
  return out + "]";
}

QKVModulation QKVModulation::parse(std::string_view text) {
  std::string s = trim(text);
  if (s.size() == 6 && (s.rfind("QKV", 0) == 0 || s.rfind("qkv", 0) == 0)) {
    s = s.substr(3);
  }
  if (s.size() != 3 || !std::all_of(s.begin(), s.end(), [](char c) {
        return c == '0' || c == '1';
      })) {
    throw InvalidConfig("QKV modulation must look like QKV101, got '" +
                        std::string(text) + "'");
  }
  return {s[0] == '1', s[1] == '1', s[2] == '1'};
}

std::string QKVModulation::label() const {
  std::string out = "QKV";
  out += q ? '1' : '0';
  out += k ? '1' : '0';
  out += v ? '1' : '0';
  return out;
}

void SimplestScales::validate() const {
  if (!(parallel >= 0.0) || !(orthogonal >= 0.0) || !std::isfinite(parallel) ||
      !std::isfinite(orthogonal)) {
    throw InvalidConfig("simplest scales must be finite and non-negative");
  }
}

BlockGradMode parse_block_grad_mode(std::string_view text) {
  const std::string s = trim(text);
  if (s == "routed") return BlockGradMode::routed;
  if (s == "perblock" || s == "per_block_softmax" || s == "per-block") {
    return BlockGradMode::per_block_softmax;
  }
  throw InvalidConfig("unknown block gradient mode '" + s + "'");
}

std::string_view to_string(BlockGradMode mode) {
  return mode == BlockGradMode::routed ? "routed" : "perblock";
}

// ---------------------------------------------------------------------------
// Plain and reductionistic variants

QKGradients grad_standard(const Matrix& d_scores, const Matrix& q,
                          const Matrix& k) {
  require_same_shape(q, k, "grad_standard Q/K");
  require_shape(d_scores, q.rows(), k.rows(), "grad_standard dS");
  const double s = inv_sqrt_dim(k);
  QKGradients out;
  out.dq.noalias() = s * d_scores * k;
  out.dk.noalias() = s * d_scores.transpose() * q;
  return out;
}

Matrix grad_v(const Matrix& attn_weights, const Matrix& d_attn_out) {
  if (attn_weights.rows() != d_attn_out.rows() ||
      attn_weights.rows() != attn_weights.cols()) {
    throw DimensionMismatch("grad_v: attention weights must be T x T with T = "
                            "rows of dAttn");
  }
  Matrix dv(attn_weights.cols(), d_attn_out.cols());
  dv.noalias() = attn_weights.transpose() * d_attn_out;
  return dv;
}

QKGradients grad_unidirectional(const Matrix& d_parallel,
                                const Matrix& d_orthogonal, const Matrix& q,
                                const Matrix& k, const ProjectorPair& proj_k,
                                const Pseudoinverse& k_plus) {
  require_same_shape(q, k, "grad_unidirectional Q/K");
  const Index t = q.rows();
  const Index d = q.cols();
  require_shape(d_parallel, t, t, "dS_par");
  require_shape(d_orthogonal, t, t, "dS_perp");
  require_pair(proj_k, t, "K projector");
  require_shape(k_plus.matrix, d, t, "K pseudoinverse");

  const double s = inv_sqrt_dim(k);
  const Matrix& pk = proj_k.parallel;
  const Matrix& pk_perp = proj_k.orthogonal;

  QKGradients out;
  out.dq.noalias() = pk * (d_parallel * k);
  out.dq.noalias() += pk_perp * (d_orthogonal * k);
  out.dq *= s;

  // Direct part: dS_par^T P_K Q + dS_perp^T P_K^perp Q.
  out.dk.noalias() = d_parallel.transpose() * (pk * q);
  out.dk.noalias() += d_orthogonal.transpose() * (pk_perp * q);

  // Projector part, D = dS_par - dS_perp:
  //   P_K^perp (Q K^T D^T + D K Q^T) K^+^T
  const Matrix diff = d_parallel - d_orthogonal;
  if (!(diff.array() == 0.0).all()) {
    const Matrix kplus_t = k_plus.matrix.transpose();
    Matrix inner(t, d);
    inner.noalias() = q * (k.transpose() * (diff.transpose() * kplus_t));
    inner.noalias() += (diff * k) * (q.transpose() * kplus_t);
    out.dk.noalias() += pk_perp * inner;
  }
  out.dk *= s;
  return out;
}

QKGradients grad_simplest(const Matrix& d_scores, const Matrix& q,
                          const Matrix& k, const ProjectorPair& proj_k,
                          const SimplestScales& scales) {
  scales.validate();
  require_pair(proj_k, q.rows(), "K projector");
  const QKGradients standard = grad_standard(d_scores, q, k);
  QKGradients out;
  out.dq.noalias() = scales.parallel * proj_k.parallel * standard.dq;
  out.dq.noalias() += scales.orthogonal * proj_k.orthogonal * standard.dq;
  out.dk.noalias() = scales.parallel * proj_k.parallel * standard.dk;
  out.dk.noalias() += scales.orthogonal * proj_k.orthogonal * standard.dk;
  return out;
}

std::array<Matrix, 4> reductionistic_projectors(const ProjectorPair& proj_k,
                                                const ProjectorPair& proj_v) {
  const Index t = proj_k.parallel.rows();
  require_pair(proj_k, t, "K projector");
  require_pair(proj_v, t, "V projector");
  const Matrix& pk = proj_k.parallel;
  const Matrix& pk_perp = proj_k.orthogonal;
  std::array<Matrix, 4> out;
  out[0].noalias() = pk * proj_v.parallel * pk;
  out[1].noalias() = pk * proj_v.orthogonal * pk;
  out[2].noalias() = pk_perp * proj_v.parallel * pk_perp;
  out[3].noalias() = pk_perp * proj_v.orthogonal * pk_perp;
  return out;
}

QKGradients grad_reductionistic(const Matrix& d_scores, const Matrix& q,
                                const Matrix& k,
                                const std::array<Matrix, 4>& projectors,
                                const ScaleConfig& config) {
  config.validate();
  for (const auto& p : projectors) {
    require_shape(p, q.rows(), q.rows(), "reductionistic projector");
  }
  const QKGradients standard = grad_standard(d_scores, q, k);
  Matrix weighted = config.alpha[0] * projectors[0];
  for (int i = 1; i < 4; ++i) weighted += config.alpha[i] * projectors[i];
  QKGradients out;
  out.dq.noalias() = weighted * standard.dq;
  out.dk.noalias() = weighted * standard.dk;
  return out;
}

// ---------------------------------------------------------------------------
// Score-block gradients

BlockGradients block_gradients(const ScoreBlocks& blocks,
                               const Matrix& d_scores_total, const Matrix& v,
                               const Matrix& d_attn_out, BlockGradMode mode,
                               bool causal) {
  BlockGradients out;
  if (mode == BlockGradMode::routed) {
    if (d_scores_total.rows() != d_scores_total.cols()) {
      throw DimensionMismatch("routed block gradients need a square dS");
    }
    out.fill(d_scores_total);
    return out;
  }

  const Index t = v.rows();
  require_same_shape(v, d_attn_out, "V and dAttn");
  for (int b = 1; b <= kNumBlocks; ++b) {
    require_shape(blocks.at(b), t, t, "score block " + std::to_string(b));
  }
  Matrix d_probs(t, t);
  d_probs.noalias() = d_attn_out * v.transpose();
  for (int b = 1; b <= kNumBlocks; ++b) {
    const Matrix probs = softmax_rows(causal ? apply_causal_mask(blocks.at(b))
                                             : blocks.at(b));
    out[b - 1] = softmax_backward(probs, d_probs);
  }
  return out;
}

OrderTerms grad_q_by_order(const BlockGradients& block_grads,
                           const ProjectorPair& proj_k,
                           const ProjectorPair& proj_v, const Matrix& k) {
  const Index t = k.rows();
  const Index d = k.cols();
  require_block_grads(block_grads, t);
  require_pair(proj_k, t, "K projector");
  require_pair(proj_v, t, "V projector");
  const double s = inv_sqrt_dim(k);

  // (P_V^a P_K^b)^T G^B (P_V^e K), evaluated right to left so every product
  // is T x T times T x d.
  std::array<Matrix, 2> v_side_k;
  v_side_k[0].noalias() = proj_v.parallel * k;
  v_side_k[1].noalias() = proj_v.orthogonal * k;

  OrderTerms out = zero_terms(t, d);
  if (all_blocks_equal(block_grads)) {
    // One shared G: apply each left projector once and take the
    // orthogonal side as the complement.
    const Matrix& g = block_grads[0];
    for (int e = 0; e < 2; ++e) {
      const Matrix z = g * v_side_k[e];
      std::array<Matrix, 2> w;
      w[0].noalias() = proj_v.parallel.transpose() * z;
      w[1] = z - w[0];
      for (int a = 0; a < 2; ++a) {
        Matrix u(t, d);
        u.noalias() = proj_k.parallel.transpose() * w[a];
        out[a + e] += u;
        out[a + e + 1] += w[a] - u;
      }
    }
    for (auto& m : out) m *= s;
    return out;
  }
  Matrix g_vk(t, d);
  Matrix pv_g_vk(t, d);
  for (int b = 1; b <= kNumBlocks; ++b) {
    const BlockPattern& p = kBlockPatterns[b - 1];
    g_vk.noalias() = block_grads[b - 1] * v_side_k[bit(p.right_v)];
    pv_g_vk.noalias() = select(proj_v, p.left_v).transpose() * g_vk;
    out[violation_order(b)].noalias() +=
        select(proj_k, p.left_k).transpose() * pv_g_vk;
  }
  for (auto& m : out) m *= s;
  return out;
}

KOrderGradients grad_k_by_order(const BlockGradients& block_grads,
                                const Matrix& q, const Matrix& k,
                                const ProjectorPair& proj_k,
                                const ProjectorPair& proj_v,
                                const Pseudoinverse& k_plus) {
  require_same_shape(q, k, "grad_k_by_order Q/K");
  const Index t = k.rows();
  const Index d = k.cols();
  require_block_grads(block_grads, t);
  require_pair(proj_k, t, "K projector");
  require_pair(proj_v, t, "V projector");
  require_shape(k_plus.matrix, d, t, "K pseudoinverse");
  const double s = inv_sqrt_dim(k);

  KOrderGradients out{zero_terms(t, d), zero_terms(t, d)};

  // Direct terms: (P_V^e)^T (G^B)^T P_V^a P_K^b Q.
  std::array<Matrix, 2> k_side_q;
  k_side_q[0].noalias() = proj_k.parallel * q;
  k_side_q[1] = q - k_side_q[0];
  std::array<std::array<Matrix, 2>, 2> left_q;
  for (int b = 0; b < 2; ++b) {
    left_q[0][b].noalias() = proj_v.parallel * k_side_q[b];
    left_q[1][b] = k_side_q[b] - left_q[0][b];
  }
  Matrix gt_lq(t, d);
  if (all_blocks_equal(block_grads)) {
    Matrix pv_gt_lq(t, d);
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        gt_lq.noalias() = block_grads[0].transpose() * left_q[a][b];
        pv_gt_lq.noalias() = proj_v.parallel.transpose() * gt_lq;
        out.direct[a + b] += pv_gt_lq;
        out.direct[a + b + 1] += gt_lq - pv_gt_lq;
      }
    }
  } else {
    for (int b = 1; b <= kNumBlocks; ++b) {
      const BlockPattern& p = kBlockPatterns[b - 1];
      gt_lq.noalias() = block_grads[b - 1].transpose() *
                        left_q[bit(p.left_v)][bit(p.left_k)];
      out.direct[violation_order(b)].noalias() +=
          select(proj_v, p.right_v).transpose() * gt_lq;
    }
  }

  // Cross terms from d(P_K)/dK. Blocks (a, par, e) and (a, perp, e) share
  // everything but the sign of d(P_K), so only D = G(a,par,e) - G(a,perp,e)
  // enters:
  //   P_K^perp [ Q K^T P_V^e D^T P_V^a + P_V^a D P_V^e K Q^T ] K^+^T
  // The pair lands in order popcount(a, e) + 1.
  bool any_cross = false;
  for (int a = 0; a < 2; ++a) {
    for (int e = 0; e < 2; ++e) {
      any_cross = any_cross || block_grads[block_of(a, 0, e) - 1] !=
                                   block_grads[block_of(a, 1, e) - 1];
    }
  }
  if (!any_cross) {
    for (auto& m : out.direct) m *= s;
    return out;
  }

  const Matrix kplus_t = k_plus.matrix.transpose();
  std::array<Matrix, 2> v_side_kplus_t;
  v_side_kplus_t[0].noalias() = proj_v.parallel * kplus_t;
  v_side_kplus_t[1].noalias() = proj_v.orthogonal * kplus_t;
  std::array<Matrix, 2> v_side_k;
  v_side_k[0].noalias() = proj_v.parallel * k;
  v_side_k[1].noalias() = proj_v.orthogonal * k;
  Matrix qt_kplus_t(d, d);
  qt_kplus_t.noalias() = q.transpose() * kplus_t;

  Matrix inner(t, d);
  Matrix tmp(t, d);
  Matrix tmp2(t, d);
  Matrix small(d, d);
  for (int a = 0; a < 2; ++a) {
    const Matrix& pv_a = a == 0 ? proj_v.parallel : proj_v.orthogonal;
    for (int e = 0; e < 2; ++e) {
      const Matrix& pv_e = e == 0 ? proj_v.parallel : proj_v.orthogonal;
      const Matrix& g_par = block_grads[block_of(a, 0, e) - 1];
      const Matrix& g_perp = block_grads[block_of(a, 1, e) - 1];
      if (g_par == g_perp) continue;
      const Matrix diff = g_par - g_perp;

      // Q (K^T (P_V^e (D^T (P_V^a K^+^T))))
      tmp.noalias() = diff.transpose() * v_side_kplus_t[a];
      tmp2.noalias() = pv_e.transpose() * tmp;
      small.noalias() = k.transpose() * tmp2;
      inner.noalias() = q * small;
      // P_V^a (D (P_V^e K)) (Q^T K^+^T)
      tmp.noalias() = diff * v_side_k[e];
      tmp2.noalias() = pv_a * tmp;
      inner.noalias() += tmp2 * qt_kplus_t;

      out.cross[a + e + 1].noalias() += proj_k.orthogonal * inner;
    }
  }

  for (auto& m : out.direct) m *= s;
  for (auto& m : out.cross) m *= s;
  return out;
}

QKGradients combine_scaled(const OrderTerms& dq_by_order,
                           const OrderTerms& dk_direct,
                           const OrderTerms& dk_cross,
                           const ScaleConfig& config) {
  config.validate();
  QKGradients out;
  out.dq = Matrix::Zero(dq_by_order[0].rows(), dq_by_order[0].cols());
  out.dk = Matrix::Zero(dk_direct[0].rows(), dk_direct[0].cols());
  for (int i = 0; i < kNumOrders; ++i) {
    require_same_shape(dq_by_order[i], out.dq, "combine_scaled dQ term");
    require_same_shape(dk_direct[i], out.dk, "combine_scaled dK direct term");
    require_same_shape(dk_cross[i], out.dk, "combine_scaled dK cross term");
    out.dq += config.alpha[i] * dq_by_order[i];
    out.dk += config.alpha[i] * (dk_direct[i] + dk_cross[i]);
  }
  return out;
}

QKVGradients baseline_modulate(QKVGradients grads, const QKVModulation& mod) {
  if (!mod.q) grads.dq.setZero();
  if (!mod.k) grads.dk.setZero();
  if (!mod.v) grads.dv.setZero();
  return grads;
}

GradientBundle decomposed_gradients(const BlockGradients& block_grads,
                                    const Matrix& q, const Matrix& k,
                                    const ProjectorPair& proj_k,
                                    const ProjectorPair& proj_v,
                                    const Pseudoinverse& k_plus, Matrix dv,
                                    const ScaleConfig& config) {
  GradientBundle out;
  out.dq_by_order = grad_q_by_order(block_grads, proj_k, proj_v, k);
  KOrderGradients kg = grad_k_by_order(block_grads, q, k, proj_k, proj_v, k_plus);
  out.dk_by_order_direct = std::move(kg.direct);
  out.dk_by_order_cross = std::move(kg.cross);
  QKGradients scaled = combine_scaled(out.dq_by_order, out.dk_by_order_direct,
                                      out.dk_by_order_cross, config);
  out.scaled_dq = std::move(scaled.dq);
  out.scaled_dk = std::move(scaled.dk);
  out.dv = std::move(dv);
  return out;
}

}  // namespace spangrad
