#include "spangrad/audit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "spangrad/attention.hpp"
#include "spangrad/errors.hpp"
#include "spangrad/model.hpp"
#include "spangrad/scores.hpp"
#include "spangrad/softmax.hpp"

namespace spangrad {

using nlohmann::json;

void AuditReport::add(std::string id, double measured, double tolerance,
                      std::string note) {
  const bool ok = std::isfinite(measured) && measured <= tolerance;
  checks.push_back({std::move(id), measured, tolerance, ok, std::move(note)});
}

void AuditReport::add_flag(std::string id, bool ok, double measured,
                           double tolerance, std::string note) {
  checks.push_back({std::move(id), measured, tolerance, ok, std::move(note)});
}

void AuditReport::merge(const AuditReport& other) {
  checks.insert(checks.end(), other.checks.begin(), other.checks.end());
}

bool AuditReport::passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const AuditCheck& c) { return c.passed; });
}

json AuditReport::to_json() const {
  json j;
  j["suite"] = suite;
  j["seed"] = seed;
  j["passed"] = passed();
  j["elapsed_ms"] = elapsed_ms;
  j["parameters"] = parameters;
  j["checks"] = json::array();
  for (const auto& c : checks) {
    json cj{{"id", c.id},
            {"measured", std::isfinite(c.measured) ? json(c.measured)
                                                   : json(std::to_string(c.measured))},
            {"tolerance", c.tolerance},
            {"passed", c.passed}};
    if (!c.note.empty()) cj["note"] = c.note;
    j["checks"].push_back(std::move(cj));
  }
  return j;
}

void AuditReport::print(std::ostream& out) const {
  std::size_t width = 0;
  for (const auto& c : checks) width = std::max(width, c.id.size());
  const auto flags = out.flags();
  for (const auto& c : checks) {
    out << (c.passed ? "PASS  " : "FAIL  ") << std::left
        << std::setw(static_cast<int>(width)) << c.id << "  measured="
        << std::scientific << std::setprecision(3) << c.measured
        << "  tol=" << c.tolerance;
    if (!c.note.empty()) out << "  (" << c.note << ")";
    out << '\n';
    out.flags(flags);
  }
  out << suite << ": " << (passed() ? "PASS" : "FAIL") << " ("
      << checks.size() << " checks, " << std::fixed << std::setprecision(1)
      << elapsed_ms << " ms)\n";
  out.flags(flags);
}

void AuditReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << to_json().dump(2) << '\n';
  if (!out) throw IoError("failed writing report " + path.string());
}

Matrix central_difference(const std::function<double(const Matrix&)>& f,
                          const Matrix& x, double h) {
  if (!(h > 0.0)) throw InvalidConfig("finite-difference step must be > 0");
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      const double saved = probe(r, c);
      probe(r, c) = saved + h;
      const double up = f(probe);
      probe(r, c) = saved - h;
      const double down = f(probe);
      probe(r, c) = saved;
      grad(r, c) = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double rel(const Matrix& got, const Matrix& want) {
  return relative_error(got, want);
}

// ||a - b|| / max(||a||, ||b||, reference)
double scaled_error(const Matrix& analytic, const Matrix& numeric,
                    double reference) {
  const double denom = std::max({analytic.norm(), numeric.norm(), reference,
                                 1e-300});
  return (analytic - numeric).norm() / denom;
}

const Matrix& pick(const ProjectorPair& p, int bit) {
  return bit == 0 ? p.parallel : p.orthogonal;
}

int block_index(int a, int b, int e) { return 1 + 4 * a + 2 * b + e; }

// P_V^a P_K^b Q K_r^T P_V^e / sqrt(d), projectors supplied by the caller.
Matrix block_score(int a, int b, int e, const ProjectorPair& pk,
                   const ProjectorPair& pv, const Matrix& q,
                   const Matrix& k_right) {
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Matrix left = pick(pv, a) * (pick(pk, b) * q);
  const Matrix right = pick(pv, e) * k_right;
  return s * left * right.transpose();
}

struct Instance {
  Matrix q, k, v, d_out;
};

Instance random_instance(Index t, Index d, std::mt19937_64& rng) {
  Instance in;
  in.q = random_gaussian(t, d, rng);
  in.k = random_gaussian(t, d, rng);
  in.v = random_gaussian(t, d, rng);
  in.d_out = random_gaussian(t, d, rng);
  return in;
}

// <dOut, attention(Q, K, V)>, the loss whose exact gradient the standard
// backward computes.
double attention_objective(const Matrix& q, const Matrix& k, const Matrix& v,
                           const Matrix& d_out, bool causal) {
  return frobenius_inner(d_out, attention_forward(q, k, v, causal).out);
}

Matrix attention_dscores(const Instance& in, bool causal) {
  const AttentionForward fwd = attention_forward(in.q, in.k, in.v, causal);
  Matrix d_probs = in.d_out * in.v.transpose();
  return softmax_backward(fwd.weights, d_probs);
}

std::pair<Index, Index> sweep_size(std::mt19937_64& rng) {
  static constexpr Index kTs[] = {8, 16, 32};
  static constexpr Index kDs[] = {2, 4, 8};
  std::uniform_int_distribution<int> pick3(0, 2);
  return {kTs[pick3(rng)], kDs[pick3(rng)]};
}

std::pair<Index, Index> instance_size(const VerifyOptions& o,
                                      std::mt19937_64& rng) {
  auto [t, d] = sweep_size(rng);
  return {o.seq_len.value_or(t), o.dim.value_or(d)};
}

double tol(const VerifyOptions& o, double fallback) {
  return o.tolerance.value_or(fallback);
}

AuditReport projector_suite(const VerifyOptions& o) {
  AuditReport r;
  r.suite = "projector";
  std::mt19937_64 rng(o.seed);
  double idem = 0, sym = 0, comp = 0, absorb = 0, annihilate = 0, trace = 0,
         left_inverse = 0, full_rank_perp = 0;
  bool any_full_rank = false;
  for (int i = 0; i < o.instances; ++i) {
    const auto [t, d] = instance_size(o, rng);
    const Matrix m = random_gaussian(t, d, rng);
    const Span s = span(m, RegularizationPolicy::exact(), SpanSource::K);
    const Matrix& p = s.projector.parallel;
    const Matrix& pp = s.projector.orthogonal;
    const double pn = p.norm();
    idem = std::max(idem, (p * p - p).norm() / pn);
    sym = std::max(sym, (p - p.transpose()).norm() / pn);
    const Matrix id = Matrix::Identity(t, t);
    comp = std::max(comp, (p + pp - id).norm() / id.norm());
    absorb = std::max(absorb, rel(p * m, m));
    annihilate = std::max(annihilate, (pp * m).norm() / m.norm());
    trace = std::max(trace,
                     std::abs(p.trace() - static_cast<double>(s.projector.source_rank)) /
                         std::max<double>(1.0, static_cast<double>(s.projector.source_rank)));
    const Index rank = std::min(t, d);
    if (rank == d) {
      left_inverse = std::max(
          left_inverse, rel(s.pseudoinverse.matrix * m, Matrix::Identity(d, d)));
    }
    if (t == d) {
      any_full_rank = true;
      full_rank_perp = std::max(full_rank_perp, pp.norm());
    }
  }
  const double t10 = tol(o, 1e-10);
  r.add("projector.idempotent", idem, t10, "max ||P^2 - P|| / ||P||");
  r.add("projector.symmetric", sym, t10, "max ||P - P^T|| / ||P||");
  r.add("projector.complementary", comp, t10, "max ||P + P_perp - I|| / ||I||");
  r.add("projector.absorbs_source", absorb, t10, "max ||P M - M|| / ||M||");
  r.add("projector.perp_annihilates_source", annihilate, t10,
        "max ||P_perp M|| / ||M||");
  r.add("projector.trace_equals_rank", trace, t10);
  r.add("pseudoinverse.left_inverse", left_inverse, t10,
        "max ||M^+ M - I|| / ||I||");
  if (any_full_rank) {
    r.add("projector.full_rank_perp_zero", full_rank_perp, t10,
          "max ||P_perp||, T = d");
  }
  return r;
}

AuditReport blocks_suite(const VerifyOptions& o) {
  AuditReport r;
  r.suite = "blocks";
  std::mt19937_64 rng(o.seed ^ 0xb10c);
  double recon = 0;
  for (int i = 0; i < o.instances; ++i) {
    const auto [t, d] = instance_size(o, rng);
    const Instance in = random_instance(t, d, rng);
    const ProjectorPair pk =
        projector(in.k, RegularizationPolicy::exact(), SpanSource::K);
    const ProjectorPair pv =
        projector(in.v, RegularizationPolicy::exact(), SpanSource::V);
    const ScoreBlocks blocks = decompose_bidirectional(in.q, in.k, pk, pv);
    recon = std::max(recon, rel(blocks.sum(), score(in.q, in.k)));
  }
  r.add("blocks.sum_reconstructs_score", recon, tol(o, 1e-10),
        "max ||sum S^B - S|| / ||S||");
  return r;
}

AuditReport vanishing_suite(const VerifyOptions& o) {
  AuditReport r;
  r.suite = "vanishing";
  std::mt19937_64 rng(o.seed ^ 0x7a15);
  double worst = 0;
  for (int i = 0; i < o.instances; ++i) {
    const auto [t, d] = instance_size(o, rng);
    const Instance in = random_instance(t, d, rng);
    const ProjectorPair pk =
        projector(in.k, RegularizationPolicy::exact(), SpanSource::K);
    const ProjectorPair pv =
        projector(in.v, RegularizationPolicy::exact(), SpanSource::V);
    worst = std::max(worst, vanishing_block_check(in.q, in.k, pk, pv) /
                                score(in.q, in.k).norm());
  }
  r.add("vanishing.omitted_terms_zero", worst, tol(o, 1e-10),
        "max over the 8 terms with P_K^perp right of K^T, / ||S||");
  return r;
}

AuditReport orthogonality_suite(const VerifyOptions& o) {
  AuditReport r;
  r.suite = "orthogonality";
  std::mt19937_64 rng(o.seed ^ 0x0e7e);
  double off = 0;
  double min_exception = std::numeric_limits<double>::infinity();
  double transpose_gap = 0;
  int min_nonzero_pairs = kNumBlocks;
  int max_nonzero_pairs = 0;
  int max_degenerate_pairs = 0;
  int full_instances = 0;
  for (int i = 0; i < o.instances; ++i) {
    const auto [t, d] = instance_size(o, rng);
    const Instance in = random_instance(t, d, rng);
    const ProjectorPair pk =
        projector(in.k, RegularizationPolicy::exact(), SpanSource::K);
    const ProjectorPair pv =
        projector(in.v, RegularizationPolicy::exact(), SpanSource::V);
    const ScoreBlocks blocks = decompose_bidirectional(in.q, in.k, pk, pv);
    const Matrix table = orthogonality_table(blocks);
    const double negligible = 1e-10 * blocks.sum().norm();
    bool all_present = true;
    for (int a = 1; a <= kNumBlocks; ++a) {
      all_present = all_present && blocks.at(a).norm() > negligible;
    }
    int nonzero_pairs = 0;
    for (int a = 1; a <= kNumBlocks; ++a) {
      for (int b = a + 1; b <= kNumBlocks; ++b) {
        if (blocks.at(a).norm() <= negligible || blocks.at(b).norm() <= negligible) continue;
        const double scale = blocks.at(a).norm() * blocks.at(b).norm();
        const double cosine = std::abs(table(a - 1, b - 1)) / scale;
        transpose_gap = std::max(
            transpose_gap,
            std::abs(table(a - 1, b - 1) - table(b - 1, a - 1)) / scale);
        if (is_exception_pair(a, b)) {
          min_exception = std::min(min_exception, cosine);
          if (cosine > 1e-6) ++nonzero_pairs;
        } else {
          off = std::max(off, cosine);
          if (cosine > 1e-6) ++nonzero_pairs;
        }
      }
    }
    if (all_present) {
      ++full_instances;
      min_nonzero_pairs = std::min(min_nonzero_pairs, nonzero_pairs);
      max_nonzero_pairs = std::max(max_nonzero_pairs, nonzero_pairs);
    } else {
      max_degenerate_pairs = std::max(max_degenerate_pairs, nonzero_pairs);
    }
  }
  r.add("orthogonality.non_exception_pairs", off, tol(o, 1e-9),
        "max |<S^A, S^B>| / (||S^A|| ||S^B||) outside the exception pairs");
  r.add("orthogonality.table_symmetric", transpose_gap, tol(o, 1e-9));
  r.add_flag("orthogonality.exception_pairs_nonzero", min_exception > 1e-6,
             min_exception, 1e-6,
             "smallest |cosine| over (1,3), (2,4), (5,7), (6,8)");
  r.add_flag("orthogonality.nonzero_pair_count",
             (full_instances == 0 || (min_nonzero_pairs == 4 && max_nonzero_pairs == 4)) &&
                 max_degenerate_pairs <= 4,
             static_cast<double>(max_nonzero_pairs), 4.0,
             "pairs with |cosine| > 1e-6 in every instance with 8 non-zero blocks");
  r.parameters["instances_with_zero_blocks"] = o.instances - full_instances;
  return r;
}

AuditReport reconstruction_suite(const VerifyOptions& o) {
  AuditReport r;
  r.suite = "reconstruction";
  std::mt19937_64 rng(o.seed ^ 0x4ec0);
  const Index t = o.seq_len.value_or(16);
  const Index d = o.dim.value_or(4);
  const Instance in = random_instance(t, d, rng);

  ModelConfig base;
  base.ridge_scale = 0.0;
  base.causal = true;
  const AttentionForward fwd = attention_forward(in.q, in.k, in.v, true);
  auto backward = [&](const ModelConfig& cfg) {
    const HeadCache cache = make_head_cache(in.q, in.k, in.v, fwd, cfg);
    return attention_backward(cache, in.d_out, cfg);
  };
  auto qk_error = [](const QKVGradients& got, const QKVGradients& want) {
    return std::max(rel(got.dq, want.dq), rel(got.dk, want.dk));
  };

  ModelConfig standard = base;
  standard.grad_method = GradMethod::standard;
  const QKVGradients ref = backward(standard);

  ModelConfig routed = base;
  routed.grad_method = GradMethod::score_decomposition;
  routed.block_grad_mode = BlockGradMode::routed;
  routed.scale_config = ScaleConfig::parse("1111");
  r.add("reconstruction.routed_unit_scales_vs_standard",
        qk_error(backward(routed), ref), tol(o, 1e-9));

  ModelConfig zero = routed;
  zero.scale_config = ScaleConfig::parse("0000");
  const QKVGradients z = backward(zero);
  const double zmax = std::max(z.dq.cwiseAbs().maxCoeff(),
                               z.dk.cwiseAbs().maxCoeff());
  r.add_flag("reconstruction.zero_scales_qk_exactly_zero", zmax == 0.0, zmax,
             0.0);
  const double dv_gap = (z.dv - ref.dv).cwiseAbs().maxCoeff();
  r.add_flag("reconstruction.zero_scales_dv_unchanged", dv_gap == 0.0, dv_gap,
             0.0, "bitwise");

  ModelConfig v_only = standard;
  v_only.qkv_modulation = QKVModulation::parse("QKV001");
  const QKVGradients vo = backward(v_only);
  const bool same = (vo.dq.array() == z.dq.array()).all() &&
                    (vo.dk.array() == z.dk.array()).all() &&
                    (vo.dv.array() == z.dv.array()).all();
  r.add_flag("reconstruction.zero_scales_equals_qkv001", same,
             same ? 0.0 : 1.0, 0.0, "bitwise");

  ModelConfig reduct = base;
  reduct.grad_method = GradMethod::reductionistic;
  reduct.scale_config = ScaleConfig::parse("1111");
  r.add("reconstruction.reductionistic_unit_scales_vs_standard",
        qk_error(backward(reduct), ref), tol(o, 1e-10));

  ModelConfig simplest = base;
  simplest.grad_method = GradMethod::simplest;
  simplest.simplest_scales = {1.0, 1.0};
  r.add("reconstruction.simplest_unit_scales_vs_standard",
        qk_error(backward(simplest), ref), tol(o, 1e-12));

  ModelConfig uni = base;
  uni.grad_method = GradMethod::unidirectional;
  uni.simplest_scales = {1.0, 1.0};
  r.add("reconstruction.unidirectional_equal_split_vs_standard",
        qk_error(backward(uni), ref), tol(o, 1e-10));

  ModelConfig per_block = routed;
  per_block.block_grad_mode = BlockGradMode::per_block_softmax;
  per_block.scale_config = ScaleConfig::parse("0000");
  const QKVGradients pb = backward(per_block);
  const double pb_max = std::max(pb.dq.cwiseAbs().maxCoeff(),
                                 pb.dk.cwiseAbs().maxCoeff());
  r.add_flag("reconstruction.per_block_zero_scales_qk_zero", pb_max == 0.0,
             pb_max, 0.0);
  return r;
}

AuditReport gradcheck_suite(const VerifyOptions& o) {
  AuditReport r;
  r.suite = "gradcheck";
  const Index t = std::min<Index>(o.seq_len.value_or(16), 16);
  const Index d = o.dim.value_or(4);

  struct Case {
    GradMethod method;
    const char* scales;
    BlockGradMode mode;
  };
  const Case cases[] = {
      {GradMethod::standard, "1111", BlockGradMode::routed},
      {GradMethod::unidirectional, "1111", BlockGradMode::routed},
      {GradMethod::unidirectional, "1111", BlockGradMode::per_block_softmax},
      {GradMethod::simplest, "1111", BlockGradMode::routed},
      {GradMethod::reductionistic, "1,0.5,0.25,2", BlockGradMode::routed},
      {GradMethod::score_decomposition, "1000", BlockGradMode::routed},
      {GradMethod::score_decomposition, "1111", BlockGradMode::routed},
      {GradMethod::score_decomposition, "1,0.5,0.25,2",
       BlockGradMode::per_block_softmax},
  };
  for (const Case& c : cases) {
    GradcheckOptions g;
    g.method = c.method;
    g.scales = ScaleConfig::parse(c.scales);
    g.simplest = {0.7, 1.3};
    g.mode = c.mode;
    g.seed = o.seed;
    g.seq_len = t;
    g.dim = d;
    g.tolerance = o.tolerance;
    r.merge(run_gradcheck(g));
  }

  ModelConfig model;
  model.seq_len = 8;
  model.model_dim = 8;
  model.num_heads = 1;
  model.num_layers = 1;
  model.dropout_rate = 0.0;
  model.grad_method = GradMethod::standard;
  r.merge(run_model_gradcheck(model, o.seed, 1e-5, tol(o, 1e-5)));
  model.grad_method = GradMethod::score_decomposition;
  model.scale_config = ScaleConfig::parse("1111");
  r.merge(run_model_gradcheck(model, o.seed, 1e-5, tol(o, 1e-5)));
  return r;
}

}  // namespace

AuditReport run_verify(const VerifyOptions& options) {
  if (options.instances < 1) throw InvalidConfig("instances must be >= 1");
  if (options.seq_len && *options.seq_len < 1) throw InvalidConfig("T must be >= 1");
  if (options.dim && *options.dim < 1) throw InvalidConfig("d must be >= 1");

  const auto t0 = Clock::now();
  AuditReport report;
  report.suite = options.suite;
  report.seed = options.seed;
  report.parameters = {{"instances", options.instances}};
  if (options.seq_len) report.parameters["T"] = *options.seq_len;
  if (options.dim) report.parameters["d"] = *options.dim;
  if (options.tolerance) report.parameters["tol"] = *options.tolerance;

  const std::string& s = options.suite;
  const bool all = s == "all";
  bool matched = false;
  auto run = [&](const char* name, AuditReport (*fn)(const VerifyOptions&)) {
    if (all || s == name) {
      matched = true;
      report.merge(fn(options));
    }
  };
  run("projector", projector_suite);
  run("blocks", blocks_suite);
  run("vanishing", vanishing_suite);
  run("orthogonality", orthogonality_suite);
  run("reconstruction", reconstruction_suite);
  run("gradcheck", gradcheck_suite);
  if (!matched) {
    throw InvalidConfig("unknown suite '" + s +
                        "' (projector, blocks, vanishing, orthogonality, "
                        "reconstruction, gradcheck, all)");
  }
  report.elapsed_ms = ms_since(t0);
  return report;
}

AuditReport run_gradcheck(const GradcheckOptions& o) {
  if (!(o.step > 0.0)) throw InvalidConfig("--h must be > 0");
  if (o.seq_len < 1 || o.dim < 1) throw InvalidConfig("T and d must be >= 1");
  o.scales.validate();
  o.simplest.validate();

  const auto t0 = Clock::now();
  const std::string method(to_string(o.method));
  AuditReport r;
  r.suite = "gradcheck";
  r.seed = o.seed;
  r.parameters = {{"method", method},
                  {"scales", o.scales.label()},
                  {"mode", std::string(to_string(o.mode))},
                  {"T", o.seq_len},
                  {"d", o.dim},
                  {"h", o.step}};

  std::mt19937_64 rng(o.seed ^ 0x9c4d);
  const Instance in = random_instance(o.seq_len, o.dim, rng);
  const double h = o.step;
  const double tolerance =
      o.tolerance.value_or(o.method == GradMethod::standard ? 1e-7 : 1e-6);
  const RegularizationPolicy exact = RegularizationPolicy::exact();
  const Matrix d_scores = attention_dscores(in, o.causal);
  const QKGradients standard = grad_standard(d_scores, in.q, in.k);
  const std::string prefix = method + ".";

  auto add = [&](const std::string& id, const Matrix& analytic,
                 const Matrix& numeric, double reference) {
    r.add(prefix + id, scaled_error(analytic, numeric, reference), tolerance);
  };

  switch (o.method) {
    case GradMethod::standard: {
      const AttentionForward fwd = attention_forward(in.q, in.k, in.v, o.causal);
      const Matrix dv = grad_v(fwd.weights, in.d_out);
      const Matrix fq = central_difference(
          [&](const Matrix& x) {
            return attention_objective(x, in.k, in.v, in.d_out, o.causal);
          },
          in.q, h);
      const Matrix fk = central_difference(
          [&](const Matrix& x) {
            return attention_objective(in.q, x, in.v, in.d_out, o.causal);
          },
          in.k, h);
      const Matrix fv = central_difference(
          [&](const Matrix& x) {
            return attention_objective(in.q, in.k, x, in.d_out, o.causal);
          },
          in.v, h);
      add("dq", standard.dq, fq, 0.0);
      add("dk", standard.dk, fk, 0.0);
      add("dv", dv, fv, 0.0);
      break;
    }

    case GradMethod::unidirectional: {
      // Routed: both halves see dS. Otherwise the orthogonal half gets an
      // independent upstream gradient so the projector-derivative terms are
      // exercised.
      const Matrix g_par = o.simplest.parallel * d_scores;
      const Matrix g_perp =
          o.mode == BlockGradMode::routed
              ? Matrix(o.simplest.orthogonal * d_scores)
              : Matrix(o.simplest.orthogonal *
                       random_gaussian(o.seq_len, o.seq_len, rng));
      const Span sk = span(in.k, exact, SpanSource::K);
      const QKGradients an = grad_unidirectional(
          g_par, g_perp, in.q, in.k, sk.projector, sk.pseudoinverse);
      auto objective = [&](const Matrix& q, const Matrix& k) {
        const ProjectorPair pk = projector(k, exact, SpanSource::K);
        const Matrix s = score(q, k);
        return frobenius_inner(g_par, pk.parallel * s) +
               frobenius_inner(g_perp, pk.orthogonal * s);
      };
      const Matrix fq = central_difference(
          [&](const Matrix& x) { return objective(x, in.k); }, in.q, h);
      const Matrix fk = central_difference(
          [&](const Matrix& x) { return objective(in.q, x); }, in.k, h);
      add("dq", an.dq, fq, 0.0);
      add("dk", an.dk, fk, 0.0);
      break;
    }

    case GradMethod::simplest:
    case GradMethod::reductionistic: {
      const ProjectorPair pk = projector(in.k, exact, SpanSource::K);
      Matrix weight;
      QKGradients an;
      if (o.method == GradMethod::simplest) {
        weight = o.simplest.parallel * pk.parallel +
                 o.simplest.orthogonal * pk.orthogonal;
        an = grad_simplest(d_scores, in.q, in.k, pk, o.simplest);
      } else {
        const ProjectorPair pv = projector(in.v, exact, SpanSource::V);
        const auto proj = reductionistic_projectors(pk, pv);
        weight = Matrix::Zero(o.seq_len, o.seq_len);
        for (int i = 0; i < 4; ++i) weight += o.scales.alpha[i] * proj[i];
        an = grad_reductionistic(d_scores, in.q, in.k, proj, o.scales);
      }
      // The weighted gradients are exact gradients of <dS, M Q' K^T> and
      // <dS, Q (M K')^T> with M frozen.
      const Matrix fq = central_difference(
          [&](const Matrix& x) {
            return frobenius_inner(d_scores, score(weight * x, in.k));
          },
          in.q, h);
      const Matrix fk = central_difference(
          [&](const Matrix& x) {
            return frobenius_inner(d_scores, score(in.q, weight * x));
          },
          in.k, h);
      add("dq", an.dq, fq, standard.dq.norm());
      add("dk", an.dk, fk, standard.dk.norm());
      break;
    }

    case GradMethod::score_decomposition: {
      const Span sk = span(in.k, exact, SpanSource::K);
      const ProjectorPair pv = projector(in.v, exact, SpanSource::V);
      const ScoreBlocks blocks =
          decompose_bidirectional(in.q, in.k, sk.projector, pv);
      const BlockGradients g =
          block_gradients(blocks, d_scores, in.v, in.d_out, o.mode, o.causal);
      const OrderTerms dq = grad_q_by_order(g, sk.projector, pv, in.k);
      const KOrderGradients dk = grad_k_by_order(g, in.q, in.k, sk.projector,
                                                 pv, sk.pseudoinverse);
      const QKGradients scaled =
          combine_scaled(dq, dk.direct, dk.cross, o.scales);

      Matrix total_q = Matrix::Zero(o.seq_len, o.dim);
      Matrix total_k = Matrix::Zero(o.seq_len, o.dim);
      for (int i = 0; i < kNumOrders; ++i) {
        total_q += dq[i];
        total_k += dk.direct[i] + dk.cross[i];
      }
      const double ref_q = total_q.norm();
      const double ref_k = total_k.norm();

      auto in_order = [](int a, int b, int e, int order) {
        return a + b + e == order;
      };
      Matrix num_q_scaled = Matrix::Zero(o.seq_len, o.dim);
      Matrix num_k_scaled = Matrix::Zero(o.seq_len, o.dim);
      for (int order = 0; order < kNumOrders; ++order) {
        const std::string tag = "order" + std::to_string(order) + ".";
        const Matrix fq = central_difference(
            [&](const Matrix& x) {
              double sum = 0.0;
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  for (int e = 0; e < 2; ++e)
                    if (in_order(a, b, e, order))
                      sum += frobenius_inner(
                          g[block_index(a, b, e) - 1],
                          block_score(a, b, e, sk.projector, pv, x, in.k));
              return sum;
            },
            in.q, h);
        // K as it appears on the right of each block, projectors frozen.
        const Matrix fk_direct = central_difference(
            [&](const Matrix& x) {
              double sum = 0.0;
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  for (int e = 0; e < 2; ++e)
                    if (in_order(a, b, e, order))
                      sum += frobenius_inner(
                          g[block_index(a, b, e) - 1],
                          block_score(a, b, e, sk.projector, pv, in.q, x));
              return sum;
            },
            in.k, h);
        // K only through the left P_K; a (par, perp) pair with outer
        // projectors (a, e) is charged to order a + e + 1.
        const Matrix fk_cross = central_difference(
            [&](const Matrix& x) {
              const ProjectorPair pk = projector(x, exact, SpanSource::K);
              double sum = 0.0;
              for (int a = 0; a < 2; ++a)
                for (int e = 0; e < 2; ++e) {
                  if (a + e + 1 != order) continue;
                  for (int b = 0; b < 2; ++b)
                    sum += frobenius_inner(
                        g[block_index(a, b, e) - 1],
                        block_score(a, b, e, pk, pv, in.q, in.k));
                }
              return sum;
            },
            in.k, h);
        add(tag + "dq", dq[order], fq, ref_q);
        add(tag + "dk_direct", dk.direct[order], fk_direct, ref_k);
        add(tag + "dk_cross", dk.cross[order], fk_cross, ref_k);
        num_q_scaled += o.scales.alpha[order] * fq;
        num_k_scaled += o.scales.alpha[order] * (fk_direct + fk_cross);
      }
      add("scaled.dq", scaled.dq, num_q_scaled, ref_q);
      add("scaled.dk", scaled.dk, num_k_scaled, ref_k);

      // Sum over all blocks with P_K recomputed from K': the unscaled totals.
      auto all_blocks = [&](const Matrix& q, const Matrix& k) {
        const ProjectorPair pk = projector(k, exact, SpanSource::K);
        double sum = 0.0;
        for (int b = 1; b <= kNumBlocks; ++b) {
          const BlockPattern& p = kBlockPatterns[b - 1];
          sum += frobenius_inner(
              g[b - 1],
              block_score(p.left_v == Side::orthogonal,
                          p.left_k == Side::orthogonal,
                          p.right_v == Side::orthogonal, pk, pv, q, k));
        }
        return sum;
      };
      add("total.dq", total_q,
          central_difference([&](const Matrix& x) { return all_blocks(x, in.k); },
                             in.q, h),
          ref_q);
      add("total.dk", total_k,
          central_difference([&](const Matrix& x) { return all_blocks(in.q, x); },
                             in.k, h),
          ref_k);

      if (o.mode == BlockGradMode::routed) {
        // Routed totals are the gradient of the attention objective itself.
        const Matrix fq = central_difference(
            [&](const Matrix& x) {
              return attention_objective(x, in.k, in.v, in.d_out, o.causal);
            },
            in.q, h);
        const Matrix fk = central_difference(
            [&](const Matrix& x) {
              return attention_objective(in.q, x, in.v, in.d_out, o.causal);
            },
            in.k, h);
        add("attention.dq", total_q, fq, 0.0);
        add("attention.dk", total_k, fk, 0.0);
      }
      break;
    }
  }
  for (auto& c : r.checks) {
    if (o.method == GradMethod::score_decomposition ||
        o.method == GradMethod::reductionistic) {
      c.id += "[" + std::string(to_string(o.mode)) + " " + o.scales.label() + "]";
    } else if (o.method == GradMethod::unidirectional) {
      c.id += "[" + std::string(to_string(o.mode)) + "]";
    }
  }
  r.elapsed_ms = ms_since(t0);
  return r;
}

AuditReport run_model_gradcheck(const ModelConfig& config, std::uint64_t seed,
                                double step, double tolerance) {
  config.validate();
  const bool exact_method =
      config.grad_method == GradMethod::standard ||
      (config.grad_method == GradMethod::score_decomposition &&
       config.block_grad_mode == BlockGradMode::routed &&
       config.scale_config.alpha == std::array<double, 4>{1, 1, 1, 1});
  if (!exact_method || !config.qkv_modulation.all_enabled()) {
    throw InvalidConfig(
        "model gradcheck needs a method that yields the true gradient");
  }
  const auto t0 = Clock::now();
  AuditReport r;
  r.suite = "model_gradcheck";
  r.seed = seed;
  r.parameters = {{"model", config.method_label()}, {"h", step}};

  ModelState state = ModelState::initialize(config, seed);
  // Larger weights than the training init so every path carries signal.
  std::mt19937_64 rng(seed ^ 0x3e11);
  state.for_each([&](const std::string&, Matrix& m) {
    m += 0.3 * random_gaussian(m.rows(), m.cols(), rng);
  });
  std::vector<int> window(static_cast<std::size_t>(config.seq_len + 1));
  std::uniform_int_distribution<int> tok(0, static_cast<int>(config.vocab_size) - 1);
  for (int& t : window) t = tok(rng);

  ModelState grads = ModelState::zeros(config);
  ForwardOptions opts;
  opts.dropout = false;
  sequence_step(state, window, config, opts, grads);

  std::vector<std::pair<std::string, Matrix*>> params;
  state.for_each([&](const std::string& n, Matrix& m) { params.emplace_back(n, &m); });
  std::vector<const Matrix*> analytic;
  grads.for_each([&](const std::string&, const Matrix& m) { analytic.push_back(&m); });

  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i].second;
    const Matrix saved = p;
    const Matrix numeric = central_difference(
        [&](const Matrix& x) {
          p = x;
          return sequence_loss(state, window, config);
        },
        saved, step);
    p = saved;
    r.add("model[" + config.method_label() + "]." + params[i].first,
          scaled_error(*analytic[i], numeric, 0.0), tolerance);
  }
  r.elapsed_ms = ms_since(t0);
  return r;
}

Matrix read_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw IoError("bad number '" + cell + "' in " + path.string());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IoError("ragged rows in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("no data in " + path.string());
  Matrix m(static_cast<Index>(rows.size()),
           static_cast<Index>(rows.front().size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
  return m;
}

void write_csv_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

DecomposeResult run_decompose(const DecomposeOptions& o) {
  std::mt19937_64 rng(o.seed);
  Matrix q = o.q_csv ? read_csv_matrix(*o.q_csv)
                     : random_gaussian(o.seq_len, o.dim, rng);
  Matrix k = o.k_csv ? read_csv_matrix(*o.k_csv)
                     : random_gaussian(o.seq_len, o.dim, rng);
  Matrix v = o.v_csv ? read_csv_matrix(*o.v_csv)
                     : random_gaussian(o.seq_len, o.dim, rng);
  if (o.v_equals_k) v = k;
  if (o.zero_q) q.setZero();
  require_same_shape(q, k, "decompose Q/K");
  if (v.rows() != k.rows()) {
    throw DimensionMismatch("decompose: V must have as many rows as K");
  }

  const ProjectorPair pk = projector(k, RegularizationPolicy::exact(), SpanSource::K);
  const ProjectorPair pv = projector(v, RegularizationPolicy::exact(), SpanSource::V);
  const ScoreBlocks blocks = decompose_bidirectional(q, k, pk, pv);
  const Matrix s = score(q, k);

  DecomposeResult res;
  res.inner_products = orthogonality_table(blocks);
  res.order_sq_norms.assign(kNumOrders, 0.0);
  for (int b = 1; b <= kNumBlocks; ++b) {
    const double n = blocks.at(b).norm();
    res.block_norms.push_back(n);
    res.order_sq_norms[violation_order(b)] += n * n;
  }
  res.score_sq_norm = s.squaredNorm();
  for (const auto& pair : kExceptionPairs) {
    res.exception_cross_sum += 2.0 * res.inner_products(pair[0] - 1, pair[1] - 1);
  }
  res.reconstruction_error = (blocks.sum() - s).norm();

  std::error_code ec;
  std::filesystem::create_directories(o.out_dir, ec);
  if (ec) throw IoError("cannot create " + o.out_dir.string() + ": " + ec.message());

  for (int b = 1; b <= kNumBlocks; ++b) {
    write_csv_matrix(o.out_dir / ("block_" + std::to_string(b) + ".csv"),
                     blocks.at(b));
  }
  write_csv_matrix(o.out_dir / "score.csv", s);
  {
    std::ofstream out(o.out_dir / "block_norms.csv");
    out << std::setprecision(17) << "block,order,frobenius_norm,squared_norm\n";
    for (int b = 1; b <= kNumBlocks; ++b) {
      const double n = res.block_norms[b - 1];
      out << b << ',' << violation_order(b) << ',' << n << ',' << n * n << '\n';
    }
    if (!out) throw IoError("failed writing block_norms.csv");
  }
  {
    std::ofstream out(o.out_dir / "order_norms.csv");
    out << std::setprecision(17) << "order,squared_norm\n";
    for (int i = 0; i < kNumOrders; ++i) {
      out << i << ',' << res.order_sq_norms[i] << '\n';
    }
    if (!out) throw IoError("failed writing order_norms.csv");
  }
  {
    std::ofstream out(o.out_dir / "inner_products.csv");
    out << std::setprecision(17) << "block";
    for (int b = 1; b <= kNumBlocks; ++b) out << ",S" << b;
    out << '\n';
    for (int a = 1; a <= kNumBlocks; ++a) {
      out << 'S' << a;
      for (int b = 1; b <= kNumBlocks; ++b) {
        out << ',' << res.inner_products(a - 1, b - 1);
      }
      out << '\n';
    }
    if (!out) throw IoError("failed writing inner_products.csv");
  }
  {
    double sum_sq = 0.0;
    for (double n : res.block_norms) sum_sq += n * n;
    json summary{{"T", q.rows()},
                 {"d", q.cols()},
                 {"seed", o.seed},
                 {"score_squared_norm", res.score_sq_norm},
                 {"sum_block_squared_norms", sum_sq},
                 {"exception_cross_terms", res.exception_cross_sum},
                 {"reconstruction_error", res.reconstruction_error},
                 {"k_rank", pk.source_rank},
                 {"v_rank", pv.source_rank}};
    std::ofstream out(o.out_dir / "summary.json");
    out << summary.dump(2) << '\n';
    if (!out) throw IoError("failed writing summary.json");
  }
  return res;
}

}  // namespace spangrad
