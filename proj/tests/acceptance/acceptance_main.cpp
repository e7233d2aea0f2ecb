// Acceptance runner: one PASS/FAIL line per criterion.
//
//   spangrad_acceptance [--criteria 1,2,...] [--out DIR]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "spangrad/attention.hpp"
#include "spangrad/audit.hpp"
#include "spangrad/corpus.hpp"
#include "spangrad/experiment.hpp"
#include "spangrad/model.hpp"
#include "spangrad/training.hpp"

namespace {

namespace fs = std::filesystem;
using namespace spangrad;

struct Outcome {
  bool passed = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) passed = false;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << std::scientific << v;
  return s.str();
}

std::string secs(double s) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(1) << s << " s";
  return o.str();
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void require_report(Outcome& out, const AuditReport& r) {
  int failed = 0;
  for (const auto& c : r.checks) {
    if (!c.passed) {
      ++failed;
      out.require(false, c.id + " measured " + fmt(c.measured) + " tol " + fmt(c.tolerance));
    }
  }
  out.require(failed == 0, "suite " + r.suite + ": " + std::to_string(r.checks.size()) +
                               " checks, " + std::to_string(failed) + " failed");
}

// ---------------------------------------------------------------------------
// 1. Projector properties over 100 seeded instances.

Outcome criterion_projector() {
  Outcome out;
  const auto t0 = Clock::now();
  VerifyOptions o;
  o.suite = "projector";
  o.instances = 100;
  require_report(out, run_verify(o));

  double worst_oracle = 0.0;
  double worst_identity = 0.0;
  std::mt19937_64 rng(2024);
  const int ts[] = {8, 16, 32};
  const int ds[] = {2, 4, 8};
  for (int i = 0; i < 100; ++i) {
    const int t = ts[rng() % 3];
    const int d = ds[rng() % 3];
    const Matrix m = oracle::gaussian(t, d, rng());
    const auto p = projector(m, RegularizationPolicy::exact());
    const Matrix want = oracle::projector(m);
    worst_oracle = std::max(worst_oracle, oracle::rel(p.parallel, want));
    const double scale = p.parallel.norm();
    worst_identity = std::max(
        {worst_identity, (p.parallel * p.parallel - p.parallel).norm() / scale,
         (p.parallel - p.parallel.transpose()).norm() / scale,
         (p.parallel + p.orthogonal - Matrix::Identity(t, t)).norm() / std::sqrt(t),
         (p.parallel * m - m).norm() / m.norm()});
  }
  out.require(worst_identity <= 1e-10,
              "idempotent/symmetric/complementary/absorbing, worst " + fmt(worst_identity));
  out.require(worst_oracle <= 1e-9, "matches explicit-inverse projector, worst " + fmt(worst_oracle));
  const double elapsed = seconds_since(t0);
  out.require(elapsed < 10.0, "runtime " + secs(elapsed) + " < 10 s");
  return out;
}

// ---------------------------------------------------------------------------
// 2. Block identities.

Outcome criterion_blocks() {
  Outcome out;
  const auto t0 = Clock::now();
  for (const char* suite : {"blocks", "vanishing", "orthogonality"}) {
    VerifyOptions o;
    o.suite = suite;
    o.instances = 100;
    require_report(out, run_verify(o));
  }

  double worst_sum = 0.0;
  double worst_omitted = 0.0;
  double worst_off = 0.0;
  double weakest_exception = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix q = oracle::gaussian(16, 4, 3 * seed + 1);
    const Matrix k = oracle::gaussian(16, 4, 3 * seed + 2);
    const Matrix v = oracle::gaussian(16, 4, 3 * seed + 3);
    const Matrix pk = oracle::projector(k);
    const Matrix pv = oracle::projector(v);
    const Matrix s = oracle::score(q, k);
    const auto blocks = decompose_bidirectional(q, k, projector(k, RegularizationPolicy::exact()),
                                                projector(v, RegularizationPolicy::exact()));
    worst_sum = std::max(worst_sum, oracle::rel(blocks.sum(), s));
    for (int bits = 0; bits < 8; ++bits) {
      const Matrix lv = (bits & 4) ? oracle::complement(pv) : pv;
      const Matrix lk = (bits & 2) ? oracle::complement(pk) : pk;
      const Matrix rv = (bits & 1) ? oracle::complement(pv) : pv;
      worst_omitted = std::max(
          worst_omitted, (lv * lk * s * oracle::complement(pk) * rv).norm() / s.norm());
    }
    for (int a = 1; a <= 8; ++a) {
      for (int b = a + 1; b <= 8; ++b) {
        const double cosine = std::abs(oracle::inner(blocks.at(a), blocks.at(b))) /
                              (blocks.at(a).norm() * blocks.at(b).norm());
        if (is_exception_pair(a, b)) {
          weakest_exception = std::min(weakest_exception, cosine);
        } else {
          worst_off = std::max(worst_off, cosine);
        }
      }
    }
  }
  out.require(worst_sum <= 1e-10, "block sum vs direct score, worst " + fmt(worst_sum));
  out.require(worst_omitted <= 1e-10,
              "8 omitted components (explicit inverses), worst " + fmt(worst_omitted));
  out.require(worst_off <= 1e-9, "non-exception inner products, worst " + fmt(worst_off));
  out.require(weakest_exception > 1e-6,
              "exception pairs (1,3),(2,4),(5,7),(6,8) non-zero, weakest " + fmt(weakest_exception));
  const double elapsed = seconds_since(t0);
  out.require(elapsed < 10.0, "runtime " + secs(elapsed) + " < 10 s");
  return out;
}

// ---------------------------------------------------------------------------
// 3. Reconstruction limits.

Outcome criterion_reconstruction() {
  Outcome out;
  const auto t0 = Clock::now();
  VerifyOptions o;
  o.suite = "reconstruction";
  require_report(out, run_verify(o));

  const Matrix q = oracle::gaussian(16, 4, 71);
  const Matrix k = oracle::gaussian(16, 4, 72);
  const Matrix v = oracle::gaussian(16, 4, 73);
  const Matrix d_out = oracle::gaussian(16, 4, 74);
  const auto fwd = attention_forward(q, k, v, true);
  const auto backward = [&](GradMethod m, const char* scales) {
    ModelConfig c;
    c.ridge_scale = 0.0;
    c.grad_method = m;
    c.scale_config = ScaleConfig::parse(scales);
    return attention_backward(make_head_cache(q, k, v, fwd, c), d_out, c);
  };
  const auto ref = backward(GradMethod::standard, "1111");
  // Independent reference: central differences of <dOut, attention>.
  const auto fq = [&](const Matrix& x) { return oracle::inner(d_out, oracle::attention(x, k, v, true)); };
  const double ref_vs_fd = oracle::rel(ref.dq, oracle::central_difference(fq, q, 1e-5));
  out.require(ref_vs_fd <= 1e-7, "standard dQ vs central differences " + fmt(ref_vs_fd));

  const auto err = [&](const QKVGradients& g) {
    return std::max(oracle::rel(g.dq, ref.dq), oracle::rel(g.dk, ref.dk));
  };
  const double routed = err(backward(GradMethod::score_decomposition, "1111"));
  out.require(routed <= 1e-9, "routed [1111] vs standard " + fmt(routed));
  const auto zero = backward(GradMethod::score_decomposition, "0000");
  out.require(zero.dq.cwiseAbs().maxCoeff() == 0.0 && zero.dk.cwiseAbs().maxCoeff() == 0.0,
              "[0000] gives exactly zero dQ, dK");
  out.require(zero.dv == ref.dv, "[0000] leaves dV bitwise unchanged");
  const double reduct = err(backward(GradMethod::reductionistic, "1111"));
  out.require(reduct <= 1e-10, "reductionistic [1111] vs standard " + fmt(reduct));
  const double simplest = err(backward(GradMethod::simplest, "1111"));
  out.require(simplest <= 1e-12, "simplest (1, 1) vs standard " + fmt(simplest));
  const double elapsed = seconds_since(t0);
  out.require(elapsed < 5.0, "runtime " + secs(elapsed) + " < 5 s");
  return out;
}

// ---------------------------------------------------------------------------
// 4. Finite-difference audits.

double block_surrogate(int block, const Matrix& g, const Matrix& q, const Matrix& k,
                       const Matrix& v) {
  const int bits = block - 1;
  const Matrix pk = oracle::projector(k);
  const Matrix pv = oracle::projector(v);
  const Matrix lv = (bits & 4) ? oracle::complement(pv) : pv;
  const Matrix lk = (bits & 2) ? oracle::complement(pk) : pk;
  const Matrix rv = (bits & 1) ? oracle::complement(pv) : pv;
  return oracle::inner(g, lv * lk * oracle::score(q, k) * rv);
}

Outcome criterion_finite_differences() {
  Outcome out;
  const auto t0 = Clock::now();
  VerifyOptions o;
  o.suite = "gradcheck";
  require_report(out, run_verify(o));

  const double h = 1e-5;
  for (Index t : {8, 16}) {
    const Index d = 4;
    const Matrix q = oracle::gaussian(t, d, 100 + t);
    const Matrix k = oracle::gaussian(t, d, 200 + t);
    const Matrix v = oracle::gaussian(t, d, 300 + t);
    BlockGradients bg;
    for (int b = 0; b < 8; ++b) bg[b] = oracle::gaussian(t, t, 400 + 10 * t + b);
    const auto sk = span(k, RegularizationPolicy::exact());
    const auto pv = projector(v, RegularizationPolicy::exact());
    const OrderTerms dq = grad_q_by_order(bg, sk.projector, pv, k);
    const KOrderGradients dk = grad_k_by_order(bg, q, k, sk.projector, pv, sk.pseudoinverse);

    double worst_q = 0.0;
    double worst_k = 0.0;
    for (int ord = 0; ord < 4; ++ord) {
      const auto in_order = [&](const Matrix& qq, const Matrix& kk) {
        double acc = 0.0;
        for (int b = 1; b <= 8; ++b) {
          if (violation_order(b) == ord) acc += block_surrogate(b, bg[b - 1], qq, kk, v);
        }
        return acc;
      };
      const Matrix nq = oracle::central_difference([&](const Matrix& x) { return in_order(x, k); }, q, h);
      worst_q = std::max(worst_q, oracle::rel(dq[ord], nq));
      // Order `ord` of the K gradient: direct terms of its blocks plus the
      // projector path of the exception pairs landing in it.
      const auto k_part = [&](const Matrix& kk) {
        double acc = 0.0;
        const Matrix pk_now = oracle::projector(kk);
        const Matrix pk0 = oracle::projector(k);
        const Matrix pvm = oracle::projector(v);
        for (int b = 1; b <= 8; ++b) {
          const int bits = b - 1;
          const Matrix lv = (bits & 4) ? oracle::complement(pvm) : pvm;
          const Matrix rv = (bits & 1) ? oracle::complement(pvm) : pvm;
          const Matrix lk0 = (bits & 2) ? oracle::complement(pk0) : pk0;
          if (violation_order(b) == ord) {
            acc += oracle::inner(bg[b - 1], lv * lk0 * oracle::score(q, kk) * rv);
          }
          const int cross_order = ((bits >> 2) & 1) + (bits & 1) + 1;
          if (cross_order == ord) {
            const Matrix lk = (bits & 2) ? oracle::complement(pk_now) : pk_now;
            acc += oracle::inner(bg[b - 1], lv * lk * oracle::score(q, k) * rv);
          }
        }
        return acc;
      };
      const Matrix nk = oracle::central_difference(k_part, k, h);
      const double denom = std::max({(dk.direct[ord] + dk.cross[ord]).norm(), nk.norm()});
      worst_k = std::max(worst_k, (dk.direct[ord] + dk.cross[ord] - nk).norm() / denom);
    }
    out.require(worst_q <= 1e-6, "T=" + std::to_string(t) + " per-order dQ vs FD, worst " + fmt(worst_q));
    out.require(worst_k <= 1e-6,
                "T=" + std::to_string(t) + " per-order dK direct+cross vs FD, worst " + fmt(worst_k));

    const Matrix gp = oracle::gaussian(t, t, 500 + t);
    const Matrix go = oracle::gaussian(t, t, 600 + t);
    const auto uni = grad_unidirectional(gp, go, q, k, sk.projector, sk.pseudoinverse);
    const auto f_uni = [&](const Matrix& qq, const Matrix& kk) {
      const Matrix p = oracle::projector(kk);
      const Matrix s = oracle::score(qq, kk);
      return oracle::inner(gp, p * s) + oracle::inner(go, oracle::complement(p) * s);
    };
    const double uq = oracle::rel(
        uni.dq, oracle::central_difference([&](const Matrix& x) { return f_uni(x, k); }, q, h));
    const double uk = oracle::rel(
        uni.dk, oracle::central_difference([&](const Matrix& x) { return f_uni(q, x); }, k, h));
    out.require(std::max(uq, uk) <= 1e-6,
                "T=" + std::to_string(t) + " unidirectional vs FD " + fmt(std::max(uq, uk)));
  }

  // End-to-end: single layer, single head, every parameter tensor.
  for (GradMethod m : {GradMethod::standard, GradMethod::score_decomposition}) {
    ModelConfig c;
    c.seq_len = 8;
    c.model_dim = 8;
    c.num_heads = 1;
    c.num_layers = 1;
    c.dropout_rate = 0.0;
    c.grad_method = m;
    ModelState s = ModelState::initialize(c, 77);
    std::uint64_t salt = 0;
    s.for_each([&](const std::string&, Matrix& w) {
      w += 0.3 * oracle::gaussian(w.rows(), w.cols(), 9000 + ++salt);
    });
    std::vector<int> window(9);
    for (int i = 0; i < 9; ++i) window[i] = static_cast<int>((37 * i + 11) % 256);
    ModelState g = ModelState::zeros(c);
    ForwardOptions fo;
    fo.dropout = false;
    sequence_step(s, window, c, fo, g);
    std::vector<Matrix> analytic;
    g.for_each([&](const std::string&, const Matrix& x) { analytic.push_back(x); });
    double worst = 0.0;
    std::string worst_name;
    std::size_t idx = 0;
    s.for_each([&](const std::string& name, const Matrix& param) {
      const auto f = [&](const Matrix& x) {
        ModelState p = s;
        p.for_each([&](const std::string& n, Matrix& w) {
          if (n == name) w = x;
        });
        return sequence_loss(p, window, c);
      };
      const Matrix num = oracle::central_difference(f, param, h);
      const Matrix& a = analytic[idx++];
      const double e = (a - num).norm() / std::max({a.norm(), num.norm(), 1e-12});
      if (e > worst) {
        worst = e;
        worst_name = name;
      }
    });
    out.require(worst <= 1e-5, "end-to-end " + std::string(to_string(m)) +
                                   " every tensor vs FD, worst " + fmt(worst) + " (" +
                                   worst_name + ")");
  }
  const double elapsed = seconds_since(t0);
  out.require(elapsed < 120.0, "runtime " + secs(elapsed) + " < 120 s");
  return out;
}

// ---------------------------------------------------------------------------
// Shared desk configuration.

ModelConfig desk_model() {
  ModelConfig c;
  c.seq_len = 64;
  c.model_dim = 32;
  c.num_heads = 2;
  c.num_layers = 2;
  c.dropout_rate = 0.1;
  return c;
}

TrainConfig desk_train() {
  TrainConfig t;
  t.micro_batch = 16;
  t.accumulation_steps = 8;
  t.epochs = 5;
  t.learning_rate = 3e-4;
  t.seed = 1234;
  return t;
}

// ---------------------------------------------------------------------------
// 5. Trajectory equivalences over 100 optimizer steps.

Outcome criterion_trajectories() {
  Outcome out;
  const auto t0 = Clock::now();
  const auto tokens = encode_bytes(synthetic_text(1 << 20, 2024));
  const DatasetSplit data = split_dataset(tokens, 64, 0.1);
  TrainConfig tc = desk_train();
  tc.max_steps = 100;

  const auto run = [&](GradMethod m, const char* scales, const char* modulation) {
    ModelConfig c = desk_model();
    c.grad_method = m;
    c.scale_config = ScaleConfig::parse(scales);
    c.qkv_modulation = QKVModulation::parse(modulation);
    return train(c, tc, data).log.losses("train");
  };
  const auto standard = run(GradMethod::standard, "1111", "QKV111");
  const auto ones = run(GradMethod::score_decomposition, "1111", "QKV111");
  const auto v_only = run(GradMethod::standard, "1111", "QKV001");
  const auto zeros = run(GradMethod::score_decomposition, "0000", "QKV111");

  const auto gap = [](const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      worst = std::max(worst, std::abs(a[i] - b[i]) / std::abs(a[i]));
    }
    return worst;
  };
  out.require(standard.size() == 100, "100 optimizer steps per run");
  const double g1 = gap(standard, ones);
  out.require(g1 <= 1e-6, "routed [1111] vs standard, max per-step relative gap " + fmt(g1));
  const double g2 = gap(v_only, zeros);
  out.require(g2 <= 1e-10, "[0000] vs QKV001, max per-step relative gap " + fmt(g2));
  const double elapsed = seconds_since(t0);
  out.require(elapsed < 600.0, "runtime " + secs(elapsed) + " < 600 s");
  return out;
}

// ---------------------------------------------------------------------------
// 6. Desk-scale experiment.

Outcome criterion_experiment(const fs::path& out_dir) {
  Outcome out;
  const auto t0 = Clock::now();
  ExperimentSpec spec;
  spec.label = "desk_scale";
  spec.model = desk_model();
  spec.train = desk_train();
  spec.synthetic_corpus = SyntheticCorpus{1 << 20, 2024};
  spec.validation_fraction = 0.1;
  const auto add = [&](const char* label, const char* method, const char* scales,
                       const char* modulation) {
    spec.runs.push_back(RunSpec::from_json(
        {{"label", label}, {"method", method}, {"scales", scales}, {"modulation", modulation}}));
  };
  add("standard", "standard", "1111", "QKV111");
  add("score_1000", "score", "1000", "QKV111");
  add("score_1100", "score", "1100", "QKV111");
  add("score_1111", "score", "1111", "QKV111");
  add("QKV001", "standard", "1111", "QKV001");

  const ExperimentResult result = run_experiment(spec, out_dir, &std::cout);
  const double elapsed = seconds_since(t0);

  const double uniform = std::log(256.0);
  const double threshold = 0.85 * uniform;
  for (const auto& r : result.runs) {
    out.require(r.completed && !r.diverged,
                r.run.label + " completed without divergence" +
                    (r.error.empty() ? "" : " (" + r.error + ")"));
  }
  for (const auto& row : result.summary) {
    std::ostringstream line;
    line << row.label << " min val loss " << std::fixed << std::setprecision(4)
         << row.min_val_loss << " < " << threshold;
    if (row.delta_pct_vs_standard) {
      line << ", delta vs standard " << std::showpos << std::setprecision(3)
           << *row.delta_pct_vs_standard << "%";
    }
    out.require(row.min_val_loss < threshold, line.str());
  }
  if (!result.runs.empty() && result.runs[0].completed) {
    const auto train_losses = result.runs[0].log.losses("train");
    const double first = train_losses.front();
    const double last = train_losses.back();
    out.require(last <= 0.8 * first, "standard train loss " + fmt(first) + " -> " + fmt(last) +
                                         " (at least 20% lower)");
  }
  out.require(elapsed < 1800.0, "runtime " + secs(elapsed) + " < 1800 s");
  out.notes.push_back("     outputs in " + out_dir.string());
  return out;
}

// ---------------------------------------------------------------------------
// 7. Forward invariance.

Outcome criterion_forward_invariance() {
  Outcome out;
  const ModelConfig base = desk_model();
  ModelState s = ModelState::initialize(base, 31);
  std::uint64_t salt = 0;
  s.for_each([&](const std::string&, Matrix& w) {
    w += 0.05 * oracle::gaussian(w.rows(), w.cols(), 7000 + ++salt);
  });
  const auto tokens = encode_bytes(synthetic_text(4096, 5));
  const std::span<const int> window(tokens.data(), 64);
  ForwardOptions fo;
  fo.seed = 99;
  const Matrix ref = model_forward(s, window, base, fo).logits;
  const Matrix ref_eval = model_forward(s, window, base, ForwardOptions{0, false, true}).logits;

  struct Variant {
    GradMethod method;
    const char* scales;
    const char* modulation;
    BlockGradMode mode;
  };
  const Variant variants[] = {
      {GradMethod::standard, "1111", "QKV001", BlockGradMode::routed},
      {GradMethod::unidirectional, "1111", "QKV111", BlockGradMode::routed},
      {GradMethod::simplest, "1111", "QKV111", BlockGradMode::routed},
      {GradMethod::reductionistic, "1100", "QKV111", BlockGradMode::routed},
      {GradMethod::score_decomposition, "1000", "QKV111", BlockGradMode::routed},
      {GradMethod::score_decomposition, "1100", "QKV111", BlockGradMode::routed},
      {GradMethod::score_decomposition, "1111", "QKV111", BlockGradMode::routed},
      {GradMethod::score_decomposition, "0000", "QKV111", BlockGradMode::routed},
      {GradMethod::score_decomposition, "1,0.5,0.25,0", "QKV101",
       BlockGradMode::per_block_softmax},
  };
  int identical = 0;
  for (const Variant& v : variants) {
    ModelConfig c = base;
    c.grad_method = v.method;
    c.scale_config = ScaleConfig::parse(v.scales);
    c.qkv_modulation = QKVModulation::parse(v.modulation);
    c.block_grad_mode = v.mode;
    const bool same = model_forward(s, window, c, fo).logits == ref &&
                      model_forward(s, window, c, ForwardOptions{0, false, true}).logits ==
                          ref_eval;
    if (same) ++identical;
    out.require(same, c.method_label() + " logits bitwise identical");
  }
  out.require(identical == static_cast<int>(std::size(variants)),
              std::to_string(identical) + "/" + std::to_string(std::size(variants)) +
                  " variants identical to standard");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spangrad acceptance criteria"};
  std::vector<int> selected{1, 2, 3, 4, 5, 6, 7};
  std::string out_dir = "acceptance_out";
  app.add_option("--criteria", selected, "Criteria to run")->delimiter(',');
  app.add_option("--out", out_dir, "Directory for the experiment outputs");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"projector suite", criterion_projector},
      {"block identities", criterion_blocks},
      {"reconstruction limits", criterion_reconstruction},
      {"finite-difference audits", criterion_finite_differences},
      {"trajectory equivalences", criterion_trajectories},
      {"desk-scale experiment", [&] { return criterion_experiment(out_dir); }},
      {"forward invariance", criterion_forward_invariance},
  };

  const std::set<int> want(selected.begin(), selected.end());
  std::vector<std::string> summary;
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!want.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double elapsed = seconds_since(t0);
    std::cout << "-- criterion " << id << ": " << criteria[i].first << '\n';
    for (const auto& n : o.notes) std::cout << "     " << n << '\n';
    std::ostringstream line;
    line << "criterion " << id << ": " << (o.passed ? "PASS" : "FAIL") << "  "
         << criteria[i].first << " (" << secs(elapsed) << ")";
    std::cout << line.str() << '\n' << std::flush;
    summary.push_back(line.str());
    all = all && o.passed;
  }
  std::cout << "\n== acceptance summary ==\n";
  for (const auto& s : summary) std::cout << s << '\n';
  return all ? 0 : 1;
}
