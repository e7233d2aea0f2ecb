// spangrad command-line front end.
//
// Exit codes: 0 all checks passed / runs completed, 1 a check failed or a run
// diverged, 2 bad arguments or configuration.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spangrad/audit.hpp"
#include "spangrad/errors.hpp"
#include "spangrad/experiment.hpp"

namespace {

using namespace spangrad;

int finish(const AuditReport& report, const std::string& path) {
  report.print(std::cout);
  report.write_json(path);
  std::cout << "report: " << path << '\n';
  return report.passed() ? 0 : 1;
}

int report_experiment(const ExperimentResult& result) {
  std::cout << "label,method,scales,min_val_loss,delta_pct_vs_standard\n";
  for (const auto& row : result.summary) {
    std::cout << row.label << ',' << row.method << ',' << row.scales << ','
              << row.min_val_loss << ',';
    if (row.delta_pct_vs_standard) std::cout << *row.delta_pct_vs_standard;
    std::cout << '\n';
  }
  return result.all_completed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Span / span-violation decomposition of attention gradients"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version_string()));

  // verify
  VerifyOptions verify;
  Index verify_t = 0;
  Index verify_d = 0;
  double verify_tol = 0.0;
  std::string verify_report = "verify_report.json";
  auto* v = app.add_subcommand("verify", "Run invariant suites");
  v->add_option("--suite", verify.suite,
                "projector|blocks|vanishing|orthogonality|reconstruction|gradcheck|all")
      ->capture_default_str();
  auto* v_t = v->add_option("--T", verify_t,
                            "Sequence length (default: sweep {8,16,32}; 16 for "
                            "reconstruction and gradcheck)");
  auto* v_d = v->add_option("--d", verify_d,
                            "Feature dimension (default: sweep {2,4,8}; 4 for "
                            "reconstruction and gradcheck)");
  v->add_option("--seed", verify.seed)->capture_default_str();
  auto* v_tol = v->add_option("--tol", verify_tol,
                              "Override every check's tolerance");
  v->add_option("--instances", verify.instances,
                "Random instances per property suite")
      ->capture_default_str();
  v->add_option("--report", verify_report, "JSON report path")
      ->capture_default_str();

  // gradcheck
  GradcheckOptions grad;
  std::string grad_method = "score";
  std::string grad_scales = "1,0,0,0";
  std::string grad_mode = "routed";
  std::vector<double> grad_simplest{1.0, 1.0};
  double grad_tol = 0.0;
  std::string grad_report = "gradcheck_report.json";
  auto* g = app.add_subcommand("gradcheck",
                               "Analytic gradients vs central differences");
  g->add_option("--method", grad_method,
                "standard|unidirectional|simplest|reductionistic|score")
      ->capture_default_str();
  g->add_option("--scales", grad_scales, "Order scales a0,a1,a2,a3")
      ->capture_default_str();
  g->add_option("--mode", grad_mode, "routed|perblock")->capture_default_str();
  g->add_option("--simplest-scales", grad_simplest,
                "Parallel and orthogonal weights (simplest, unidirectional)")
      ->expected(2)
      ->delimiter(',')
      ->capture_default_str();
  g->add_option("--seed", grad.seed)->capture_default_str();
  g->add_option("--T", grad.seq_len)->capture_default_str();
  g->add_option("--d", grad.dim)->capture_default_str();
  g->add_option("--h", grad.step, "Finite-difference step")->capture_default_str();
  auto* g_tol = g->add_option(
      "--tol", grad_tol, "Tolerance (default 1e-7 standard, 1e-6 otherwise)");
  g->add_flag("!--no-causal", grad.causal, "Disable the causal mask");
  g->add_option("--report", grad_report)->capture_default_str();

  // decompose
  DecomposeOptions dec;
  std::string dec_q, dec_k, dec_v;
  auto* d = app.add_subcommand("decompose",
                               "Write the 8 score blocks and their norms as CSV");
  d->add_option("--seed", dec.seed)->capture_default_str();
  d->add_option("--T", dec.seq_len)->capture_default_str();
  d->add_option("--d", dec.dim)->capture_default_str();
  d->add_option("--q", dec_q, "CSV file for Q (T x d)");
  d->add_option("--k", dec_k, "CSV file for K (T x d)");
  d->add_option("--v", dec_v, "CSV file for V (T x d)");
  d->add_flag("--v-equals-k", dec.v_equals_k, "Use V = K");
  d->add_flag("--zero-q", dec.zero_q, "Use Q = 0");
  std::string dec_out = "decompose_out";
  d->add_option("--out", dec_out, "Output directory")->capture_default_str();

  // experiment
  std::string exp_spec;
  std::string exp_out = "experiment_out";
  auto* e = app.add_subcommand("experiment", "Run an experiment spec");
  e->add_option("--spec", exp_spec, "Experiment JSON")->required();
  e->add_option("--out", exp_out)->capture_default_str();

  // train
  ExperimentSpec tspec;
  tspec.label = "train";
  std::string t_corpus;
  std::size_t t_synth_bytes = 1 << 20;
  std::uint64_t t_synth_seed = 2024;
  std::string t_method = "standard";
  std::string t_scales = "1,1,1,1";
  std::string t_mode = "routed";
  std::string t_modulation = "QKV111";
  std::vector<double> t_simplest{1.0, 1.0};
  std::string t_out = "train_out";
  auto* t = app.add_subcommand("train", "Single training run");
  t->add_option("--corpus", t_corpus, "Text file (default: synthetic corpus)");
  t->add_option("--synthetic-bytes", t_synth_bytes)->capture_default_str();
  t->add_option("--synthetic-seed", t_synth_seed)->capture_default_str();
  t->add_option("--method", t_method)->capture_default_str();
  t->add_option("--scales", t_scales)->capture_default_str();
  t->add_option("--mode", t_mode)->capture_default_str();
  t->add_option("--modulation", t_modulation)->capture_default_str();
  t->add_option("--simplest-scales", t_simplest)
      ->expected(2)
      ->delimiter(',')
      ->capture_default_str();
  t->add_option("--seq-len", tspec.model.seq_len)->capture_default_str();
  t->add_option("--model-dim", tspec.model.model_dim)->capture_default_str();
  t->add_option("--heads", tspec.model.num_heads)->capture_default_str();
  t->add_option("--layers", tspec.model.num_layers)->capture_default_str();
  t->add_option("--dropout", tspec.model.dropout_rate)->capture_default_str();
  t->add_option("--ridge-scale", tspec.model.ridge_scale)->capture_default_str();
  t->add_option("--micro-batch", tspec.train.micro_batch)->capture_default_str();
  t->add_option("--accumulation", tspec.train.accumulation_steps)
      ->capture_default_str();
  t->add_option("--epochs", tspec.train.epochs)->capture_default_str();
  t->add_option("--lr", tspec.train.learning_rate)->capture_default_str();
  t->add_option("--seed", tspec.train.seed)->capture_default_str();
  t->add_option("--eval-every", tspec.train.eval_every)->capture_default_str();
  t->add_option("--max-steps", tspec.train.max_steps)->capture_default_str();
  t->add_option("--validation-fraction", tspec.validation_fraction)
      ->capture_default_str();
  t->add_flag("--save-checkpoint", tspec.save_checkpoints);
  t->add_option("--out", t_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex) == 0 ? 0 : 2;
  }

  try {
    if (v->parsed()) {
      if (v_t->count()) verify.seq_len = verify_t;
      if (v_d->count()) verify.dim = verify_d;
      if (v_tol->count()) verify.tolerance = verify_tol;
      return finish(run_verify(verify), verify_report);
    }
    if (g->parsed()) {
      grad.method = parse_grad_method(grad_method);
      grad.scales = ScaleConfig::parse(grad_scales);
      grad.mode = parse_block_grad_mode(grad_mode);
      grad.simplest = {grad_simplest.at(0), grad_simplest.at(1)};
      if (g_tol->count()) grad.tolerance = grad_tol;
      return finish(run_gradcheck(grad), grad_report);
    }
    if (d->parsed()) {
      if (!dec_q.empty()) dec.q_csv = dec_q;
      if (!dec_k.empty()) dec.k_csv = dec_k;
      if (!dec_v.empty()) dec.v_csv = dec_v;
      dec.out_dir = dec_out;
      const DecomposeResult r = run_decompose(dec);
      std::cout << "block,order,frobenius_norm\n";
      for (int b = 1; b <= 8; ++b) {
        std::cout << b << ',' << violation_order(b) << ','
                  << r.block_norms[b - 1] << '\n';
      }
      double block_sq = 0.0;
      for (double n : r.block_norms) block_sq += n * n;
      std::cout << "||S||_F^2 = " << r.score_sq_norm
                << "\nsum of block squared norms = " << block_sq
                << "\nexception-pair cross terms = " << r.exception_cross_sum
                << "\nreconstruction error = " << r.reconstruction_error
                << "\nwritten to " << dec.out_dir.string() << '\n';
      return 0;
    }
    if (e->parsed()) {
      const ExperimentSpec spec = ExperimentSpec::load(exp_spec);
      return report_experiment(run_experiment(spec, exp_out, &std::cout));
    }
    if (t->parsed()) {
      if (t_corpus.empty()) {
        tspec.synthetic_corpus = SyntheticCorpus{t_synth_bytes, t_synth_seed};
      } else {
        tspec.corpus_path = t_corpus;
      }
      nlohmann::json run{{"method", t_method},
                         {"scales", t_scales},
                         {"mode", t_mode},
                         {"modulation", t_modulation},
                         {"simplest_scales", t_simplest}};
      tspec.runs = {RunSpec::from_json(run)};
      return report_experiment(run_experiment(tspec, t_out, &std::cout));
    }
  } catch (const InvalidConfig& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}
