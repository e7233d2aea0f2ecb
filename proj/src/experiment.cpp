#include "spangrad/experiment.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "spangrad/checkpoint.hpp"
#include "spangrad/corpus.hpp"
#include "spangrad/errors.hpp"

namespace spangrad {

using nlohmann::json;

std::string_view version_string() { return "spangrad 0.1.0"; }

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& what) {
  if (!j.is_object()) throw InvalidConfig(what + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw InvalidConfig("unknown key '" + it.key() + "' in " + what);
    }
  }
}

std::string scales_column(const RunSpec& r) {
  std::string out;
  switch (r.method) {
    case GradMethod::score_decomposition:
    case GradMethod::reductionistic:
      out = r.scales.label();
      break;
    case GradMethod::simplest:
    case GradMethod::unidirectional: {
      std::ostringstream os;
      os << '[' << r.simplest.parallel << ';' << r.simplest.orthogonal << ']';
      out = os.str();
      break;
    }
    case GradMethod::standard:
      break;
  }
  if (!r.modulation.all_enabled()) {
    out += (out.empty() ? "" : " ") + r.modulation.label();
  }
  return out.empty() ? "-" : out;
}

std::string directory_name(const std::string& label, std::size_t index) {
  std::string out;
  for (char c : label) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
                      c == '_' || c == '.';
    out.push_back(keep ? c : '_');
  }
  std::ostringstream os;
  os << std::setw(2) << std::setfill('0') << index << '_' << out;
  return os.str();
}

bool is_standard_baseline(const RunSpec& r) {
  return r.method == GradMethod::standard && r.modulation.all_enabled();
}

}  // namespace

RunSpec RunSpec::from_json(const json& j) {
  reject_unknown(j, {"label", "method", "scales", "simplest_scales", "mode",
                     "modulation"},
                 "run");
  RunSpec r;
  if (j.contains("method")) {
    r.method = parse_grad_method(j["method"].get<std::string>());
  }
  if (j.contains("scales")) {
    const json& s = j["scales"];
    r.scales = s.is_string() ? ScaleConfig::parse(s.get<std::string>())
                             : ScaleConfig{s.get<std::array<double, 4>>()};
  }
  if (j.contains("simplest_scales")) {
    const auto s = j["simplest_scales"].get<std::array<double, 2>>();
    r.simplest = {s[0], s[1]};
  }
  if (j.contains("mode")) {
    r.mode = parse_block_grad_mode(j["mode"].get<std::string>());
  }
  if (j.contains("modulation")) {
    r.modulation = QKVModulation::parse(j["modulation"].get<std::string>());
  }
  r.label = j.value("label", "");
  if (r.label.empty()) {
    r.label = std::string(to_string(r.method));
    if (r.method == GradMethod::score_decomposition ||
        r.method == GradMethod::reductionistic) {
      r.label += r.scales.label();
    }
    if (!r.modulation.all_enabled()) r.label += " " + r.modulation.label();
  }
  r.scales.validate();
  r.simplest.validate();
  return r;
}

json RunSpec::to_json() const {
  return json{{"label", label},
              {"method", std::string(spangrad::to_string(method))},
              {"scales", scales.alpha},
              {"simplest_scales", {simplest.parallel, simplest.orthogonal}},
              {"mode", std::string(spangrad::to_string(mode))},
              {"modulation", modulation.label()}};
}

ModelConfig RunSpec::apply(const ModelConfig& base) const {
  ModelConfig c = base;
  c.grad_method = method;
  c.scale_config = scales;
  c.simplest_scales = simplest;
  c.block_grad_mode = mode;
  c.qkv_modulation = modulation;
  return c;
}

ExperimentSpec ExperimentSpec::from_json(const json& j,
                                         const std::filesystem::path& base_dir) {
  reject_unknown(j, {"label", "model", "train", "corpus_path",
                     "synthetic_corpus", "validation_fraction", "runs",
                     "save_checkpoints"},
                 "experiment spec");
  ExperimentSpec spec;
  spec.label = j.value("label", spec.label);
  if (j.contains("model")) spec.model = model_config_from_json(j["model"]);
  if (j.contains("train")) spec.train = train_config_from_json(j["train"]);
  if (j.contains("corpus_path")) {
    std::filesystem::path p = j["corpus_path"].get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    spec.corpus_path = p;
  }
  if (j.contains("synthetic_corpus")) {
    const json& s = j["synthetic_corpus"];
    reject_unknown(s, {"bytes", "seed"}, "synthetic_corpus");
    SyntheticCorpus sc;
    sc.bytes = s.value("bytes", sc.bytes);
    sc.seed = s.value("seed", sc.seed);
    spec.synthetic_corpus = sc;
  }
  spec.validation_fraction =
      j.value("validation_fraction", spec.validation_fraction);
  spec.save_checkpoints = j.value("save_checkpoints", spec.save_checkpoints);
  if (!j.contains("runs") || !j["runs"].is_array()) {
    throw InvalidConfig("experiment spec needs a 'runs' array");
  }
  for (const json& r : j["runs"]) spec.runs.push_back(RunSpec::from_json(r));
  spec.validate();
  return spec;
}

ExperimentSpec ExperimentSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open experiment spec " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidConfig("malformed experiment spec " + path.string() + ": " +
                        e.what());
  }
  try {
    return from_json(j, path.parent_path());
  } catch (const json::exception& e) {
    throw InvalidConfig("bad experiment spec " + path.string() + ": " +
                        e.what());
  }
}

json ExperimentSpec::to_json() const {
  json j{{"label", label},
         {"model", spangrad::to_json(model)},
         {"train", spangrad::to_json(train)},
         {"validation_fraction", validation_fraction},
         {"save_checkpoints", save_checkpoints},
         {"runs", json::array()}};
  if (corpus_path) j["corpus_path"] = corpus_path->string();
  if (synthetic_corpus) {
    j["synthetic_corpus"] = {{"bytes", synthetic_corpus->bytes},
                             {"seed", synthetic_corpus->seed}};
  }
  for (const auto& r : runs) j["runs"].push_back(r.to_json());
  return j;
}

void ExperimentSpec::validate() const {
  model.validate();
  train.validate();
  if (!corpus_path && !synthetic_corpus) {
    throw InvalidConfig("experiment spec needs corpus_path or synthetic_corpus");
  }
  if (runs.empty()) throw InvalidConfig("experiment spec has no runs");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw InvalidConfig("validation_fraction must lie in (0, 1)");
  }
  std::set<std::string> labels;
  for (const auto& r : runs) {
    if (!labels.insert(r.label).second) {
      throw InvalidConfig("duplicate run label '" + r.label + "'");
    }
    r.apply(model).validate();
  }
}

bool ExperimentResult::all_completed() const {
  for (const auto& r : runs) {
    if (!r.completed) return false;
  }
  return true;
}

double delta_pct(double standard_loss, double run_loss) {
  return (standard_loss - run_loss) / standard_loss * 100.0;
}

ExperimentResult run_experiment(const ExperimentSpec& spec,
                                const std::filesystem::path& out_dir,
                                std::ostream* progress) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<int> tokens;
  std::string corpus_desc;
  if (spec.corpus_path) {
    tokens = ingest_corpus(*spec.corpus_path, spec.model.seq_len).tokens;
    corpus_desc = spec.corpus_path->string();
  } else {
    tokens = encode_bytes(
        synthetic_text(spec.synthetic_corpus->bytes, spec.synthetic_corpus->seed));
    corpus_desc = "synthetic:" + std::to_string(spec.synthetic_corpus->bytes) +
                  "@" + std::to_string(spec.synthetic_corpus->seed);
  }
  const DatasetSplit data =
      split_dataset(tokens, spec.model.seq_len, spec.validation_fraction);

  {
    std::ofstream out(out_dir / "spec.json");
    out << spec.to_json().dump(2) << '\n';
    if (!out) throw IoError("failed writing spec.json");
  }

  ExperimentResult result;
  for (std::size_t i = 0; i < spec.runs.size(); ++i) {
    const RunSpec& run = spec.runs[i];
    const ModelConfig model = run.apply(spec.model);
    const auto run_dir = out_dir / directory_name(run.label, i);
    std::filesystem::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create " + run_dir.string());

    if (progress) {
      *progress << "[" << spec.label << "] run " << (i + 1) << "/"
                << spec.runs.size() << ": " << run.label << " ("
                << model.method_label() << ")\n";
      if (model.needs_projectors() && model.projector_rank_warning()) {
        *progress << "  warning: seq_len < head_dim, projectors are rank "
                     "deficient and rely on the ridge\n";
      }
    }

    RunOutcome outcome;
    outcome.run = run;
    ProgressCallback cb;
    if (progress) {
      cb = [&](const MetricRecord& r) {
        if (r.split == "validation") {
          std::ostringstream line;
          line << "  epoch " << r.epoch << " step " << r.step << " val_loss "
               << std::fixed << std::setprecision(4) << r.loss << " ("
               << std::setprecision(1) << r.wall_ms / 1000.0 << " s)\n";
          *progress << line.str() << std::flush;
        }
      };
    }
    try {
      TrainResult tr = train(model, spec.train, data, nullptr, cb);
      outcome.log = std::move(tr.log);
      outcome.completed = true;
      if (spec.save_checkpoints) {
        save_checkpoint(run_dir / "model.ckpt", model, tr.state);
      }
    } catch (const TrainingDiverged& e) {
      outcome.log = e.log();
      outcome.diverged = true;
      outcome.error = e.what();
    } catch (const Error& e) {
      outcome.error = e.what();
    }
    outcome.min_validation_loss = outcome.log.min_validation_loss();

    MetricsLog& log = outcome.log;
    log.metadata["version"] = std::string(version_string());
    log.metadata["experiment"] = spec.label;
    log.metadata["run"] = run.to_json();
    log.metadata["model"] = to_json(model);
    log.metadata["train"] = to_json(spec.train);
    log.metadata["seed"] = spec.train.seed;
    log.metadata["corpus"] = corpus_desc;
    log.metadata["corpus_tokens"] = tokens.size();
    log.metadata["validation_fraction"] = spec.validation_fraction;
    log.metadata["tokenizer"] = "byte-level, vocab 256 (in place of a BPE vocabulary)";
    log.metadata["completed"] = outcome.completed;
    log.metadata["diverged"] = outcome.diverged;
    if (!outcome.error.empty()) log.metadata["error"] = outcome.error;
    log.write_csv(run_dir / "metrics.csv");
    log.write_manifest(run_dir / "manifest.json");

    if (progress && !outcome.completed) {
      *progress << "  run failed: " << outcome.error << '\n';
    }
    result.runs.push_back(std::move(outcome));
  }

  std::optional<double> baseline;
  for (const auto& r : result.runs) {
    if (is_standard_baseline(r.run) && r.completed) {
      baseline = r.min_validation_loss;
      break;
    }
  }
  for (const auto& r : result.runs) {
    SummaryRow row;
    row.label = r.run.label;
    row.method = std::string(to_string(r.run.method));
    row.scales = scales_column(r.run);
    row.min_val_loss = r.min_validation_loss;
    if (baseline && std::isfinite(r.min_validation_loss)) {
      row.delta_pct_vs_standard = delta_pct(*baseline, r.min_validation_loss);
    }
    result.summary.push_back(std::move(row));
  }

  {
    std::ofstream out(out_dir / "summary.csv");
    out << "label,method,scales,min_val_loss,delta_pct_vs_standard\n";
    for (const auto& row : result.summary) {
      out << '"' << row.label << "\"," << row.method << ",\"" << row.scales
          << "\"," << std::setprecision(10) << row.min_val_loss << ',';
      if (row.delta_pct_vs_standard) {
        out << std::fixed << std::setprecision(4) << *row.delta_pct_vs_standard
            << std::defaultfloat;
      }
      out << '\n';
    }
    if (!out) throw IoError("failed writing summary.csv");
  }
  {
    json j = json::array();
    for (std::size_t i = 0; i < result.summary.size(); ++i) {
      const auto& row = result.summary[i];
      const auto& run = result.runs[i];
      json rj{{"label", row.label},
              {"method", row.method},
              {"scales", row.scales},
              {"min_val_loss", std::isfinite(row.min_val_loss)
                                   ? json(row.min_val_loss)
                                   : json(nullptr)},
              {"completed", run.completed},
              {"diverged", run.diverged}};
      rj["delta_pct_vs_standard"] = row.delta_pct_vs_standard
                                        ? json(*row.delta_pct_vs_standard)
                                        : json(nullptr);
      if (!run.error.empty()) rj["error"] = run.error;
      j.push_back(std::move(rj));
    }
    std::ofstream out(out_dir / "summary.json");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing summary.json");
  }
  if (progress) {
    *progress << "summary written to " << (out_dir / "summary.csv").string()
              << '\n';
  }
  return result;
}

}  // namespace spangrad
