#include "spangrad/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace spangrad {

using nlohmann::json;

void TrainConfig::validate() const {
  if (micro_batch < 1) throw InvalidConfig("micro_batch must be >= 1");
  if (accumulation_steps < 1) {
    throw InvalidConfig("accumulation_steps must be >= 1");
  }
  if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidConfig("learning_rate must be finite and >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidConfig("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidConfig("Adam epsilon must be > 0");
  if (!(weight_decay >= 0.0)) throw InvalidConfig("weight_decay must be >= 0");
  if (eval_every < 0 || max_steps < 0) {
    throw InvalidConfig("eval_every and max_steps must be >= 0");
  }
}

std::vector<double> MetricsLog::losses(const std::string& split) const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r.loss);
  }
  return out;
}

double MetricsLog::min_validation_loss() const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : records) {
    if (r.split == "validation") best = std::min(best, r.loss);
  }
  return best;
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "step,epoch,split,loss,wall_ms\n";
  for (const auto& r : records) {
    out << r.step << ',' << r.epoch << ',' << r.split << ',' << r.loss << ','
        << r.wall_ms << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void MetricsLog::write_manifest(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << metadata.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

AdamOptimizer::AdamOptimizer(const ModelConfig& model, const TrainConfig& train)
    : config_(train),
      m_(ModelState::zeros(model)),
      v_(ModelState::zeros(model)) {
  config_.validate();
}

void AdamOptimizer::step(ModelState& params, const ModelState& grads) {
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;
  const double wd = config_.weight_decay;

  std::vector<const Matrix*> g;
  std::vector<Matrix*> m;
  std::vector<Matrix*> v;
  grads.for_each([&](const std::string&, const Matrix& x) { g.push_back(&x); });
  m_.for_each([&](const std::string&, Matrix& x) { m.push_back(&x); });
  v_.for_each([&](const std::string&, Matrix& x) { v.push_back(&x); });

  std::size_t i = 0;
  params.for_each([&](const std::string& name, Matrix& p) {
    const Matrix& gi = *g.at(i);
    if (gi.rows() != p.rows() || gi.cols() != p.cols()) {
      throw DimensionMismatch("Adam: gradient shape differs for " + name);
    }
    Matrix& mi = *m[i];
    Matrix& vi = *v[i];
    mi = b1 * mi + (1.0 - b1) * gi;
    vi = b2 * vi + (1.0 - b2) * gi.cwiseAbs2();
    if (lr != 0.0) {
      p.array() -= lr * ((mi.array() / c1) /
                             ((vi.array() / c2).sqrt() + eps) +
                         wd * p.array());
    }
    ++i;
  });
}

double evaluate(const ModelState& state, const SequenceDataset& data,
                const ModelConfig& config) {
  if (data.sequences.empty()) {
    throw EmptyCorpus("evaluation set has no windows");
  }
  double total = 0.0;
  for (const auto& window : data.sequences) {
    total += sequence_loss(state, window, config);
  }
  return total / static_cast<double>(data.sequences.size());
}

namespace {

// The step loop allocates and frees many small matrices; keeping freed
// memory mapped avoids a page fault storm on every sequence.
void keep_heap_mapped() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

TrainResult train(const ModelConfig& model, const TrainConfig& train_config,
                  const DatasetSplit& data, const ModelState* initial,
                  const ProgressCallback& progress) {
  keep_heap_mapped();
  model.validate();
  train_config.validate();
  if (data.train.sequences.empty()) {
    throw EmptyCorpus("training set has no windows");
  }

  TrainResult result;
  result.state =
      initial ? *initial : ModelState::initialize(model, train_config.seed);
  AdamOptimizer adam(model, train_config);
  ModelState grads = ModelState::zeros(model);

  MetricsLog& log = result.log;
  log.metadata["model"] = to_json(model);
  log.metadata["train"] = to_json(train_config);
  log.metadata["method"] = model.method_label();
  log.metadata["train_windows"] = data.train.sequences.size();
  log.metadata["validation_windows"] = data.validation.sequences.size();
  log.metadata["parameters"] = result.state.parameter_count();

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - t0)
        .count();
  };
  auto record = [&](MetricRecord r) {
    r.wall_ms = elapsed_ms();
    if (progress) progress(r);
    log.append(std::move(r));
  };
  auto validate_now = [&](long step, long epoch) {
    if (data.validation.sequences.empty()) return;
    record({step, epoch, "validation",
            evaluate(result.state, data.validation, model), 0.0});
  };

  const std::size_t n = data.train.sequences.size();
  const auto batch = static_cast<std::size_t>(train_config.effective_batch());
  std::vector<std::size_t> order(n);
  long step = 0;
  bool done = false;

  for (long epoch = 0; epoch < train_config.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (train_config.shuffle) {
      std::mt19937_64 rng(mix_seed(train_config.seed, 0xe90c + epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      grads.set_zero();
      double loss_sum = 0.0;
      for (std::size_t j = start; j < stop; ++j) {
        ForwardOptions opts;
        opts.dropout = train_config.dropout;
        opts.seed = mix_seed(mix_seed(train_config.seed, step), j - start);
        loss_sum += sequence_step(result.state, data.train.sequences[order[j]],
                                  model, opts, grads);
      }
      const double count = static_cast<double>(stop - start);
      const double loss = loss_sum / count;
      if (!std::isfinite(loss)) {
        log.metadata["diverged_at_step"] = step;
        throw TrainingDiverged(step, loss, log);
      }
      grads.scale(1.0 / count);
      adam.step(result.state, grads);
      ++step;
      record({step, epoch, "train", loss, 0.0});

      if (train_config.eval_every > 0 && step % train_config.eval_every == 0) {
        validate_now(step, epoch);
      }
      if (train_config.max_steps > 0 && step >= train_config.max_steps) {
        done = true;
        break;
      }
    }
    if (train_config.eval_every == 0 || step % train_config.eval_every != 0) {
      validate_now(step, epoch);
    }
  }
  log.metadata["steps"] = step;
  log.metadata["wall_ms"] = elapsed_ms();
  log.metadata["min_validation_loss"] = log.min_validation_loss();
  return result;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const char* what) {
  if (!j.is_object()) {
    throw InvalidConfig(std::string(what) + " must be a JSON object");
  }
  const std::set<std::string> allowed(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw InvalidConfig(std::string("unknown key '") + it.key() + "' in " +
                          what);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw InvalidConfig(std::string("bad value for '") + key + "': " +
                          e.what());
    }
  }
}

}  // namespace

json to_json(const ModelConfig& c) {
  return json{
      {"seq_len", c.seq_len},
      {"model_dim", c.model_dim},
      {"num_heads", c.num_heads},
      {"num_layers", c.num_layers},
      {"ffn_ratio", c.ffn_ratio},
      {"dropout_rate", c.dropout_rate},
      {"vocab_size", c.vocab_size},
      {"causal", c.causal},
      {"grad_method", std::string(to_string(c.grad_method))},
      {"scales", c.scale_config.alpha},
      {"simplest_scales",
       {c.simplest_scales.parallel, c.simplest_scales.orthogonal}},
      {"modulation", c.qkv_modulation.label()},
      {"block_grad_mode", std::string(to_string(c.block_grad_mode))},
      {"ridge_scale", c.ridge_scale},
  };
}

json to_json(const TrainConfig& c) {
  return json{
      {"micro_batch", c.micro_batch},
      {"accumulation_steps", c.accumulation_steps},
      {"epochs", c.epochs},
      {"learning_rate", c.learning_rate},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"epsilon", c.epsilon},
      {"weight_decay", c.weight_decay},
      {"seed", c.seed},
      {"eval_every", c.eval_every},
      {"max_steps", c.max_steps},
      {"shuffle", c.shuffle},
      {"dropout", c.dropout},
  };
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j,
                 {"seq_len", "model_dim", "num_heads", "num_layers",
                  "ffn_ratio", "dropout_rate", "vocab_size", "causal",
                  "grad_method", "scales", "simplest_scales", "modulation",
                  "block_grad_mode", "ridge_scale"},
                 "model config");
  ModelConfig c;
  read(j, "seq_len", c.seq_len);
  read(j, "model_dim", c.model_dim);
  read(j, "num_heads", c.num_heads);
  read(j, "num_layers", c.num_layers);
  read(j, "ffn_ratio", c.ffn_ratio);
  read(j, "dropout_rate", c.dropout_rate);
  read(j, "vocab_size", c.vocab_size);
  read(j, "causal", c.causal);
  read(j, "ridge_scale", c.ridge_scale);
  if (j.contains("grad_method")) {
    c.grad_method = parse_grad_method(j["grad_method"].get<std::string>());
  }
  if (j.contains("scales")) {
    const json& s = j["scales"];
    c.scale_config = s.is_string() ? ScaleConfig::parse(s.get<std::string>())
                                   : ScaleConfig{s.get<std::array<double, 4>>()};
  }
  if (j.contains("simplest_scales")) {
    const auto s = j["simplest_scales"].get<std::array<double, 2>>();
    c.simplest_scales = {s[0], s[1]};
  }
  if (j.contains("modulation")) {
    c.qkv_modulation = QKVModulation::parse(j["modulation"].get<std::string>());
  }
  if (j.contains("block_grad_mode")) {
    c.block_grad_mode =
        parse_block_grad_mode(j["block_grad_mode"].get<std::string>());
  }
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"micro_batch", "accumulation_steps", "epochs",
                  "learning_rate", "beta1", "beta2", "epsilon", "weight_decay",
                  "seed", "eval_every", "max_steps", "shuffle", "dropout"},
                 "train config");
  TrainConfig c;
  read(j, "micro_batch", c.micro_batch);
  read(j, "accumulation_steps", c.accumulation_steps);
  read(j, "epochs", c.epochs);
  read(j, "learning_rate", c.learning_rate);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "epsilon", c.epsilon);
  read(j, "weight_decay", c.weight_decay);
  read(j, "seed", c.seed);
  read(j, "eval_every", c.eval_every);
  read(j, "max_steps", c.max_steps);
  read(j, "shuffle", c.shuffle);
  read(j, "dropout", c.dropout);
  c.validate();
  return c;
}

}  // namespace spangrad
