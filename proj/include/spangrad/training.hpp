#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spangrad/corpus.hpp"
#include "spangrad/errors.hpp"
#include "spangrad/model.hpp"
#include "spangrad/model_config.hpp"

namespace spangrad {

struct TrainConfig {
  Index micro_batch = 16;
  Index accumulation_steps = 8;  // effective batch = micro_batch * this
  Index epochs = 5;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 1234;
  Index eval_every = 0;  // optimizer steps between validation passes; 0 = per epoch only
  Index max_steps = 0;   // 0 = no limit
  bool shuffle = true;
  bool dropout = true;

  Index effective_batch() const { return micro_batch * accumulation_steps; }
  void validate() const;
};

struct MetricRecord {
  long step = 0;
  long epoch = 0;
  std::string split;  // "train" or "validation"
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct MetricsLog {
  std::vector<MetricRecord> records;
  nlohmann::json metadata = nlohmann::json::object();

  void append(MetricRecord record) { records.push_back(std::move(record)); }
  std::vector<double> losses(const std::string& split) const;
  // +inf when there is no validation record.
  double min_validation_loss() const;
  void write_csv(const std::filesystem::path& path) const;
  void write_manifest(const std::filesystem::path& path) const;
};

// Adam with bias correction and optional decoupled weight decay.
class AdamOptimizer {
 public:
  AdamOptimizer(const ModelConfig& model, const TrainConfig& train);

  void step(ModelState& params, const ModelState& grads);
  long steps_taken() const { return t_; }

 private:
  TrainConfig config_;
  ModelState m_;
  ModelState v_;
  long t_ = 0;
};

// Raised by train() with everything logged up to the divergent step.
class TrainingDiverged : public DivergenceDetected {
 public:
  TrainingDiverged(long step, double loss, MetricsLog log)
      : DivergenceDetected(step, loss), log_(std::move(log)) {}
  const MetricsLog& log() const { return log_; }

 private:
  MetricsLog log_;
};

struct TrainResult {
  ModelState state;
  MetricsLog log;
};

using ProgressCallback = std::function<void(const MetricRecord&)>;

// Mean loss over all positions of all windows, dropout off.
double evaluate(const ModelState& state, const SequenceDataset& data,
                const ModelConfig& config);

// Each optimizer step sums micro-batch gradients in sequence order and
// divides by the number of sequences in the step. Dropout masks depend only
// on (seed, step, position in batch), so runs that differ only in gradient
// method see identical masks and data order.
TrainResult train(const ModelConfig& model, const TrainConfig& train_config,
                  const DatasetSplit& data, const ModelState* initial = nullptr,
                  const ProgressCallback& progress = {});

nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const TrainConfig& config);
// Unknown keys are rejected; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace spangrad
