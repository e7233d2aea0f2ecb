#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "spangrad/corpus.hpp"
#include "spangrad/training.hpp"

namespace {

using spangrad::DatasetSplit;
using spangrad::Matrix;
using spangrad::ModelConfig;
using spangrad::ModelState;
using spangrad::TrainConfig;

ModelConfig small_model() {
  ModelConfig c;
  c.seq_len = 16;
  c.model_dim = 16;
  c.num_heads = 2;
  c.num_layers = 1;
  c.dropout_rate = 0.0;
  return c;
}

DatasetSplit small_data(Eigen::Index t, std::size_t bytes = 6000) {
  const auto tokens = spangrad::encode_bytes(spangrad::synthetic_text(bytes, 11));
  return spangrad::split_dataset(tokens, t, 0.2);
}

TrainConfig quick_train() {
  TrainConfig t;
  t.micro_batch = 4;
  t.accumulation_steps = 2;
  t.epochs = 1;
  t.learning_rate = 1e-3;
  t.max_steps = 5;
  t.dropout = false;
  return t;
}

bool bitwise_equal(const ModelState& a, const ModelState& b) {
  std::vector<Matrix> left;
  a.for_each([&](const std::string&, const Matrix& m) { left.push_back(m); });
  std::size_t i = 0;
  bool same = true;
  b.for_each([&](const std::string&, const Matrix& m) { same = same && m == left[i++]; });
  return same;
}

double max_abs_diff(const ModelState& a, const ModelState& b) {
  std::vector<Matrix> left;
  a.for_each([&](const std::string&, const Matrix& m) { left.push_back(m); });
  std::size_t i = 0;
  double worst = 0.0;
  b.for_each([&](const std::string&, const Matrix& m) {
    worst = std::max(worst, (m - left[i++]).cwiseAbs().maxCoeff());
  });
  return worst;
}

TEST(Train, ZeroLearningRateKeepsWeights) {
  const ModelConfig c = small_model();
  TrainConfig t = quick_train();
  t.learning_rate = 0.0;
  const ModelState init = ModelState::initialize(c, 5);
  const auto r = spangrad::train(c, t, small_data(c.seq_len), &init);
  EXPECT_TRUE(bitwise_equal(r.state, init));
  EXPECT_EQ(r.log.losses("train").size(), 5u);
}

TEST(Train, AccumulationMatchesLargerMicroBatch) {
  const ModelConfig c = small_model();
  const DatasetSplit data = small_data(c.seq_len);
  const ModelState init = ModelState::initialize(c, 6);
  TrainConfig a = quick_train();
  a.micro_batch = 4;
  a.accumulation_steps = 1;
  TrainConfig b = a;
  b.micro_batch = 1;
  b.accumulation_steps = 4;
  const auto ra = spangrad::train(c, a, data, &init);
  const auto rb = spangrad::train(c, b, data, &init);
  EXPECT_LE(max_abs_diff(ra.state, rb.state), 1e-12);
  EXPECT_EQ(ra.log.losses("train"), rb.log.losses("train"));
}

TEST(Train, Deterministic) {
  ModelConfig c = small_model();
  c.dropout_rate = 0.1;
  TrainConfig t = quick_train();
  t.dropout = true;
  const DatasetSplit data = small_data(c.seq_len);
  const auto a = spangrad::train(c, t, data);
  const auto b = spangrad::train(c, t, data);
  EXPECT_TRUE(bitwise_equal(a.state, b.state));
  EXPECT_EQ(a.log.losses("train"), b.log.losses("train"));
}

TEST(Train, OverfitsRepeatedByte) {
  ModelConfig c = small_model();
  TrainConfig t;
  t.micro_batch = 4;
  t.accumulation_steps = 1;
  t.epochs = 1000;
  t.max_steps = 200;
  t.learning_rate = 3e-3;
  t.dropout = false;
  const std::vector<int> tokens(400, 'a');
  const auto data = spangrad::split_dataset(tokens, c.seq_len, 0.25);
  const auto r = spangrad::train(c, t, data);
  const auto losses = r.log.losses("train");
  ASSERT_EQ(losses.size(), 200u);
  EXPECT_GT(losses.front(), 4.0);
  EXPECT_LT(losses.back(), 0.01);
  EXPECT_LT(spangrad::evaluate(r.state, data.validation, c), 0.01);
}

TEST(Train, NonFiniteLossRaisesDivergence) {
  const ModelConfig c = small_model();
  ModelState init = ModelState::initialize(c, 7);
  init.vocab_projection(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    spangrad::train(c, quick_train(), small_data(c.seq_len), &init);
    FAIL() << "expected divergence";
  } catch (const spangrad::TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 0);
    EXPECT_TRUE(std::isnan(e.loss()));
  }
}

TEST(Train, ValidationEveryEpochAndInterval) {
  const ModelConfig c = small_model();
  TrainConfig t = quick_train();
  t.max_steps = 0;
  t.epochs = 2;
  const DatasetSplit data = small_data(c.seq_len, 3000);
  const auto r = spangrad::train(c, t, data);
  EXPECT_EQ(r.log.losses("validation").size(), 2u);
  t.eval_every = 3;
  const auto r2 = spangrad::train(c, t, data);
  EXPECT_GT(r2.log.losses("validation").size(), 2u);
  EXPECT_TRUE(std::isfinite(r2.log.min_validation_loss()));
}

TEST(Evaluate, ZeroModelIsUniform) {
  const ModelConfig c = small_model();
  const DatasetSplit data = small_data(c.seq_len);
  EXPECT_NEAR(spangrad::evaluate(ModelState::zeros(c), data.validation, c),
              std::log(256.0), 1e-12);
}

TEST(Evaluate, DuplicatedSetHasSameLoss) {
  const ModelConfig c = small_model();
  const DatasetSplit data = small_data(c.seq_len);
  const ModelState s = ModelState::initialize(c, 8);
  spangrad::SequenceDataset doubled = data.validation;
  doubled.sequences.insert(doubled.sequences.end(), data.validation.sequences.begin(),
                           data.validation.sequences.end());
  EXPECT_NEAR(spangrad::evaluate(s, doubled, c),
              spangrad::evaluate(s, data.validation, c), 1e-14);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ModelConfig c = small_model();
  TrainConfig t;
  t.learning_rate = 0.01;
  spangrad::AdamOptimizer adam(c, t);
  ModelState p = ModelState::zeros(c);
  ModelState g = ModelState::zeros(c);
  g.token_embedding(3, 2) = 5.0;
  g.token_embedding(4, 1) = -0.5;
  adam.step(p, g);
  EXPECT_NEAR(p.token_embedding(3, 2), -0.01, 1e-10);
  EXPECT_NEAR(p.token_embedding(4, 1), 0.01, 1e-9);
  EXPECT_EQ(p.token_embedding(0, 0), 0.0);
  EXPECT_EQ(adam.steps_taken(), 1);
}

TEST(Adam, WeightDecayShrinksWeights) {
  ModelConfig c = small_model();
  TrainConfig t;
  t.learning_rate = 0.1;
  t.weight_decay = 0.5;
  spangrad::AdamOptimizer adam(c, t);
  ModelState p = ModelState::zeros(c);
  p.final_ln_gain.setConstant(2.0);
  adam.step(p, ModelState::zeros(c));
  EXPECT_NEAR(p.final_ln_gain(0, 0), 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  EXPECT_EQ(t.effective_batch(), 128);
  t.micro_batch = 0;
  EXPECT_THROW(t.validate(), spangrad::InvalidConfig);
  t = TrainConfig{};
  t.learning_rate = -1.0;
  EXPECT_THROW(t.validate(), spangrad::InvalidConfig);
  t = TrainConfig{};
  t.beta2 = 1.0;
  EXPECT_THROW(t.validate(), spangrad::InvalidConfig);
}

TEST(ConfigJson, RoundTrips) {
  ModelConfig c = small_model();
  c.grad_method = spangrad::GradMethod::score_decomposition;
  c.scale_config = spangrad::ScaleConfig::parse("1100");
  c.qkv_modulation = spangrad::QKVModulation::parse("QKV101");
  const ModelConfig back = spangrad::model_config_from_json(spangrad::to_json(c));
  EXPECT_EQ(spangrad::to_json(back), spangrad::to_json(c));
  TrainConfig t = quick_train();
  t.weight_decay = 0.01;
  EXPECT_EQ(spangrad::to_json(spangrad::train_config_from_json(spangrad::to_json(t))),
            spangrad::to_json(t));
}

TEST(ConfigJson, RejectsUnknownKeys) {
  EXPECT_THROW(spangrad::model_config_from_json({{"seq_length", 4}}),
               spangrad::InvalidConfig);
  EXPECT_THROW(spangrad::train_config_from_json({{"lr_schedule", "cosine"}}),
               spangrad::InvalidConfig);
}

TEST(MetricsLog, WritesCsvAndManifest) {
  spangrad::MetricsLog log;
  log.append({1, 0, "train", 5.0, 10.0});
  log.append({1, 0, "validation", 4.5, 12.0});
  log.append({2, 0, "validation", 4.0, 20.0});
  EXPECT_EQ(log.min_validation_loss(), 4.0);
  EXPECT_EQ(log.losses("train"), std::vector<double>{5.0});
  const auto dir = std::filesystem::temp_directory_path() / "spangrad_metrics_test";
  std::filesystem::create_directories(dir);
  log.write_csv(dir / "metrics.csv");
  log.write_manifest(dir / "manifest.json");
  std::ifstream in(dir / "metrics.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,epoch,split,loss,wall_ms");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  EXPECT_TRUE(std::isinf(spangrad::MetricsLog{}.min_validation_loss()));
}

}  // namespace
