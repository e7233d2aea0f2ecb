#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "spangrad/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "spangrad_experiment_test" / name;
  fs::remove_all(dir);
  return dir;
}

json small_spec(json runs) {
  return {{"label", "small"},
          {"model", {{"seq_len", 16}, {"model_dim", 16}, {"num_heads", 2},
                     {"num_layers", 1}, {"dropout_rate", 0.1}}},
          {"train", {{"micro_batch", 4}, {"accumulation_steps", 2}, {"epochs", 1},
                     {"learning_rate", 1e-3}, {"max_steps", 12}, {"eval_every", 4}}},
          {"synthetic_corpus", {{"bytes", 8000}, {"seed", 5}}},
          {"runs", std::move(runs)}};
}

const spangrad::SummaryRow& row(const spangrad::ExperimentResult& r, const std::string& label) {
  for (const auto& s : r.summary) {
    if (s.label == label) return s;
  }
  throw std::runtime_error("missing row " + label);
}

TEST(Experiment, UnitScalesMatchStandard) {
  const auto spec = spangrad::ExperimentSpec::from_json(small_spec(
      json::array({{{"label", "std"}, {"method", "standard"}},
                   {{"label", "ones"}, {"method", "score"}, {"scales", "1111"}}})));
  const fs::path out = scratch("unit_scales");
  const auto r = spangrad::run_experiment(spec, out);
  ASSERT_TRUE(r.all_completed());
  ASSERT_TRUE(row(r, "ones").delta_pct_vs_standard.has_value());
  EXPECT_NEAR(*row(r, "ones").delta_pct_vs_standard, 0.0, 1e-4);
  EXPECT_EQ(*row(r, "std").delta_pct_vs_standard, 0.0);
  EXPECT_TRUE(fs::exists(out / "summary.csv"));
  EXPECT_TRUE(fs::exists(out / "summary.json"));
  EXPECT_TRUE(fs::exists(out / "spec.json"));
  EXPECT_TRUE(fs::exists(out / "00_std" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(out / "01_ones" / "manifest.json"));
  std::ifstream in(out / "summary.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "label,method,scales,min_val_loss,delta_pct_vs_standard");
}

TEST(Experiment, ValueOnlyLimitsAgree) {
  const auto spec = spangrad::ExperimentSpec::from_json(small_spec(
      json::array({{{"label", "v_only"}, {"method", "standard"}, {"modulation", "QKV001"}},
                   {{"label", "zeros"}, {"method", "score"}, {"scales", "0000"}}})));
  const auto r = spangrad::run_experiment(spec, scratch("value_only"));
  ASSERT_TRUE(r.all_completed());
  const auto a = r.runs[0].log.losses("train");
  const auto b = r.runs[1].log.losses("train");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LE(std::abs(a[i] - b[i]), 1e-10 * std::abs(a[i])) << i;
  }
  const auto va = r.runs[0].log.losses("validation");
  const auto vb = r.runs[1].log.losses("validation");
  ASSERT_EQ(va.size(), vb.size());
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_LE(std::abs(va[i] - vb[i]), 1e-10);
  EXPECT_FALSE(row(r, "v_only").delta_pct_vs_standard.has_value());
}

TEST(Experiment, DeltaConvention) {
  EXPECT_NEAR(spangrad::delta_pct(5.0, 4.9), 2.0, 1e-12);
  EXPECT_NEAR(spangrad::delta_pct(5.0, 5.1), -2.0, 1e-12);
}

TEST(Experiment, CheckpointsWhenRequested) {
  json j = small_spec(json::array({{{"label", "std"}, {"method", "standard"}}}));
  j["save_checkpoints"] = true;
  j["train"]["max_steps"] = 2;
  const fs::path out = scratch("checkpoints");
  spangrad::run_experiment(spangrad::ExperimentSpec::from_json(j), out);
  EXPECT_TRUE(fs::exists(out / "00_std" / "model.ckpt"));
}

TEST(ExperimentSpec, RejectsBadInput) {
  EXPECT_THROW(spangrad::ExperimentSpec::from_json(small_spec(json::array())),
               spangrad::InvalidConfig);
  EXPECT_THROW(spangrad::ExperimentSpec::from_json(small_spec(
                   json::array({{{"label", "a"}, {"method", "standard"}},
                                {{"label", "a"}, {"method", "standard"}}}))),
               spangrad::InvalidConfig);
  EXPECT_THROW(spangrad::ExperimentSpec::from_json(small_spec(
                   json::array({{{"method", "score"}, {"scales", "12"}}}))),
               spangrad::InvalidConfig);
  json unknown = small_spec(json::array({{{"method", "standard"}}}));
  unknown["learning_rate"] = 1.0;
  EXPECT_THROW(spangrad::ExperimentSpec::from_json(unknown), spangrad::InvalidConfig);
}

TEST(ExperimentSpec, RoundTripsThroughJson) {
  const auto spec = spangrad::ExperimentSpec::from_json(small_spec(
      json::array({{{"method", "score"}, {"scales", "1000"}},
                   {{"method", "simplest"}, {"simplest_scales", {1.0, 0.5}}}})));
  EXPECT_EQ(spec.runs.size(), 2u);
  EXPECT_FALSE(spec.runs[0].label.empty());
  EXPECT_NE(spec.runs[0].label, spec.runs[1].label);
  const auto back = spangrad::ExperimentSpec::from_json(spec.to_json());
  EXPECT_EQ(back.to_json(), spec.to_json());
}

TEST(ExperimentSpec, RelativeCorpusPath) {
  const fs::path dir = scratch("relative");
  fs::create_directories(dir);
  std::ofstream(dir / "corpus.txt") << std::string(4000, 'x');
  json j = small_spec(json::array({{{"method", "standard"}}}));
  j.erase("synthetic_corpus");
  j["corpus_path"] = "corpus.txt";
  std::ofstream(dir / "spec.json") << j.dump();
  const auto spec = spangrad::ExperimentSpec::load(dir / "spec.json");
  ASSERT_TRUE(spec.corpus_path.has_value());
  EXPECT_EQ(fs::weakly_canonical(*spec.corpus_path), fs::weakly_canonical(dir / "corpus.txt"));
}

}  // namespace
