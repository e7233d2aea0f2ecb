#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spangrad/gradients.hpp"
#include "spangrad/linalg.hpp"
#include "spangrad/model_config.hpp"

namespace spangrad {

struct AuditCheck {
  std::string id;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string note;
};

struct AuditReport {
  std::string suite;
  std::uint64_t seed = 0;
  std::vector<AuditCheck> checks;
  double elapsed_ms = 0.0;
  nlohmann::json parameters = nlohmann::json::object();

  // Passes when measured <= tolerance (and measured is finite).
  void add(std::string id, double measured, double tolerance,
           std::string note = {});
  // Passes when `ok` holds; measured and tolerance are informational.
  void add_flag(std::string id, bool ok, double measured, double tolerance,
                std::string note = {});
  void merge(const AuditReport& other);

  bool passed() const;
  nlohmann::json to_json() const;
  void print(std::ostream& out) const;
  void write_json(const std::filesystem::path& path) const;
};

// Central differences of a scalar function of one matrix, entry by entry.
Matrix central_difference(const std::function<double(const Matrix&)>& f,
                          const Matrix& x, double h);

// Suites: projector, blocks, orthogonality, vanishing, reconstruction,
// gradcheck, all.
struct VerifyOptions {
  std::string suite = "all";
  std::optional<Index> seq_len;  // unset: projector/blocks sweep T in {8,16,32}
  std::optional<Index> dim;      // unset: projector/blocks sweep d in {2,4,8}
  std::uint64_t seed = 7;
  std::optional<double> tolerance;  // overrides every per-check default
  int instances = 100;              // random instances for the property suites
};

AuditReport run_verify(const VerifyOptions& options);

struct GradcheckOptions {
  GradMethod method = GradMethod::score_decomposition;
  ScaleConfig scales;
  SimplestScales simplest;
  BlockGradMode mode = BlockGradMode::routed;
  std::uint64_t seed = 7;
  Index seq_len = 8;
  Index dim = 2;
  double step = 1e-5;
  std::optional<double> tolerance;  // default 1e-7 for standard, else 1e-6
  bool causal = true;
};

// Analytic gradients against central differences of surrogate losses whose
// exact gradients are the quantities under test. Errors are Frobenius norms
// of the difference divided by the largest of the analytic norm, the
// numerical norm and the norm of the full gradient of the same tensor, so
// components that are zero by construction are judged on the scale of the
// gradient they belong to.
AuditReport run_gradcheck(const GradcheckOptions& options);

// End-to-end parameter gradcheck of a small model (dropout off) through the
// configured gradient method, which must be exact (standard or score with
// routed unit scales). Checks every parameter tensor.
AuditReport run_model_gradcheck(const ModelConfig& config, std::uint64_t seed,
                                double step, double tolerance);

struct DecomposeOptions {
  std::uint64_t seed = 7;
  Index seq_len = 16;
  Index dim = 4;
  std::optional<std::filesystem::path> q_csv;  // explicit inputs override the seed
  std::optional<std::filesystem::path> k_csv;
  std::optional<std::filesystem::path> v_csv;
  bool v_equals_k = false;
  bool zero_q = false;
  std::filesystem::path out_dir = "decompose_out";
};

struct DecomposeResult {
  std::vector<double> block_norms;  // Frobenius norm per block, B = 1..8
  std::vector<double> order_sq_norms;
  Matrix inner_products;            // 8 x 8
  double score_sq_norm = 0.0;       // ||S||_F^2
  double exception_cross_sum = 0.0; // 2 * sum of exception-pair inner products
  double reconstruction_error = 0.0;
};

DecomposeResult run_decompose(const DecomposeOptions& options);

Matrix read_csv_matrix(const std::filesystem::path& path);
void write_csv_matrix(const std::filesystem::path& path, const Matrix& m);

}  // namespace spangrad
