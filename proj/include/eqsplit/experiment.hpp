#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eqsplit/group.hpp"
#include "eqsplit/losses.hpp"
#include "eqsplit/metrics.hpp"
#include "eqsplit/operators.hpp"
#include "eqsplit/reconstructors.hpp"
#include "eqsplit/train.hpp"

namespace eqsplit {

inline constexpr int kConfigSchemaVersion = 1;

struct GroupSpec {
  std::string kind = "shift";  // shift | dihedral | trivial
  Index width = 0, height = 1, side = 0, n = 0;
};

struct DatasetSpec {
  std::string type = "synthetic-prior";  // mnist | synthetic-prior
  std::string images_path, labels_path;  // mnist
  Index side = 16;                       // synthetic-prior
  Index components = 3;
  std::uint64_t prior_seed = 7;
  Index train_count = 128;
  Index test_count = 32;
};

struct OperatorSpec {
  double compression = 0.5;  // compressive-sensing: m = n (1 - compression)
  double keep_prob = 0.3;    // inpainting mask density
  double accel = 4.0;        // dft-subsample: keep ~1/accel of frequencies
  std::uint64_t seed = 1;
};

struct ModelSpec {
  std::string arch = "conv-mlp";
  Index channels = 8;
  Index layers = 3;
  Index hidden = 32;
  bool equivariant = true;
  std::uint64_t seed = 0;
};

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::string run_id = "run";
  std::string problem = "compressive-sensing";  // | inpainting | dft-subsample
  DatasetSpec dataset;
  OperatorSpec op;
  double noise_sigma = 0.0;
  GroupSpec group;
  ModelSpec model;
  std::string loss_kind = "es";
  double lambda = 1.0;
  double alpha = 0.5;
  SplitRule rule;
  int sure_probes = 1;
  TrainOptions train_options;
  Index test_time_splits = 0;  // J > 0: evaluate via the split-averaged estimator
  std::string output_dir = "runs/out";
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

GroupAction build_group(const GroupSpec& spec);

// Shift-invariant synthetic image distribution: smooth mixture samples pushed
// through a uniform random translation, clamped to [0, 1].
Eigen::MatrixXd sample_synthetic_prior(const DatasetSpec& spec, Index count,
                                       std::uint64_t seed);

struct Problem {
  GroupAction action;
  ForwardOperator op;
  Dataset data;
  Index width = 0, height = 0;
};

// Materializes group, operator and (train, test) measurement sets.
Problem build_problem(const RunConfig& config);

struct RunResult {
  MetricRow final_row;
  TrainHistory history;
  std::string checkpoint_path;
};

// Train per the config; writes history.csv, metrics.csv and a checkpoint
// under output_dir. Also reused by the acceptance experiments.
RunResult run_experiment(const RunConfig& config);

std::shared_ptr<Reconstructor> build_model(const ModelSpec& spec, const Problem& problem);

// Metrics of a model over the problem's test split; j > 0 switches to the
// test-time average over splits (and noise draws when sigma > 0).
MetricRow evaluate_model(const Reconstructor& model, const Problem& problem,
                         const RunConfig& config, Index test_time_splits);

// Downloads the four MNIST IDX files over HTTP, unpacks them and records
// SHA-256 checksums; never called implicitly.
void fetch_mnist(const std::string& directory);

std::string sha256_file(const std::string& path);

}  // namespace eqsplit
