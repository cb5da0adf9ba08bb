#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "eqsplit/losses.hpp"
#include "eqsplit/operators.hpp"
#include "eqsplit/optim.hpp"
#include "eqsplit/reconstructors.hpp"

namespace eqsplit {

// Measurements for one fixed operator, with optional ground truth (supervised
// training and PSNR evaluation) and an optional held-out slice.
struct Dataset {
  Eigen::MatrixXd x;  // n x N, may be empty for self-supervised data
  Eigen::MatrixXd y;  // m x N
  Eigen::MatrixXd x_val, y_val;
  const ForwardOperator* op = nullptr;

  Index size() const { return y.cols(); }
  bool has_ground_truth() const { return x.cols() == y.cols() && x.cols() > 0; }
};

struct TrainOptions {
  Index epochs = 1;
  Index batch_size = 32;
  double learning_rate = 1e-3;
  std::vector<Index> schedule_epochs;
  double schedule_factor = 1.0;
  std::uint64_t seed = 0;
  double divergence_abort = 1e8;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> val_psnr;  // NaN entries when no validation ground truth
};

// Deterministic mini-batch loop: per-item loss seeds derive from
// (seed, epoch, item), batches average gradients, updates are AdamW steps.
TrainHistory train(Reconstructor& f, const Dataset& data, const LossSpec& spec,
                   const TrainOptions& opt);

// Mean PSNR (peak 1.0) of f over (x, y) columns.
double mean_psnr(const Reconstructor& f, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                 const ForwardOperator& op);

}  // namespace eqsplit
