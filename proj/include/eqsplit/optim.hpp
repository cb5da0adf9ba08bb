#pragma once

#include <Eigen/Dense>

#include <vector>

#include "eqsplit/group.hpp"

namespace eqsplit {

// Decoupled-weight-decay adaptive optimizer with bias correction and a step
// scheduler that divides the learning rate at fixed epochs.
struct OptimizerState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-8;
  std::vector<Index> schedule_epochs;
  double schedule_factor = 1.0;

  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  long step_count = 0;

  void init(Index param_count);
  void start_epoch(Index epoch);  // applies the step schedule
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
};

}  // namespace eqsplit
