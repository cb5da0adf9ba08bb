#include "eqsplit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eqsplit {

void OptimizerState::init(Index param_count) {
  first_moment = Eigen::VectorXd::Zero(param_count);
  second_moment = Eigen::VectorXd::Zero(param_count);
  step_count = 0;
}

void OptimizerState::start_epoch(Index epoch) {
  if (schedule_factor <= 0.0) throw std::invalid_argument("OptimizerState: bad schedule factor");
  if (std::find(schedule_epochs.begin(), schedule_epochs.end(), epoch) != schedule_epochs.end())
    learning_rate /= schedule_factor;
}

void OptimizerState::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (params.size() != grad.size() || params.size() != first_moment.size())
    throw std::invalid_argument("OptimizerState::step: shape mismatch");
  if (!grad.allFinite())
    throw std::runtime_error("OptimizerState::step: non-finite gradient, aborting run");

  ++step_count;
  first_moment = beta1 * first_moment + (1.0 - beta1) * grad;
  second_moment = beta2 * second_moment.array() + (1.0 - beta2) * grad.array().square();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  params.array() -= learning_rate * ((first_moment.array() / c1) /
                                     ((second_moment.array() / c2).sqrt() + epsilon) +
                                     weight_decay * params.array());
}

}  // namespace eqsplit
