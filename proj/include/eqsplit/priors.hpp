#pragma once

#include <Eigen/Dense>

#include <vector>

#include "eqsplit/group.hpp"
#include "eqsplit/operators.hpp"

namespace eqsplit {

// Finite atom prior; symmetrized priors are closed under the group action with
// matched weights, which makes the invariance assumption hold exactly.
struct DiscretePrior {
  Eigen::MatrixXd atoms;  // n x K, one atom per column
  Eigen::VectorXd weights;
  bool symmetrized = false;
  const GroupAction* action = nullptr;

  Index dim() const { return atoms.rows(); }
  Index count() const { return atoms.cols(); }
};

struct GaussianMixturePrior {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  Eigen::VectorXd weights;
  bool symmetrized = false;
  const GroupAction* action = nullptr;

  Index dim() const { return means.empty() ? 0 : means.front().size(); }
  Index count() const { return static_cast<Index>(means.size()); }
};

// Uniform mixture over g of the T_g-pushforward; exact closure by construction.
DiscretePrior symmetrize(const DiscretePrior& prior, const GroupAction& action);
GaussianMixturePrior symmetrize(const GaussianMixturePrior& prior, const GroupAction& action);

double log_density(const GaussianMixturePrior& prior, const Eigen::Ref<const Eigen::VectorXd>& x);

// Exact E[x | y, A]. For sigma > 0 atom weights are Bayes weights computed in
// log space; for sigma = 0 only atoms with ||A x_i - y||_inf <= 1e-9 count,
// averaged with their prior weights.
Eigen::VectorXd posterior_mean_discrete(const DiscretePrior& prior,
                                        const Eigen::Ref<const Eigen::VectorXd>& y,
                                        const ForwardOperator& a, double sigma);

// Exact mixture posterior mean via per-component Gaussian conditioning.
Eigen::VectorXd posterior_mean_gmm(const GaussianMixturePrior& prior,
                                   const Eigen::Ref<const Eigen::VectorXd>& y,
                                   const ForwardOperator& a, double sigma);

// argmin ||Ax - y||^2/(2 sigma^2) + (x-mu)^T Sigma^{-1} (x-mu)/2 for a single
// Gaussian prior; SPD solve.
Eigen::VectorXd map_gaussian(const Eigen::Ref<const Eigen::VectorXd>& mean,
                             const Eigen::Ref<const Eigen::MatrixXd>& cov,
                             const Eigen::Ref<const Eigen::VectorXd>& y, const ForwardOperator& a,
                             double sigma);

// Group-averaged SPD matrix; commutes with every T_g, so a Gaussian with this
// covariance and an invariant mean is an invariant prior.
Eigen::MatrixXd invariant_covariance(const Eigen::MatrixXd& base, const GroupAction& action,
                                     double ridge = 1e-6);

}  // namespace eqsplit
