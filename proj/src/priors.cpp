#include "eqsplit/priors.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace eqsplit {

namespace {

constexpr double kConsistencyTol = 1e-9;

Eigen::VectorXd normalized_log_weights(Eigen::VectorXd logw) {
  const double top = logw.maxCoeff();
  Eigen::VectorXd w = (logw.array() - top).exp();
  return w / w.sum();
}

Eigen::MatrixXd permute_sym(const Eigen::MatrixXd& s, const std::vector<Index>& perm) {
  // T S T^T for permutation T with rows e_{perm[i]}: out(i, j) = S(perm[i], perm[j])
  const Index n = s.rows();
  Eigen::MatrixXd out(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) out(i, j) = s(perm[i], perm[j]);
  return out;
}

}  // namespace

DiscretePrior symmetrize(const DiscretePrior& prior, const GroupAction& action) {
  if (prior.dim() != action.n()) throw std::invalid_argument("symmetrize: dimension mismatch");
  if (std::abs(prior.weights.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("symmetrize: weights must sum to 1");

  std::vector<Eigen::VectorXd> atoms;
  std::vector<double> weights;
  const double scale = 1.0 / static_cast<double>(action.order());
  for (Index k = 0; k < prior.count(); ++k) {
    for (Index g = 0; g < action.order(); ++g) {
      Eigen::VectorXd moved = action.apply({g}, prior.atoms.col(k));
      bool merged = false;
      for (std::size_t i = 0; i < atoms.size(); ++i) {
        // permutations are exact, so bitwise dedup is safe
        if ((atoms[i].array() == moved.array()).all()) {
          weights[i] += scale * prior.weights[k];
          merged = true;
          break;
        }
      }
      if (!merged) {
        atoms.push_back(std::move(moved));
        weights.push_back(scale * prior.weights[k]);
      }
    }
  }

  DiscretePrior out;
  out.atoms.resize(prior.dim(), static_cast<Index>(atoms.size()));
  out.weights.resize(static_cast<Index>(atoms.size()));
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    out.atoms.col(static_cast<Index>(i)) = atoms[i];
    out.weights[static_cast<Index>(i)] = weights[i];
  }
  out.symmetrized = true;
  out.action = &action;
  return out;
}

GaussianMixturePrior symmetrize(const GaussianMixturePrior& prior, const GroupAction& action) {
  if (prior.dim() != action.n()) throw std::invalid_argument("symmetrize: dimension mismatch");
  GaussianMixturePrior out;
  std::vector<double> weights;
  const double scale = 1.0 / static_cast<double>(action.order());
  for (Index k = 0; k < prior.count(); ++k) {
    for (Index g = 0; g < action.order(); ++g) {
      const auto& perm = action.permutation({g});
      Eigen::VectorXd mean = action.apply({g}, prior.means[k]);
      Eigen::MatrixXd cov = permute_sym(prior.covariances[k], perm);
      bool merged = false;
      for (std::size_t i = 0; i < out.means.size(); ++i) {
        if ((out.means[i].array() == mean.array()).all() &&
            (out.covariances[i].array() == cov.array()).all()) {
          weights[i] += scale * prior.weights[k];
          merged = true;
          break;
        }
      }
      if (!merged) {
        out.means.push_back(std::move(mean));
        out.covariances.push_back(std::move(cov));
        weights.push_back(scale * prior.weights[k]);
      }
    }
  }
  out.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Index>(weights.size()));
  out.symmetrized = true;
  out.action = &action;
  return out;
}

double log_density(const GaussianMixturePrior& prior, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Index n = prior.dim();
  Eigen::VectorXd logs(prior.count());
  for (Index k = 0; k < prior.count(); ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(prior.covariances[k]);
    if (llt.info() != Eigen::Success) throw std::runtime_error("log_density: covariance not SPD");
    const Eigen::VectorXd r = x - prior.means[k];
    const Eigen::VectorXd half = llt.matrixL().solve(r);
    double logdet = 0.0;
    for (Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    logs[k] = std::log(prior.weights[k]) - 0.5 * half.squaredNorm() - 0.5 * logdet -
              0.5 * n * std::log(2.0 * std::numbers::pi);
  }
  const double top = logs.maxCoeff();
  return top + std::log((logs.array() - top).exp().sum());
}

Eigen::VectorXd posterior_mean_discrete(const DiscretePrior& prior,
                                        const Eigen::Ref<const Eigen::VectorXd>& y,
                                        const ForwardOperator& a, double sigma) {
  if (!prior.symmetrized)
    throw std::invalid_argument("posterior_mean_discrete: prior must be symmetrized");
  if (prior.dim() != a.n || y.size() != a.m)
    throw std::invalid_argument("posterior_mean_discrete: dimension mismatch");
  if (sigma < 0.0) throw std::invalid_argument("posterior_mean_discrete: negative sigma");

  if (sigma == 0.0) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(prior.dim());
    double mass = 0.0;
    for (Index k = 0; k < prior.count(); ++k) {
      const double err = (a.matrix * prior.atoms.col(k) - y).lpNorm<Eigen::Infinity>();
      if (err <= kConsistencyTol) {
        mean += prior.weights[k] * prior.atoms.col(k);
        mass += prior.weights[k];
      }
    }
    if (mass == 0.0)
      throw std::runtime_error("posterior_mean_discrete: no atom consistent with noiseless y");
    return mean / mass;
  }

  Eigen::VectorXd logw(prior.count());
  for (Index k = 0; k < prior.count(); ++k) {
    const double d2 = (a.matrix * prior.atoms.col(k) - y).squaredNorm();
    logw[k] = std::log(prior.weights[k]) - d2 / (2.0 * sigma * sigma);
  }
  return prior.atoms * normalized_log_weights(std::move(logw));
}

Eigen::VectorXd posterior_mean_gmm(const GaussianMixturePrior& prior,
                                   const Eigen::Ref<const Eigen::VectorXd>& y,
                                   const ForwardOperator& a, double sigma) {
  if (prior.dim() != a.n || y.size() != a.m)
    throw std::invalid_argument("posterior_mean_gmm: dimension mismatch");
  const Index m = a.m;
  const Index k_count = prior.count();

  Eigen::VectorXd logev(k_count);
  Eigen::MatrixXd means(prior.dim(), k_count);
  for (Index k = 0; k < k_count; ++k) {
    const Eigen::MatrixXd cross = prior.covariances[k] * a.matrix.transpose();
    Eigen::MatrixXd evidence = a.matrix * cross;
    evidence.diagonal().array() += sigma * sigma;
    Eigen::LLT<Eigen::MatrixXd> llt(evidence);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("posterior_mean_gmm: singular evidence covariance");
    const Eigen::VectorXd r = y - a.matrix * prior.means[k];
    const Eigen::VectorXd half = llt.matrixL().solve(r);
    double logdet = 0.0;
    for (Index i = 0; i < m; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    logev[k] = std::log(prior.weights[k]) - 0.5 * half.squaredNorm() - 0.5 * logdet -
               0.5 * m * std::log(2.0 * std::numbers::pi);
    means.col(k) = prior.means[k] + cross * llt.solve(r);
  }
  return means * normalized_log_weights(std::move(logev));
}

Eigen::VectorXd map_gaussian(const Eigen::Ref<const Eigen::VectorXd>& mean,
                             const Eigen::Ref<const Eigen::MatrixXd>& cov,
                             const Eigen::Ref<const Eigen::VectorXd>& y, const ForwardOperator& a,
                             double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("map_gaussian: sigma must be positive");
  if (mean.size() != a.n || y.size() != a.m)
    throw std::invalid_argument("map_gaussian: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> cov_llt(cov);
  if (cov_llt.info() != Eigen::Success)
    throw std::invalid_argument("map_gaussian: covariance not SPD");

  const double inv_var = 1.0 / (sigma * sigma);
  const Eigen::MatrixXd precision = cov_llt.solve(Eigen::MatrixXd::Identity(a.n, a.n));
  const Eigen::MatrixXd lhs = inv_var * a.matrix.transpose() * a.matrix + precision;
  const Eigen::VectorXd rhs = inv_var * a.matrix.transpose() * y + precision * mean;
  return Eigen::LLT<Eigen::MatrixXd>(lhs).solve(rhs);
}

Eigen::MatrixXd invariant_covariance(const Eigen::MatrixXd& base, const GroupAction& action,
                                     double ridge) {
  const Index n = action.n();
  if (base.rows() != n || base.cols() != n)
    throw std::invalid_argument("invariant_covariance: dimension mismatch");
  Eigen::MatrixXd spd = 0.5 * (base + base.transpose());
  spd = spd * spd.transpose();  // PSD
  Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(n, n);
  for (Index g = 0; g < action.order(); ++g) avg += permute_sym(spd, action.permutation({g}));
  avg /= static_cast<double>(action.order());
  avg.diagonal().array() += ridge;
  return avg;
}

}  // namespace eqsplit
