#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "eqsplit/priors.hpp"

using namespace eqsplit;

namespace {

Eigen::VectorXd random_vector(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

ForwardOperator dense_operator(Index m, Index n, std::mt19937_64& rng) {
  ForwardOperator op;
  op.kind = OperatorKind::Dense;
  op.m = m;
  op.n = n;
  op.matrix.resize(m, n);
  for (Index r = 0; r < m; ++r) op.matrix.row(r) = random_vector(n, rng).transpose();
  return op;
}

DiscretePrior two_basis_prior() {
  DiscretePrior prior;
  prior.atoms = Eigen::MatrixXd::Identity(2, 2);
  prior.weights = Eigen::VectorXd::Constant(2, 0.5);
  prior.symmetrized = true;
  return prior;
}

}  // namespace

TEST_CASE("symmetrizing a basis atom under the swap group yields its orbit") {
  const GroupAction swap = build_shift_group(2, 1);
  DiscretePrior prior;
  prior.atoms = Eigen::MatrixXd::Zero(2, 1);
  prior.atoms(0, 0) = 1.0;
  prior.weights = Eigen::VectorXd::Ones(1);

  const DiscretePrior sym = symmetrize(prior, swap);
  REQUIRE(sym.count() == 2);
  CHECK(sym.weights[0] == 0.5);
  CHECK(sym.weights[1] == 0.5);
  CHECK(sym.symmetrized);

  // idempotence up to reordering: same atom set, same weights
  const DiscretePrior again = symmetrize(sym, swap);
  REQUIRE(again.count() == 2);
  CHECK(again.weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
  for (Index k = 0; k < again.count(); ++k) {
    bool found = false;
    for (Index j = 0; j < sym.count(); ++j)
      found |= (again.atoms.col(k) - sym.atoms.col(j)).lpNorm<Eigen::Infinity>() == 0.0;
    CHECK(found);
  }
}

TEST_CASE("symmetrized gaussian mixtures have invariant densities") {
  const GroupAction dihedral = build_dihedral_group(2);
  std::mt19937_64 rng(3);

  GaussianMixturePrior prior;
  prior.means.push_back(random_vector(4, rng));
  Eigen::MatrixXd base(4, 4);
  for (Index r = 0; r < 4; ++r) base.row(r) = random_vector(4, rng).transpose();
  prior.covariances.push_back(base * base.transpose() + Eigen::MatrixXd::Identity(4, 4));
  prior.weights = Eigen::VectorXd::Ones(1);

  const GaussianMixturePrior sym = symmetrize(prior, dihedral);
  CHECK(sym.count() <= dihedral.order());
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd x = random_vector(4, rng);
    const double base_density = log_density(sym, x);
    for (Index g = 0; g < dihedral.order(); ++g) {
      CHECK(log_density(sym, dihedral.apply({g}, x)) ==
            doctest::Approx(base_density).epsilon(1e-12));
    }
  }
}

TEST_CASE("noiseless discrete posterior keeps only consistent atoms") {
  const DiscretePrior prior = two_basis_prior();

  ForwardOperator row;
  row.kind = OperatorKind::Dense;
  row.m = 1;
  row.n = 2;

  SUBCASE("single consistent atom") {
    row.matrix = (Eigen::MatrixXd(1, 2) << 1, 0).finished();
    const Eigen::VectorXd mean =
        posterior_mean_discrete(prior, Eigen::VectorXd::Ones(1), row, 0.0);
    CHECK((mean - Eigen::VectorXd::Unit(2, 0)).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("both atoms consistent: uniform average") {
    row.matrix = (Eigen::MatrixXd(1, 2) << 1, 1).finished();
    const Eigen::VectorXd mean =
        posterior_mean_discrete(prior, Eigen::VectorXd::Ones(1), row, 0.0);
    CHECK((mean - Eigen::VectorXd::Constant(2, 0.5)).lpNorm<Eigen::Infinity>() <= 1e-15);
  }

  SUBCASE("no consistent atom is an error") {
    row.matrix = (Eigen::MatrixXd(1, 2) << 1, 0).finished();
    CHECK_THROWS_AS(
        posterior_mean_discrete(prior, Eigen::VectorXd::Constant(1, 3.0), row, 0.0),
        std::runtime_error);
  }
}

TEST_CASE("noisy discrete posterior matches extended-precision Bayes weights") {
  const GroupAction shifts = build_shift_group(4, 1);
  std::mt19937_64 rng(11);

  DiscretePrior base;
  base.atoms = Eigen::MatrixXd(4, 2);
  base.atoms.col(0) = random_vector(4, rng);
  base.atoms.col(1) = random_vector(4, rng);
  base.weights = (Eigen::VectorXd(2) << 0.25, 0.75).finished();
  const DiscretePrior prior = symmetrize(base, shifts);

  const ForwardOperator a = dense_operator(3, 4, rng);
  const Eigen::VectorXd y = random_vector(3, rng);
  const double sigma = 0.1;

  // independent route: long-double accumulation without log-sum-exp
  long double total = 0.0L;
  std::vector<long double> weights(prior.count());
  for (Index k = 0; k < prior.count(); ++k) {
    const long double d2 = (a.matrix * prior.atoms.col(k) - y).squaredNorm();
    weights[k] =
        static_cast<long double>(prior.weights[k]) * std::exp(-d2 / (2.0L * sigma * sigma));
    total += weights[k];
  }
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(4);
  for (Index k = 0; k < prior.count(); ++k)
    expected += static_cast<double>(weights[k] / total) * prior.atoms.col(k);

  const Eigen::VectorXd mean = posterior_mean_discrete(prior, y, a, sigma);
  CHECK((mean - expected).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("log-sum-exp weighting stays finite at tiny noise levels") {
  const GroupAction shifts = build_shift_group(4, 1);
  std::mt19937_64 rng(13);
  DiscretePrior base;
  base.atoms = Eigen::MatrixXd(4, 3);
  for (Index k = 0; k < 3; ++k) base.atoms.col(k) = random_vector(4, rng);
  base.weights = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  const DiscretePrior prior = symmetrize(base, shifts);
  const ForwardOperator a = dense_operator(2, 4, rng);
  const Eigen::VectorXd y = random_vector(2, rng);
  for (double sigma : {1e-2, 1e-4, 1e-6}) {
    const Eigen::VectorXd mean = posterior_mean_discrete(prior, y, a, sigma);
    CHECK(mean.allFinite());
  }
}

TEST_CASE("single-gaussian posterior mean matches the MAP formula") {
  std::mt19937_64 rng(17);
  GaussianMixturePrior prior;
  prior.means.push_back(random_vector(5, rng));
  Eigen::MatrixXd base(5, 5);
  for (Index r = 0; r < 5; ++r) base.row(r) = random_vector(5, rng).transpose();
  prior.covariances.push_back(base * base.transpose() + Eigen::MatrixXd::Identity(5, 5));
  prior.weights = Eigen::VectorXd::Ones(1);

  const ForwardOperator a = dense_operator(3, 5, rng);
  const Eigen::VectorXd y = random_vector(3, rng);
  const double sigma = 0.3;

  const Eigen::VectorXd mmse = posterior_mean_gmm(prior, y, a, sigma);
  const Eigen::VectorXd map = map_gaussian(prior.means[0], prior.covariances[0], y, a, sigma);
  CHECK((mmse - map).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("gaussian posterior approaches the prior mean as noise grows") {
  std::mt19937_64 rng(19);
  GaussianMixturePrior prior;
  prior.means.push_back(random_vector(4, rng));
  prior.covariances.push_back(Eigen::MatrixXd::Identity(4, 4));
  prior.weights = Eigen::VectorXd::Ones(1);

  ForwardOperator eye;
  eye.kind = OperatorKind::Dense;
  eye.m = 4;
  eye.n = 4;
  eye.matrix = Eigen::MatrixXd::Identity(4, 4);

  const Eigen::VectorXd y = random_vector(4, rng);
  const Eigen::VectorXd mean = posterior_mean_gmm(prior, y, eye, 1e4);
  CHECK((mean - prior.means[0]).lpNorm<Eigen::Infinity>() <= 1e-4);
}

TEST_CASE("symmetrized two-component posterior mean matches 4-d grid quadrature") {
  const GroupAction shifts = build_shift_group(4, 1);
  std::mt19937_64 rng(23);

  GaussianMixturePrior base;
  base.means.push_back((Eigen::VectorXd(4) << 0.6, -0.2, 0.1, 0.3).finished());
  Eigen::MatrixXd factor(4, 4);
  for (Index r = 0; r < 4; ++r) factor.row(r) = 0.1 * random_vector(4, rng).transpose();
  base.covariances.push_back(factor * factor.transpose() +
                             0.02 * Eigen::MatrixXd::Identity(4, 4));
  base.weights = Eigen::VectorXd::Ones(1);
  const GaussianMixturePrior prior = symmetrize(base, shifts);

  const ForwardOperator a = dense_operator(2, 4, rng);
  const Eigen::VectorXd y = (Eigen::VectorXd(2) << 0.3, -0.1).finished();
  const double sigma = 0.25;

  // Riemann quadrature on a 61^4 grid; the prior mass lives well inside the
  // box, so the truncation error is far below the tolerance. Component
  // precision matrices are factored once outside the loop.
  std::vector<Eigen::Matrix4d> precisions;
  std::vector<Eigen::Vector4d> means_fixed;
  std::vector<double> log_norms;
  for (Index k = 0; k < prior.count(); ++k) {
    const Eigen::Matrix4d cov = prior.covariances[k];
    precisions.push_back(cov.inverse());
    means_fixed.push_back(prior.means[k]);
    log_norms.push_back(std::log(prior.weights[k]) - 0.5 * std::log(cov.determinant()));
  }

  const int grid = 61;
  const double lo = -1.6, hi = 2.2;
  const double step = (hi - lo) / (grid - 1);
  Eigen::VectorXd numerator = Eigen::VectorXd::Zero(4);
  double denominator = 0.0;
  Eigen::Vector4d x;
  const Eigen::Matrix<double, 2, 4> amat = a.matrix;
  for (int i0 = 0; i0 < grid; ++i0) {
    x[0] = lo + i0 * step;
    for (int i1 = 0; i1 < grid; ++i1) {
      x[1] = lo + i1 * step;
      for (int i2 = 0; i2 < grid; ++i2) {
        x[2] = lo + i2 * step;
        for (int i3 = 0; i3 < grid; ++i3) {
          x[3] = lo + i3 * step;
          double density = 0.0;
          for (std::size_t k = 0; k < precisions.size(); ++k) {
            const Eigen::Vector4d d = x - means_fixed[k];
            density += std::exp(log_norms[k] - 0.5 * d.dot(precisions[k] * d));
          }
          const double r = (amat * x - y).squaredNorm();
          const double weight = density * std::exp(-r / (2.0 * sigma * sigma));
          numerator += weight * x;
          denominator += weight;
        }
      }
    }
  }
  const Eigen::VectorXd quadrature = numerator / denominator;
  const Eigen::VectorXd mean = posterior_mean_gmm(prior, y, a, sigma);
  CHECK((mean - quadrature).lpNorm<Eigen::Infinity>() <= 1e-3);
}

TEST_CASE("MAP shrinkage and stationarity") {
  SUBCASE("identity problem shrinks by 1/(1+sigma^2)") {
    std::mt19937_64 rng(29);
    ForwardOperator eye;
    eye.kind = OperatorKind::Dense;
    eye.m = 3;
    eye.n = 3;
    eye.matrix = Eigen::MatrixXd::Identity(3, 3);
    const Eigen::VectorXd y = random_vector(3, rng);
    const double sigma = 0.7;
    const Eigen::VectorXd map = map_gaussian(Eigen::VectorXd::Zero(3),
                                             Eigen::MatrixXd::Identity(3, 3), y, eye, sigma);
    CHECK((map - y / (1.0 + sigma * sigma)).lpNorm<Eigen::Infinity>() <= 1e-12);
  }

  SUBCASE("gradient of the objective vanishes at the output") {
    std::mt19937_64 rng(31);
    const ForwardOperator a = dense_operator(3, 5, rng);
    Eigen::MatrixXd base(5, 5);
    for (Index r = 0; r < 5; ++r) base.row(r) = random_vector(5, rng).transpose();
    const Eigen::MatrixXd cov = base * base.transpose() + Eigen::MatrixXd::Identity(5, 5);
    const Eigen::VectorXd mu = random_vector(5, rng);
    const Eigen::VectorXd y = random_vector(3, rng);
    const double sigma = 0.4;

    const Eigen::VectorXd xhat = map_gaussian(mu, cov, y, a, sigma);
    const Eigen::VectorXd grad = a.matrix.transpose() * (a.matrix * xhat - y) / (sigma * sigma) +
                                 cov.llt().solve(xhat - mu);
    CHECK(grad.norm() <= 1e-9);
  }

  SUBCASE("large noise returns the prior mean") {
    std::mt19937_64 rng(37);
    const ForwardOperator a = dense_operator(2, 4, rng);
    const Eigen::VectorXd mu = random_vector(4, rng);
    const Eigen::VectorXd map =
        map_gaussian(mu, Eigen::MatrixXd::Identity(4, 4), random_vector(2, rng), a, 1e6);
    CHECK((map - mu).lpNorm<Eigen::Infinity>() <= 1e-6);
  }

  SUBCASE("non-SPD covariance is rejected") {
    ForwardOperator eye;
    eye.kind = OperatorKind::Dense;
    eye.m = 2;
    eye.n = 2;
    eye.matrix = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd bad(2, 2);
    bad << 1, 0, 0, -1;
    CHECK_THROWS_AS(map_gaussian(Eigen::VectorXd::Zero(2), bad, Eigen::VectorXd::Zero(2), eye, 1.0),
                    std::invalid_argument);
  }
}

TEST_CASE("oracle equivariance for symmetrized priors") {
  std::mt19937_64 rng(41);
  const GroupAction shifts = build_shift_group(4, 1);

  DiscretePrior dbase;
  dbase.atoms = Eigen::MatrixXd(4, 2);
  dbase.atoms.col(0) = random_vector(4, rng);
  dbase.atoms.col(1) = random_vector(4, rng);
  dbase.weights = Eigen::VectorXd::Constant(2, 0.5);
  const DiscretePrior dprior = symmetrize(dbase, shifts);

  GaussianMixturePrior gbase;
  gbase.means.push_back(random_vector(4, rng));
  Eigen::MatrixXd b(4, 4);
  for (Index r = 0; r < 4; ++r) b.row(r) = random_vector(4, rng).transpose();
  gbase.covariances.push_back(b * b.transpose() + Eigen::MatrixXd::Identity(4, 4));
  gbase.weights = Eigen::VectorXd::Ones(1);
  const GaussianMixturePrior gprior = symmetrize(gbase, shifts);

  const Eigen::MatrixXd inv_cov = invariant_covariance(b, shifts);
  const Eigen::VectorXd inv_mean = Eigen::VectorXd::Constant(4, 0.3);

  for (int trial = 0; trial < 25; ++trial) {
    const ForwardOperator a = dense_operator(2, 4, rng);
    const Eigen::VectorXd y = random_vector(2, rng);

    const Eigen::VectorXd dmean = posterior_mean_discrete(dprior, y, a, 0.2);
    const Eigen::VectorXd gmean = posterior_mean_gmm(gprior, y, a, 0.2);
    const Eigen::VectorXd mmean = map_gaussian(inv_mean, inv_cov, y, a, 0.2);

    for (Index g = 0; g < shifts.order(); ++g) {
      const ForwardOperator vop = virtual_operator(a, shifts, {g});
      CHECK((posterior_mean_discrete(dprior, y, vop, 0.2) - shifts.apply_inverse({g}, dmean))
                .lpNorm<Eigen::Infinity>() <= 1e-9);
      CHECK((posterior_mean_gmm(gprior, y, vop, 0.2) - shifts.apply_inverse({g}, gmean))
                .lpNorm<Eigen::Infinity>() <= 1e-9);
      CHECK((map_gaussian(inv_mean, inv_cov, y, vop, 0.2) - shifts.apply_inverse({g}, mmean))
                .lpNorm<Eigen::Infinity>() <= 1e-9);
    }
  }
}

TEST_CASE("tabular minimizer of the range-restricted risk matches A E[x|y]") {
  // Enumerated noiseless problem: the minimizer f* of E ||A f(y) - A x||^2
  // over functions of y satisfies A f*(y) = A E[x|y].
  const GroupAction shifts = build_shift_group(3, 1);
  DiscretePrior base;
  base.atoms = Eigen::MatrixXd(3, 2);
  base.atoms.col(0) = (Eigen::VectorXd(3) << 1.0, 0.0, 2.0).finished();
  base.atoms.col(1) = (Eigen::VectorXd(3) << 1.0, 1.0, 0.0).finished();
  base.weights = (Eigen::VectorXd(2) << 0.4, 0.6).finished();
  const DiscretePrior prior = symmetrize(base, shifts);

  ForwardOperator a;
  a.kind = OperatorKind::Dense;
  a.m = 2;
  a.n = 3;
  a.matrix = (Eigen::MatrixXd(2, 3) << 1, 1, 0, 0, 1, 1).finished();

  // group atoms by their measurement
  std::vector<Eigen::VectorXd> seen;
  for (Index k = 0; k < prior.count(); ++k) {
    const Eigen::VectorXd y = a.matrix * prior.atoms.col(k);
    bool duplicate = false;
    for (const auto& v : seen) duplicate |= (v - y).lpNorm<Eigen::Infinity>() == 0.0;
    if (duplicate) continue;
    seen.push_back(y);

    // quadratic in f: minimizer satisfies A^T A f = A^T A xbar; take the
    // least-squares solution through the pseudoinverse
    const Eigen::VectorXd xbar = posterior_mean_discrete(prior, y, a, 0.0);
    const Eigen::MatrixXd gram = a.matrix.transpose() * a.matrix;
    const Eigen::VectorXd fstar =
        gram.completeOrthogonalDecomposition().pseudoInverse() * (gram * xbar);
    CHECK((a.matrix * fstar - a.matrix * xbar).lpNorm<Eigen::Infinity>() <= 1e-9);
  }
}
