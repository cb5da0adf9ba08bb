#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "eqsplit/train.hpp"

using namespace eqsplit;

namespace {

Eigen::VectorXd random_vector(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace

TEST_CASE("adamw leaves parameters unchanged for zero gradients without decay") {
  OptimizerState opt;
  opt.weight_decay = 0.0;
  opt.init(4);
  Eigen::VectorXd params = Eigen::VectorXd::Ones(4);
  const Eigen::VectorXd before = params;
  opt.step(params, Eigen::VectorXd::Zero(4));
  CHECK((params - before).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("first adamw step is a bounded signed move") {
  OptimizerState opt;
  opt.learning_rate = 0.01;
  opt.weight_decay = 0.0;
  opt.init(3);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd grad(3);
  grad << 2.0, -0.5, 1e-12;
  opt.step(params, grad);
  // with bias correction the first step is -lr * g / (|g| + eps)
  for (Index i = 0; i < 3; ++i) {
    CHECK(std::abs(params[i]) <= 0.01 * (1.0 + 1e-8));
    if (std::abs(grad[i]) > 1e-9) CHECK(params[i] * grad[i] < 0.0);
  }
}

TEST_CASE("schedule divides the learning rate at listed epochs") {
  OptimizerState opt;
  opt.learning_rate = 0.1;
  opt.schedule_epochs = {2, 4};
  opt.schedule_factor = 10.0;
  opt.init(1);
  opt.start_epoch(0);
  CHECK(opt.learning_rate == doctest::Approx(0.1));
  opt.start_epoch(2);
  CHECK(opt.learning_rate == doctest::Approx(0.01));
  opt.start_epoch(3);
  CHECK(opt.learning_rate == doctest::Approx(0.01));
  opt.start_epoch(4);
  CHECK(opt.learning_rate == doctest::Approx(0.001));
}

TEST_CASE("nan gradients abort the run") {
  OptimizerState opt;
  opt.init(2);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd grad(2);
  grad << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(params, grad), std::runtime_error);
}

TEST_CASE("supervised training of the linear model reaches the least-squares solution") {
  // Linear-Gaussian data with the model's own input u = A^T y: the supervised
  // quadratic has the normal-equations solution as its unique minimizer.
  // Square well-conditioned A keeps the backprojection inputs u = A^T A x
  // spanning, so the quadratic has a unique minimizer the optimizer can reach.
  std::mt19937_64 rng(5);
  const Index n = 4, m = 4, count = 40;
  ForwardOperator a;
  a.kind = OperatorKind::Dense;
  a.m = m;
  a.n = n;
  {
    Eigen::MatrixXd raw(m, n);
    for (Index r = 0; r < m; ++r) raw.row(r) = random_vector(n, rng).transpose();
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    const Eigen::VectorXd scales = (Eigen::VectorXd(4) << 1.0, 1.2, 0.9, 1.1).finished();
    a.matrix = Eigen::MatrixXd(qr.householderQ()) * scales.asDiagonal();
  }

  Dataset data;
  data.op = &a;
  data.x.resize(n, count);
  data.y.resize(m, count);
  for (Index i = 0; i < count; ++i) {
    data.x.col(i) = random_vector(n, rng);
    data.y.col(i) = a.matrix * data.x.col(i);
  }

  // normal equations over theta = (vec W, b) with design rows (u^T (x) I, I)
  const Index dim = n * n + n;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  for (Index i = 0; i < count; ++i) {
    const Eigen::VectorXd u = a.matrix.transpose() * data.y.col(i);
    Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n, dim);
    for (Index r = 0; r < n; ++r) {
      design.block(r, r * n, 1, n) = u.transpose();
      design(r, n * n + r) = 1.0;
    }
    gram += design.transpose() * design;
    rhs += design.transpose() * data.x.col(i);
  }
  const Eigen::VectorXd theta = gram.ldlt().solve(rhs);

  LinearReconstructor model(n, 3);
  LossSpec spec;
  spec.kind = LossKind::Sup;
  TrainOptions opt;
  opt.epochs = 6000;
  opt.batch_size = count;
  opt.learning_rate = 0.05;
  opt.schedule_epochs = {3000, 4500, 5500};
  opt.schedule_factor = 5.0;
  opt.seed = 1;
  train(model, data, spec, opt);

  CHECK((*model.params() - theta).lpNorm<Eigen::Infinity>() <= 1e-4);
}

TEST_CASE("zero epochs leave parameters untouched") {
  std::mt19937_64 rng(7);
  ForwardOperator a;
  a.kind = OperatorKind::Dense;
  a.m = 2;
  a.n = 3;
  a.matrix.resize(2, 3);
  for (Index r = 0; r < 2; ++r) a.matrix.row(r) = random_vector(3, rng).transpose();

  Dataset data;
  data.op = &a;
  data.y.resize(2, 4);
  for (Index i = 0; i < 4; ++i) data.y.col(i) = random_vector(2, rng);

  LinearReconstructor model(3, 9);
  const Eigen::VectorXd before = *model.params();
  LossSpec spec;
  spec.kind = LossKind::Mc;
  TrainOptions opt;
  opt.epochs = 0;
  train(model, data, spec, opt);
  CHECK((*model.params() - before).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("training histories are reproducible per seed") {
  std::mt19937_64 rng(11);
  const GroupAction shifts = build_shift_group(6, 1);
  ForwardOperator a;
  a.kind = OperatorKind::Dense;
  a.m = 4;
  a.n = 6;
  a.matrix.resize(4, 6);
  for (Index r = 0; r < 4; ++r) a.matrix.row(r) = random_vector(6, rng).transpose() / 2.0;

  Dataset data;
  data.op = &a;
  data.y.resize(4, 6);
  for (Index i = 0; i < 6; ++i) data.y.col(i) = random_vector(4, rng);

  LossSpec spec;
  spec.kind = LossKind::Es;
  const GroupAction* action = &shifts;
  spec.action = action;
  spec.rule.keep_prob = 0.5;

  TrainOptions opt;
  opt.epochs = 5;
  opt.batch_size = 3;
  opt.learning_rate = 1e-3;
  opt.seed = 42;

  auto denoiser_a = std::make_shared<CircConvDenoiser>(6, 1, 3, 2, 8);
  denoiser_a->action = action;
  ArtifactRemovalReconstructor model_a(denoiser_a, ArtifactRemovalReconstructor::Mode::Adjoint);
  const TrainHistory history_a = train(model_a, data, spec, opt);

  auto denoiser_b = std::make_shared<CircConvDenoiser>(6, 1, 3, 2, 8);
  denoiser_b->action = action;
  ArtifactRemovalReconstructor model_b(denoiser_b, ArtifactRemovalReconstructor::Mode::Adjoint);
  const TrainHistory history_b = train(model_b, data, spec, opt);

  REQUIRE(history_a.epoch_loss.size() == history_b.epoch_loss.size());
  for (std::size_t e = 0; e < history_a.epoch_loss.size(); ++e)
    CHECK(history_a.epoch_loss[e] == history_b.epoch_loss[e]);
  CHECK((*model_a.params() - *model_b.params()).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("divergent training aborts with a diagnostic") {
  std::mt19937_64 rng(13);
  ForwardOperator a;
  a.kind = OperatorKind::Dense;
  a.m = 2;
  a.n = 3;
  a.matrix.resize(2, 3);
  for (Index r = 0; r < 2; ++r) a.matrix.row(r) = random_vector(3, rng).transpose();

  Dataset data;
  data.op = &a;
  data.y.resize(2, 2);
  data.y.col(0) = 1e6 * random_vector(2, rng);
  data.y.col(1) = 1e6 * random_vector(2, rng);

  LinearReconstructor model(3, 1);
  LossSpec spec;
  spec.kind = LossKind::Mc;
  TrainOptions opt;
  opt.epochs = 1;
  opt.divergence_abort = 1.0;
  CHECK_THROWS_AS(train(model, data, spec, opt), std::runtime_error);
}
