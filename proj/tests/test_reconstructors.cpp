#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "eqsplit/reconstructors.hpp"

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
  for (Index r = 0; r < m; ++r) op.matrix.row(r) = random_vector(n, rng).transpose() / std::sqrt(n);
  return op;
}

}  // namespace

TEST_CASE("identity-denoiser artifact removal zero-fills mask measurements") {
  auto f = ArtifactRemovalReconstructor(std::make_shared<IdentityDenoiser>(),
                                        ArtifactRemovalReconstructor::Mode::Adjoint);
  const ForwardOperator mask = make_inpainting(4, {true, false, true, false});
  Eigen::VectorXd y(2);
  y << 3, 7;
  const Eigen::VectorXd x = f.apply(y, mask);
  Eigen::VectorXd expected(4);
  expected << 3, 0, 7, 0;
  CHECK((x - expected).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(f.equivariance_claim() == Reconstructor::Claim::ByConstruction);
}

TEST_CASE("adjoint artifact removal with identity denoiser is exactly equivariant") {
  auto f = ArtifactRemovalReconstructor(std::make_shared<IdentityDenoiser>(),
                                        ArtifactRemovalReconstructor::Mode::Adjoint);
  const GroupAction shifts = build_shift_group(6, 1);
  const EquivarianceReport report = check_equivariance(f, shifts, 10, 5);
  CHECK(report.max_residual == 0.0);
}

TEST_CASE("pseudoinverse artifact removal reproduces the least-squares solution") {
  std::mt19937_64 rng(7);
  auto f = ArtifactRemovalReconstructor(std::make_shared<IdentityDenoiser>(),
                                        ArtifactRemovalReconstructor::Mode::Pseudoinverse);
  const ForwardOperator a = dense_operator(3, 6, rng);
  const Eigen::VectorXd y = random_vector(3, rng);
  const Eigen::VectorXd x = f.apply(y, a);
  const Eigen::VectorXd expected =
      a.matrix.completeOrthogonalDecomposition().pseudoInverse() * y;
  CHECK((x - expected).lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK_FALSE(f.used_ridge_fallback());
}

TEST_CASE("rank-deficient pseudoinverse falls back to the ridge solve and flags it") {
  auto f = ArtifactRemovalReconstructor(std::make_shared<IdentityDenoiser>(),
                                        ArtifactRemovalReconstructor::Mode::Pseudoinverse);
  ForwardOperator a;
  a.kind = OperatorKind::Dense;
  a.m = 2;
  a.n = 3;
  a.matrix = (Eigen::MatrixXd(2, 3) << 1, 0, 0, 1, 0, 0).finished();  // duplicate rows
  const Eigen::VectorXd x = f.apply((Eigen::VectorXd(2) << 1, 1).finished(), a);
  CHECK(f.used_ridge_fallback());
  CHECK(x.allFinite());
}

TEST_CASE("circular-conv denoiser gives an equivariant artifact-removal model") {
  auto denoiser = std::make_shared<CircConvDenoiser>(16, 1, 4, 3, 21);
  const GroupAction shifts = build_shift_group(16, 1);
  denoiser->action = &shifts;
  auto f = ArtifactRemovalReconstructor(denoiser, ArtifactRemovalReconstructor::Mode::Adjoint);
  const EquivarianceReport report = check_equivariance(f, shifts, 100, 3);
  CHECK(report.max_residual <= 1e-9);
}

TEST_CASE("one-step unrolled model with identity denoiser is a Landweber step") {
  std::mt19937_64 rng(9);
  auto f = UnrolledReconstructor(std::make_shared<IdentityDenoiser>(), 0.25, 1);
  const ForwardOperator a = dense_operator(4, 6, rng);
  const Eigen::VectorXd y = random_vector(4, rng);
  const Eigen::VectorXd expected = 0.25 * a.matrix.transpose() * y;
  CHECK((f.apply(y, a) - expected).lpNorm<Eigen::Infinity>() <= 1e-14);
}

TEST_CASE("unrolled equivariance residual stays at zero for equivariant denoisers") {
  const GroupAction shifts = build_shift_group(8, 1);
  auto denoiser = std::make_shared<CircConvDenoiser>(8, 1, 3, 2, 31);
  denoiser->action = &shifts;
  for (Index iterations : {1, 3, 10}) {
    auto f = UnrolledReconstructor(denoiser, 0.1, iterations);
    CHECK(check_equivariance(f, shifts, 25, 40 + iterations).max_residual <= 1e-9);
  }
}

TEST_CASE("unrolled identity-denoiser iterations approach the pseudoinverse solution") {
  std::mt19937_64 rng(11);
  const ForwardOperator a = dense_operator(3, 5, rng);
  const Eigen::VectorXd y = random_vector(3, rng);
  const Eigen::VectorXd target =
      a.matrix.completeOrthogonalDecomposition().pseudoInverse() * y;
  const double gamma = 1.0 / (a.matrix.norm() * a.matrix.norm());

  double previous = std::numeric_limits<double>::infinity();
  for (Index iterations : {1, 4, 16, 64}) {
    auto f = UnrolledReconstructor(std::make_shared<IdentityDenoiser>(), gamma, iterations);
    const double err = (f.apply(y, a) - target).norm();
    CHECK(err < previous);
    previous = err;
  }
  CHECK(previous <= 1e-2);
}

TEST_CASE("reynolds averaging fixes equivariant reconstructors") {
  std::mt19937_64 rng(13);
  const GroupAction shifts = build_shift_group(6, 1);
  auto inner = std::make_shared<ArtifactRemovalReconstructor>(
      std::make_shared<IdentityDenoiser>(), ArtifactRemovalReconstructor::Mode::Adjoint);
  ReynoldsAverageReconstructor averaged(inner, shifts);

  const ForwardOperator a = dense_operator(3, 6, rng);
  const Eigen::VectorXd y = random_vector(3, rng);
  CHECK((averaged.apply(y, a) - inner->apply(y, a)).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("reynolds averaging of a shifted-constant reconstructor averages the constant") {
  // r(y, A) = A^T y + c with a fixed non-invariant c: averaging must replace c
  // by its group mean.
  class ShiftedAdjoint final : public Reconstructor {
   public:
    explicit ShiftedAdjoint(Eigen::VectorXd c) : c_(std::move(c)) {}

   protected:
    Eigen::VectorXd do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                             const ForwardOperator& a) const override {
      return a.matrix.transpose() * y + c_;
    }

   private:
    Eigen::VectorXd c_;
  };

  std::mt19937_64 rng(17);
  const GroupAction shifts = build_shift_group(5, 1);
  const Eigen::VectorXd c = random_vector(5, rng);
  auto inner = std::make_shared<ShiftedAdjoint>(c);
  ReynoldsAverageReconstructor averaged(inner, shifts);

  const ForwardOperator a = dense_operator(2, 5, rng);
  const Eigen::VectorXd y = random_vector(2, rng);
  const Eigen::VectorXd cbar = Eigen::VectorXd::Constant(5, c.mean());
  CHECK((averaged.apply(y, a) - (a.matrix.transpose() * y + cbar)).lpNorm<Eigen::Infinity>() <=
        1e-10);
  CHECK(check_equivariance(averaged, shifts, 20, 19).max_residual <= 1e-10);
}

TEST_CASE("reynolds averaging is idempotent") {
  std::mt19937_64 rng(23);
  const GroupAction dihedral = build_dihedral_group(3);
  auto mlp = std::make_shared<MlpDenoiser>(9, 12, 5);
  auto inner = std::make_shared<ArtifactRemovalReconstructor>(
      mlp, ArtifactRemovalReconstructor::Mode::Adjoint);
  auto once = std::make_shared<ReynoldsAverageReconstructor>(inner, dihedral);
  ReynoldsAverageReconstructor twice(once, dihedral);

  const ForwardOperator a = dense_operator(4, 9, rng);
  const Eigen::VectorXd y = random_vector(4, rng);
  CHECK((twice.apply(y, a) - once->apply(y, a)).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("reynolds-averaged random MLP passes the equivariance check") {
  const GroupAction dihedral = build_dihedral_group(3);
  auto inner = std::make_shared<ArtifactRemovalReconstructor>(
      std::make_shared<MlpDenoiser>(9, 16, 77), ArtifactRemovalReconstructor::Mode::Adjoint);
  ReynoldsAverageReconstructor averaged(inner, dihedral);
  CHECK(check_equivariance(averaged, dihedral, 100, 29).max_residual <= 1e-9);
}

TEST_CASE("a deliberately broken reconstructor is flagged") {
  class Broken final : public Reconstructor {
   protected:
    Eigen::VectorXd do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                             const ForwardOperator& a) const override {
      Eigen::VectorXd out = a.matrix.transpose() * y;
      out[0] += 1.0;  // fixed offset in a fixed coordinate breaks equivariance
      return out;
    }
  };
  const GroupAction shifts = build_shift_group(6, 1);
  Broken f;
  CHECK(check_equivariance(f, shifts, 20, 31).max_residual > 0.1);
}

TEST_CASE("equiv metric caps at 150 dB for exact equivariance") {
  auto f = ArtifactRemovalReconstructor(std::make_shared<IdentityDenoiser>(),
                                        ArtifactRemovalReconstructor::Mode::Adjoint);
  const GroupAction shifts = build_shift_group(6, 1);
  std::mt19937_64 rng(37);
  const ForwardOperator a = dense_operator(3, 6, rng);
  std::vector<Eigen::VectorXd> ys = {random_vector(3, rng), random_vector(3, rng)};
  CHECK(equiv_metric(f, ys, a, shifts, 0) == 150.0);
}

TEST_CASE("equiv metric converts mean squared residual to decibels") {
  // residual mean square 1e-3 -> 30 dB
  class Offset final : public Reconstructor {
   public:
    explicit Offset(double eps) : eps_(eps) {}

   protected:
    Eigen::VectorXd do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                             const ForwardOperator& a) const override {
      Eigen::VectorXd out = Eigen::VectorXd::Zero(a.n);
      out[0] = a.matrix(0, 0) > 0.5 ? eps_ : 0.0;  // detects the identity operator
      return out;
    }

   private:
    double eps_;
  };

  // n = 2 swap group: residual is eps in exactly one coordinate for the
  // non-identity element and zero for the identity.
  const GroupAction swap = build_shift_group(2, 1);
  ForwardOperator eye;
  eye.kind = OperatorKind::Dense;
  eye.m = 2;
  eye.n = 2;
  eye.matrix = Eigen::MatrixXd::Identity(2, 2);

  // mean over two group elements of ||residual||^2 = (0 + eps^2) / 2 = 1e-3
  const double eps = std::sqrt(2e-3);
  Offset f(eps);
  std::vector<Eigen::VectorXd> ys = {Eigen::VectorXd::Zero(2)};
  CHECK(equiv_metric(f, ys, eye, swap, 0) == doctest::Approx(30.0).epsilon(1e-9));
}

TEST_CASE("linear model with W = (A^T A)^+ reproduces the pseudoinverse") {
  std::mt19937_64 rng(41);
  const ForwardOperator a = dense_operator(3, 5, rng);
  LinearReconstructor f(5, 0);
  const Eigen::MatrixXd gram_pinv =
      (a.matrix.transpose() * a.matrix).completeOrthogonalDecomposition().pseudoInverse();
  f.set_weights(gram_pinv, Eigen::VectorXd::Zero(5));

  const Eigen::VectorXd y = random_vector(3, rng);
  const Eigen::VectorXd expected =
      a.matrix.completeOrthogonalDecomposition().pseudoInverse() * y;
  CHECK((f.apply(y, a) - expected).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("conv-mlp with a zeroed final layer outputs the residual input") {
  auto denoiser = std::make_shared<CircConvDenoiser>(4, 4, 3, 2, 43);
  // zero the last conv layer and biases: phi(x) = x
  Eigen::VectorXd& params = *denoiser->params();
  const Index last = 3 * 3 * 3 * 1 + 1;  // final kernel + bias
  params.tail(last).setZero();
  std::mt19937_64 rng(47);
  const Eigen::VectorXd x = random_vector(16, rng);
  CHECK((denoiser->apply(x) - x).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("evaluation counters track apply and trace calls") {
  auto f = ArtifactRemovalReconstructor(std::make_shared<IdentityDenoiser>(),
                                        ArtifactRemovalReconstructor::Mode::Adjoint);
  const ForwardOperator mask = make_inpainting(3, {true, true, false});
  f.reset_eval_count();
  (void)f.apply(Eigen::VectorXd::Ones(2), mask);
  (void)f.apply(Eigen::VectorXd::Ones(2), mask);
  CHECK(f.eval_count() == 2);
}

TEST_CASE("make_parametric dispatches architectures") {
  const GroupAction shifts = build_shift_group(4, 4);
  ParametricSpec spec;
  spec.arch = "conv-mlp";
  spec.width = 4;
  spec.height = 4;
  spec.channels = 3;
  auto conv = make_parametric(spec, &shifts);
  CHECK(conv->equivariance_claim() == Reconstructor::Claim::ByConstruction);
  CHECK(check_equivariance(*conv, shifts, 10, 53).max_residual <= 1e-9);

  const GroupAction dihedral = build_dihedral_group(4);
  auto wrapped = make_parametric(spec, &dihedral);
  CHECK(check_equivariance(*wrapped, dihedral, 5, 59).max_residual <= 1e-9);

  spec.arch = "linear";
  auto linear = make_parametric(spec, &shifts);
  CHECK(linear->param_count() == 16 * 16 + 16);

  spec.arch = "nope";
  CHECK_THROWS_AS(make_parametric(spec, &shifts), std::invalid_argument);
}
