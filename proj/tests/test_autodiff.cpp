#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <random>

#include "eqsplit/autodiff.hpp"

using namespace eqsplit;

namespace {

// Central-difference gradient of a scalar function of the parameter vector.
Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                  const Eigen::VectorXd& at, double h = 1e-6) {
  Eigen::VectorXd grad(at.size());
  Eigen::VectorXd p = at;
  for (Index i = 0; i < at.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(at[i]));
    p[i] = at[i] + step;
    const double hi = f(p);
    p[i] = at[i] - step;
    const double lo = f(p);
    p[i] = at[i];
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(b.lpNorm<Eigen::Infinity>(), 1e-8);
  return (a - b).lpNorm<Eigen::Infinity>() / scale;
}

Eigen::VectorXd random_vector(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

void check_gradient(const std::function<ad::Node(ad::Tape&, ad::Node)>& build, Index param_count,
                    std::uint64_t seed, double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  const Eigen::VectorXd params = random_vector(param_count, rng);

  auto eval = [&](const Eigen::VectorXd& p) {
    ad::Tape tape(&p);
    return tape.scalar(build(tape, tape.param_all()));
  };

  ad::Tape tape(&params);
  const Eigen::VectorXd grad = tape.backward(build(tape, tape.param_all()));
  const Eigen::VectorXd fd = finite_difference(eval, params);
  CHECK(relative_error(grad, fd) <= tol);
}

}  // namespace

TEST_CASE("gradient of the squared norm is 2w") {
  std::mt19937_64 rng(1);
  const Eigen::VectorXd w = random_vector(6, rng);
  ad::Tape tape(&w);
  const Eigen::VectorXd grad = tape.backward(tape.square_norm(tape.param_all()));
  CHECK((grad - 2.0 * w).lpNorm<Eigen::Infinity>() <= 1e-14);
}

TEST_CASE("zero-parameter graphs produce an empty gradient") {
  ad::Tape tape;
  ad::Node c = tape.constant(Eigen::VectorXd::Ones(3));
  const Eigen::VectorXd grad = tape.backward(tape.square_norm(c));
  CHECK(grad.size() == 0);
}

TEST_CASE("every primitive passes a central-difference check") {
  std::mt19937_64 rng(2026);
  const Index n = 8;
  Eigen::MatrixXd w(5, n);
  for (Index r = 0; r < 5; ++r) w.row(r) = random_vector(n, rng).transpose();
  const Eigen::VectorXd shift = random_vector(5, rng);
  const Eigen::VectorXd probe = random_vector(n, rng);
  const std::vector<Index> idx = {3, 0, 5, 2};

  for (int instance = 0; instance < 20; ++instance) {
    const std::uint64_t seed = 100 + instance;

    // matvec + sub + square_norm
    check_gradient(
        [&](ad::Tape& t, ad::Node p) {
          return t.square_norm(t.sub(t.matvec(&w, p), t.constant(shift)));
        },
        n, seed);

    // matvec_t + scale + add
    check_gradient(
        [&](ad::Tape& t, ad::Node p) {
          ad::Node u = t.matvec_t(&w, t.constant(shift));
          return t.square_norm(t.add(t.scale(p, 0.37), u));
        },
        n, seed + 1);

    // tanh
    check_gradient([&](ad::Tape& t, ad::Node p) { return t.square_norm(t.tanh(p)); }, n, seed + 2);

    // gather / scatter
    check_gradient(
        [&](ad::Tape& t, ad::Node p) {
          return t.square_norm(t.scatter(t.gather(p, idx), {1, 4, 6, 0}, n));
        },
        n, seed + 3);

    // dot_const
    check_gradient(
        [&](ad::Tape& t, ad::Node p) { return t.dot_const(t.tanh(p), probe); }, n, seed + 4);

    // linear: params hold a 3x4 matrix and a 4-vector input
    check_gradient(
        [&](ad::Tape& t, ad::Node p) {
          ad::Node wvec = t.gather(p, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
          ad::Node x = t.gather(p, {12, 13, 14, 15});
          return t.square_norm(t.linear(wvec, 3, 4, x));
        },
        16, seed + 5);

    // circular convolution, 2 channels in / 2 out on a 4x3 grid
    const ad::ConvShape shape{2, 2, 4, 3, 3, 3};
    check_gradient(
        [&](ad::Tape& t, ad::Node p) {
          ad::Node kernel = t.gather(p, [&] {
            std::vector<Index> k(shape.kernel_size());
            for (Index i = 0; i < shape.kernel_size(); ++i) k[i] = i;
            return k;
          }());
          std::vector<Index> xi(2 * shape.pixels());
          for (Index i = 0; i < static_cast<Index>(xi.size()); ++i)
            xi[i] = shape.kernel_size() + i;
          ad::Node x = t.gather(p, xi);
          return t.square_norm(t.conv_circ2d(kernel, x, shape));
        },
        shape.kernel_size() + 2 * shape.pixels(), seed + 6);

    // channel bias
    check_gradient(
        [&](ad::Tape& t, ad::Node p) {
          ad::Node x = t.gather(p, {0, 1, 2, 3, 4, 5});
          ad::Node b = t.gather(p, {6, 7});
          return t.square_norm(t.channel_bias(x, b, 2));
        },
        8, seed + 7);
  }
}

TEST_CASE("circular convolution of a delta reproduces the kernel layout") {
  // 1 channel, 3x3 kernel on a 5x5 grid; convolving a centered delta must
  // paint the kernel around the center.
  const ad::ConvShape shape{1, 1, 5, 5, 3, 3};
  Eigen::VectorXd params(shape.kernel_size());
  for (Index i = 0; i < params.size(); ++i) params[i] = static_cast<double>(i + 1);

  ad::Tape tape(&params);
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(25);
  delta[2 * 5 + 2] = 1.0;
  const Eigen::VectorXd out =
      tape.value(tape.conv_circ2d(tape.param_all(), tape.constant(delta), shape));

  // out(r, c) reads x at (r + dr - 1, c + dc - 1), so tap (dr, dc) lands at
  // (3 - dr, 3 - dc) around the delta (correlation semantics).
  for (Index dr = 0; dr < 3; ++dr)
    for (Index dc = 0; dc < 3; ++dc)
      CHECK(out[(3 - dr) * 5 + (3 - dc)] == params[dr * 3 + dc]);
}

TEST_CASE("circular convolution wraps around the grid") {
  const ad::ConvShape shape{1, 1, 4, 1, 3, 1};
  Eigen::VectorXd kernel(3);
  kernel << 1, 0, 0;  // picks the left circular neighbor
  ad::Tape tape(&kernel);
  Eigen::VectorXd x(4);
  x << 1, 2, 3, 4;
  const Eigen::VectorXd out =
      tape.value(tape.conv_circ2d(tape.param_all(), tape.constant(x), shape));
  Eigen::VectorXd expected(4);
  expected << 4, 1, 2, 3;
  CHECK((out - expected).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("apply_group on the tape matches the action") {
  const GroupAction dihedral = build_dihedral_group(3);
  std::mt19937_64 rng(9);
  const Eigen::VectorXd x = random_vector(9, rng);
  for (Index g = 0; g < dihedral.order(); ++g) {
    ad::Tape tape;
    const Eigen::VectorXd out =
        tape.value(ad::apply_group(tape, dihedral, {g}, tape.constant(x)));
    CHECK((out - dihedral.apply({g}, x)).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("backward rejects vector outputs") {
  Eigen::VectorXd params = Eigen::VectorXd::Ones(3);
  ad::Tape tape(&params);
  CHECK_THROWS_AS(tape.backward(tape.param_all()), std::invalid_argument);
}
