#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "eqsplit/checkpoint.hpp"
#include "eqsplit/idx.hpp"
#include "eqsplit/metrics.hpp"

using namespace eqsplit;

namespace {

// Plain-loop re-implementations used as independent oracles.
double psnr_reference(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double peak) {
  double mse = 0.0;
  for (Index i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return 150.0;
  return std::min(150.0, 10.0 * std::log10(peak * peak / mse));
}

double ssim_reference(const Eigen::VectorXd& xhat, const Eigen::VectorXd& x, Index side,
                      Index window, double k1, double k2, double peak) {
  std::vector<double> weights(window * window);
  const double center = (window - 1) / 2.0;
  double mass = 0.0;
  for (Index r = 0; r < window; ++r)
    for (Index c = 0; c < window; ++c) {
      const double d2 = (r - center) * (r - center) + (c - center) * (c - center);
      weights[r * window + c] = std::exp(-d2 / 4.5);
      mass += weights[r * window + c];
    }
  for (double& w : weights) w /= mass;

  const double c1 = k1 * k1 * peak * peak, c2 = k2 * k2 * peak * peak;
  double total = 0.0;
  int count = 0;
  for (Index r0 = 0; r0 + window <= side; ++r0)
    for (Index c0 = 0; c0 + window <= side; ++c0) {
      double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
      for (Index r = 0; r < window; ++r)
        for (Index c = 0; c < window; ++c) {
          const double w = weights[r * window + c];
          ma += w * xhat[(r0 + r) * side + c0 + c];
          mb += w * x[(r0 + r) * side + c0 + c];
        }
      for (Index r = 0; r < window; ++r)
        for (Index c = 0; c < window; ++c) {
          const double w = weights[r * window + c];
          const double da = xhat[(r0 + r) * side + c0 + c] - ma;
          const double db = x[(r0 + r) * side + c0 + c] - mb;
          va += w * da * da;
          vb += w * db * db;
          cov += w * da * db;
        }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST_CASE("psnr basics") {
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(16, 0.0, 1.0);
  CHECK(psnr(x, x, 1.0) == 150.0);

  // MSE 0.01 at peak 1 -> 20 dB
  Eigen::VectorXd noisy = x;
  for (Index i = 0; i < x.size(); ++i) noisy[i] += 0.1;
  CHECK(psnr(noisy, x, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(noisy.head(4), x, 1.0), std::invalid_argument);
}

TEST_CASE("psnr and ssim agree with the scalar re-implementations") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const Index side = 12;
  Eigen::VectorXd x(side * side), y(side * side);
  for (Index i = 0; i < x.size(); ++i) {
    x[i] = uniform(rng);
    y[i] = uniform(rng);
  }
  CHECK(psnr(y, x, 1.0) == doctest::Approx(psnr_reference(y, x, 1.0)).epsilon(1e-9));
  CHECK(ssim(y, x, 7) ==
        doctest::Approx(ssim_reference(y, x, side, 7, 0.01, 0.03, 1.0)).epsilon(1e-9));
}

TEST_CASE("ssim of an image with itself is one") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Eigen::VectorXd x(64);
  for (Index i = 0; i < 64; ++i) x[i] = uniform(rng);
  CHECK(ssim(x, x, 5) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim punishes inverted binary images") {
  std::mt19937_64 rng(7);
  Eigen::VectorXd x(8 * 8);
  for (Index i = 0; i < 64; ++i) x[i] = (rng() % 2 == 0) ? 0.0 : 1.0;
  const Eigen::VectorXd inverted = Eigen::VectorXd::Ones(64) - x;
  CHECK(ssim(inverted, x, 5) < 0.2);
}

TEST_CASE("constant images shifted by the peak have near-zero ssim") {
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(36);
  const Eigen::VectorXd shifted = Eigen::VectorXd::Ones(36);
  // luminance term: (2*0*1 + c1) / (0 + 1 + c1) ~ 1e-4
  CHECK(ssim(shifted, x, 6) < 1e-3);
  CHECK(ssim(shifted, x, 6) > 0.0);
}

TEST_CASE("ssim validates the window size") {
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(16);
  CHECK_THROWS_AS(ssim(x, x, 5), std::invalid_argument);   // window > side
  CHECK_THROWS_AS(ssim(x, x.head(15), 3), std::invalid_argument);
}

TEST_CASE("idx round trip and error taxonomy") {
  const std::string images_path = "test_images.idx3";
  const std::string labels_path = "test_labels.idx1";

  Eigen::MatrixXd images = Eigen::MatrixXd::Zero(4, 1);  // one all-zero 2x2 image
  idx::write_images(images_path, images, 2, 2);
  idx::write_labels(labels_path, {7});

  const MnistData data = load_mnist(images_path, labels_path);
  CHECK(data.images.cols() == 1);
  CHECK(data.images.col(0).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(data.labels == std::vector<int>{7});

  SUBCASE("bad magic") {
    std::ofstream out(images_path, std::ios::binary);
    out.write("\x00\x00\x08\x04", 4);
    out.close();
    try {
      idx::read_images(images_path);
      CHECK(false);
    } catch (const idx::Error& e) {
      CHECK(e.kind() == idx::ErrorKind::BadMagic);
    }
  }

  SUBCASE("truncation") {
    Eigen::MatrixXd big = Eigen::MatrixXd::Constant(784, 2, 0.5);
    idx::write_images(images_path, big, 28, 28);
    std::ifstream in(images_path, std::ios::binary);
    std::vector<char> bytes(200);
    in.read(bytes.data(), 200);
    in.close();
    std::ofstream out(images_path, std::ios::binary);
    out.write(bytes.data(), 200);
    out.close();
    try {
      idx::read_images(images_path);
      CHECK(false);
    } catch (const idx::Error& e) {
      CHECK(e.kind() == idx::ErrorKind::Truncated);
    }
  }

  SUBCASE("count mismatch between images and labels") {
    idx::write_labels(labels_path, {1, 2});
    try {
      load_mnist(images_path, labels_path);
      CHECK(false);
    } catch (const idx::Error& e) {
      CHECK(e.kind() == idx::ErrorKind::DimensionMismatch);
    }
  }

  std::remove(images_path.c_str());
  std::remove(labels_path.c_str());
}

TEST_CASE("checkpoint round trip") {
  Checkpoint ckpt;
  ckpt.arch = "conv-mlp";
  ckpt.dims = {28, 28, 8, 3};
  ckpt.params = Eigen::VectorXd::LinSpaced(10, -1.0, 1.0);
  const std::string path = "test_checkpoint.eqck";
  save_checkpoint(path, ckpt);
  const Checkpoint loaded = load_checkpoint(path);
  std::remove(path.c_str());
  CHECK(loaded.arch == ckpt.arch);
  CHECK(loaded.dims == ckpt.dims);
  CHECK((loaded.params - ckpt.params).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("metric rows serialize with the documented header") {
  MetricRow row;
  row.run_id = "run1";
  row.epoch = 3;
  row.split = "test";
  row.psnr_mean = 31.5;
  const std::string csv = to_csv(row);
  CHECK(csv.substr(0, 12) == "run1,3,test,");
  CHECK(std::string(kMetricsCsvHeader).find("psnr_mean") != std::string::npos);
}
