#include "eqsplit/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace eqsplit {

double psnr(const Eigen::Ref<const Eigen::VectorXd>& xhat,
            const Eigen::Ref<const Eigen::VectorXd>& x, double peak) {
  if (xhat.size() != x.size()) throw std::invalid_argument("psnr: dimension mismatch");
  if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be positive");
  const double mse = (xhat - x).squaredNorm() / static_cast<double>(x.size());
  if (mse == 0.0) return 150.0;
  return std::min(150.0, -10.0 * std::log10(mse / (peak * peak)));
}

double ssim(const Eigen::Ref<const Eigen::VectorXd>& xhat,
            const Eigen::Ref<const Eigen::VectorXd>& x, Index window, double k1, double k2,
            double peak) {
  if (xhat.size() != x.size()) throw std::invalid_argument("ssim: dimension mismatch");
  const Index side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(x.size()))));
  if (side * side != x.size()) throw std::invalid_argument("ssim: image must be square");
  if (window > side) throw std::invalid_argument("ssim: window larger than image");
  if (window < 1) throw std::invalid_argument("ssim: window must be positive");

  // Gaussian window, std 1.5, normalized to unit mass.
  Eigen::MatrixXd w(window, window);
  const double center = (static_cast<double>(window) - 1.0) / 2.0;
  for (Index r = 0; r < window; ++r)
    for (Index c = 0; c < window; ++c) {
      const double dr = static_cast<double>(r) - center;
      const double dc = static_cast<double>(c) - center;
      w(r, c) = std::exp(-(dr * dr + dc * dc) / (2.0 * 1.5 * 1.5));
    }
  w /= w.sum();

  const double c1 = (k1 * peak) * (k1 * peak);
  const double c2 = (k2 * peak) * (k2 * peak);

  auto at = [side](const Eigen::Ref<const Eigen::VectorXd>& v, Index r, Index c) {
    return v[r * side + c];
  };

  double total = 0.0;
  Index count = 0;
  for (Index r0 = 0; r0 + window <= side; ++r0) {
    for (Index c0 = 0; c0 + window <= side; ++c0) {
      double mu_a = 0.0, mu_b = 0.0;
      for (Index r = 0; r < window; ++r)
        for (Index c = 0; c < window; ++c) {
          mu_a += w(r, c) * at(xhat, r0 + r, c0 + c);
          mu_b += w(r, c) * at(x, r0 + r, c0 + c);
        }
      double var_a = 0.0, var_b = 0.0, cov = 0.0;
      for (Index r = 0; r < window; ++r)
        for (Index c = 0; c < window; ++c) {
          const double da = at(xhat, r0 + r, c0 + c) - mu_a;
          const double db = at(x, r0 + r, c0 + c) - mu_b;
          var_a += w(r, c) * da * da;
          var_b += w(r, c) * db * db;
          cov += w(r, c) * da * db;
        }
      const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
      const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::string to_csv(const MetricRow& row) {
  std::ostringstream out;
  out.precision(10);
  out << row.run_id << ',' << row.epoch << ',' << row.split << ',' << row.psnr_mean << ','
      << row.psnr_std << ',' << row.ssim_mean << ',' << row.ssim_std << ',' << row.equiv_db << ','
      << row.loss;
  return out.str();
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << kMetricsCsvHeader << '\n';
  for (const auto& row : rows) out << to_csv(row) << '\n';
}

}  // namespace eqsplit
