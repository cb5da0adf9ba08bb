#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "eqsplit/group.hpp"

namespace eqsplit {

// -10 log10(MSE / peak^2), capped at 150 dB for zero error.
double psnr(const Eigen::Ref<const Eigen::VectorXd>& xhat,
            const Eigen::Ref<const Eigen::VectorXd>& x, double peak);

// Windowed SSIM over square images with a Gaussian window (std 1.5); the
// window slides over every position where it fits entirely.
double ssim(const Eigen::Ref<const Eigen::VectorXd>& xhat,
            const Eigen::Ref<const Eigen::VectorXd>& x, Index window = 7, double k1 = 0.01,
            double k2 = 0.03, double peak = 1.0);

struct MetricRow {
  std::string run_id;
  Index epoch = 0;
  std::string split;  // "train" / "test"
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  double equiv_db = 0.0;
  double loss = 0.0;
};

inline constexpr const char* kMetricsCsvHeader =
    "run_id,epoch,split,psnr_mean,psnr_std,ssim_mean,ssim_std,equiv_db,loss";

std::string to_csv(const MetricRow& row);
void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path);

}  // namespace eqsplit
