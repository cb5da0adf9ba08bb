#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

#include "eqsplit/group.hpp"

namespace eqsplit {
namespace idx {

enum class ErrorKind { BadMagic, Truncated, DimensionMismatch, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Big-endian IDX image file (magic 0x00000803): rows x cols images scaled by
// 1/255 and flattened row-major, one image per column.
Eigen::MatrixXd read_images(const std::string& path);
std::vector<int> read_labels(const std::string& path);  // magic 0x00000801

void write_images(const std::string& path, const Eigen::MatrixXd& images, Index rows, Index cols);
void write_labels(const std::string& path, const std::vector<int>& labels);

}  // namespace idx

struct MnistData {
  Eigen::MatrixXd images;  // 784 x N in [0, 1]
  std::vector<int> labels;
};

// Parses an images/labels IDX pair and checks the counts match.
MnistData load_mnist(const std::string& images_path, const std::string& labels_path);

}  // namespace eqsplit
