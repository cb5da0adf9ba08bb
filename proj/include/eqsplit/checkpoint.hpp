#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "eqsplit/group.hpp"

namespace eqsplit {

struct Checkpoint {
  std::string arch;
  std::vector<Index> dims;
  Eigen::VectorXd params;
};

// Flat binary: magic "EQCK", architecture tag, dim header, float64 parameters.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace eqsplit
