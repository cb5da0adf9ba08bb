#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eqsplit/group.hpp"

namespace eqsplit {

enum class OperatorKind { RowMask, Dense, SubsampledDftReal };

// A linear forward map y = A x, materialized as a dense m x n matrix.
//
// Structured kinds keep enough metadata to stay exact: row masks carry the
// selected coordinate per row, DFT operators the selected frequency per
// (real, imaginary) row pair.
struct ForwardOperator {
  OperatorKind kind = OperatorKind::Dense;
  Index m = 0;
  Index n = 0;
  Eigen::MatrixXd matrix;
  std::vector<Index> selection;  // row masks: coordinate per row; DFT: flat frequency per pair

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd adjoint(const Eigen::Ref<const Eigen::VectorXd>& y) const;
};

struct Measurement {
  Eigen::VectorXd y;
  const ForwardOperator* op = nullptr;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

enum class SplitFamily { BernoulliRows, FixedPartition };

// Distribution over row selections used to split a measurement vector.
struct SplitRule {
  SplitFamily family = SplitFamily::BernoulliRows;
  double keep_prob = 0.5;
  std::vector<std::vector<Index>> partitions;  // kept-row sets, FixedPartition only
  Index min_rows = 1;
};

// One realized split: M selects kept rows, the complement is the target part.
struct SplitSample {
  std::vector<Index> kept_rows;        // rows of M, in source order
  std::vector<Index> complement_rows;  // remaining rows, in source order
  Eigen::VectorXd y1, y2;
  ForwardOperator a1, a2;
  std::optional<GroupElement> g;  // set when split from a virtual operator
};

ForwardOperator make_inpainting(Index n, const std::vector<bool>& keep_mask);

// Dense i.i.d. N(0, 1/m) sensing matrix, deterministic per seed; requires m <= n.
ForwardOperator make_gaussian_cs(Index m, Index n, std::uint64_t seed);

// Stacked (Re, Im) rows of the selected unitary 2-D DFT atoms on a side x side
// grid; the full mask satisfies A^T A = I.
ForwardOperator make_subsampled_dft(Index side, const std::vector<bool>& freq_mask);

Measurement simulate(const Eigen::Ref<const Eigen::VectorXd>& x, const ForwardOperator& op,
                     double sigma, std::uint64_t seed);

// A T_g, exact for permutation-backed actions (column gather). Row masks stay
// row masks with permuted selections; DFT operators degrade to Dense since the
// atom pairing is not preserved under pixel permutations in general.
ForwardOperator virtual_operator(const ForwardOperator& op, const GroupAction& action,
                                 GroupElement g);

SplitSample sample_split(const SplitRule& rule, const Measurement& meas,
                         const ForwardOperator& op, std::uint64_t seed);

// Deterministic split realization from explicit kept rows; shared by the
// sampler and the exact enumeration paths.
SplitSample make_split(const std::vector<Index>& kept_rows, const Eigen::Ref<const Eigen::VectorXd>& y,
                       const ForwardOperator& op);

// All admissible kept-row sets of a rule together with their probabilities
// (conditioned on |y1| >= min_rows). Bernoulli rules enumerate all 2^m subsets
// and refuse beyond max_support.
std::vector<std::pair<std::vector<Index>, double>> enumerate_split_support(
    const SplitRule& rule, Index m, std::size_t max_support = 1u << 20);

// Byte key of a split operator with rows sorted lexicographically; identical
// keys identify the same conditioning value A1 regardless of row order.
std::string canonical_operator_key(const Eigen::MatrixXd& a1);

// Joint key of (y1, A1); rows and the paired y1 entries are sorted together.
std::string canonical_split_key(const Eigen::MatrixXd& a1,
                                const Eigen::Ref<const Eigen::VectorXd>& y1);

void save_operator(const ForwardOperator& op, const std::string& path);
ForwardOperator load_operator(const std::string& path);

}  // namespace eqsplit
