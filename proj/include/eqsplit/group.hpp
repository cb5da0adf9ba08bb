#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace eqsplit {

using Index = Eigen::Index;

// Element of a finite transformation group, identified by its index into a
// GroupAction's tables.
struct GroupElement {
  Index index = 0;
};

// A finite group of orthogonal transforms acting on image vectors.
//
// Every transform is stored as a permutation of pixel indices, so group
// algebra (composition, inversion, application) is exact in floating point.
// Dense transform matrices are materialized on demand only.
class GroupAction {
 public:
  // (T_g x)[i] = x[perm[g][i]]
  static GroupAction from_permutations(Index n, std::vector<std::vector<Index>> perms,
                                       std::string name);

  // Bypasses table construction; used to build deliberately corrupted actions.
  static GroupAction from_raw(Index n, std::vector<std::vector<Index>> perms,
                              Eigen::MatrixX<Index> compose_table,
                              std::vector<Index> inverse_table, Index identity,
                              std::string name);

  Index n() const { return n_; }
  Index order() const { return static_cast<Index>(perms_.size()); }
  GroupElement identity() const { return {identity_}; }
  const std::string& name() const { return name_; }

  GroupElement compose(GroupElement g, GroupElement h) const;
  GroupElement inverse(GroupElement g) const;

  const std::vector<Index>& permutation(GroupElement g) const;
  const Eigen::MatrixX<Index>& compose_table() const { return compose_; }
  const std::vector<Index>& inverse_table() const { return inverse_; }

  // T_g as a dense matrix; O(n^2) storage, intended for desk-scale checks.
  Eigen::MatrixXd matrix(GroupElement g) const;

  Eigen::VectorXd apply(GroupElement g, const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd apply_inverse(GroupElement g, const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  Index n_ = 0;
  Index identity_ = 0;
  std::vector<std::vector<Index>> perms_;
  Eigen::MatrixX<Index> compose_;
  std::vector<Index> inverse_;
  std::string name_;
};

// Cyclic 2-D translations on row-major width x height images; order = w*h.
GroupAction build_shift_group(Index width, Index height);

// Rotations by multiples of 90 degrees plus horizontal/vertical flips on
// side x side images; order 8.
GroupAction build_dihedral_group(Index side);

// The one-element group on n pixels.
GroupAction build_trivial_group(Index n);

// Worst-case absolute error per group axiom, each 0 for a well-formed action.
struct AxiomReport {
  double closure_error = 0.0;
  double identity_error = 0.0;
  double inverse_error = 0.0;
  double orthogonality_error = 0.0;
  bool ok(double tol = 1e-12) const {
    return closure_error <= tol && identity_error <= tol && inverse_error <= tol &&
           orthogonality_error <= tol;
  }
};

AxiomReport check_group_axioms(const GroupAction& action);

}  // namespace eqsplit
