#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "eqsplit/group.hpp"
#include "eqsplit/operators.hpp"
#include "eqsplit/reconstructors.hpp"

namespace eqsplit {

// Eigenvalues at or above this fraction of the largest count toward the rank.
inline constexpr double kRankTolerance = 1e-10;

struct QReport {
  Eigen::MatrixXd q;
  Index rank = 0;
  Eigen::MatrixXd nullspace_basis;  // orthonormal columns
  double min_eigenvalue = 0.0;
  std::vector<std::pair<GroupElement, double>> conditional_support;  // (g, p(g | A1))
};

// Joint (g, M) enumeration grouped by the canonical A1 matrix.
struct SplitClassTable {
  struct Member {
    GroupElement g;
    std::vector<Index> kept_rows;
    double probability;  // joint p(g) p(M)
  };
  struct Class {
    std::string key;
    double probability = 0.0;
    std::vector<Member> members;
  };
  std::vector<Class> classes;

  const Class* find(const std::string& key) const;
};

// Enumerates p(g) x p(M); refuses supports beyond max_pairs rather than
// subsampling.
SplitClassTable enumerate_split_classes(const ForwardOperator& a, const GroupAction& action,
                                        const SplitRule& rule, std::size_t max_pairs = 1000000);

// Q_{A1} = sum_g p(g | A1) T_g^T A^T A T_g for the class identified by the
// canonical key of A1.
QReport q_matrix(const ForwardOperator& a, const GroupAction& action, const SplitRule& rule,
                 const std::string& a1_key);

// Q for every enumerated class, with its marginal probability.
std::vector<std::pair<double, QReport>> q_reports(const ForwardOperator& a,
                                                  const GroupAction& action, const SplitRule& rule,
                                                  std::vector<std::string>* keys = nullptr);

// Q-bar = E_{A1 | A} [Q_{A1}].
QReport q_bar(const ForwardOperator& a, const GroupAction& action, const SplitRule& rule);

struct ObstructionReport {
  std::vector<Index> equivariant_elements;  // g with zero violation
  std::vector<double> violations;           // per g
  bool obstructed = false;                  // every g fixes A
  bool commutation_test = false;            // true when m == n (A T_g vs T_g A)
};

// For m == n tests ||A T_g - T_g A||_inf per g; otherwise ||A T_g - A||_inf,
// the obstruction that applies to rectangular operators.
ObstructionReport check_not_equivariant(const ForwardOperator& a, const GroupAction& action);

// E over enumerated (y1, A1) of Qbar^{-1} Q_{A1} f(y1, A1).
Eigen::VectorXd weighted_aggregate(const Reconstructor& f,
                                   const Eigen::Ref<const Eigen::VectorXd>& y,
                                   const ForwardOperator& a, const GroupAction& action,
                                   const SplitRule& rule);

// (1/J) sum_j T_{g_j} f(y1_j, A1_j) with g_j uniform and splits drawn against
// A T_{g_j}. With sigma > 0 each draw also adds the R2R input noise alpha * w.
Eigen::VectorXd test_time_average(const Reconstructor& f,
                                  const Eigen::Ref<const Eigen::VectorXd>& y,
                                  const ForwardOperator& a, const GroupAction& action,
                                  const SplitRule& rule, Index j, std::uint64_t seed,
                                  double alpha = 0.5, double sigma = 0.0);

// CSV rows: key index, probability, rank, min eigenvalue, verdict, eigenvalues.
void write_qscan_csv(const std::vector<std::pair<double, QReport>>& reports,
                     const std::string& path);

}  // namespace eqsplit
