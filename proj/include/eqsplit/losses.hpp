#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eqsplit/group.hpp"
#include "eqsplit/operators.hpp"
#include "eqsplit/reconstructors.hpp"

namespace eqsplit {

enum class LossKind { Sup, Mc, Split, Ei, Es, EsReduced, Ges, Sure };

struct LossSpec {
  LossKind kind = LossKind::Es;
  double lambda = 1.0;  // EI trade-off
  double alpha = 0.5;   // R2R coefficient
  double sigma = 0.0;   // known noise std
  SplitRule rule;
  const GroupAction* action = nullptr;
  int mc_samples = 1;
  int sure_probes = 1;
  bool exact_expectation = false;  // enumerate (g, split) instead of sampling
};

struct LossValue {
  double value = 0.0;
  Eigen::VectorXd gradient;  // empty when f has no parameters
  std::vector<std::pair<std::string, double>> terms;
};

LossKind loss_kind_from_string(const std::string& name);
std::string to_string(LossKind kind);

// ||f(y, A) - x||^2
LossValue sup_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y, const ForwardOperator& a);

// ||A f(y, A) - y||^2
LossValue mc_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                  const ForwardOperator& a);

// Single-split estimate of ||A f(y1, A1) - y||^2.
LossValue split_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                     const ForwardOperator& a, const SplitRule& rule, std::uint64_t seed);

// Measurement consistency plus the equivariance-promoting term with one
// uniform g per call.
LossValue ei_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                  const ForwardOperator& a, const GroupAction& action, double lambda,
                  std::uint64_t seed);

// Single (g, split) estimate of E_g E_split ||A T_g f(y1, A1) - y||^2 with the
// split drawn against the virtual operator A T_g. enumerate_g averages over
// the whole group with a shared split draw.
LossValue es_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                  const ForwardOperator& a, const GroupAction& action, const SplitRule& rule,
                  std::uint64_t seed, bool enumerate_g = false);

// Exact enumeration over the joint (g, split) support.
LossValue es_loss_expected(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                           const ForwardOperator& a, const GroupAction& action,
                           const SplitRule& rule);

// Equivariant shortcut: the splitting loss with no group sampling and exactly
// one model evaluation; matches es_loss pathwise under aligned seeds.
LossValue es_loss_reduced(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                          const ForwardOperator& a, const SplitRule& rule, std::uint64_t seed);

// Splitting loss with the consistency half replaced by the R2R pairing
// (y1 + alpha w, y1 - w/alpha), w ~ N(0, sigma^2 I).
LossValue ges_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                   const ForwardOperator& a, const GroupAction& action, const SplitRule& rule,
                   double alpha, double sigma, std::uint64_t seed);

// ||A f(y,A) - y||^2 - m sigma^2 + 2 sigma^2 divergence, divergence estimated
// with Rademacher probes and finite-difference step 1e-3 ||y||.
LossValue sure_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                    const ForwardOperator& a, double sigma, int probes, std::uint64_t seed);

// Dispatch on spec.kind; x is required for the supervised loss only.
LossValue evaluate_loss(const Reconstructor& f, const LossSpec& spec,
                        const std::optional<Eigen::VectorXd>& x,
                        const Eigen::Ref<const Eigen::VectorXd>& y, const ForwardOperator& a,
                        std::uint64_t seed);

// Deterministic per-purpose seed derivation (splitmix64 mix); the group, split
// and noise draws of one loss evaluation come from separate streams so that
// seed-aligned loss variants share their split realizations.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
inline constexpr std::uint64_t kGroupStream = 1;
inline constexpr std::uint64_t kSplitStream = 2;
inline constexpr std::uint64_t kNoiseStream = 3;
inline constexpr std::uint64_t kProbeStream = 4;

}  // namespace eqsplit
