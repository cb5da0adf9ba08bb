#pragma once

#include <Eigen/Dense>

#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "eqsplit/autodiff.hpp"
#include "eqsplit/group.hpp"
#include "eqsplit/operators.hpp"
#include "eqsplit/priors.hpp"

namespace eqsplit {

// Trainable image-to-image map recorded on a tape. Parameter offsets are
// local to the owning model's flat vector.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual ad::Node trace(ad::Tape& tape, ad::Node x) const = 0;
  virtual Eigen::VectorXd* params() { return nullptr; }
  const Eigen::VectorXd* params() const { return const_cast<Denoiser*>(this)->params(); }

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  bool equivariant = false;
  const GroupAction* action = nullptr;
};

class IdentityDenoiser final : public Denoiser {
 public:
  IdentityDenoiser() { equivariant = true; }
  ad::Node trace(ad::Tape&, ad::Node x) const override { return x; }
};

// Residual stack of circular convolutions with per-channel biases and tanh
// activations; shift-equivariant by construction.
class CircConvDenoiser final : public Denoiser {
 public:
  CircConvDenoiser(Index width, Index height, Index channels, Index layers, std::uint64_t seed);
  ad::Node trace(ad::Tape& tape, ad::Node x) const override;
  Eigen::VectorXd* params() override { return &params_; }
  Index width() const { return width_; }
  Index height() const { return height_; }

 private:
  Index width_, height_, channels_, layers_, kw_, kh_;
  Eigen::VectorXd params_;
  struct LayerSpan {
    ad::ConvShape shape;
    Index kernel_offset, bias_offset;
  };
  std::vector<LayerSpan> spans_;
};

// phi(x) = (1/|G|) sum_g T_g^{-1} psi(T_g x): averaging makes any denoiser
// equivariant to the given action.
class GroupAveragedDenoiser final : public Denoiser {
 public:
  GroupAveragedDenoiser(std::shared_ptr<Denoiser> inner, const GroupAction& group);
  ad::Node trace(ad::Tape& tape, ad::Node x) const override;
  Eigen::VectorXd* params() override { return inner_->params(); }

 private:
  std::shared_ptr<Denoiser> inner_;
};

// Dense residual MLP; deliberately not equivariant.
class MlpDenoiser final : public Denoiser {
 public:
  MlpDenoiser(Index n, Index hidden, std::uint64_t seed);
  ad::Node trace(ad::Tape& tape, ad::Node x) const override;
  Eigen::VectorXd* params() override { return &params_; }

 private:
  Index n_, hidden_;
  Eigen::VectorXd params_;
};

// A reconstruction map (y, A) -> x_hat. Subclasses override do_apply (closed
// forms) or do_trace (trainable models); the missing one is derived. The
// public entry points count evaluations so tests can verify call budgets.
class Reconstructor {
 public:
  enum class Claim { None, ByConstruction };

  virtual ~Reconstructor() = default;

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                        const ForwardOperator& a) const;
  ad::Node trace(ad::Tape& tape, ad::Node y, const ForwardOperator& a) const;

  virtual Eigen::VectorXd* params() { return nullptr; }
  const Eigen::VectorXd* params() const { return const_cast<Reconstructor*>(this)->params(); }
  Index param_count() const {
    const auto* p = params();
    return p ? p->size() : 0;
  }

  Claim equivariance_claim() const { return claim_; }
  const GroupAction* claim_action() const { return claim_action_; }

  long eval_count() const { return eval_count_; }
  void reset_eval_count() const { eval_count_ = 0; }

 protected:
  virtual Eigen::VectorXd do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                                   const ForwardOperator& a) const;
  virtual ad::Node do_trace(ad::Tape& tape, ad::Node y, const ForwardOperator& a) const;

  Claim claim_ = Claim::None;
  const GroupAction* claim_action_ = nullptr;

 private:
  mutable long eval_count_ = 0;
};

// phi(A^T y) or phi(A^dagger y). Pseudoinverse uses A^T (A A^T)^{-1}; a
// rank-deficient A A^T falls back to a 1e-12 ridge and sets the flag.
class ArtifactRemovalReconstructor final : public Reconstructor {
 public:
  enum class Mode { Adjoint, Pseudoinverse };
  ArtifactRemovalReconstructor(std::shared_ptr<Denoiser> denoiser, Mode mode);
  bool used_ridge_fallback() const { return used_ridge_; }
  Eigen::VectorXd* params() override { return denoiser_->params(); }

 protected:
  ad::Node do_trace(ad::Tape& tape, ad::Node y, const ForwardOperator& a) const override;

 private:
  std::shared_ptr<Denoiser> denoiser_;
  Mode mode_;
  mutable bool used_ridge_ = false;
};

// x_0 = 0, x_{k+1} = phi(x_k - gamma A^T (A x_k - y)), returns x_L.
class UnrolledReconstructor final : public Reconstructor {
 public:
  UnrolledReconstructor(std::shared_ptr<Denoiser> denoiser, double gamma, Index iterations);
  Eigen::VectorXd* params() override { return denoiser_->params(); }

 protected:
  ad::Node do_trace(ad::Tape& tape, ad::Node y, const ForwardOperator& a) const override;

 private:
  std::shared_ptr<Denoiser> denoiser_;
  double gamma_;
  Index iterations_;
};

// (1/|G|) sum_g T_g r(y, A T_g); equivariant by construction. With a sampler
// bound, training evaluations use a single uniform g (unbiased); verification
// paths must use the exact sum.
class ReynoldsAverageReconstructor final : public Reconstructor {
 public:
  ReynoldsAverageReconstructor(std::shared_ptr<Reconstructor> inner, const GroupAction& action);
  Eigen::VectorXd* params() override { return inner_->params(); }
  void bind_sampler(std::mt19937_64* rng) { sampler_ = rng; }

 protected:
  ad::Node do_trace(ad::Tape& tape, ad::Node y, const ForwardOperator& a) const override;

 private:
  std::shared_ptr<Reconstructor> inner_;
  const GroupAction* action_;
  std::mt19937_64* sampler_ = nullptr;
};

// f = W u + b on the backprojection u = A^T y.
class LinearReconstructor final : public Reconstructor {
 public:
  LinearReconstructor(Index n, std::uint64_t seed);
  Eigen::VectorXd* params() override { return &params_; }
  void set_weights(const Eigen::MatrixXd& w, const Eigen::VectorXd& b);

 protected:
  ad::Node do_trace(ad::Tape& tape, ad::Node y, const ForwardOperator& a) const override;

 private:
  Index n_;
  Eigen::VectorXd params_;
};

// One free image vector per reachable (y1, A1) of an enumerated noiseless
// problem; keys are canonical split keys, so any row ordering of the same
// split resolves to the same entry.
class TabularReconstructor final : public Reconstructor {
 public:
  static TabularReconstructor enumerate_noiseless(const DiscretePrior& prior,
                                                  const ForwardOperator& a,
                                                  const GroupAction& action, const SplitRule& rule);
  Eigen::VectorXd* params() override { return &params_; }
  Index table_size() const { return static_cast<Index>(slots_.size()); }
  bool has_key(const Eigen::Ref<const Eigen::VectorXd>& y1, const ForwardOperator& a1) const;
  Eigen::VectorXd table_entry(const Eigen::Ref<const Eigen::VectorXd>& y1,
                              const ForwardOperator& a1) const;

 protected:
  ad::Node do_trace(ad::Tape& tape, ad::Node y, const ForwardOperator& a) const override;

 private:
  Index n_ = 0;
  Eigen::VectorXd params_;
  std::unordered_map<std::string, Index> slots_;
};

// Closed-form oracles; equivariant whenever their prior is invariant.
class DiscreteMmseReconstructor final : public Reconstructor {
 public:
  DiscreteMmseReconstructor(const DiscretePrior* prior, double sigma);

 protected:
  Eigen::VectorXd do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                           const ForwardOperator& a) const override;

 private:
  const DiscretePrior* prior_;
  double sigma_;
};

class GmmMmseReconstructor final : public Reconstructor {
 public:
  GmmMmseReconstructor(const GaussianMixturePrior* prior, double sigma);

 protected:
  Eigen::VectorXd do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                           const ForwardOperator& a) const override;

 private:
  const GaussianMixturePrior* prior_;
  double sigma_;
};

class GaussianMapReconstructor final : public Reconstructor {
 public:
  GaussianMapReconstructor(Eigen::VectorXd mean, Eigen::MatrixXd cov, double sigma,
                           const GroupAction* action);

 protected:
  Eigen::VectorXd do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                           const ForwardOperator& a) const override;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  double sigma_;
};

struct EquivarianceReport {
  double max_residual = 0.0;
  std::vector<double> per_g;  // max residual per group element
};

// max over trials and g of ||f(y, A T_g) - T_g^{-1} f(y, A)||_inf with random
// y and random dense A.
EquivarianceReport check_equivariance(const Reconstructor& f, const GroupAction& action, int trials,
                                      std::uint64_t seed);

// -10 log10(mean squared equivariance residual) in dB, capped at 150.
double equiv_metric(const Reconstructor& f, const std::vector<Eigen::VectorXd>& measurements,
                    const ForwardOperator& op, const GroupAction& action, std::uint64_t seed);

struct ParametricSpec {
  std::string arch;  // "linear", "conv-mlp", "tabular"
  Index width = 0;
  Index height = 1;
  Index channels = 8;
  Index layers = 3;
  Index hidden = 32;
  bool equivariant = true;
  std::uint64_t seed = 0;
  // tabular only:
  const DiscretePrior* prior = nullptr;
  const ForwardOperator* op = nullptr;
  const SplitRule* rule = nullptr;
};

// conv-mlp builds an artifact-removal model around a circular-conv denoiser
// (MLP denoiser when equivariant = false); a dihedral action additionally
// wraps it in Reynolds averaging.
std::shared_ptr<Reconstructor> make_parametric(const ParametricSpec& spec,
                                               const GroupAction* action);

}  // namespace eqsplit
