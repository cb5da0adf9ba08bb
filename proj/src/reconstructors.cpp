#include "eqsplit/reconstructors.hpp"

#include <cmath>
#include <stdexcept>

namespace eqsplit {

namespace {

Eigen::VectorXd glorot_uniform(Index count, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  Eigen::VectorXd v(count);
  for (Index i = 0; i < count; ++i) v[i] = uniform(rng);
  return v;
}

// A^T (A A^T + ridge)^{-1}; ridge only when A A^T is rank deficient.
Eigen::MatrixXd pinv_backprojection(const ForwardOperator& a, bool* used_ridge) {
  Eigen::MatrixXd gram = a.matrix * a.matrix.transpose();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
  const double dmin = ldlt.vectorD().minCoeff();
  bool deficient = ldlt.info() != Eigen::Success || dmin <= 1e-12 * dmax;
  if (deficient) {
    gram.diagonal().array() += 1e-12;
    ldlt.compute(gram);
    if (used_ridge) *used_ridge = true;
  }
  return ldlt.solve(a.matrix).transpose();
}

}  // namespace

Eigen::VectorXd Denoiser::apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  ad::Tape tape(params());
  return tape.value(trace(tape, tape.constant(x)));
}

// ---------------------------------------------------------------------------
// Denoisers

CircConvDenoiser::CircConvDenoiser(Index width, Index height, Index channels, Index layers,
                                   std::uint64_t seed)
    : width_(width), height_(height), channels_(channels), layers_(layers) {
  if (layers < 2 || layers > 3) throw std::invalid_argument("CircConvDenoiser: 2 or 3 layers");
  kw_ = width >= 3 ? 3 : 1;
  kh_ = height >= 3 ? 3 : 1;
  equivariant = true;

  std::mt19937_64 rng(seed);
  std::vector<Eigen::VectorXd> chunks;
  Index offset = 0;
  auto push_layer = [&](Index cin, Index cout) {
    LayerSpan span;
    span.shape = {cin, cout, width_, height_, kw_, kh_};
    span.kernel_offset = offset;
    const Index ksize = span.shape.kernel_size();
    chunks.push_back(glorot_uniform(ksize, cin * kw_ * kh_, cout * kw_ * kh_, rng));
    offset += ksize;
    span.bias_offset = offset;
    chunks.push_back(Eigen::VectorXd::Zero(cout));
    offset += cout;
    spans_.push_back(span);
  };
  push_layer(1, channels_);
  if (layers_ == 3) push_layer(channels_, channels_);
  push_layer(channels_, 1);

  params_.resize(offset);
  Index at = 0;
  for (const auto& c : chunks) {
    params_.segment(at, c.size()) = c;
    at += c.size();
  }
}

ad::Node CircConvDenoiser::trace(ad::Tape& tape, ad::Node x) const {
  ad::Node h = x;
  for (std::size_t l = 0; l < spans_.size(); ++l) {
    const auto& span = spans_[l];
    ad::Node kernel = tape.param(span.kernel_offset, span.shape.kernel_size());
    ad::Node bias = tape.param(span.bias_offset, span.shape.out_channels);
    h = tape.conv_circ2d(kernel, h, span.shape);
    h = tape.channel_bias(h, bias, span.shape.out_channels);
    if (l + 1 < spans_.size()) h = tape.tanh(h);
  }
  return tape.add(x, h);  // residual
}

GroupAveragedDenoiser::GroupAveragedDenoiser(std::shared_ptr<Denoiser> inner,
                                             const GroupAction& group)
    : inner_(std::move(inner)) {
  equivariant = true;
  action = &group;
}

ad::Node GroupAveragedDenoiser::trace(ad::Tape& tape, ad::Node x) const {
  ad::Node acc;
  for (Index g = 0; g < action->order(); ++g) {
    ad::Node moved = ad::apply_group(tape, *action, {g}, x);
    ad::Node term = ad::apply_group(tape, *action, action->inverse({g}), inner_->trace(tape, moved));
    acc = g == 0 ? term : tape.add(acc, term);
  }
  return tape.scale(acc, 1.0 / static_cast<double>(action->order()));
}

MlpDenoiser::MlpDenoiser(Index n, Index hidden, std::uint64_t seed) : n_(n), hidden_(hidden) {
  std::mt19937_64 rng(seed);
  params_.resize(hidden * n + hidden + n * hidden + n);
  Index at = 0;
  params_.segment(at, hidden * n) = glorot_uniform(hidden * n, n, hidden, rng);
  at += hidden * n;
  params_.segment(at, hidden).setZero();
  at += hidden;
  params_.segment(at, n * hidden) = glorot_uniform(n * hidden, hidden, n, rng);
  at += n * hidden;
  params_.segment(at, n).setZero();
}

ad::Node MlpDenoiser::trace(ad::Tape& tape, ad::Node x) const {
  Index at = 0;
  ad::Node w1 = tape.param(at, hidden_ * n_);
  at += hidden_ * n_;
  ad::Node b1 = tape.param(at, hidden_);
  at += hidden_;
  ad::Node w2 = tape.param(at, n_ * hidden_);
  at += n_ * hidden_;
  ad::Node b2 = tape.param(at, n_);

  ad::Node h = tape.tanh(tape.add(tape.linear(w1, hidden_, n_, x), b1));
  return tape.add(x, tape.add(tape.linear(w2, n_, hidden_, h), b2));
}

// ---------------------------------------------------------------------------
// Reconstructor base

Eigen::VectorXd Reconstructor::apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                                     const ForwardOperator& a) const {
  ++eval_count_;
  return do_apply(y, a);
}

ad::Node Reconstructor::trace(ad::Tape& tape, ad::Node y, const ForwardOperator& a) const {
  ++eval_count_;
  return do_trace(tape, y, a);
}

Eigen::VectorXd Reconstructor::do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                                        const ForwardOperator& a) const {
  ad::Tape tape(params());
  return tape.value(do_trace(tape, tape.constant(y), a));
}

ad::Node Reconstructor::do_trace(ad::Tape& tape, ad::Node y, const ForwardOperator& a) const {
  // Closed-form reconstructors enter the tape as constants; gradients stop
  // here because they carry no trainable parameters.
  return tape.constant(do_apply(tape.value(y), a));
}

// ---------------------------------------------------------------------------
// Artifact removal

ArtifactRemovalReconstructor::ArtifactRemovalReconstructor(std::shared_ptr<Denoiser> denoiser,
                                                           Mode mode)
    : denoiser_(std::move(denoiser)), mode_(mode) {
  if (denoiser_->equivariant) {
    claim_ = Claim::ByConstruction;
    claim_action_ = denoiser_->action;
  }
}

ad::Node ArtifactRemovalReconstructor::do_trace(ad::Tape& tape, ad::Node y,
                                                const ForwardOperator& a) const {
  ad::Node u;
  if (mode_ == Mode::Adjoint) {
    u = tape.matvec_t(&a.matrix, y);
  } else {
    bool ridge = false;
    const Eigen::MatrixXd* p = tape.own(pinv_backprojection(a, &ridge));
    if (ridge) used_ridge_ = true;
    u = tape.matvec(p, y);
  }
  return denoiser_->trace(tape, u);
}

// ---------------------------------------------------------------------------
// Unrolled

UnrolledReconstructor::UnrolledReconstructor(std::shared_ptr<Denoiser> denoiser, double gamma,
                                             Index iterations)
    : denoiser_(std::move(denoiser)), gamma_(gamma), iterations_(iterations) {
  if (iterations < 1) throw std::invalid_argument("UnrolledReconstructor: need iterations >= 1");
  if (denoiser_->equivariant) {
    claim_ = Claim::ByConstruction;
    claim_action_ = denoiser_->action;
  }
}

ad::Node UnrolledReconstructor::do_trace(ad::Tape& tape, ad::Node y,
                                         const ForwardOperator& a) const {
  ad::Node x = tape.constant(Eigen::VectorXd::Zero(a.n));
  for (Index k = 0; k < iterations_; ++k) {
    ad::Node residual = tape.sub(tape.matvec(&a.matrix, x), y);
    ad::Node step = tape.scale(tape.matvec_t(&a.matrix, residual), gamma_);
    x = denoiser_->trace(tape, tape.sub(x, step));
    if (tape.value(x).lpNorm<Eigen::Infinity>() > 1e6)
      throw std::runtime_error("UnrolledReconstructor: iterate norm exceeded 1e6 (divergent step size?)");
  }
  return x;
}

// ---------------------------------------------------------------------------
// Reynolds averaging

ReynoldsAverageReconstructor::ReynoldsAverageReconstructor(std::shared_ptr<Reconstructor> inner,
                                                           const GroupAction& action)
    : inner_(std::move(inner)), action_(&action) {
  claim_ = Claim::ByConstruction;
  claim_action_ = action_;
}

ad::Node ReynoldsAverageReconstructor::do_trace(ad::Tape& tape, ad::Node y,
                                                const ForwardOperator& a) const {
  if (sampler_) {
    std::uniform_int_distribution<Index> uniform(0, action_->order() - 1);
    const GroupElement g{uniform(*sampler_)};
    const ForwardOperator* vop = tape.own(virtual_operator(a, *action_, g));
    return ad::apply_group(tape, *action_, g, inner_->trace(tape, y, *vop));
  }

  ad::Node acc;
  for (Index g = 0; g < action_->order(); ++g) {
    const ForwardOperator* vop = tape.own(virtual_operator(a, *action_, {g}));
    ad::Node term = ad::apply_group(tape, *action_, {g}, inner_->trace(tape, y, *vop));
    acc = g == 0 ? term : tape.add(acc, term);
  }
  return tape.scale(acc, 1.0 / static_cast<double>(action_->order()));
}

// ---------------------------------------------------------------------------
// Linear model

LinearReconstructor::LinearReconstructor(Index n, std::uint64_t seed) : n_(n) {
  std::mt19937_64 rng(seed);
  params_.resize(n * n + n);
  params_.head(n * n) = glorot_uniform(n * n, n, n, rng);
  params_.tail(n).setZero();
}

void LinearReconstructor::set_weights(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  if (w.rows() != n_ || w.cols() != n_ || b.size() != n_)
    throw std::invalid_argument("LinearReconstructor::set_weights: shape mismatch");
  for (Index i = 0; i < n_; ++i)
    for (Index j = 0; j < n_; ++j) params_[i * n_ + j] = w(i, j);
  params_.tail(n_) = b;
}

ad::Node LinearReconstructor::do_trace(ad::Tape& tape, ad::Node y,
                                       const ForwardOperator& a) const {
  if (a.n != n_) throw std::invalid_argument("LinearReconstructor: operator dimension mismatch");
  ad::Node u = tape.matvec_t(&a.matrix, y);
  ad::Node w = tape.param(0, n_ * n_);
  ad::Node b = tape.param(n_ * n_, n_);
  return tape.add(tape.linear(w, n_, n_, u), b);
}

// ---------------------------------------------------------------------------
// Tabular model

TabularReconstructor TabularReconstructor::enumerate_noiseless(const DiscretePrior& prior,
                                                               const ForwardOperator& a,
                                                               const GroupAction& action,
                                                               const SplitRule& rule) {
  if (prior.dim() != a.n) throw std::invalid_argument("TabularReconstructor: dimension mismatch");
  TabularReconstructor model;
  model.n_ = a.n;
  const auto support = enumerate_split_support(rule, a.m);
  for (Index k = 0; k < prior.count(); ++k) {
    const Eigen::VectorXd y = a.matrix * prior.atoms.col(k);
    for (Index g = 0; g < action.order(); ++g) {
      const ForwardOperator vop = virtual_operator(a, action, {g});
      for (const auto& [kept, prob] : support) {
        const SplitSample split = make_split(kept, y, vop);
        const std::string key = canonical_split_key(split.a1.matrix, split.y1);
        model.slots_.emplace(key, static_cast<Index>(model.slots_.size()));
      }
    }
  }
  model.params_ = Eigen::VectorXd::Zero(static_cast<Index>(model.slots_.size()) * a.n);
  return model;
}

bool TabularReconstructor::has_key(const Eigen::Ref<const Eigen::VectorXd>& y1,
                                   const ForwardOperator& a1) const {
  return slots_.count(canonical_split_key(a1.matrix, y1)) > 0;
}

Eigen::VectorXd TabularReconstructor::table_entry(const Eigen::Ref<const Eigen::VectorXd>& y1,
                                                  const ForwardOperator& a1) const {
  const auto it = slots_.find(canonical_split_key(a1.matrix, y1));
  if (it == slots_.end()) throw std::out_of_range("TabularReconstructor: unseen (y1, A1)");
  return params_.segment(it->second * n_, n_);
}

ad::Node TabularReconstructor::do_trace(ad::Tape& tape, ad::Node y,
                                        const ForwardOperator& a) const {
  const auto it = slots_.find(canonical_split_key(a.matrix, tape.value(y)));
  if (it == slots_.end()) throw std::out_of_range("TabularReconstructor: unseen (y1, A1)");
  return tape.param(it->second * n_, n_);
}

// ---------------------------------------------------------------------------
// Oracles

DiscreteMmseReconstructor::DiscreteMmseReconstructor(const DiscretePrior* prior, double sigma)
    : prior_(prior), sigma_(sigma) {
  if (prior_->symmetrized) {
    claim_ = Claim::ByConstruction;
    claim_action_ = prior_->action;
  }
}

Eigen::VectorXd DiscreteMmseReconstructor::do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                                                    const ForwardOperator& a) const {
  return posterior_mean_discrete(*prior_, y, a, sigma_);
}

GmmMmseReconstructor::GmmMmseReconstructor(const GaussianMixturePrior* prior, double sigma)
    : prior_(prior), sigma_(sigma) {
  if (prior_->symmetrized) {
    claim_ = Claim::ByConstruction;
    claim_action_ = prior_->action;
  }
}

Eigen::VectorXd GmmMmseReconstructor::do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                                               const ForwardOperator& a) const {
  return posterior_mean_gmm(*prior_, y, a, sigma_);
}

GaussianMapReconstructor::GaussianMapReconstructor(Eigen::VectorXd mean, Eigen::MatrixXd cov,
                                                   double sigma, const GroupAction* action)
    : mean_(std::move(mean)), cov_(std::move(cov)), sigma_(sigma) {
  claim_ = Claim::ByConstruction;
  claim_action_ = action;
}

Eigen::VectorXd GaussianMapReconstructor::do_apply(const Eigen::Ref<const Eigen::VectorXd>& y,
                                                   const ForwardOperator& a) const {
  return map_gaussian(mean_, cov_, y, a, sigma_);
}

// ---------------------------------------------------------------------------
// Equivariance checks

EquivarianceReport check_equivariance(const Reconstructor& f, const GroupAction& action, int trials,
                                      std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("check_equivariance: need trials >= 1");
  const Index n = action.n();
  const Index m = std::max<Index>(1, n / 2);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  EquivarianceReport report;
  report.per_g.assign(action.order(), 0.0);
  for (int t = 0; t < trials; ++t) {
    ForwardOperator a;
    a.kind = OperatorKind::Dense;
    a.m = m;
    a.n = n;
    a.matrix.resize(m, n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (Index r = 0; r < m; ++r)
      for (Index c = 0; c < n; ++c) a.matrix(r, c) = scale * normal(rng);
    Eigen::VectorXd y(m);
    for (Index i = 0; i < m; ++i) y[i] = normal(rng);

    const Eigen::VectorXd base = f.apply(y, a);
    for (Index g = 0; g < action.order(); ++g) {
      const ForwardOperator vop = virtual_operator(a, action, {g});
      const Eigen::VectorXd lhs = f.apply(y, vop);
      const Eigen::VectorXd rhs = action.apply_inverse({g}, base);
      const double residual = (lhs - rhs).lpNorm<Eigen::Infinity>();
      report.per_g[g] = std::max(report.per_g[g], residual);
      report.max_residual = std::max(report.max_residual, residual);
    }
  }
  return report;
}

double equiv_metric(const Reconstructor& f, const std::vector<Eigen::VectorXd>& measurements,
                    const ForwardOperator& op, const GroupAction& action, std::uint64_t seed) {
  if (measurements.empty()) throw std::invalid_argument("equiv_metric: empty dataset");

  std::vector<Index> elements;
  if (action.order() <= 64) {
    for (Index g = 0; g < action.order(); ++g) elements.push_back(g);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> uniform(0, action.order() - 1);
    for (int i = 0; i < 64; ++i) elements.push_back(uniform(rng));
  }

  double total = 0.0;
  std::size_t count = 0;
  for (const auto& y : measurements) {
    const Eigen::VectorXd base = f.apply(y, op);
    for (Index g : elements) {
      const ForwardOperator vop = virtual_operator(op, action, {g});
      total += (f.apply(y, vop) - action.apply_inverse({g}, base)).squaredNorm();
      ++count;
    }
  }
  const double mean_sq = total / static_cast<double>(count);
  if (mean_sq <= 1e-15) return 150.0;
  return std::min(150.0, -10.0 * std::log10(mean_sq));
}

std::shared_ptr<Reconstructor> make_parametric(const ParametricSpec& spec,
                                               const GroupAction* action) {
  if (spec.arch == "linear") {
    return std::make_shared<LinearReconstructor>(spec.width * spec.height, spec.seed);
  }
  if (spec.arch == "tabular") {
    if (!spec.prior || !spec.op || !spec.rule)
      throw std::invalid_argument("make_parametric: tabular needs prior, operator and rule");
    return std::make_shared<TabularReconstructor>(
        TabularReconstructor::enumerate_noiseless(*spec.prior, *spec.op, *action, *spec.rule));
  }
  if (spec.arch == "conv-mlp") {
    std::shared_ptr<Denoiser> denoiser;
    if (spec.equivariant) {
      auto conv = std::make_shared<CircConvDenoiser>(spec.width, spec.height, spec.channels,
                                                     spec.layers, spec.seed);
      conv->action = action;
      denoiser = std::move(conv);
    } else {
      denoiser = std::make_shared<MlpDenoiser>(spec.width * spec.height, spec.hidden, spec.seed);
    }
    auto model = std::make_shared<ArtifactRemovalReconstructor>(
        denoiser, ArtifactRemovalReconstructor::Mode::Adjoint);
    if (spec.equivariant && action && action->name().starts_with("dihedral")) {
      return std::make_shared<ReynoldsAverageReconstructor>(model, *action);
    }
    return model;
  }
  throw std::invalid_argument("make_parametric: unknown architecture " + spec.arch);
}

}  // namespace eqsplit
