#include "eqsplit/losses.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace eqsplit {

namespace {

LossValue finalize(ad::Tape& tape, const Reconstructor& f, ad::Node total,
                   std::vector<std::pair<std::string, double>> terms, double constant_shift = 0.0) {
  LossValue out;
  out.value = tape.scalar(total) + constant_shift;
  out.terms = std::move(terms);
  if (f.params()) out.gradient = tape.backward(total);
  return out;
}

// ||A1 f_hat - t1||^2 + ||A2 f_hat - y2||^2 for a split owned by the tape;
// summed over the two blocks this is the full-measurement residual.
struct SplitTerms {
  ad::Node total;
  double consistency = 0.0;
  double prediction = 0.0;
};

SplitTerms split_residual_terms(ad::Tape& tape, ad::Node f_hat, const SplitSample* split,
                                const Eigen::VectorXd& t1) {
  SplitTerms out;
  ad::Node term1 = tape.square_norm(
      tape.sub(tape.matvec(&split->a1.matrix, f_hat), tape.constant(t1)));
  out.consistency = tape.scalar(term1);
  out.total = term1;
  if (split->a2.m > 0) {
    ad::Node term2 = tape.square_norm(
        tape.sub(tape.matvec(&split->a2.matrix, f_hat), tape.constant(split->y2)));
    out.prediction = tape.scalar(term2);
    out.total = tape.add(out.total, term2);
  }
  return out;
}

SplitTerms es_term(ad::Tape& tape, const Reconstructor& f, const Eigen::VectorXd& y,
                   const ForwardOperator& a, const GroupAction& action, GroupElement g,
                   const std::vector<Index>& kept_rows) {
  const ForwardOperator* vop = tape.own(virtual_operator(a, action, g));
  const SplitSample* split = tape.own(make_split(kept_rows, y, *vop));
  ad::Node f_hat = f.trace(tape, tape.constant(split->y1), split->a1);
  return split_residual_terms(tape, f_hat, split, split->y1);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "sup") return LossKind::Sup;
  if (name == "mc") return LossKind::Mc;
  if (name == "split") return LossKind::Split;
  if (name == "ei") return LossKind::Ei;
  if (name == "es") return LossKind::Es;
  if (name == "es-reduced") return LossKind::EsReduced;
  if (name == "ges") return LossKind::Ges;
  if (name == "sure") return LossKind::Sure;
  throw std::invalid_argument("unknown loss kind: " + name);
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Sup: return "sup";
    case LossKind::Mc: return "mc";
    case LossKind::Split: return "split";
    case LossKind::Ei: return "ei";
    case LossKind::Es: return "es";
    case LossKind::EsReduced: return "es-reduced";
    case LossKind::Ges: return "ges";
    case LossKind::Sure: return "sure";
  }
  return "?";
}

LossValue sup_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y, const ForwardOperator& a) {
  if (x.size() != a.n) throw std::invalid_argument("sup_loss: ground truth dimension mismatch");
  ad::Tape tape(f.params());
  ad::Node f_hat = f.trace(tape, tape.constant(y), a);
  ad::Node total = tape.square_norm(tape.sub(f_hat, tape.constant(x)));
  return finalize(tape, f, total, {{"sup", tape.scalar(total)}});
}

LossValue mc_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                  const ForwardOperator& a) {
  ad::Tape tape(f.params());
  ad::Node f_hat = f.trace(tape, tape.constant(y), a);
  ad::Node total = tape.square_norm(tape.sub(tape.matvec(&a.matrix, f_hat), tape.constant(y)));
  return finalize(tape, f, total, {{"consistency", tape.scalar(total)}});
}

LossValue split_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                     const ForwardOperator& a, const SplitRule& rule, std::uint64_t seed) {
  Measurement meas;
  meas.y = y;
  meas.op = &a;
  const SplitSample sample = sample_split(rule, meas, a, mix_seed(seed, kSplitStream));

  ad::Tape tape(f.params());
  const SplitSample* split = tape.own(sample);
  ad::Node f_hat = f.trace(tape, tape.constant(split->y1), split->a1);
  SplitTerms terms = split_residual_terms(tape, f_hat, split, split->y1);
  return finalize(tape, f, terms.total,
                  {{"consistency", terms.consistency}, {"prediction", terms.prediction}});
}

LossValue ei_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                  const ForwardOperator& a, const GroupAction& action, double lambda,
                  std::uint64_t seed) {
  if (lambda <= 0.0) throw std::invalid_argument("ei_loss: lambda must be positive");
  std::mt19937_64 rng(mix_seed(seed, kGroupStream));
  std::uniform_int_distribution<Index> uniform(0, action.order() - 1);
  const GroupElement g{uniform(rng)};

  ad::Tape tape(f.params());
  ad::Node ynode = tape.constant(y);
  ad::Node x1 = f.trace(tape, ynode, a);
  ad::Node consistency = tape.square_norm(tape.sub(tape.matvec(&a.matrix, x1), ynode));

  ad::Node moved = ad::apply_group(tape, action, g, x1);
  ad::Node remeasured = tape.matvec(&a.matrix, moved);
  ad::Node x2 = f.trace(tape, remeasured, a);
  ad::Node equivariance = tape.scale(tape.square_norm(tape.sub(moved, x2)), lambda);

  ad::Node total = tape.add(consistency, equivariance);
  return finalize(tape, f, total,
                  {{"consistency", tape.scalar(consistency)},
                   {"equivariance", tape.scalar(equivariance)}});
}

LossValue es_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                  const ForwardOperator& a, const GroupAction& action, const SplitRule& rule,
                  std::uint64_t seed, bool enumerate_g) {
  Measurement meas;
  meas.y = y;
  meas.op = &a;
  // The admissible kept-row sets do not depend on g, so the same draw serves
  // every virtual operator.
  const SplitSample proto =
      sample_split(rule, meas, a, mix_seed(seed, kSplitStream));

  ad::Tape tape(f.params());
  if (enumerate_g) {
    ad::Node total;
    double consistency = 0.0, prediction = 0.0;
    const double w = 1.0 / static_cast<double>(action.order());
    for (Index g = 0; g < action.order(); ++g) {
      SplitTerms terms = es_term(tape, f, meas.y, a, action, {g}, proto.kept_rows);
      total = g == 0 ? terms.total : tape.add(total, terms.total);
      consistency += w * terms.consistency;
      prediction += w * terms.prediction;
    }
    total = tape.scale(total, w);
    return finalize(tape, f, total,
                    {{"consistency", consistency}, {"prediction", prediction}});
  }

  std::mt19937_64 rng(mix_seed(seed, kGroupStream));
  std::uniform_int_distribution<Index> uniform(0, action.order() - 1);
  SplitTerms terms = es_term(tape, f, meas.y, a, action, {uniform(rng)}, proto.kept_rows);
  return finalize(tape, f, terms.total,
                  {{"consistency", terms.consistency}, {"prediction", terms.prediction}});
}

LossValue es_loss_expected(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                           const ForwardOperator& a, const GroupAction& action,
                           const SplitRule& rule) {
  const auto support = enumerate_split_support(rule, a.m);
  if (static_cast<std::size_t>(action.order()) * support.size() > 1000000)
    throw std::invalid_argument("es_loss_expected: (g, split) support exceeds 1e6 pairs");

  ad::Tape tape(f.params());
  const Eigen::VectorXd yv = y;
  const double gw = 1.0 / static_cast<double>(action.order());
  ad::Node total;
  double consistency = 0.0, prediction = 0.0;
  bool first = true;
  for (Index g = 0; g < action.order(); ++g) {
    for (const auto& [kept, prob] : support) {
      SplitTerms terms = es_term(tape, f, yv, a, action, {g}, kept);
      ad::Node weighted = tape.scale(terms.total, gw * prob);
      total = first ? weighted : tape.add(total, weighted);
      first = false;
      consistency += gw * prob * terms.consistency;
      prediction += gw * prob * terms.prediction;
    }
  }
  return finalize(tape, f, total, {{"consistency", consistency}, {"prediction", prediction}});
}

LossValue es_loss_reduced(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                          const ForwardOperator& a, const SplitRule& rule, std::uint64_t seed) {
  if (f.equivariance_claim() != Reconstructor::Claim::ByConstruction)
    throw std::invalid_argument("es_loss_reduced: reconstructor does not claim equivariance");
  return split_loss(f, y, a, rule, seed);
}

LossValue ges_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                   const ForwardOperator& a, const GroupAction& action, const SplitRule& rule,
                   double alpha, double sigma, std::uint64_t seed) {
  if (alpha <= 0.0) throw std::invalid_argument("ges_loss: alpha must be positive");
  if (sigma < 0.0) throw std::invalid_argument("ges_loss: negative sigma");

  Measurement meas;
  meas.y = y;
  meas.op = &a;
  std::mt19937_64 grng(mix_seed(seed, kGroupStream));
  std::uniform_int_distribution<Index> uniform(0, action.order() - 1);
  const GroupElement g{uniform(grng)};

  ad::Tape tape(f.params());
  const ForwardOperator* vop = tape.own(virtual_operator(a, action, g));
  const SplitSample* split = tape.own(
      sample_split(rule, meas, *vop, mix_seed(seed, kSplitStream)));

  Eigen::VectorXd omega = Eigen::VectorXd::Zero(split->y1.size());
  if (sigma > 0.0) {
    std::mt19937_64 nrng(mix_seed(seed, kNoiseStream));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index i = 0; i < omega.size(); ++i) omega[i] = sigma * normal(nrng);
  }

  ad::Node f_hat = f.trace(tape, tape.constant(split->y1 + alpha * omega), split->a1);
  SplitTerms terms = split_residual_terms(tape, f_hat, split, split->y1 - omega / alpha);
  return finalize(tape, f, terms.total,
                  {{"consistency", terms.consistency}, {"prediction", terms.prediction}});
}

LossValue sure_loss(const Reconstructor& f, const Eigen::Ref<const Eigen::VectorXd>& y,
                    const ForwardOperator& a, double sigma, int probes, std::uint64_t seed) {
  if (sigma <= 0.0) throw std::invalid_argument("sure_loss: sigma must be positive");
  if (probes < 1) throw std::invalid_argument("sure_loss: need at least one probe");

  const double ynorm = y.norm();
  const double step = ynorm > 0.0 ? 1e-3 * ynorm : 1e-3;

  ad::Tape tape(f.params());
  ad::Node ynode = tape.constant(y);
  ad::Node h0 = tape.matvec(&a.matrix, f.trace(tape, ynode, a));
  ad::Node base = tape.square_norm(tape.sub(h0, ynode));

  std::mt19937_64 rng(mix_seed(seed, kProbeStream));
  std::uniform_int_distribution<int> coin(0, 1);
  ad::Node div_sum;
  for (int p = 0; p < probes; ++p) {
    Eigen::VectorXd probe(y.size());
    for (Index i = 0; i < y.size(); ++i) probe[i] = coin(rng) ? 1.0 : -1.0;
    ad::Node hp = tape.matvec(&a.matrix, f.trace(tape, tape.constant(y + step * probe), a));
    ad::Node contrib = tape.dot_const(tape.sub(hp, h0), probe);
    div_sum = p == 0 ? contrib : tape.add(div_sum, contrib);
  }
  const double div_scale = 2.0 * sigma * sigma / (static_cast<double>(probes) * step);
  ad::Node divergence = tape.scale(div_sum, div_scale);
  ad::Node total = tape.add(base, divergence);

  const double shift = -static_cast<double>(a.m) * sigma * sigma;
  return finalize(tape, f, total,
                  {{"consistency", tape.scalar(base) + shift},
                   {"divergence", tape.scalar(divergence)}},
                  shift);
}

namespace {

LossValue evaluate_loss_once(const Reconstructor& f, const LossSpec& spec,
                             const std::optional<Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& y, const ForwardOperator& a,
                             std::uint64_t seed) {
  switch (spec.kind) {
    case LossKind::Sup:
      if (!x) throw std::invalid_argument("evaluate_loss: supervised loss needs ground truth");
      return sup_loss(f, *x, y, a);
    case LossKind::Mc:
      return mc_loss(f, y, a);
    case LossKind::Split:
      return split_loss(f, y, a, spec.rule, seed);
    case LossKind::Ei:
      if (!spec.action) throw std::invalid_argument("evaluate_loss: EI needs a group action");
      return ei_loss(f, y, a, *spec.action, spec.lambda, seed);
    case LossKind::Es:
      if (!spec.action) throw std::invalid_argument("evaluate_loss: ES needs a group action");
      if (spec.exact_expectation) return es_loss_expected(f, y, a, *spec.action, spec.rule);
      return es_loss(f, y, a, *spec.action, spec.rule, seed);
    case LossKind::EsReduced:
      return es_loss_reduced(f, y, a, spec.rule, seed);
    case LossKind::Ges:
      if (!spec.action) throw std::invalid_argument("evaluate_loss: G-ES needs a group action");
      return ges_loss(f, y, a, *spec.action, spec.rule, spec.alpha, spec.sigma, seed);
    case LossKind::Sure:
      return sure_loss(f, y, a, spec.sigma, spec.sure_probes, seed);
  }
  throw std::logic_error("evaluate_loss: unreachable");
}

}  // namespace

LossValue evaluate_loss(const Reconstructor& f, const LossSpec& spec,
                        const std::optional<Eigen::VectorXd>& x,
                        const Eigen::Ref<const Eigen::VectorXd>& y, const ForwardOperator& a,
                        std::uint64_t seed) {
  const int samples = std::max(1, spec.mc_samples);
  LossValue total = evaluate_loss_once(f, spec, x, y, a, seed);
  for (int s = 1; s < samples; ++s) {
    const LossValue draw = evaluate_loss_once(f, spec, x, y, a, mix_seed(seed, 0xAB00 + s));
    total.value += draw.value;
    if (total.gradient.size() > 0) total.gradient += draw.gradient;
    for (std::size_t t = 0; t < total.terms.size(); ++t)
      total.terms[t].second += draw.terms[t].second;
  }
  if (samples > 1) {
    total.value /= samples;
    if (total.gradient.size() > 0) total.gradient /= samples;
    for (auto& [name, value] : total.terms) value /= samples;
  }
  return total;
}

}  // namespace eqsplit
