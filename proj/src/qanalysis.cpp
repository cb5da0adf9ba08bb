#include "eqsplit/qanalysis.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

namespace eqsplit {

namespace {

QReport build_report(Eigen::MatrixXd q,
                     std::vector<std::pair<GroupElement, double>> conditional_support) {
  QReport report;
  report.q = 0.5 * (q + q.transpose());
  report.conditional_support = std::move(conditional_support);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(report.q);
  const Eigen::VectorXd& values = eig.eigenvalues();
  report.min_eigenvalue = values.minCoeff();
  const double top = values.cwiseAbs().maxCoeff();
  const double threshold = top > 0.0 ? kRankTolerance * top : 0.0;

  Index nullity = 0;
  for (Index i = 0; i < values.size(); ++i)
    if (values[i] <= threshold) ++nullity;
  report.rank = values.size() - nullity;
  report.nullspace_basis = eig.eigenvectors().leftCols(nullity);  // ascending eigenvalues
  return report;
}

QReport class_report(const ForwardOperator& a, const GroupAction& action,
                     const SplitClassTable::Class& cls) {
  // (A T_g)^T (A T_g) depends on g only; pool member probabilities per g.
  std::map<Index, double> per_g;
  for (const auto& member : cls.members) per_g[member.g.index] += member.probability;

  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(a.n, a.n);
  std::vector<std::pair<GroupElement, double>> support;
  for (const auto& [g, p] : per_g) {
    const Eigen::MatrixXd b = virtual_operator(a, action, {g}).matrix;
    const double weight = p / cls.probability;
    q += weight * (b.transpose() * b);
    support.push_back({GroupElement{g}, weight});
  }
  return build_report(std::move(q), std::move(support));
}

}  // namespace

const SplitClassTable::Class* SplitClassTable::find(const std::string& key) const {
  for (const auto& cls : classes)
    if (cls.key == key) return &cls;
  return nullptr;
}

SplitClassTable enumerate_split_classes(const ForwardOperator& a, const GroupAction& action,
                                        const SplitRule& rule, std::size_t max_pairs) {
  const auto support = enumerate_split_support(rule, a.m);
  const std::size_t pairs = static_cast<std::size_t>(action.order()) * support.size();
  if (pairs > max_pairs)
    throw std::invalid_argument("enumerate_split_classes: (g, M) support exceeds the cap");

  SplitClassTable table;
  std::map<std::string, std::size_t> index_of;
  const double gw = 1.0 / static_cast<double>(action.order());
  for (Index g = 0; g < action.order(); ++g) {
    const ForwardOperator vop = virtual_operator(a, action, {g});
    for (const auto& [kept, prob] : support) {
      Eigen::MatrixXd a1(kept.size(), a.n);
      for (std::size_t i = 0; i < kept.size(); ++i)
        a1.row(static_cast<Index>(i)) = vop.matrix.row(kept[i]);
      std::string key = canonical_operator_key(a1);

      auto [it, inserted] = index_of.emplace(std::move(key), table.classes.size());
      if (inserted) {
        table.classes.push_back({it->first, 0.0, {}});
      }
      auto& cls = table.classes[it->second];
      cls.probability += gw * prob;
      cls.members.push_back({GroupElement{g}, kept, gw * prob});
    }
  }
  return table;
}

QReport q_matrix(const ForwardOperator& a, const GroupAction& action, const SplitRule& rule,
                 const std::string& a1_key) {
  const SplitClassTable table = enumerate_split_classes(a, action, rule);
  const auto* cls = table.find(a1_key);
  if (!cls) throw std::invalid_argument("q_matrix: A1 key not in the enumerated support");
  return class_report(a, action, *cls);
}

std::vector<std::pair<double, QReport>> q_reports(const ForwardOperator& a,
                                                  const GroupAction& action, const SplitRule& rule,
                                                  std::vector<std::string>* keys) {
  const SplitClassTable table = enumerate_split_classes(a, action, rule);
  std::vector<std::pair<double, QReport>> out;
  for (const auto& cls : table.classes) {
    out.emplace_back(cls.probability, class_report(a, action, cls));
    if (keys) keys->push_back(cls.key);
  }
  return out;
}

QReport q_bar(const ForwardOperator& a, const GroupAction& action, const SplitRule& rule) {
  const SplitClassTable table = enumerate_split_classes(a, action, rule);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(a.n, a.n);
  std::map<Index, double> marginal;
  for (const auto& cls : table.classes) {
    const QReport report = class_report(a, action, cls);
    q += cls.probability * report.q;
    for (const auto& [g, p] : report.conditional_support)
      marginal[g.index] += cls.probability * p;
  }
  std::vector<std::pair<GroupElement, double>> support;
  for (const auto& [g, p] : marginal) support.push_back({GroupElement{g}, p});
  return build_report(std::move(q), std::move(support));
}

ObstructionReport check_not_equivariant(const ForwardOperator& a, const GroupAction& action) {
  ObstructionReport report;
  report.commutation_test = a.m == a.n;
  for (Index g = 0; g < action.order(); ++g) {
    const Eigen::MatrixXd at = virtual_operator(a, action, {g}).matrix;
    double violation = 0.0;
    if (report.commutation_test) {
      violation = (at - action.matrix({g}) * a.matrix).lpNorm<Eigen::Infinity>();
    } else {
      violation = (at - a.matrix).lpNorm<Eigen::Infinity>();
    }
    report.violations.push_back(violation);
    if (violation == 0.0) report.equivariant_elements.push_back(g);
  }
  report.obstructed =
      static_cast<Index>(report.equivariant_elements.size()) == action.order();
  return report;
}

Eigen::VectorXd weighted_aggregate(const Reconstructor& f,
                                   const Eigen::Ref<const Eigen::VectorXd>& y,
                                   const ForwardOperator& a, const GroupAction& action,
                                   const SplitRule& rule) {
  if (y.size() != a.m) throw std::invalid_argument("weighted_aggregate: dimension mismatch");
  const SplitClassTable table = enumerate_split_classes(a, action, rule);

  const QReport bar = q_bar(a, action, rule);
  Eigen::LDLT<Eigen::MatrixXd> bar_solver(bar.q);
  if (bar_solver.info() != Eigen::Success ||
      bar.rank < a.n)
    throw std::runtime_error("weighted_aggregate: Q-bar is singular at tolerance");

  Eigen::VectorXd out = Eigen::VectorXd::Zero(a.n);
  for (const auto& cls : table.classes) {
    const QReport q = class_report(a, action, cls);
    for (const auto& member : cls.members) {
      const ForwardOperator vop = virtual_operator(a, action, member.g);
      const SplitSample split = make_split(member.kept_rows, y, vop);
      out += member.probability * bar_solver.solve(q.q * f.apply(split.y1, split.a1));
    }
  }
  return out;
}

Eigen::VectorXd test_time_average(const Reconstructor& f,
                                  const Eigen::Ref<const Eigen::VectorXd>& y,
                                  const ForwardOperator& a, const GroupAction& action,
                                  const SplitRule& rule, Index j, std::uint64_t seed, double alpha,
                                  double sigma) {
  if (j < 1) throw std::invalid_argument("test_time_average: need J >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> uniform(0, action.order() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);

  Measurement meas;
  meas.y = y;
  meas.op = &a;

  Eigen::VectorXd out = Eigen::VectorXd::Zero(a.n);
  for (Index draw = 0; draw < j; ++draw) {
    const GroupElement g{uniform(rng)};
    const ForwardOperator vop = virtual_operator(a, action, g);
    const SplitSample split = sample_split(rule, meas, vop, rng());
    Eigen::VectorXd input = split.y1;
    if (sigma > 0.0) {
      for (Index i = 0; i < input.size(); ++i) input[i] += alpha * sigma * normal(rng);
    }
    out += action.apply(g, f.apply(input, split.a1));
  }
  return out / static_cast<double>(j);
}

void write_qscan_csv(const std::vector<std::pair<double, QReport>>& reports,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_qscan_csv: cannot open " + path);
  out << "class,probability,rank,n,min_eigenvalue,verdict,eigenvalues\n";
  out.precision(12);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& [prob, report] = reports[i];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(report.q);
    out << i << ',' << prob << ',' << report.rank << ',' << report.q.rows() << ','
        << report.min_eigenvalue << ','
        << (report.rank == report.q.rows() ? "full-rank" : "rank-deficient");
    for (Index k = 0; k < eig.eigenvalues().size(); ++k) out << ',' << eig.eigenvalues()[k];
    out << '\n';
  }
}

}  // namespace eqsplit
