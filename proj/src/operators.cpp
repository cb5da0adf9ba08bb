#include "eqsplit/operators.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace eqsplit {

namespace {

constexpr char kOperatorMagic[4] = {'E', 'Q', 'O', 'P'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("operator file truncated");
  return v;
}

}  // namespace

Eigen::VectorXd ForwardOperator::apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != n) throw std::invalid_argument("ForwardOperator::apply: dimension mismatch");
  return matrix * x;
}

Eigen::VectorXd ForwardOperator::adjoint(const Eigen::Ref<const Eigen::VectorXd>& y) const {
  if (y.size() != m) throw std::invalid_argument("ForwardOperator::adjoint: dimension mismatch");
  return matrix.transpose() * y;
}

ForwardOperator make_inpainting(Index n, const std::vector<bool>& keep_mask) {
  if (static_cast<Index>(keep_mask.size()) != n)
    throw std::invalid_argument("make_inpainting: mask length must equal n");
  std::vector<Index> kept;
  for (Index i = 0; i < n; ++i)
    if (keep_mask[i]) kept.push_back(i);
  if (kept.empty()) throw std::invalid_argument("make_inpainting: empty keep mask");

  ForwardOperator op;
  op.kind = OperatorKind::RowMask;
  op.m = static_cast<Index>(kept.size());
  op.n = n;
  op.selection = kept;
  op.matrix = Eigen::MatrixXd::Zero(op.m, n);
  for (Index r = 0; r < op.m; ++r) op.matrix(r, kept[r]) = 1.0;
  return op;
}

ForwardOperator make_gaussian_cs(Index m, Index n, std::uint64_t seed) {
  if (m < 1 || m > n) throw std::invalid_argument("make_gaussian_cs: need 1 <= m <= n");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ForwardOperator op;
  op.kind = OperatorKind::Dense;
  op.m = m;
  op.n = n;
  op.matrix.resize(m, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  for (Index r = 0; r < m; ++r)
    for (Index c = 0; c < n; ++c) op.matrix(r, c) = scale * normal(rng);
  return op;
}

ForwardOperator make_subsampled_dft(Index side, const std::vector<bool>& freq_mask) {
  const Index n = side * side;
  if (static_cast<Index>(freq_mask.size()) != n)
    throw std::invalid_argument("make_subsampled_dft: mask must cover the frequency grid");
  std::vector<Index> freqs;
  for (Index i = 0; i < n; ++i)
    if (freq_mask[i]) freqs.push_back(i);
  if (freqs.empty()) throw std::invalid_argument("make_subsampled_dft: empty frequency set");

  ForwardOperator op;
  op.kind = OperatorKind::SubsampledDftReal;
  op.m = 2 * static_cast<Index>(freqs.size());
  op.n = n;
  op.selection = freqs;
  op.matrix.resize(op.m, n);
  const double norm = 1.0 / static_cast<double>(side);
  for (std::size_t f = 0; f < freqs.size(); ++f) {
    const Index k = freqs[f] / side;
    const Index l = freqs[f] % side;
    for (Index u = 0; u < side; ++u) {
      for (Index v = 0; v < side; ++v) {
        const double theta =
            2.0 * std::numbers::pi * static_cast<double>(k * u + l * v) / static_cast<double>(side);
        op.matrix(2 * f, u * side + v) = norm * std::cos(theta);
        op.matrix(2 * f + 1, u * side + v) = -norm * std::sin(theta);
      }
    }
  }
  return op;
}

Measurement simulate(const Eigen::Ref<const Eigen::VectorXd>& x, const ForwardOperator& op,
                     double sigma, std::uint64_t seed) {
  if (x.size() != op.n) throw std::invalid_argument("simulate: dimension mismatch");
  if (sigma < 0.0) throw std::invalid_argument("simulate: negative noise level");
  Measurement meas;
  meas.y = op.matrix * x;
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index i = 0; i < op.m; ++i) meas.y[i] += sigma * normal(rng);
  }
  meas.op = &op;
  meas.sigma = sigma;
  meas.seed = seed;
  return meas;
}

ForwardOperator virtual_operator(const ForwardOperator& op, const GroupAction& action,
                                 GroupElement g) {
  if (op.n != action.n()) throw std::invalid_argument("virtual_operator: dimension mismatch");
  const auto& perm = action.permutation(g);

  ForwardOperator out;
  out.m = op.m;
  out.n = op.n;
  out.matrix.resize(op.m, op.n);
  // (A T_g)_{:,j} = A_{:,perm^{-1}[j]}, i.e. column j of T_g has its 1 in row
  // perm^{-1}[j]; gather is exact.
  std::vector<Index> inv(op.n);
  for (Index i = 0; i < op.n; ++i) inv[perm[i]] = i;
  for (Index j = 0; j < op.n; ++j) out.matrix.col(j) = op.matrix.col(inv[j]);

  if (op.kind == OperatorKind::RowMask) {
    out.kind = OperatorKind::RowMask;
    out.selection.reserve(op.selection.size());
    for (Index s : op.selection) out.selection.push_back(perm[s]);
  } else {
    out.kind = OperatorKind::Dense;
  }
  return out;
}

SplitSample make_split(const std::vector<Index>& kept_rows,
                       const Eigen::Ref<const Eigen::VectorXd>& y, const ForwardOperator& op) {
  if (y.size() != op.m) throw std::invalid_argument("make_split: dimension mismatch");
  std::vector<bool> kept(op.m, false);
  for (Index r : kept_rows) {
    if (r < 0 || r >= op.m) throw std::invalid_argument("make_split: row index out of range");
    if (kept[r]) throw std::invalid_argument("make_split: duplicate row index");
    kept[r] = true;
  }

  SplitSample s;
  s.kept_rows = kept_rows;
  for (Index r = 0; r < op.m; ++r)
    if (!kept[r]) s.complement_rows.push_back(r);

  auto take = [&](const std::vector<Index>& rows, ForwardOperator& part, Eigen::VectorXd& ypart) {
    part.m = static_cast<Index>(rows.size());
    part.n = op.n;
    part.matrix.resize(part.m, op.n);
    ypart.resize(part.m);
    for (Index i = 0; i < part.m; ++i) {
      part.matrix.row(i) = op.matrix.row(rows[i]);
      ypart[i] = y[rows[i]];
    }
    if (op.kind == OperatorKind::RowMask) {
      part.kind = OperatorKind::RowMask;
      for (Index i = 0; i < part.m; ++i) part.selection.push_back(op.selection[rows[i]]);
    } else {
      part.kind = OperatorKind::Dense;
    }
  };
  take(s.kept_rows, s.a1, s.y1);
  take(s.complement_rows, s.a2, s.y2);
  return s;
}

SplitSample sample_split(const SplitRule& rule, const Measurement& meas, const ForwardOperator& op,
                         std::uint64_t seed) {
  if (meas.y.size() != op.m) throw std::invalid_argument("sample_split: dimension mismatch");
  if (rule.min_rows > op.m)
    throw std::invalid_argument("sample_split: min_rows exceeds measurement count");

  std::mt19937_64 rng(seed);

  if (rule.family == SplitFamily::FixedPartition) {
    if (rule.partitions.empty())
      throw std::invalid_argument("sample_split: fixed-partition rule without partitions");
    bool feasible = false;
    for (const auto& p : rule.partitions) feasible |= static_cast<Index>(p.size()) >= rule.min_rows;
    if (!feasible) throw std::invalid_argument("sample_split: no partition satisfies min_rows");
    std::uniform_int_distribution<std::size_t> pick(0, rule.partitions.size() - 1);
    for (;;) {
      const auto& kept = rule.partitions[pick(rng)];
      if (static_cast<Index>(kept.size()) >= rule.min_rows) return make_split(kept, meas.y, op);
    }
  }

  if (rule.keep_prob <= 0.0 || rule.keep_prob >= 1.0)
    throw std::invalid_argument("sample_split: keep_prob must lie in (0, 1)");
  std::bernoulli_distribution keep(rule.keep_prob);
  constexpr int kMaxRetries = 100000;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    std::vector<Index> kept;
    for (Index r = 0; r < op.m; ++r)
      if (keep(rng)) kept.push_back(r);
    if (static_cast<Index>(kept.size()) >= rule.min_rows) return make_split(kept, meas.y, op);
  }
  throw std::runtime_error("sample_split: could not satisfy min_rows");
}

std::vector<std::pair<std::vector<Index>, double>> enumerate_split_support(const SplitRule& rule,
                                                                           Index m,
                                                                           std::size_t max_support) {
  std::vector<std::pair<std::vector<Index>, double>> support;

  if (rule.family == SplitFamily::FixedPartition) {
    double total = 0.0;
    for (const auto& p : rule.partitions)
      if (static_cast<Index>(p.size()) >= rule.min_rows) total += 1.0;
    if (total == 0.0) throw std::invalid_argument("enumerate_split_support: empty support");
    for (const auto& p : rule.partitions)
      if (static_cast<Index>(p.size()) >= rule.min_rows) support.emplace_back(p, 1.0 / total);
    return support;
  }

  if (m >= 63 || (std::size_t{1} << m) > max_support)
    throw std::invalid_argument("enumerate_split_support: Bernoulli support too large to enumerate");

  double total = 0.0;
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << m); ++bits) {
    std::vector<Index> kept;
    for (Index r = 0; r < m; ++r)
      if (bits & (std::uint64_t{1} << r)) kept.push_back(r);
    if (static_cast<Index>(kept.size()) < rule.min_rows) continue;
    const double p = std::pow(rule.keep_prob, static_cast<double>(kept.size())) *
                     std::pow(1.0 - rule.keep_prob, static_cast<double>(m - kept.size()));
    total += p;
    support.emplace_back(std::move(kept), p);
  }
  for (auto& [kept, p] : support) p /= total;
  return support;
}

namespace {

void append_doubles(std::string& out, const double* data, std::size_t count) {
  out.append(reinterpret_cast<const char*>(data), count * sizeof(double));
}

std::string canonical_key_impl(const Eigen::MatrixXd& a1, const Eigen::VectorXd* y1) {
  const Index m = a1.rows();
  const Index n = a1.cols();
  std::vector<Index> order(m);
  for (Index i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](Index lhs, Index rhs) {
    for (Index c = 0; c < n; ++c) {
      if (a1(lhs, c) != a1(rhs, c)) return a1(lhs, c) < a1(rhs, c);
    }
    if (y1) return (*y1)[lhs] < (*y1)[rhs];
    return false;
  });

  std::string key;
  key.reserve(static_cast<std::size_t>(m) * (n + (y1 ? 1 : 0)) * sizeof(double) + 16);
  const std::uint64_t header[2] = {static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(n)};
  key.append(reinterpret_cast<const char*>(header), sizeof(header));
  Eigen::VectorXd row(n);
  for (Index i : order) {
    row = a1.row(i);
    append_doubles(key, row.data(), static_cast<std::size_t>(n));
    if (y1) append_doubles(key, &(*y1)[i], 1);
  }
  return key;
}

}  // namespace

std::string canonical_operator_key(const Eigen::MatrixXd& a1) {
  return canonical_key_impl(a1, nullptr);
}

std::string canonical_split_key(const Eigen::MatrixXd& a1,
                                const Eigen::Ref<const Eigen::VectorXd>& y1) {
  if (a1.rows() != y1.size())
    throw std::invalid_argument("canonical_split_key: row count mismatch");
  const Eigen::VectorXd y = y1;
  return canonical_key_impl(a1, &y);
}

void save_operator(const ForwardOperator& op, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_operator: cannot open " + path);
  out.write(kOperatorMagic, 4);
  write_pod(out, static_cast<std::uint32_t>(op.kind));
  write_pod(out, static_cast<std::uint64_t>(op.m));
  write_pod(out, static_cast<std::uint64_t>(op.n));
  for (Index r = 0; r < op.m; ++r)
    for (Index c = 0; c < op.n; ++c) write_pod(out, op.matrix(r, c));
  write_pod(out, static_cast<std::uint8_t>(op.selection.empty() ? 0 : 1));
  if (!op.selection.empty()) {
    write_pod(out, static_cast<std::uint64_t>(op.selection.size()));
    for (Index s : op.selection) write_pod(out, static_cast<std::uint64_t>(s));
  }
  if (!out) throw std::runtime_error("save_operator: write failed");
}

ForwardOperator load_operator(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_operator: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kOperatorMagic, 4) != 0)
    throw std::runtime_error("load_operator: bad magic");
  ForwardOperator op;
  const auto kind = read_pod<std::uint32_t>(in);
  if (kind > 2) throw std::runtime_error("load_operator: unknown kind");
  op.kind = static_cast<OperatorKind>(kind);
  op.m = static_cast<Index>(read_pod<std::uint64_t>(in));
  op.n = static_cast<Index>(read_pod<std::uint64_t>(in));
  if (op.m < 0 || op.n < 0) throw std::runtime_error("load_operator: bad dimensions");
  op.matrix.resize(op.m, op.n);
  for (Index r = 0; r < op.m; ++r)
    for (Index c = 0; c < op.n; ++c) op.matrix(r, c) = read_pod<double>(in);
  if (read_pod<std::uint8_t>(in)) {
    const auto count = read_pod<std::uint64_t>(in);
    op.selection.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i)
      op.selection.push_back(static_cast<Index>(read_pod<std::uint64_t>(in)));
  }
  return op;
}

}  // namespace eqsplit
