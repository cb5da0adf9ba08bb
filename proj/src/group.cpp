#include "eqsplit/group.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <utility>

namespace eqsplit {

namespace {

std::vector<Index> compose_perms(const std::vector<Index>& g, const std::vector<Index>& h) {
  // (T_g T_h x)[i] = (T_h x)[g[i]] = x[h[g[i]]]
  std::vector<Index> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = h[g[i]];
  return out;
}

bool is_permutation(const std::vector<Index>& p, Index n) {
  if (static_cast<Index>(p.size()) != n) return false;
  std::vector<bool> seen(n, false);
  for (Index v : p) {
    if (v < 0 || v >= n || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

}  // namespace

GroupAction GroupAction::from_permutations(Index n, std::vector<std::vector<Index>> perms,
                                           std::string name) {
  if (n < 1) throw std::invalid_argument("GroupAction: dimension must be positive");
  if (perms.empty()) throw std::invalid_argument("GroupAction: empty transform set");
  for (const auto& p : perms)
    if (!is_permutation(p, n)) throw std::invalid_argument("GroupAction: invalid permutation");

  const Index order = static_cast<Index>(perms.size());

  std::map<std::vector<Index>, Index> lookup;
  for (Index g = 0; g < order; ++g) {
    if (!lookup.emplace(perms[g], g).second)
      throw std::invalid_argument("GroupAction: duplicate transform");
  }

  Index identity = -1;
  std::vector<Index> id_perm(n);
  for (Index i = 0; i < n; ++i) id_perm[i] = i;
  if (auto it = lookup.find(id_perm); it != lookup.end()) identity = it->second;
  if (identity < 0) throw std::invalid_argument("GroupAction: identity transform missing");

  Eigen::MatrixX<Index> compose(order, order);
  for (Index g = 0; g < order; ++g) {
    for (Index h = 0; h < order; ++h) {
      auto it = lookup.find(compose_perms(perms[g], perms[h]));
      if (it == lookup.end()) throw std::invalid_argument("GroupAction: set not closed");
      compose(g, h) = it->second;
    }
  }

  std::vector<Index> inverse(order, -1);
  for (Index g = 0; g < order; ++g) {
    for (Index h = 0; h < order; ++h) {
      if (compose(g, h) == identity) {
        inverse[g] = h;
        break;
      }
    }
    if (inverse[g] < 0) throw std::invalid_argument("GroupAction: element without inverse");
  }

  return from_raw(n, std::move(perms), std::move(compose), std::move(inverse), identity,
                  std::move(name));
}

GroupAction GroupAction::from_raw(Index n, std::vector<std::vector<Index>> perms,
                                  Eigen::MatrixX<Index> compose_table,
                                  std::vector<Index> inverse_table, Index identity,
                                  std::string name) {
  GroupAction a;
  a.n_ = n;
  a.perms_ = std::move(perms);
  a.compose_ = std::move(compose_table);
  a.inverse_ = std::move(inverse_table);
  a.identity_ = identity;
  a.name_ = std::move(name);
  return a;
}

GroupElement GroupAction::compose(GroupElement g, GroupElement h) const {
  return {compose_(g.index, h.index)};
}

GroupElement GroupAction::inverse(GroupElement g) const { return {inverse_[g.index]}; }

const std::vector<Index>& GroupAction::permutation(GroupElement g) const {
  if (g.index < 0 || g.index >= order()) throw std::out_of_range("GroupAction: bad element index");
  return perms_[g.index];
}

Eigen::MatrixXd GroupAction::matrix(GroupElement g) const {
  const auto& p = permutation(g);
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n_, n_);
  for (Index i = 0; i < n_; ++i) t(i, p[i]) = 1.0;
  return t;
}

Eigen::VectorXd GroupAction::apply(GroupElement g, const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != n_) throw std::invalid_argument("GroupAction::apply: dimension mismatch");
  const auto& p = permutation(g);
  Eigen::VectorXd out(n_);
  for (Index i = 0; i < n_; ++i) out[i] = x[p[i]];
  return out;
}

Eigen::VectorXd GroupAction::apply_inverse(GroupElement g,
                                           const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != n_) throw std::invalid_argument("GroupAction::apply_inverse: dimension mismatch");
  const auto& p = permutation(g);
  Eigen::VectorXd out(n_);
  for (Index i = 0; i < n_; ++i) out[p[i]] = x[i];
  return out;
}

GroupAction build_shift_group(Index width, Index height) {
  if (width < 1 || height < 1)
    throw std::invalid_argument("build_shift_group: zero or negative dimensions");
  const Index n = width * height;
  std::vector<std::vector<Index>> perms;
  perms.reserve(n);
  // element index g = sy*width + sx; output(r,c) = input((r-sy) mod h, (c-sx) mod w)
  for (Index sy = 0; sy < height; ++sy) {
    for (Index sx = 0; sx < width; ++sx) {
      std::vector<Index> p(n);
      for (Index r = 0; r < height; ++r) {
        for (Index c = 0; c < width; ++c) {
          const Index src_r = (r - sy + height) % height;
          const Index src_c = (c - sx + width) % width;
          p[r * width + c] = src_r * width + src_c;
        }
      }
      perms.push_back(std::move(p));
    }
  }
  return GroupAction::from_permutations(n, std::move(perms),
                                        "shift:" + std::to_string(width) + "x" +
                                            std::to_string(height));
}

GroupAction build_dihedral_group(Index side) {
  if (side < 1) throw std::invalid_argument("build_dihedral_group: side must be positive");
  const Index n = side * side;

  // rot90 clockwise: output(r,c) = input(side-1-c, r); hflip mirrors columns.
  auto rotate = [&](const std::vector<Index>& p) {
    std::vector<Index> out(n);
    for (Index r = 0; r < side; ++r)
      for (Index c = 0; c < side; ++c) out[r * side + c] = p[(side - 1 - c) * side + r];
    return out;
  };
  auto hflip = [&](const std::vector<Index>& p) {
    std::vector<Index> out(n);
    for (Index r = 0; r < side; ++r)
      for (Index c = 0; c < side; ++c) out[r * side + c] = p[r * side + (side - 1 - c)];
    return out;
  };

  std::vector<Index> id(n);
  for (Index i = 0; i < n; ++i) id[i] = i;

  std::vector<std::vector<Index>> perms;
  std::vector<Index> cur = id;
  for (int k = 0; k < 4; ++k) {
    perms.push_back(cur);
    cur = rotate(cur);
  }
  cur = hflip(id);
  for (int k = 0; k < 4; ++k) {
    perms.push_back(cur);
    cur = rotate(cur);
  }

  // side 1 collapses to the trivial group; side 2 has coinciding elements too
  // (rot180 == hflip∘vflip covers all of them), so deduplicate.
  std::vector<std::vector<Index>> unique;
  for (auto& p : perms)
    if (std::find(unique.begin(), unique.end(), p) == unique.end()) unique.push_back(p);

  return GroupAction::from_permutations(n, std::move(unique),
                                        "dihedral:" + std::to_string(side));
}

GroupAction build_trivial_group(Index n) {
  std::vector<Index> id(n);
  for (Index i = 0; i < n; ++i) id[i] = i;
  return GroupAction::from_permutations(n, {id}, "trivial:" + std::to_string(n));
}

AxiomReport check_group_axioms(const GroupAction& action) {
  AxiomReport report;
  const Index order = action.order();
  const Index n = action.n();

  // Closure against the table: permutation mismatch shows up as a unit entry
  // difference between T_g T_h and the tabled composite.
  for (Index g = 0; g < order; ++g) {
    const auto& pg = action.permutation({g});
    for (Index h = 0; h < order; ++h) {
      const auto& ph = action.permutation({h});
      const auto& pc = action.permutation(action.compose({g}, {h}));
      for (Index i = 0; i < n; ++i) {
        if (ph[pg[i]] != pc[i]) {
          report.closure_error = std::max(report.closure_error, 1.0);
          break;
        }
      }
    }
  }

  const auto& pid = action.permutation(action.identity());
  for (Index i = 0; i < n; ++i)
    if (pid[i] != i) report.identity_error = std::max(report.identity_error, 1.0);

  for (Index g = 0; g < order; ++g) {
    const GroupElement inv = action.inverse({g});
    if (action.inverse(inv).index != g ||
        action.compose({g}, inv).index != action.identity().index ||
        action.compose(inv, {g}).index != action.identity().index)
      report.inverse_error = std::max(report.inverse_error, 1.0);
  }

  // Permutation-backed transforms are orthogonal iff they are valid
  // permutations; report the entrywise error of T^T T - I.
  for (Index g = 0; g < order; ++g) {
    const auto& p = action.permutation({g});
    std::vector<int> hits(n, 0);
    for (Index i = 0; i < n; ++i) ++hits[p[i]];
    for (Index j = 0; j < n; ++j)
      if (hits[j] != 1) report.orthogonality_error = std::max(report.orthogonality_error, 1.0);
  }

  return report;
}

}  // namespace eqsplit
