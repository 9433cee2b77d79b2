#pragma once

// Multi-group latent Markov chain: structure, constraints, parameters, and
// probability evaluation.
//
// For group h and response pattern y = (y_1, ..., y_T):
//
//   p(y | h) = sum over latent paths (a_1..a_T) of
//              delta[h][a_1] rho[1][h][a_1][y_1]
//              * prod_t tau[t][h][a_t][a_{t+1}] rho[t+1][h][a_{t+1}][y_{t+1}]
//
// All indices are 0-based in code; user-facing text is 1-based.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latent_chain/errors.hpp"
#include "latent_chain/panel_data.hpp"

namespace latent_chain {

struct Dimensions {
  int groups = 1;
  int categories = 2;
  int occasions = 1;
  int classes = 1;

  int transitions() const { return occasions - 1; }

  void check() const {
    if (groups < 1) throw ModelError("model needs at least one group");
    if (categories < 2) throw ModelError("model needs at least two categories");
    if (occasions < 1) throw ModelError("model needs at least one occasion");
    if (classes < 1) throw ModelError("model needs at least one latent class");
  }

  std::size_t delta_size() const { return static_cast<std::size_t>(groups * classes); }
  std::size_t rho_size() const { return static_cast<std::size_t>(occasions * groups * classes * categories); }
  std::size_t tau_size() const {
    return static_cast<std::size_t>(transitions() * groups * classes * classes);
  }

  friend bool operator==(const Dimensions&, const Dimensions&) = default;
};

enum class ParamKind { delta, rho, tau };

/// One probability row. For rho `occasion` is the measurement occasion; for
/// tau it is the transition index (occasion t -> t+1); unused for delta.
/// `from` is the conditioning latent class (unused for delta).
struct RowRef {
  ParamKind kind = ParamKind::delta;
  int occasion = 0;
  int group = 0;
  int from = 0;

  static RowRef delta(int group) { return {ParamKind::delta, 0, group, 0}; }
  static RowRef rho(int occasion, int group, int cls) { return {ParamKind::rho, occasion, group, cls}; }
  static RowRef tau(int transition, int group, int from) { return {ParamKind::tau, transition, group, from}; }

  friend auto operator<=>(const RowRef&, const RowRef&) = default;
};

struct CellRef {
  RowRef row;
  int column = 0;

  friend auto operator<=>(const CellRef&, const CellRef&) = default;
};

inline std::string describe(const RowRef& r) {
  std::ostringstream os;
  switch (r.kind) {
    case ParamKind::delta:
      os << "delta[group " << r.group + 1 << "]";
      break;
    case ParamKind::rho:
      os << "rho[occasion " << r.occasion + 1 << ", group " << r.group + 1 << ", class " << r.from + 1 << "]";
      break;
    case ParamKind::tau:
      os << "tau[t" << r.occasion + 1 << "->t" << r.occasion + 2 << ", group " << r.group + 1 << ", from class "
         << r.from + 1 << "]";
      break;
  }
  return os.str();
}

inline std::string describe(const CellRef& c) {
  return describe(c.row) + "[" + std::to_string(c.column + 1) + "]";
}

// Row numbering: delta rows, then rho rows, then tau rows.
inline int row_count(const Dimensions& d) {
  return d.groups + d.occasions * d.groups * d.classes + d.transitions() * d.groups * d.classes;
}

inline int row_length(const Dimensions& d, ParamKind kind) {
  return kind == ParamKind::rho ? d.categories : d.classes;
}

inline bool row_in_range(const Dimensions& d, const RowRef& r) {
  if (r.group < 0 || r.group >= d.groups) return false;
  switch (r.kind) {
    case ParamKind::delta:
      return true;
    case ParamKind::rho:
      return r.occasion >= 0 && r.occasion < d.occasions && r.from >= 0 && r.from < d.classes;
    case ParamKind::tau:
      return r.occasion >= 0 && r.occasion < d.transitions() && r.from >= 0 && r.from < d.classes;
  }
  return false;
}

inline int row_id(const Dimensions& d, const RowRef& r) {
  if (!row_in_range(d, r)) throw ModelError("row out of range: " + describe(r));
  switch (r.kind) {
    case ParamKind::delta:
      return r.group;
    case ParamKind::rho:
      return d.groups + (r.occasion * d.groups + r.group) * d.classes + r.from;
    case ParamKind::tau:
      return d.groups + d.occasions * d.groups * d.classes + (r.occasion * d.groups + r.group) * d.classes + r.from;
  }
  return -1;
}

inline RowRef row_ref(const Dimensions& d, int id) {
  if (id < d.groups) return RowRef::delta(id);
  id -= d.groups;
  const int per_occ = d.groups * d.classes;
  if (id < d.occasions * per_occ) return RowRef::rho(id / per_occ, (id % per_occ) / d.classes, id % d.classes);
  id -= d.occasions * per_occ;
  return RowRef::tau(id / per_occ, (id % per_occ) / d.classes, id % d.classes);
}

/// Ties make every member row share one estimated row (row-granular
/// equality); fixes pin single cells to constants. A fix on any member of a
/// tie class applies to the whole class.
struct FixedCell {
  CellRef cell;
  double value = 0.0;
};

struct ConstraintSet {
  std::vector<std::vector<RowRef>> ties;
  std::vector<FixedCell> fixes;
};

namespace constraints {

/// rho rows of the same group and class share values across occasions.
inline void tie_rho_over_time(ConstraintSet& cs, const Dimensions& d) {
  if (d.occasions < 2) return;
  for (int h = 0; h < d.groups; ++h)
    for (int a = 0; a < d.classes; ++a) {
      std::vector<RowRef> tie;
      for (int t = 0; t < d.occasions; ++t) tie.push_back(RowRef::rho(t, h, a));
      cs.ties.push_back(std::move(tie));
    }
}

/// delta rows, and rho rows of the same occasion and class, shared across groups.
inline void tie_delta_rho_over_groups(ConstraintSet& cs, const Dimensions& d) {
  if (d.groups < 2) return;
  std::vector<RowRef> delta_tie;
  for (int h = 0; h < d.groups; ++h) delta_tie.push_back(RowRef::delta(h));
  cs.ties.push_back(std::move(delta_tie));
  for (int t = 0; t < d.occasions; ++t)
    for (int a = 0; a < d.classes; ++a) {
      std::vector<RowRef> tie;
      for (int h = 0; h < d.groups; ++h) tie.push_back(RowRef::rho(t, h, a));
      cs.ties.push_back(std::move(tie));
    }
}

inline void tie_tau_over_groups(ConstraintSet& cs, const Dimensions& d) {
  if (d.groups < 2) return;
  for (int t = 0; t < d.transitions(); ++t)
    for (int a = 0; a < d.classes; ++a) {
      std::vector<RowRef> tie;
      for (int h = 0; h < d.groups; ++h) tie.push_back(RowRef::tau(t, h, a));
      cs.ties.push_back(std::move(tie));
    }
}

/// Same transition matrix for every adjacent occasion pair within a group.
inline void stationary_tau(ConstraintSet& cs, const Dimensions& d) {
  if (d.transitions() < 2) return;
  for (int h = 0; h < d.groups; ++h)
    for (int a = 0; a < d.classes; ++a) {
      std::vector<RowRef> tie;
      for (int t = 0; t < d.transitions(); ++t) tie.push_back(RowRef::tau(t, h, a));
      cs.ties.push_back(std::move(tie));
    }
}

/// Error-free measurement: every rho row is the unit vector of its class.
inline void manifest_rho(ConstraintSet& cs, const Dimensions& d) {
  for (int t = 0; t < d.occasions; ++t)
    for (int h = 0; h < d.groups; ++h)
      for (int a = 0; a < d.classes; ++a)
        for (int j = 0; j < d.categories; ++j)
          cs.fixes.push_back({{RowRef::rho(t, h, a), j}, a == j ? 1.0 : 0.0});
}

}  // namespace constraints

struct ModelSpec {
  Dimensions dims;
  /// Manifest chain: A = J and rho fixed to the identity.
  bool manifest = false;
  /// Transition matrices tied across occasions within each group.
  bool stationary = false;
  ConstraintSet constraints;
};

/// Constraint set with the variant flags expanded into ties and fixes.
inline ConstraintSet effective_constraints(const ModelSpec& spec) {
  ConstraintSet cs = spec.constraints;
  if (spec.manifest) constraints::manifest_rho(cs, spec.dims);
  if (spec.stationary) constraints::stationary_tau(cs, spec.dims);
  return cs;
}

/// Rows grouped into estimation blocks (tie classes) with per-column fixes.
struct RowBlocks {
  std::vector<int> block_of_row;
  std::vector<std::vector<RowRef>> members;
  std::vector<std::vector<std::optional<double>>> fixed;

  int size() const { return static_cast<int>(members.size()); }
  ParamKind kind(int block) const { return members[static_cast<std::size_t>(block)].front().kind; }

  bool fully_fixed(int block) const {
    const auto& f = fixed[static_cast<std::size_t>(block)];
    return std::all_of(f.begin(), f.end(), [](const auto& v) { return v.has_value(); });
  }

  double fixed_mass(int block) const {
    double m = 0.0;
    for (const auto& v : fixed[static_cast<std::size_t>(block)])
      if (v) m += *v;
    return m;
  }
};

inline RowBlocks resolve_blocks(const ModelSpec& spec) {
  const auto& d = spec.dims;
  d.check();
  if (spec.manifest && d.classes != d.categories)
    throw ModelError("manifest variant requires as many latent classes as categories");
  const ConstraintSet cs = effective_constraints(spec);
  const int n = row_count(d);

  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (const auto& tie : cs.ties) {
    if (tie.empty()) continue;
    const int first = row_id(d, tie.front());
    for (const auto& r : tie) {
      if (r.kind != tie.front().kind)
        throw ModelError("tie mixes parameter kinds: " + describe(tie.front()) + " and " + describe(r));
      const int a = find(first), b = find(row_id(d, r));
      if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
  }

  RowBlocks blocks;
  blocks.block_of_row.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> block_of_root(static_cast<std::size_t>(n), -1);
  for (int id = 0; id < n; ++id) {
    const int root = find(id);
    auto& b = block_of_root[static_cast<std::size_t>(root)];
    if (b < 0) {
      b = blocks.size();
      const RowRef r = row_ref(d, id);
      blocks.members.emplace_back();
      blocks.fixed.emplace_back(static_cast<std::size_t>(row_length(d, r.kind)));
    }
    blocks.block_of_row[static_cast<std::size_t>(id)] = b;
    blocks.members[static_cast<std::size_t>(b)].push_back(row_ref(d, id));
  }

  for (const auto& f : cs.fixes) {
    const int b = blocks.block_of_row[static_cast<std::size_t>(row_id(d, f.cell.row))];
    const int len = row_length(d, f.cell.row.kind);
    if (f.cell.column < 0 || f.cell.column >= len) throw ModelError("fixed cell column out of range: " + describe(f.cell));
    if (!(f.value >= 0.0 && f.value <= 1.0))
      throw ModelError("fixed value outside [0,1] at " + describe(f.cell));
    auto& slot = blocks.fixed[static_cast<std::size_t>(b)][static_cast<std::size_t>(f.cell.column)];
    if (slot && std::abs(*slot - f.value) > 1e-12)
      throw ModelError("conflicting fixed values for " + describe(f.cell));
    slot = f.value;
  }
  for (int b = 0; b < blocks.size(); ++b) {
    const double m = blocks.fixed_mass(b);
    const auto& first = blocks.members[static_cast<std::size_t>(b)].front();
    if (m > 1.0 + 1e-12) throw ModelError("fixed cells of " + describe(first) + " sum above 1");
    if (blocks.fully_fixed(b) && std::abs(m - 1.0) > 1e-12)
      throw ModelError("fully fixed row " + describe(first) + " does not sum to 1");
  }
  return blocks;
}

struct ParameterSet {
  Dimensions dims;
  std::vector<double> gamma;
  std::vector<double> delta;
  std::vector<double> rho;
  std::vector<double> tau;

  ParameterSet() = default;

  static const Dimensions& checked(const Dimensions& d) {
    d.check();
    return d;
  }

  explicit ParameterSet(const Dimensions& d)
      : dims(checked(d)),
        gamma(static_cast<std::size_t>(d.groups), 1.0 / d.groups),
        delta(d.delta_size(), 1.0 / d.classes),
        rho(d.rho_size(), 1.0 / d.categories),
        tau(d.tau_size(), 1.0 / d.classes) {}

  double& delta_at(int h, int a) { return delta[static_cast<std::size_t>(h * dims.classes + a)]; }
  double delta_at(int h, int a) const { return delta[static_cast<std::size_t>(h * dims.classes + a)]; }

  std::size_t rho_offset(int t, int h, int a) const {
    return static_cast<std::size_t>(((t * dims.groups + h) * dims.classes + a) * dims.categories);
  }
  double& rho_at(int t, int h, int a, int j) { return rho[rho_offset(t, h, a) + static_cast<std::size_t>(j)]; }
  double rho_at(int t, int h, int a, int j) const { return rho[rho_offset(t, h, a) + static_cast<std::size_t>(j)]; }

  std::size_t tau_offset(int t, int h, int a) const {
    return static_cast<std::size_t>(((t * dims.groups + h) * dims.classes + a) * dims.classes);
  }
  double& tau_at(int t, int h, int a, int b) { return tau[tau_offset(t, h, a) + static_cast<std::size_t>(b)]; }
  double tau_at(int t, int h, int a, int b) const { return tau[tau_offset(t, h, a) + static_cast<std::size_t>(b)]; }

  std::span<double> row(const RowRef& r) {
    switch (r.kind) {
      case ParamKind::delta:
        return {delta.data() + r.group * dims.classes, static_cast<std::size_t>(dims.classes)};
      case ParamKind::rho:
        return {rho.data() + rho_offset(r.occasion, r.group, r.from), static_cast<std::size_t>(dims.categories)};
      case ParamKind::tau:
        return {tau.data() + tau_offset(r.occasion, r.group, r.from), static_cast<std::size_t>(dims.classes)};
    }
    return {};
  }
  std::span<const double> row(const RowRef& r) const { return const_cast<ParameterSet*>(this)->row(r); }

  double& at(const CellRef& c) { return row(c.row)[static_cast<std::size_t>(c.column)]; }
  double at(const CellRef& c) const { return row(c.row)[static_cast<std::size_t>(c.column)]; }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

namespace detail {

inline void check_indices(const ParameterSet& p, int group, std::span<const int> pattern) {
  const auto& d = p.dims;
  if (group < 0 || group >= d.groups) throw std::out_of_range("group index out of range");
  if (static_cast<int>(pattern.size()) != d.occasions) throw std::out_of_range("pattern length does not match occasions");
  for (int y : pattern)
    if (y < 0 || y >= d.categories) throw std::out_of_range("category index out of range");
}

/// Scratch buffers for the scaled recursions, reused across calls.
struct ChainWorkspace {
  std::vector<double> alpha;   // T x A, normalized per occasion
  std::vector<double> beta;    // T x A, scaled
  std::vector<double> scale;   // T
  std::vector<double> states;  // T x A
  std::vector<double> pairs;   // (T-1) x A x A

  void resize(const Dimensions& d) {
    const auto ta = static_cast<std::size_t>(d.occasions * d.classes);
    alpha.resize(ta);
    beta.resize(ta);
    states.resize(ta);
    scale.resize(static_cast<std::size_t>(d.occasions));
    pairs.resize(d.transitions() > 0 ? static_cast<std::size_t>(d.transitions() * d.classes * d.classes) : 0);
  }
};

/// Scaled forward-backward. Returns the log-likelihood, or -inf when the
/// pattern has zero probability (posteriors are then left unset).
inline double run_forward_backward(const ParameterSet& p, int h, std::span<const int> y, ChainWorkspace& ws) {
  const auto& d = p.dims;
  const int A = d.classes, T = d.occasions;
  ws.resize(d);
  auto alpha = [&](int t, int a) -> double& { return ws.alpha[static_cast<std::size_t>(t * A + a)]; };
  auto beta = [&](int t, int a) -> double& { return ws.beta[static_cast<std::size_t>(t * A + a)]; };

  double log_lik = 0.0;
  for (int t = 0; t < T; ++t) {
    const int yt = y[static_cast<std::size_t>(t)];
    double c = 0.0;
    for (int b = 0; b < A; ++b) {
      double v;
      if (t == 0) {
        v = p.delta_at(h, b);
      } else {
        v = 0.0;
        for (int a = 0; a < A; ++a) v += alpha(t - 1, a) * p.tau_at(t - 1, h, a, b);
      }
      v *= p.rho_at(t, h, b, yt);
      alpha(t, b) = v;
      c += v;
    }
    ws.scale[static_cast<std::size_t>(t)] = c;
    if (!(c > 0.0)) return -std::numeric_limits<double>::infinity();
    for (int b = 0; b < A; ++b) alpha(t, b) /= c;
    log_lik += std::log(c);
  }

  for (int a = 0; a < A; ++a) beta(T - 1, a) = 1.0;
  for (int t = T - 2; t >= 0; --t) {
    const int yn = y[static_cast<std::size_t>(t) + 1];
    const double c = ws.scale[static_cast<std::size_t>(t) + 1];
    for (int a = 0; a < A; ++a) {
      double v = 0.0;
      for (int b = 0; b < A; ++b) v += p.tau_at(t, h, a, b) * p.rho_at(t + 1, h, b, yn) * beta(t + 1, b);
      beta(t, a) = v / c;
    }
  }

  for (int t = 0; t < T; ++t)
    for (int a = 0; a < A; ++a) ws.states[static_cast<std::size_t>(t * A + a)] = alpha(t, a) * beta(t, a);
  for (int t = 0; t + 1 < T; ++t) {
    const int yn = y[static_cast<std::size_t>(t) + 1];
    const double c = ws.scale[static_cast<std::size_t>(t) + 1];
    for (int a = 0; a < A; ++a)
      for (int b = 0; b < A; ++b)
        ws.pairs[static_cast<std::size_t>((t * A + a) * A + b)] =
            alpha(t, a) * p.tau_at(t, h, a, b) * p.rho_at(t + 1, h, b, yn) * beta(t + 1, b) / c;
  }
  return log_lik;
}

}  // namespace detail

/// p(pattern | group) by the unscaled forward recursion.
inline double cell_probability(const ParameterSet& p, int group, std::span<const int> pattern) {
  detail::check_indices(p, group, pattern);
  const auto& d = p.dims;
  const int A = d.classes;
  std::vector<double> cur(static_cast<std::size_t>(A)), next(static_cast<std::size_t>(A));
  for (int a = 0; a < A; ++a) cur[static_cast<std::size_t>(a)] = p.delta_at(group, a) * p.rho_at(0, group, a, pattern[0]);
  for (int t = 1; t < d.occasions; ++t) {
    for (int b = 0; b < A; ++b) {
      double v = 0.0;
      for (int a = 0; a < A; ++a) v += cur[static_cast<std::size_t>(a)] * p.tau_at(t - 1, group, a, b);
      next[static_cast<std::size_t>(b)] = v * p.rho_at(t, group, b, pattern[static_cast<std::size_t>(t)]);
    }
    std::swap(cur, next);
  }
  return std::accumulate(cur.begin(), cur.end(), 0.0);
}

/// Dense p(pattern | group) over the full lattice, lexicographic order.
inline std::vector<double> pattern_probabilities(const ParameterSet& p, int group) {
  const auto& d = p.dims;
  const auto n = pattern_count(d.categories, d.occasions);
  std::vector<double> out(n);
  for (std::uint64_t i = 0; i < n; ++i) out[i] = cell_probability(p, group, pattern_from_index(i, d.categories, d.occasions));
  return out;
}

enum class PosteriorStatus { ok, zero_likelihood, numeric_failure };

struct Posteriors {
  PosteriorStatus status = PosteriorStatus::ok;
  double likelihood = 0.0;
  double log_likelihood = 0.0;
  int occasions = 0;
  int classes = 0;
  std::vector<double> states;  // T x A
  std::vector<double> pairs;   // (T-1) x A x A

  double state(int t, int a) const { return states[static_cast<std::size_t>(t * classes + a)]; }
  double pair(int t, int a, int b) const { return pairs[static_cast<std::size_t>((t * classes + a) * classes + b)]; }
};

/// Pattern likelihood plus posterior laws of each latent state and each pair
/// of adjacent states given the pattern.
inline Posteriors forward_backward(const ParameterSet& p, int group, std::span<const int> pattern) {
  detail::check_indices(p, group, pattern);
  detail::ChainWorkspace ws;
  Posteriors out;
  out.occasions = p.dims.occasions;
  out.classes = p.dims.classes;
  const double ll = detail::run_forward_backward(p, group, pattern, ws);
  if (std::isnan(ll)) {
    out.status = PosteriorStatus::numeric_failure;
    out.likelihood = out.log_likelihood = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  if (std::isinf(ll)) {
    out.status = PosteriorStatus::zero_likelihood;
    out.likelihood = 0.0;
    out.log_likelihood = ll;
    return out;
  }
  out.log_likelihood = ll;
  out.likelihood = 1.0;
  for (double c : ws.scale) out.likelihood *= c;
  out.states = ws.states;
  out.pairs = ws.pairs;
  return out;
}

/// Model-expected counts n_h * p(pattern | h), dense per group.
struct ExpectedTable {
  TableLayout layout;
  std::vector<std::vector<double>> cells;

  double at(int group, std::uint64_t index) const { return cells[static_cast<std::size_t>(group)][index]; }
  double total(int group) const {
    const auto& c = cells[static_cast<std::size_t>(group)];
    return std::accumulate(c.begin(), c.end(), 0.0);
  }
};

inline void check_compatible(const ParameterSet& p, const PanelTable& table) {
  const auto& d = p.dims;
  if (d.groups != table.num_groups() || d.categories != table.num_categories() || d.occasions != table.occasions())
    throw ModelError("parameter dimensions (H=" + std::to_string(d.groups) + ", J=" + std::to_string(d.categories) +
                     ", T=" + std::to_string(d.occasions) + ") do not match the table (H=" +
                     std::to_string(table.num_groups()) + ", J=" + std::to_string(table.num_categories()) +
                     ", T=" + std::to_string(table.occasions()) + ")");
}

inline ExpectedTable expected_frequencies(const ParameterSet& p, const PanelTable& table) {
  check_compatible(p, table);
  ExpectedTable out{table.layout(), {}};
  for (int h = 0; h < table.num_groups(); ++h) {
    auto probs = pattern_probabilities(p, h);
    const double n = static_cast<double>(table.total(h));
    for (auto& v : probs) v *= n;
    out.cells.push_back(std::move(probs));
  }
  return out;
}

/// Joint law of (manifest pattern, latent path) for one group; J^T x A^T,
/// row-major by lexicographic pattern index then path index.
struct JointTable {
  std::uint64_t num_patterns = 0;
  std::uint64_t num_paths = 0;
  int occasions = 0;
  int categories = 0;
  int classes = 0;
  std::vector<double> mass;

  double at(std::uint64_t pattern, std::uint64_t path) const { return mass[pattern * num_paths + path]; }

  std::vector<double> row_sums() const {
    std::vector<double> out(num_patterns, 0.0);
    for (std::uint64_t i = 0; i < num_patterns; ++i)
      for (std::uint64_t k = 0; k < num_paths; ++k) out[i] += at(i, k);
    return out;
  }
  std::vector<double> column_sums() const {
    std::vector<double> out(num_paths, 0.0);
    for (std::uint64_t i = 0; i < num_patterns; ++i)
      for (std::uint64_t k = 0; k < num_paths; ++k) out[k] += at(i, k);
    return out;
  }
};

inline JointTable joint_pattern_table(const ParameterSet& p, int group) {
  const auto& d = p.dims;
  if (group < 0 || group >= d.groups) throw std::out_of_range("group index out of range");
  JointTable jt;
  jt.occasions = d.occasions;
  jt.categories = d.categories;
  jt.classes = d.classes;
  jt.num_patterns = pattern_count(d.categories, d.occasions);
  jt.num_paths = pattern_count(d.classes, d.occasions);
  jt.mass.assign(jt.num_patterns * jt.num_paths, 0.0);
  for (std::uint64_t k = 0; k < jt.num_paths; ++k) {
    const auto path = pattern_from_index(k, d.classes, d.occasions);
    double w = p.delta_at(group, path[0]);
    for (int t = 1; t < d.occasions; ++t) w *= p.tau_at(t - 1, group, path[static_cast<std::size_t>(t) - 1], path[static_cast<std::size_t>(t)]);
    if (w == 0.0) continue;
    for (std::uint64_t i = 0; i < jt.num_patterns; ++i) {
      const auto y = pattern_from_index(i, d.categories, d.occasions);
      double v = w;
      for (int t = 0; t < d.occasions && v != 0.0; ++t)
        v *= p.rho_at(t, group, path[static_cast<std::size_t>(t)], y[static_cast<std::size_t>(t)]);
      jt.mass[i * jt.num_paths + k] = v;
    }
  }
  return jt;
}

struct ValidationReport {
  bool ok = true;
  std::string message;

  explicit operator bool() const { return ok; }
};

/// Checks simplex rows, value ranges, ties, and fixes; reports the first
/// violation found.
inline ValidationReport validate(const ModelSpec& spec, const ParameterSet& p, double tol = 1e-12) {
  auto fail = [](std::string msg) { return ValidationReport{false, std::move(msg)}; };
  const auto& d = spec.dims;
  if (!(p.dims == d)) return fail("parameter dimensions do not match the model");
  if (p.gamma.size() != static_cast<std::size_t>(d.groups) || p.delta.size() != d.delta_size() ||
      p.rho.size() != d.rho_size() || p.tau.size() != d.tau_size())
    return fail("parameter array sizes do not match the dimensions");

  auto check_row = [&](std::span<const double> row, const std::string& name) -> std::optional<std::string> {
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!std::isfinite(row[j]) || row[j] < -tol || row[j] > 1.0 + tol)
        return name + "[" + std::to_string(j + 1) + "] = " + std::to_string(row[j]) + " outside [0,1]";
      sum += row[j];
    }
    if (std::abs(sum - 1.0) > tol) {
      std::ostringstream os;
      os << name << ": row sums to " << sum;
      return os.str();
    }
    return std::nullopt;
  };
  if (auto e = check_row(p.gamma, "gamma")) return fail(*e);
  for (int id = 0; id < row_count(d); ++id) {
    const auto r = row_ref(d, id);
    if (auto e = check_row(p.row(r), describe(r))) return fail(*e);
  }

  RowBlocks blocks;
  try {
    blocks = resolve_blocks(spec);
  } catch (const ModelError& e) {
    return fail(std::string("constraint set: ") + e.what());
  }
  for (int b = 0; b < blocks.size(); ++b) {
    const auto& members = blocks.members[static_cast<std::size_t>(b)];
    const auto first = p.row(members.front());
    for (const auto& r : members) {
      const auto row = p.row(r);
      for (std::size_t j = 0; j < row.size(); ++j)
        if (std::abs(row[j] - first[j]) > tol)
          return fail("tie violated: " + describe(CellRef{r, static_cast<int>(j)}) + " differs from " +
                      describe(CellRef{members.front(), static_cast<int>(j)}));
      const auto& fixed = blocks.fixed[static_cast<std::size_t>(b)];
      for (std::size_t j = 0; j < row.size(); ++j)
        if (fixed[j] && std::abs(row[j] - *fixed[j]) > tol) {
          std::ostringstream os;
          os << "fix violated: " << describe(CellRef{r, static_cast<int>(j)}) << " = " << row[j] << ", fixed at "
             << *fixed[j];
          return fail(os.str());
        }
    }
  }
  return {};
}

}  // namespace latent_chain
