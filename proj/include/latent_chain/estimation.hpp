#pragma once

// Maximum-likelihood fitting by EM under a constraint set: multi-start
// search, label canonicalization, boundary snapping, degrees of freedom, and
// information-matrix standard errors.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "latent_chain/errors.hpp"
#include "latent_chain/goodness_of_fit.hpp"
#include "latent_chain/model.hpp"
#include "latent_chain/panel_data.hpp"
#include "latent_chain/parallel.hpp"
#include "latent_chain/rng.hpp"

namespace latent_chain {

struct FitOptions {
  /// Fresh initializations. The first is the deterministic identity-leaning
  /// start when `identity_start` is set; the rest are random.
  int starts = 32;
  int max_iterations = 5000;
  /// Stop when one EM step raises the log-likelihood by less than this.
  double convergence = 1e-9;
  /// Estimates within this distance of 0 or 1 are snapped onto the boundary.
  double boundary_tol = 1e-4;
  std::uint64_t seed = 0;
  bool identity_start = true;
  /// Tried before the fresh starts, in order.
  std::vector<ParameterSet> warm_starts;
  int threads = 1;
  /// Called with (chain, iteration, log-likelihood of the iterate).
  std::function<void(int, int, double)> trace;

  void check() const {
    if (starts < 0 || (starts == 0 && warm_starts.empty())) throw ModelError("fit options: starts must be >= 1");
    if (max_iterations < 1) throw ModelError("fit options: max_iterations must be >= 1");
    if (!(convergence > 0.0)) throw ModelError("fit options: convergence threshold must be > 0");
    if (!(boundary_tol > 0.0 && boundary_tol < 0.5)) throw ModelError("fit options: boundary_tol must be in (0, 0.5)");
  }
};

/// Per-cell standard errors; std::nullopt marks "not estimable" (boundary or
/// fixed cells, or a singular information matrix).
struct ParameterErrors {
  std::vector<std::optional<double>> delta;
  std::vector<std::optional<double>> rho;
  std::vector<std::optional<double>> tau;
  std::string diagnostic;

  std::optional<double>& at(const Dimensions& d, const CellRef& c) {
    const auto& r = c.row;
    const auto col = static_cast<std::size_t>(c.column);
    switch (r.kind) {
      case ParamKind::delta:
        return delta[static_cast<std::size_t>(r.group * d.classes) + col];
      case ParamKind::rho:
        return rho[static_cast<std::size_t>(((r.occasion * d.groups + r.group) * d.classes + r.from) * d.categories) + col];
      case ParamKind::tau:
        break;
    }
    return tau[static_cast<std::size_t>(((r.occasion * d.groups + r.group) * d.classes + r.from) * d.classes) + col];
  }
  std::optional<double> at(const Dimensions& d, const CellRef& c) const {
    return const_cast<ParameterErrors*>(this)->at(d, c);
  }
};

struct FitDiagnostics {
  int best_start = -1;
  int starts_at_best = 0;
  std::vector<int> iterations;
  std::vector<double> final_log_likelihoods;
  std::vector<bool> start_converged;
  std::vector<CellRef> boundary_cells;
  /// Rows left unchanged in some M-step because they received no expected mass.
  std::vector<RowRef> empty_rows;
  double boundary_tol = 0.0;
  bool canonicalized = false;
  int polish_iterations = 0;
  /// Largest drop in log-likelihood between consecutive EM iterates.
  double largest_decrease = 0.0;
  std::string note;
};

struct FitResult {
  ModelSpec spec;
  ParameterSet params;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  double g_squared = std::numeric_limits<double>::quiet_NaN();
  int free_parameters = 0;
  int degrees_of_freedom = 0;
  bool converged = false;
  std::optional<ParameterErrors> standard_errors;
  FitDiagnostics diagnostics;
  std::uint64_t data_digest = 0;
};

/// FNV-1a digest of a table's layout and cells; identifies the data a fit used.
inline std::uint64_t table_digest(const PanelTable& table) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  auto feed_str = [&](const std::string& s) {
    for (unsigned char c : s) feed(c);
    feed(0xffff);
  };
  const auto& l = table.layout();
  feed(static_cast<std::uint64_t>(l.occasions));
  for (const auto& c : l.categories) feed_str(c);
  for (const auto& g : l.groups) feed_str(g);
  for (int g = 0; g < table.num_groups(); ++g) {
    feed(0xabcdef);
    for (const auto& [idx, c] : table.cells(g)) {
      feed(idx);
      feed(c);
    }
  }
  return h;
}

/// Degrees of freedom of the saturated model: sum over groups of (J^T - 1).
inline int saturated_parameters(const Dimensions& d) {
  return d.groups * static_cast<int>(pattern_count(d.categories, d.occasions) - 1);
}

namespace detail {

struct ObservedCell {
  int group;
  Pattern pattern;
  double count;
};

inline std::vector<ObservedCell> observed_cells(const PanelTable& table) {
  std::vector<ObservedCell> out;
  for (int h = 0; h < table.num_groups(); ++h)
    for (const auto& [idx, c] : table.cells(h))
      out.push_back({h, pattern_from_index(idx, table.num_categories(), table.occasions()), static_cast<double>(c)});
  return out;
}

inline void check_table_for_fit(const ModelSpec& spec, const PanelTable& table) {
  const auto& d = spec.dims;
  if (d.groups != table.num_groups() || d.categories != table.num_categories() || d.occasions != table.occasions())
    throw ModelError("model dimensions do not match the table");
  for (int h = 0; h < table.num_groups(); ++h)
    if (table.total(h) == 0)
      throw ModelError("group '" + table.layout().groups[static_cast<std::size_t>(h)] + "' has no observations");
}

inline void set_block(ParameterSet& p, const RowBlocks& blocks, int b, std::span<const double> values) {
  for (const auto& r : blocks.members[static_cast<std::size_t>(b)]) std::copy(values.begin(), values.end(), p.row(r).begin());
}

/// Rescales the non-fixed entries of `values` to the block's free mass and
/// writes fixed constants.
inline void impose_fixes(std::vector<double>& values, const std::vector<std::optional<double>>& fixed, double fixed_mass) {
  double free_sum = 0.0;
  for (std::size_t j = 0; j < values.size(); ++j)
    if (!fixed[j]) free_sum += values[j];
  const double free_mass = std::max(0.0, 1.0 - fixed_mass);
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (fixed[j])
      values[j] = *fixed[j];
    else
      values[j] = free_sum > 0.0 ? values[j] * free_mass / free_sum : 0.0;
  }
}

inline std::vector<double> empirical_gamma(const PanelTable& table) {
  std::vector<double> g;
  const double n = static_cast<double>(table.grand_total());
  for (int h = 0; h < table.num_groups(); ++h) g.push_back(n > 0 ? static_cast<double>(table.total(h)) / n : 0.0);
  return g;
}

/// E-step accumulation and block-pooled M-step for one model and table.
class EmEngine {
 public:
  EmEngine(const ModelSpec& spec, const PanelTable& table, RowBlocks blocks)
      : dims_(spec.dims), blocks_(std::move(blocks)), cells_(observed_cells(table)) {
    delta_counts_.resize(dims_.delta_size());
    rho_counts_.resize(dims_.rho_size());
    tau_counts_.resize(dims_.tau_size());
    ws_.resize(dims_);
  }

  const RowBlocks& blocks() const { return blocks_; }
  const Dimensions& dims() const { return dims_; }

  double log_likelihood(const ParameterSet& p) {
    double ll = 0.0;
    for (const auto& c : cells_) {
      const double pr = cell_probability(p, c.group, c.pattern);
      if (!(pr > 0.0)) return -std::numeric_limits<double>::infinity();
      ll += c.count * std::log(pr);
    }
    return ll;
  }

  /// One EM update from `cur` into `next`. Returns the log-likelihood of
  /// `cur`. Blocks without expected mass keep their current values and are
  /// appended to `empty_blocks` when provided.
  double step(const ParameterSet& cur, ParameterSet& next, std::vector<int>* empty_blocks = nullptr) {
    std::fill(delta_counts_.begin(), delta_counts_.end(), 0.0);
    std::fill(rho_counts_.begin(), rho_counts_.end(), 0.0);
    std::fill(tau_counts_.begin(), tau_counts_.end(), 0.0);
    const int A = dims_.classes, J = dims_.categories, T = dims_.occasions, H = dims_.groups;
    double ll = 0.0;
    for (const auto& c : cells_) {
      const double cl = run_forward_backward(cur, c.group, c.pattern, ws_);
      if (!std::isfinite(cl)) return -std::numeric_limits<double>::infinity();
      ll += c.count * cl;
      const int h = c.group;
      for (int a = 0; a < A; ++a) delta_counts_[static_cast<std::size_t>(h * A + a)] += c.count * ws_.states[static_cast<std::size_t>(a)];
      for (int t = 0; t < T; ++t) {
        const int y = c.pattern[static_cast<std::size_t>(t)];
        for (int a = 0; a < A; ++a)
          rho_counts_[static_cast<std::size_t>(((t * H + h) * A + a) * J + y)] +=
              c.count * ws_.states[static_cast<std::size_t>(t * A + a)];
      }
      for (int t = 0; t + 1 < T; ++t)
        for (int a = 0; a < A; ++a)
          for (int b = 0; b < A; ++b)
            tau_counts_[static_cast<std::size_t>(((t * H + h) * A + a) * A + b)] +=
                c.count * ws_.pairs[static_cast<std::size_t>((t * A + a) * A + b)];
    }

    next = cur;
    for (int b = 0; b < blocks_.size(); ++b) {
      const auto& members = blocks_.members[static_cast<std::size_t>(b)];
      const auto& fixed = blocks_.fixed[static_cast<std::size_t>(b)];
      const int len = row_length(dims_, blocks_.kind(b));
      pooled_.assign(static_cast<std::size_t>(len), 0.0);
      for (const auto& r : members) {
        const auto counts = count_row(r);
        for (int j = 0; j < len; ++j) pooled_[static_cast<std::size_t>(j)] += counts[static_cast<std::size_t>(j)];
      }
      if (blocks_.fully_fixed(b)) {
        for (int j = 0; j < len; ++j) pooled_[static_cast<std::size_t>(j)] = *fixed[static_cast<std::size_t>(j)];
        set_block(next, blocks_, b, pooled_);
        continue;
      }
      double free_total = 0.0;
      for (int j = 0; j < len; ++j)
        if (!fixed[static_cast<std::size_t>(j)]) free_total += pooled_[static_cast<std::size_t>(j)];
      if (!(free_total > 0.0)) {
        if (empty_blocks) empty_blocks->push_back(b);
        continue;
      }
      impose_fixes(pooled_, fixed, blocks_.fixed_mass(b));
      set_block(next, blocks_, b, pooled_);
    }
    return ll;
  }

 private:
  std::span<const double> count_row(const RowRef& r) const {
    switch (r.kind) {
      case ParamKind::delta:
        return {delta_counts_.data() + r.group * dims_.classes, static_cast<std::size_t>(dims_.classes)};
      case ParamKind::rho:
        return {rho_counts_.data() + ((r.occasion * dims_.groups + r.group) * dims_.classes + r.from) * dims_.categories,
                static_cast<std::size_t>(dims_.categories)};
      case ParamKind::tau:
        break;
    }
    return {tau_counts_.data() + ((r.occasion * dims_.groups + r.group) * dims_.classes + r.from) * dims_.classes,
            static_cast<std::size_t>(dims_.classes)};
  }

  Dimensions dims_;
  RowBlocks blocks_;
  std::vector<ObservedCell> cells_;
  std::vector<double> delta_counts_, rho_counts_, tau_counts_, pooled_;
  ChainWorkspace ws_;
};

struct ChainResult {
  ParameterSet params;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  double largest_decrease = 0.0;
  std::set<int> empty_blocks;
};

inline ChainResult run_chain(EmEngine& engine, ParameterSet start, const FitOptions& opt, int chain_index,
                             int max_iterations) {
  ChainResult out;
  ParameterSet cur = std::move(start), next;
  double prev = -std::numeric_limits<double>::infinity();
  std::vector<int> empty;
  for (int it = 0; it < max_iterations; ++it) {
    empty.clear();
    const double ll = engine.step(cur, next, &empty);
    if (opt.trace) opt.trace(chain_index, it, ll);
    if (!std::isfinite(ll)) {
      out.params = std::move(cur);
      out.iterations = it;
      return out;
    }
    out.empty_blocks.insert(empty.begin(), empty.end());
    if (it > 0) {
      out.largest_decrease = std::max(out.largest_decrease, prev - ll);
      if (ll - prev < opt.convergence) {
        out.params = std::move(cur);
        out.log_likelihood = ll;
        out.iterations = it;
        out.converged = true;
        return out;
      }
    }
    prev = ll;
    std::swap(cur, next);
  }
  out.iterations = max_iterations;
  out.log_likelihood = engine.log_likelihood(cur);
  out.largest_decrease = std::max(out.largest_decrease, prev - out.log_likelihood);
  out.params = std::move(cur);
  return out;
}

inline ParameterSet random_start(const Dimensions& d, const RowBlocks& blocks, std::vector<double> gamma, Rng& rng) {
  ParameterSet p(d);
  p.gamma = std::move(gamma);
  for (int b = 0; b < blocks.size(); ++b) {
    const int len = row_length(d, blocks.kind(b));
    std::vector<double> v(static_cast<std::size_t>(len));
    for (auto& x : v) x = rng.unit_exponential();
    impose_fixes(v, blocks.fixed[static_cast<std::size_t>(b)], blocks.fixed_mass(b));
    set_block(p, blocks, b, v);
  }
  return p;
}

/// Class a is tilted toward the category at the same relative position on
/// the scale (rho 0.8); transitions lean toward staying (0.6).
inline ParameterSet identity_leaning_start(const Dimensions& d, const RowBlocks& blocks, std::vector<double> gamma) {
  ParameterSet p(d);
  p.gamma = std::move(gamma);
  const int A = d.classes, J = d.categories;
  for (int b = 0; b < blocks.size(); ++b) {
    const auto& r = blocks.members[static_cast<std::size_t>(b)].front();
    const int len = row_length(d, r.kind);
    std::vector<double> v(static_cast<std::size_t>(len), 1.0 / len);
    if (r.kind == ParamKind::rho) {
      const int target = A == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(r.from) * (J - 1) / (A - 1)));
      for (int j = 0; j < J; ++j) v[static_cast<std::size_t>(j)] = j == target ? 0.8 : 0.2 / (J - 1);
    } else if (r.kind == ParamKind::tau && A > 1) {
      for (int k = 0; k < A; ++k) v[static_cast<std::size_t>(k)] = k == r.from ? 0.6 : 0.4 / (A - 1);
    }
    impose_fixes(v, blocks.fixed[static_cast<std::size_t>(b)], blocks.fixed_mass(b));
    set_block(p, blocks, b, v);
  }
  return p;
}

inline bool label_symmetric(const ModelSpec& spec) {
  if (spec.manifest) return false;
  const auto cs = effective_constraints(spec);
  if (!cs.fixes.empty()) return false;
  for (const auto& tie : cs.ties)
    for (const auto& r : tie)
      if (r.kind != ParamKind::delta && r.from != tie.front().from) return false;
  return true;
}

/// Snaps near-boundary free cells in place; returns the snapped cells (first
/// member row of each block).
inline std::vector<CellRef> snap_to_boundary(ParameterSet& p, const RowBlocks& blocks, double tol) {
  std::vector<CellRef> snapped;
  for (int b = 0; b < blocks.size(); ++b) {
    if (blocks.fully_fixed(b)) continue;
    const auto& members = blocks.members[static_cast<std::size_t>(b)];
    const auto& fixed = blocks.fixed[static_cast<std::size_t>(b)];
    std::vector<double> v(p.row(members.front()).begin(), p.row(members.front()).end());
    const double free_mass = 1.0 - blocks.fixed_mass(b);
    int at_one = -1;
    for (std::size_t j = 0; j < v.size(); ++j)
      if (!fixed[j] && free_mass > 0.5 && v[j] >= free_mass - tol) at_one = static_cast<int>(j);
    bool changed = false;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (fixed[j]) continue;
      const bool to_zero = at_one >= 0 ? static_cast<int>(j) != at_one : v[j] <= tol;
      if (to_zero) {
        snapped.push_back({members.front(), static_cast<int>(j)});
        changed = changed || v[j] != 0.0;
        v[j] = 0.0;
      } else if (static_cast<int>(j) == at_one) {
        snapped.push_back({members.front(), static_cast<int>(j)});
      }
    }
    if (at_one >= 0) {
      v[static_cast<std::size_t>(at_one)] = free_mass;
      changed = true;
    }
    if (changed) {
      impose_fixes(v, fixed, blocks.fixed_mass(b));
      set_block(p, blocks, b, v);
    }
  }
  return snapped;
}

}  // namespace detail

/// Reorders latent classes with `perm[new] = old` across delta, rho rows, and
/// tau rows and columns.
inline ParameterSet permute_classes(const ParameterSet& p, std::span<const int> perm) {
  const auto& d = p.dims;
  ParameterSet out = p;
  for (int h = 0; h < d.groups; ++h)
    for (int k = 0; k < d.classes; ++k) out.delta_at(h, k) = p.delta_at(h, perm[static_cast<std::size_t>(k)]);
  for (int t = 0; t < d.occasions; ++t)
    for (int h = 0; h < d.groups; ++h)
      for (int k = 0; k < d.classes; ++k)
        for (int j = 0; j < d.categories; ++j) out.rho_at(t, h, k, j) = p.rho_at(t, h, perm[static_cast<std::size_t>(k)], j);
  for (int t = 0; t < d.transitions(); ++t)
    for (int h = 0; h < d.groups; ++h)
      for (int k = 0; k < d.classes; ++k)
        for (int l = 0; l < d.classes; ++l)
          out.tau_at(t, h, k, l) = p.tau_at(t, h, perm[static_cast<std::size_t>(k)], perm[static_cast<std::size_t>(l)]);
  return out;
}

/// Canonical class order: modal category of the occasion-1 rho row (pooled
/// over groups with weights gamma) ascending; ties by pooled delta
/// descending, then by original index.
inline std::vector<int> canonical_order(const ParameterSet& p) {
  const auto& d = p.dims;
  std::vector<int> mode(static_cast<std::size_t>(d.classes));
  std::vector<double> weight(static_cast<std::size_t>(d.classes), 0.0);
  for (int a = 0; a < d.classes; ++a) {
    std::vector<double> pooled(static_cast<std::size_t>(d.categories), 0.0);
    for (int h = 0; h < d.groups; ++h) {
      const double g = p.gamma[static_cast<std::size_t>(h)];
      weight[static_cast<std::size_t>(a)] += g * p.delta_at(h, a);
      for (int j = 0; j < d.categories; ++j) pooled[static_cast<std::size_t>(j)] += g * p.rho_at(0, h, a, j);
    }
    mode[static_cast<std::size_t>(a)] = static_cast<int>(std::max_element(pooled.begin(), pooled.end()) - pooled.begin());
  }
  std::vector<int> perm(static_cast<std::size_t>(d.classes));
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int x, int y) {
    const auto ux = static_cast<std::size_t>(x), uy = static_cast<std::size_t>(y);
    if (mode[ux] != mode[uy]) return mode[ux] < mode[uy];
    return weight[ux] > weight[uy];
  });
  return perm;
}

inline ParameterSet canonicalize_labels(const ParameterSet& p) { return permute_classes(p, canonical_order(p)); }

/// Free parameters after constraint and boundary accounting: each estimated
/// block contributes (interior non-fixed cells - 1), floored at 0.
inline int count_free_parameters(const ParameterSet& p, const ModelSpec& spec, double boundary_tol) {
  const auto blocks = resolve_blocks(spec);
  int total = 0;
  for (int b = 0; b < blocks.size(); ++b) {
    if (blocks.fully_fixed(b)) continue;
    const auto row = p.row(blocks.members[static_cast<std::size_t>(b)].front());
    const auto& fixed = blocks.fixed[static_cast<std::size_t>(b)];
    int interior = 0;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (!fixed[j] && row[j] > boundary_tol && row[j] < 1.0 - boundary_tol) ++interior;
    total += std::max(interior - 1, 0);
  }
  return total;
}

/// One EM update under `spec`.
inline ParameterSet em_step(const ParameterSet& params, const PanelTable& table, const ModelSpec& spec) {
  detail::check_table_for_fit(spec, table);
  detail::EmEngine engine(spec, table, resolve_blocks(spec));
  ParameterSet next;
  if (!std::isfinite(engine.step(params, next)))
    throw ModelError("em_step: parameters give zero probability to an observed pattern");
  return next;
}

inline double log_likelihood(const ParameterSet& params, const PanelTable& table) {
  check_compatible(params, table);
  double ll = 0.0;
  for (int h = 0; h < table.num_groups(); ++h)
    for (const auto& [idx, c] : table.cells(h)) {
      const double pr = cell_probability(params, h, pattern_from_index(idx, table.num_categories(), table.occasions()));
      if (!(pr > 0.0)) return -std::numeric_limits<double>::infinity();
      ll += static_cast<double>(c) * std::log(pr);
    }
  return ll;
}

/// Multi-start EM. The best final log-likelihood wins; values within 1e-6
/// go to the lowest chain index. The winner is canonicalized when the
/// constraints allow relabeling, snapped to the boundary, and re-converged.
inline FitResult em_fit(const ModelSpec& spec, const PanelTable& table, const FitOptions& options) {
  options.check();
  detail::check_table_for_fit(spec, table);
  const auto blocks = resolve_blocks(spec);
  const auto gamma = detail::empirical_gamma(table);

  std::vector<ParameterSet> inits;
  for (auto w : options.warm_starts) {
    if (!(w.dims == spec.dims)) throw ModelError("warm start dimensions do not match the model");
    w.gamma = gamma;
    inits.push_back(std::move(w));
  }
  for (int s = 0; s < options.starts; ++s) {
    if (s == 0 && options.identity_start) {
      inits.push_back(detail::identity_leaning_start(spec.dims, blocks, gamma));
    } else {
      Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(s)));
      inits.push_back(detail::random_start(spec.dims, blocks, gamma, rng));
    }
  }

  std::vector<detail::ChainResult> chains(inits.size());
  parallel_for(inits.size(), options.threads, [&](std::size_t i) {
    detail::EmEngine engine(spec, table, blocks);
    chains[i] = detail::run_chain(engine, std::move(inits[i]), options, static_cast<int>(i), options.max_iterations);
  });

  FitResult result;
  result.spec = spec;
  result.data_digest = table_digest(table);
  auto& diag = result.diagnostics;
  diag.boundary_tol = options.boundary_tol;
  int best = -1;
  for (std::size_t i = 0; i < chains.size(); ++i) {
    const auto& c = chains[i];
    diag.iterations.push_back(c.iterations);
    diag.final_log_likelihoods.push_back(c.log_likelihood);
    diag.start_converged.push_back(c.converged);
    diag.largest_decrease = std::max(diag.largest_decrease, c.largest_decrease);
    result.converged = result.converged || c.converged;
    if (std::isfinite(c.log_likelihood) &&
        (best < 0 || c.log_likelihood > chains[static_cast<std::size_t>(best)].log_likelihood + 1e-6))
      best = static_cast<int>(i);
  }
  if (best < 0) throw ModelError("no start reached a finite log-likelihood");
  diag.best_start = best;
  const double best_ll = chains[static_cast<std::size_t>(best)].log_likelihood;
  for (const auto& c : chains)
    if (std::abs(c.log_likelihood - best_ll) <= 1e-6) ++diag.starts_at_best;
  for (int b : chains[static_cast<std::size_t>(best)].empty_blocks)
    diag.empty_rows.push_back(blocks.members[static_cast<std::size_t>(b)].front());

  ParameterSet params = chains[static_cast<std::size_t>(best)].params;
  if (detail::label_symmetric(spec)) {
    params = canonicalize_labels(params);
    diag.canonicalized = true;
  }

  // Snap, then re-converge the remaining interior cells. Zeros are absorbing
  // under EM, so snapped cells stay on the boundary.
  detail::EmEngine engine(spec, table, blocks);
  const ParameterSet unsnapped = params;
  std::vector<CellRef> boundary;
  double ll = best_ll;
  for (int round = 0; round < 4; ++round) {
    ParameterSet trial = params;
    auto snapped = detail::snap_to_boundary(trial, blocks, options.boundary_tol);
    if (!std::isfinite(engine.log_likelihood(trial))) {
      diag.note = "boundary snapping would exclude an observed pattern; estimates left unsnapped";
      params = unsnapped;
      boundary.clear();
      ll = engine.log_likelihood(params);
      break;
    }
    const bool stable = round > 0 && snapped == boundary;
    boundary = std::move(snapped);
    params = std::move(trial);
    if (stable) break;
    FitOptions polish;
    polish.convergence = options.convergence;
    auto polished = detail::run_chain(engine, params, polish, -1, options.max_iterations);
    diag.polish_iterations += polished.iterations;
    diag.largest_decrease = std::max(diag.largest_decrease, polished.largest_decrease);
    params = std::move(polished.params);
  }
  ll = engine.log_likelihood(params);
  diag.boundary_cells = std::move(boundary);

  result.params = std::move(params);
  result.log_likelihood = ll;
  result.free_parameters = count_free_parameters(result.params, spec, options.boundary_tol);
  result.degrees_of_freedom = saturated_parameters(spec.dims) - result.free_parameters;
  result.g_squared = g_squared(table, result.params).value;
  return result;
}

/// Standard errors from the observed information of a minimal
/// parameterization: one row per tie class, interior non-fixed cells only,
/// the last interior cell of each row expressed through the others. Second
/// derivatives by central differences (step 1e-5 relative); variances are
/// mapped back to the probability scale by the delta method.
inline ParameterErrors standard_errors(const FitResult& fit, const PanelTable& table, const ModelSpec& spec) {
  const auto& d = spec.dims;
  ParameterErrors out;
  out.delta.assign(d.delta_size(), std::nullopt);
  out.rho.assign(d.rho_size(), std::nullopt);
  out.tau.assign(d.tau_size(), std::nullopt);

  detail::check_table_for_fit(spec, table);
  const auto blocks = resolve_blocks(spec);
  const double tol = fit.diagnostics.boundary_tol > 0.0 ? fit.diagnostics.boundary_tol : 1e-4;

  struct BlockCoords {
    int block;
    std::vector<int> free_columns;  // entries of theta, by column
    int dependent_column = -1;
    std::vector<int> theta_index;   // index into theta for each free column
  };
  std::vector<double> theta;
  std::vector<BlockCoords> layout;
  for (int b = 0; b < blocks.size(); ++b) {
    if (blocks.fully_fixed(b)) continue;
    const auto row = fit.params.row(blocks.members[static_cast<std::size_t>(b)].front());
    const auto& fixed = blocks.fixed[static_cast<std::size_t>(b)];
    std::vector<int> interior;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (!fixed[j] && row[j] > tol && row[j] < 1.0 - tol) interior.push_back(static_cast<int>(j));
    if (interior.size() < 2) continue;
    BlockCoords bc{b, {}, interior.back(), {}};
    for (std::size_t k = 0; k + 1 < interior.size(); ++k) {
      bc.free_columns.push_back(interior[k]);
      bc.theta_index.push_back(static_cast<int>(theta.size()));
      theta.push_back(row[static_cast<std::size_t>(interior[k])]);
    }
    layout.push_back(std::move(bc));
  }
  const auto k = static_cast<Eigen::Index>(theta.size());
  if (k == 0) {
    out.diagnostic = "no interior parameters";
    return out;
  }

  detail::EmEngine engine(spec, table, blocks);
  auto evaluate = [&](const std::vector<double>& th) {
    ParameterSet p = fit.params;
    for (const auto& bc : layout) {
      const auto& members = blocks.members[static_cast<std::size_t>(bc.block)];
      std::vector<double> v(p.row(members.front()).begin(), p.row(members.front()).end());
      double shift = 0.0;
      for (std::size_t i = 0; i < bc.free_columns.size(); ++i) {
        const auto col = static_cast<std::size_t>(bc.free_columns[i]);
        const double nv = th[static_cast<std::size_t>(bc.theta_index[i])];
        shift += nv - v[col];
        v[col] = nv;
      }
      v[static_cast<std::size_t>(bc.dependent_column)] -= shift;
      detail::set_block(p, blocks, bc.block, v);
    }
    return engine.log_likelihood(p);
  };

  std::vector<double> step(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) step[i] = 1e-5 * theta[i];
  const double f0 = evaluate(theta);
  Eigen::MatrixXd hessian(k, k);
  auto shifted = [&](std::size_t i, double si, std::size_t j, double sj) {
    auto th = theta;
    th[i] += si * step[i];
    th[j] += sj * step[j];
    return evaluate(th);
  };
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto th = theta;
    th[i] += step[i];
    const double fp = evaluate(th);
    th[i] = theta[i] - step[i];
    const double fm = evaluate(th);
    hessian(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = (fp - 2.0 * f0 + fm) / (step[i] * step[i]);
    for (std::size_t j = 0; j < i; ++j) {
      const double v = (shifted(i, 1, j, 1) - shifted(i, 1, j, -1) - shifted(i, -1, j, 1) + shifted(i, -1, j, -1)) /
                       (4.0 * step[i] * step[j]);
      hessian(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      hessian(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  const Eigen::MatrixXd information = -hessian;
  Eigen::LLT<Eigen::MatrixXd> llt(information);
  if (llt.info() != Eigen::Success || !information.allFinite()) {
    out.diagnostic = "observed information matrix is singular or not positive definite";
    return out;
  }
  const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(k, k));

  for (const auto& bc : layout) {
    auto assign = [&](int column, double variance) {
      for (const auto& r : blocks.members[static_cast<std::size_t>(bc.block)])
        out.at(d, {r, column}) = std::sqrt(std::max(variance, 0.0));
    };
    double dependent_var = 0.0;
    for (std::size_t i = 0; i < bc.free_columns.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(bc.theta_index[i]);
      assign(bc.free_columns[i], cov(ii, ii));
      for (std::size_t j = 0; j < bc.free_columns.size(); ++j)
        dependent_var += cov(ii, static_cast<Eigen::Index>(bc.theta_index[j]));
    }
    assign(bc.dependent_column, dependent_var);
  }
  return out;
}

}  // namespace latent_chain
