#pragma once

// Simulation from a fitted model, parametric-bootstrap goodness of fit, and
// nested model comparison.

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "latent_chain/estimation.hpp"
#include "latent_chain/goodness_of_fit.hpp"
#include "latent_chain/model.hpp"
#include "latent_chain/panel_data.hpp"
#include "latent_chain/parallel.hpp"
#include "latent_chain/rng.hpp"

namespace latent_chain {

/// Upper tail of the chi-square distribution, Q(df/2, x/2).
inline double chi_square_sf(double x, int df) {
  if (df <= 0) throw std::domain_error("chi_square_sf: degrees of freedom must be positive");
  if (!(x >= 0.0)) throw std::domain_error("chi_square_sf: statistic must be non-negative");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

namespace detail {

inline void check_layout_for(const ParameterSet& params, const TableLayout& layout) {
  const auto& d = params.dims;
  if (layout.num_groups() != d.groups || layout.num_categories() != d.categories || layout.occasions != d.occasions)
    throw ModelError("table layout does not match the parameter dimensions");
}

}  // namespace detail

/// Multinomial draws of n_h patterns per group by inverse CDF over the
/// lexicographic cell order. Group h uses the stream derive_seed(seed, h).
inline PanelTable simulate(const ParameterSet& params, std::span<const std::uint64_t> group_sizes, std::uint64_t seed,
                           const TableLayout& layout) {
  detail::check_layout_for(params, layout);
  if (static_cast<int>(group_sizes.size()) != params.dims.groups)
    throw ModelError("simulate: one size per group required");
  PanelTable out(layout);
  for (int h = 0; h < params.dims.groups; ++h) {
    auto cdf = pattern_probabilities(params, h);
    for (std::size_t i = 1; i < cdf.size(); ++i) cdf[i] += cdf[i - 1];
    const double total = cdf.back();
    std::vector<std::uint64_t> counts(cdf.size(), 0);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(h)));
    for (std::uint64_t k = 0; k < group_sizes[static_cast<std::size_t>(h)]; ++k) {
      const double u = rng.uniform() * total;
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      if (it == cdf.end()) --it;
      ++counts[static_cast<std::size_t>(it - cdf.begin())];
    }
    for (std::size_t i = 0; i < counts.size(); ++i) out.add_index(h, i, counts[i]);
  }
  return out;
}

inline PanelTable simulate(const ParameterSet& params, std::span<const std::uint64_t> group_sizes, std::uint64_t seed) {
  return simulate(params, group_sizes, seed,
                  TableLayout::numbered(params.dims.groups, params.dims.categories, params.dims.occasions));
}

/// Expected counts n_h * p rounded to integers by largest remainder, so each
/// group still totals n_h. A noise-free fixture for round-trip checks.
inline PanelTable expected_count_table(const ParameterSet& params, std::span<const std::uint64_t> group_sizes,
                                       const TableLayout& layout) {
  detail::check_layout_for(params, layout);
  if (static_cast<int>(group_sizes.size()) != params.dims.groups)
    throw ModelError("expected_count_table: one size per group required");
  PanelTable out(layout);
  for (int h = 0; h < params.dims.groups; ++h) {
    const auto probs = pattern_probabilities(params, h);
    const auto n = group_sizes[static_cast<std::size_t>(h)];
    std::vector<std::uint64_t> counts(probs.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const double m = static_cast<double>(n) * probs[i];
      counts[i] = static_cast<std::uint64_t>(std::floor(m));
      assigned += counts[i];
      remainders.emplace_back(m - std::floor(m), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n && k < remainders.size(); ++k, ++assigned) ++counts[remainders[k].second];
    for (std::size_t i = 0; i < counts.size(); ++i) out.add_index(h, i, counts[i]);
  }
  return out;
}

struct BootstrapReplicate {
  double lr = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  bool excludes_observed_cell = false;
};

struct BootstrapReport {
  double observed_lr = 0.0;
  std::vector<BootstrapReplicate> replicates;
  /// Replicates with LR >= observed.
  int exceed_count = 0;
  /// (exceed_count + 1) / (B + 1).
  double p_value = 1.0;
  int replicate_count = 0;
  std::uint64_t seed = 0;
  int fallback_starts = 0;

  double mean_replicate_lr() const {
    double s = 0.0;
    int n = 0;
    for (const auto& r : replicates)
      if (std::isfinite(r.lr)) {
        s += r.lr;
        ++n;
      }
    return n > 0 ? s / n : std::numeric_limits<double>::quiet_NaN();
  }
};

struct BootstrapOptions {
  /// Random restarts added to the warm start in each refit.
  int fallback_starts = 4;
  int threads = 1;
  /// Iteration cap and convergence threshold for refits; boundary_tol is
  /// taken from the original fit.
  int max_iterations = 5000;
  double convergence = 1e-9;
};

/// Replicate b simulates a table of the original group sizes from the fitted
/// parameters with seed derive_seed(seed, b), refits the same model (warm
/// start at the fit plus random fallbacks), and records its G^2.
inline BootstrapReport bootstrap_gof(const FitResult& fit, const ModelSpec& spec, const PanelTable& table, int B,
                                     std::uint64_t seed, const BootstrapOptions& options = {}) {
  if (B < 1) throw ModelError("bootstrap: replicate count must be >= 1");
  BootstrapReport report;
  report.replicate_count = B;
  report.seed = seed;
  report.fallback_starts = options.fallback_starts;
  report.observed_lr = g_squared(table, fit.params).value;
  report.replicates.resize(static_cast<std::size_t>(B));
  const auto sizes = table.group_totals();

  parallel_for(static_cast<std::size_t>(B), options.threads, [&](std::size_t b) {
    const auto rep_seed = derive_seed(seed, b + 1);
    const auto sample = simulate(fit.params, sizes, rep_seed, table.layout());
    FitOptions refit;
    refit.starts = options.fallback_starts;
    refit.identity_start = false;
    refit.warm_starts = {fit.params};
    refit.seed = derive_seed(rep_seed, 0x5eed);
    refit.max_iterations = options.max_iterations;
    refit.convergence = options.convergence;
    refit.boundary_tol = fit.diagnostics.boundary_tol > 0.0 ? fit.diagnostics.boundary_tol : 1e-4;
    auto& rep = report.replicates[b];
    try {
      const auto r = em_fit(spec, sample, refit);
      const auto g2 = g_squared(sample, r.params);
      rep.lr = g2.value;
      rep.excludes_observed_cell = g2.excludes_observed_cell;
      rep.converged = r.converged;
    } catch (const ModelError&) {
      rep.converged = false;
    }
  });

  for (const auto& r : report.replicates)
    if (r.lr >= report.observed_lr) ++report.exceed_count;
  report.p_value = static_cast<double>(report.exceed_count + 1) / static_cast<double>(B + 1);
  return report;
}

/// True when every tie of `general` also holds in `restricted` and every fix
/// of `general` is present in `restricted` with the same value.
inline bool is_relaxation_of(const ModelSpec& general, const ModelSpec& restricted) {
  if (!(general.dims == restricted.dims)) return false;
  const auto g = resolve_blocks(general);
  const auto r = resolve_blocks(restricted);
  const auto& d = general.dims;
  for (int b = 0; b < g.size(); ++b) {
    const auto& members = g.members[static_cast<std::size_t>(b)];
    const int rb = r.block_of_row[static_cast<std::size_t>(row_id(d, members.front()))];
    for (const auto& m : members)
      if (r.block_of_row[static_cast<std::size_t>(row_id(d, m))] != rb) return false;
    const auto& gf = g.fixed[static_cast<std::size_t>(b)];
    const auto& rf = r.fixed[static_cast<std::size_t>(rb)];
    for (std::size_t j = 0; j < gf.size(); ++j)
      if (gf[j] && (!rf[j] || std::abs(*rf[j] - *gf[j]) > 1e-12)) return false;
  }
  return true;
}

struct ComparisonReport {
  double delta_lr = 0.0;
  int delta_df = 0;
  double chi_square_p = 1.0;
  /// Set when delta_lr < -1e-6: the restricted fit missed its optimum.
  bool restricted_fit_failed = false;
  std::vector<std::string> warnings;
};

/// Likelihood-ratio difference test of `restricted` against `general`.
/// Throws ModelError when the models are not nested or were fitted to
/// different tables.
inline ComparisonReport compare_nested(const FitResult& restricted, const FitResult& general) {
  if (restricted.data_digest != general.data_digest)
    throw ModelError("compare: the two fits were made on different tables");
  if (!is_relaxation_of(general.spec, restricted.spec))
    throw ModelError("compare: the general model's constraints are not a relaxation of the restricted model's");
  ComparisonReport out;
  out.delta_lr = restricted.g_squared - general.g_squared;
  out.delta_df = restricted.degrees_of_freedom - general.degrees_of_freedom;
  if (out.delta_lr < -1e-6) {
    out.restricted_fit_failed = true;
    out.warnings.push_back("negative LR difference: the restricted fit did not reach its optimum");
  }
  if (out.delta_df <= 0) {
    out.warnings.push_back("not a proper nesting: degrees-of-freedom difference is " + std::to_string(out.delta_df));
    out.chi_square_p = std::abs(out.delta_lr) <= 1e-6 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.chi_square_p = chi_square_sf(std::max(out.delta_lr, 0.0), out.delta_df);
  return out;
}

}  // namespace latent_chain
