#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "latent_chain/estimation.hpp"
#include "latent_chain/inference.hpp"
#include "latent_chain/replication.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace latent_chain;
namespace rep = latent_chain::replication;

namespace {

/// Fails the test if any chain's log-likelihood drops between iterations.
struct MonotoneTrace {
  std::map<int, double> last;
  double worst = 0.0;
  int iterations = 0;

  void attach(FitOptions& o) {
    o.threads = 1;
    o.trace = [this](int chain, int, double ll) {
      ++iterations;
      auto it = last.find(chain);
      if (it != last.end()) worst = std::max(worst, (it->second - ll) / std::abs(ll));
      last[chain] = ll;
    };
  }
};

ModelSpec untied(int groups, int categories, int occasions, int classes) {
  ModelSpec s;
  s.dims = {groups, categories, occasions, classes};
  return s;
}

/// Log-likelihood of a one-occasion, two-class, two-category model.
double lcm_ll(double d1, double r11, double r21, double n1, double n2) {
  const double p1 = d1 * r11 + (1.0 - d1) * r21;
  if (p1 <= 0.0 || p1 >= 1.0) return -std::numeric_limits<double>::infinity();
  return n1 * std::log(p1) + n2 * std::log(1.0 - p1);
}

/// Grid search with successive zooming over (delta_1, rho_11, rho_21).
std::array<double, 4> grid_mle(double n1, double n2) {
  std::array<double, 3> lo{0.0, 0.0, 0.0}, hi{1.0, 1.0, 1.0}, best{0.5, 0.5, 0.5};
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int level = 0; level < 9; ++level) {
    const int steps = 20;
    std::array<double, 3> h;
    for (int k = 0; k < 3; ++k) h[k] = (hi[k] - lo[k]) / steps;
    for (int i = 0; i <= steps; ++i)
      for (int j = 0; j <= steps; ++j)
        for (int k = 0; k <= steps; ++k) {
          const double a = lo[0] + i * h[0], b = lo[1] + j * h[1], c = lo[2] + k * h[2];
          const double ll = lcm_ll(a, b, c, n1, n2);
          if (ll > best_ll) {
            best_ll = ll;
            best = {a, b, c};
          }
        }
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::max(0.0, best[k] - 2 * h[k]);
      hi[k] = std::min(1.0, best[k] + 2 * h[k]);
    }
  }
  return {best[0], best[1], best[2], best_ll};
}

double max_abs_diff(const ParameterSet& a, const ParameterSet& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.delta.size(); ++i) m = std::max(m, std::abs(a.delta[i] - b.delta[i]));
  for (std::size_t i = 0; i < a.rho.size(); ++i) m = std::max(m, std::abs(a.rho[i] - b.rho[i]));
  for (std::size_t i = 0; i < a.tau.size(); ++i) m = std::max(m, std::abs(a.tau[i] - b.tau[i]));
  return m;
}

}  // namespace

TEST(Estimation, EmStepIsMonotoneFromRandomStarts) {
  const auto table = support::bundled();
  const auto spec = rep::main_spec();
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 10; ++rep) {
    auto p = oracle::random_parameters(gen, spec.dims);
    // Impose the ties so the start is valid under the spec.
    for (int t = 0; t < 3; ++t)
      for (int h = 0; h < 2; ++h)
        for (int a = 0; a < 3; ++a)
          for (int j = 0; j < 3; ++j) p.rho_at(t, h, a, j) = p.rho_at(0, 0, a, j);
    for (int a = 0; a < 3; ++a) p.delta_at(1, a) = p.delta_at(0, a);
    p.gamma = {1474.0 / 1954.0, 480.0 / 1954.0};
    ASSERT_TRUE(validate(spec, p, 1e-12).ok);
    double prev = log_likelihood(p, table);
    for (int it = 0; it < 50; ++it) {
      p = em_step(p, table, spec);
      const double ll = log_likelihood(p, table);
      EXPECT_GE(ll, prev - 1e-12 * std::abs(prev));
      prev = ll;
    }
  }
}

TEST(Estimation, EmFitIsMonotoneEveryIteration) {
  const auto table = support::bundled();
  auto o = rep::fit_options(3, 1);
  o.starts = 8;
  MonotoneTrace trace;
  trace.attach(o);
  const auto fit = em_fit(rep::main_spec(), table, o);
  EXPECT_GT(trace.iterations, 100);
  EXPECT_LE(trace.worst, 1e-12);
  EXPECT_LE(fit.diagnostics.largest_decrease, 1e-12 * std::abs(fit.log_likelihood));
}

TEST(Estimation, DeterministicManifestChainIsFixedPoint) {
  ModelSpec spec = untied(1, 3, 3, 3);
  spec.manifest = true;
  PanelTable table(TableLayout::numbered(1, 3, 3));
  const std::uint64_t counts[] = {50, 30, 20};
  for (int c = 0; c < 3; ++c) table.add(0, std::vector<int>{c, c, c}, counts[c]);
  ParameterSet p(spec.dims);
  p.gamma = {1.0};
  for (int a = 0; a < 3; ++a) p.delta_at(0, a) = static_cast<double>(counts[a]) / 100.0;
  for (int t = 0; t < 3; ++t)
    for (int a = 0; a < 3; ++a)
      for (int j = 0; j < 3; ++j) p.rho_at(t, 0, a, j) = a == j ? 1.0 : 0.0;
  for (int t = 0; t < 2; ++t)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) p.tau_at(t, 0, a, b) = a == b ? 1.0 : 0.0;
  const auto next = em_step(p, table, spec);
  EXPECT_LE(max_abs_diff(next, p), 1e-15);
}

TEST(Estimation, SingleOccasionMatchesGridSearch) {
  const double n1 = 37.0, n2 = 63.0;
  PanelTable table(TableLayout::numbered(1, 2, 1));
  table.add(0, std::vector<int>{0}, 37);
  table.add(0, std::vector<int>{1}, 63);
  FitOptions o;
  o.seed = 5;
  o.starts = 4;
  o.convergence = 1e-13;
  const auto fit = em_fit(untied(1, 2, 1, 2), table, o);
  const auto grid = grid_mle(n1, n2);
  EXPECT_NEAR(fit.log_likelihood, grid[3], 1e-6);
  const auto& p = fit.params;
  const double fitted_p1 = p.delta_at(0, 0) * p.rho_at(0, 0, 0, 0) + p.delta_at(0, 1) * p.rho_at(0, 0, 1, 0);
  const double grid_p1 = grid[0] * grid[1] + (1.0 - grid[0]) * grid[2];
  EXPECT_NEAR(fitted_p1, grid_p1, 1e-6);
}

TEST(Estimation, PublishedEstimatesRecovered) {
  const auto fit = em_fit(rep::main_spec(), support::bundled(), rep::fit_options(derive_seed(20240601, 1), 1));
  const auto& p = fit.params;
  EXPECT_NEAR(p.delta_at(0, 0), 0.62, 0.02);
  EXPECT_NEAR(p.delta_at(0, 1), 0.18, 0.02);
  EXPECT_NEAR(p.delta_at(0, 2), 0.20, 0.02);
  EXPECT_NEAR(p.rho_at(0, 0, 0, 0), 0.92, 0.02);
  EXPECT_NEAR(p.rho_at(0, 0, 0, 1), 0.06, 0.02);
  EXPECT_NEAR(p.rho_at(0, 0, 0, 2), 0.02, 0.02);
  EXPECT_NEAR(p.tau_at(0, 0, 0, 0), 0.64, 0.02);
  EXPECT_NEAR(p.tau_at(0, 0, 0, 1), 0.26, 0.02);
  EXPECT_NEAR(p.tau_at(0, 0, 0, 2), 0.10, 0.02);
  EXPECT_EQ(p.rho_at(0, 0, 2, 2), 1.0);
  EXPECT_EQ(p.tau_at(0, 0, 1, 0), 0.0);
  EXPECT_TRUE(fit.converged);
  EXPECT_TRUE(validate(rep::main_spec(), p, 1e-9).ok);
}

TEST(Estimation, DfIdentityAndGenderFixtureCounts) {
  for (auto f : {rep::Fellowship::doctoral, rep::Fellowship::postdoc}) {
    const auto table = rep::gender_fixture(f);
    for (bool m2 : {false, true}) {
      const auto fit = em_fit(rep::gender_spec(m2), table, rep::fit_options(7, 1));
      EXPECT_EQ(fit.degrees_of_freedom, saturated_parameters(fit.spec.dims) - fit.free_parameters);
      EXPECT_EQ(saturated_parameters(fit.spec.dims), 52);
      if (f == rep::Fellowship::doctoral) {
        EXPECT_EQ(fit.free_parameters, m2 ? 21 : 13);
      }
      const int expected = f == rep::Fellowship::doctoral ? (m2 ? 31 : 39) : (m2 ? 32 : 38);
      EXPECT_EQ(fit.degrees_of_freedom, expected) << rep::fellowship_label(f) << (m2 ? " M2" : " M1");
    }
  }
}

TEST(Estimation, FreeParametersOfInteriorUntiedModel) {
  std::mt19937_64 gen(12);
  const auto spec = untied(1, 3, 3, 3);
  const auto p = oracle::random_parameters(gen, spec.dims);
  // delta 2, rho 3 x 3 x 2, tau 2 x 3 x 2.
  EXPECT_EQ(count_free_parameters(p, spec, 1e-4), 32);
}

TEST(Estimation, FreeParametersSkipBoundaryAndFixedCells) {
  auto spec = rep::main_spec();
  const auto p = rep::table3_parameters();
  // delta 2, rho 2 + 2 + 0, tau: doctoral 2+1+1+2+1+0, post-doctoral 2+1+1+2+1+1.
  EXPECT_EQ(count_free_parameters(p, spec, 0.005), 6 + 7 + 8);
  spec.constraints.fixes.push_back({{RowRef::delta(0), 0}, 0.62});
  EXPECT_EQ(count_free_parameters(p, spec, 0.005), 5 + 7 + 8);
}

TEST(Estimation, CanonicalizationRestoresShuffledClasses) {
  const auto p = rep::table3_parameters();
  const int shuffle[] = {1, 2, 0};
  const auto shuffled = permute_classes(p, shuffle);
  EXPECT_NE(shuffled, p);
  EXPECT_EQ(canonicalize_labels(shuffled), p);
  EXPECT_EQ(canonicalize_labels(p), p);
}

TEST(Estimation, CanonicalizationPreservesCellProbabilities) {
  std::mt19937_64 gen(13);
  for (int rep = 0; rep < 20; ++rep) {
    const auto p = oracle::random_parameters(gen, {2, 3, 3, 3});
    const auto c = canonicalize_labels(p);
    EXPECT_EQ(canonicalize_labels(c), c);
    for (int h = 0; h < 2; ++h) {
      const auto a = pattern_probabilities(p, h), b = pattern_probabilities(c, h);
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
    }
  }
}

TEST(Estimation, Reproducible) {
  const auto table = support::bundled();
  auto o = rep::fit_options(21, 1);
  o.starts = 6;
  const auto a = em_fit(rep::main_spec(), table, o);
  const auto b = em_fit(rep::main_spec(), table, o);
  o.threads = 3;
  const auto c = em_fit(rep::main_spec(), table, o);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.params, c.params);
  EXPECT_EQ(a.log_likelihood, c.log_likelihood);
  EXPECT_EQ(a.diagnostics.final_log_likelihoods, c.diagnostics.final_log_likelihoods);
}

TEST(Estimation, MleDominatesGeneratingParameters) {
  const auto truth = rep::table3_parameters();
  const std::vector<std::uint64_t> n{1474, 480};
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto sim = simulate(truth, n, s, rep::fellowship_layout());
    auto o = rep::fit_options(s, 1);
    o.starts = 8;
    const auto fit = em_fit(rep::main_spec(), sim, o);
    EXPECT_GE(fit.log_likelihood, log_likelihood(truth, sim) - 1e-9);
  }
}

TEST(Estimation, NonConvergenceFlagged) {
  FitOptions o;
  o.starts = 2;
  o.max_iterations = 2;
  const auto fit = em_fit(rep::main_spec(), support::bundled(), o);
  EXPECT_FALSE(fit.converged);
  EXPECT_TRUE(std::isfinite(fit.log_likelihood));
}

TEST(Estimation, OptionAndTableErrors) {
  const auto table = support::bundled();
  FitOptions o;
  o.starts = 0;
  EXPECT_THROW(em_fit(rep::main_spec(), table, o), ModelError);
  o = {};
  o.boundary_tol = 0.5;
  EXPECT_THROW(em_fit(rep::main_spec(), table, o), ModelError);
  o = {};
  o.convergence = 0.0;
  EXPECT_THROW(em_fit(rep::main_spec(), table, o), ModelError);
  PanelTable empty(rep::fellowship_layout());
  empty.add(0, std::vector<int>{0, 0, 0}, 3);
  EXPECT_THROW(em_fit(rep::main_spec(), empty, FitOptions{}), ModelError);
  EXPECT_THROW(em_fit(untied(2, 3, 2, 3), table, FitOptions{}), ModelError);
}

TEST(Estimation, EmptyRowFlagged) {
  // Class 2 is never occupied at occasion 1, so its first transition row has
  // no expected mass.
  ModelSpec spec = untied(1, 2, 2, 2);
  spec.constraints.fixes.push_back({{RowRef::delta(0), 1}, 0.0});
  PanelTable table(TableLayout::numbered(1, 2, 2));
  for (std::uint64_t i = 0; i < 4; ++i) table.add_index(0, i, 10 + i);
  FitOptions o;
  o.starts = 2;
  const auto fit = em_fit(spec, table, o);
  bool flagged = false;
  for (const auto& r : fit.diagnostics.empty_rows) flagged = flagged || r == RowRef::tau(0, 0, 1);
  EXPECT_TRUE(flagged);
}

TEST(Estimation, StandardErrorsOfPublishedFit) {
  const auto table = support::bundled();
  const auto spec = rep::main_spec();
  const auto fit = em_fit(spec, table, rep::fit_options(derive_seed(20240601, 1), 1));
  const auto se = standard_errors(fit, table, spec);
  ASSERT_TRUE(se.diagnostic.empty()) << se.diagnostic;
  const auto& d = spec.dims;
  const auto tau11 = se.at(d, {RowRef::tau(0, 0, 0), 0});
  ASSERT_TRUE(tau11.has_value());
  EXPECT_GT(*tau11, 0.01);
  EXPECT_LT(*tau11, 0.04);
  for (int j = 0; j < 3; ++j) EXPECT_FALSE(se.at(d, {RowRef::rho(0, 0, 2), j}).has_value());
  for (const auto& c : fit.diagnostics.boundary_cells) EXPECT_FALSE(se.at(d, c).has_value()) << describe(c);
  // Tied rows report one shared value.
  EXPECT_EQ(se.at(d, {RowRef::rho(0, 0, 0), 0}), se.at(d, {RowRef::rho(2, 1, 0), 0}));
}

TEST(Estimation, StandardErrorsMatchBootstrapSpread) {
  // Interior two-class model, one group, three occasions, response
  // probabilities constant over time, large n.
  auto spec = untied(1, 3, 3, 2);
  constraints::tie_rho_over_time(spec.constraints, spec.dims);
  ParameterSet truth(spec.dims);
  truth.gamma = {1.0};
  truth.delta = {0.6, 0.4};
  const double rho[2][3] = {{0.8, 0.15, 0.05}, {0.1, 0.3, 0.6}};
  for (int t = 0; t < 3; ++t)
    for (int a = 0; a < 2; ++a)
      for (int j = 0; j < 3; ++j) truth.rho_at(t, 0, a, j) = rho[a][j];
  for (int t = 0; t < 2; ++t) {
    truth.tau_at(t, 0, 0, 0) = 0.8;
    truth.tau_at(t, 0, 0, 1) = 0.2;
    truth.tau_at(t, 0, 1, 0) = 0.3;
    truth.tau_at(t, 0, 1, 1) = 0.7;
  }
  const std::vector<std::uint64_t> n{20000};
  const auto data = simulate(truth, n, 99);
  FitOptions o;
  o.seed = 1;
  o.starts = 8;
  o.convergence = 1e-11;
  const auto fit = em_fit(spec, data, o);
  const auto se = standard_errors(fit, data, spec);
  ASSERT_TRUE(se.diagnostic.empty()) << se.diagnostic;

  const int B = 200;
  std::vector<ParameterSet> reps;
  for (int b = 0; b < B; ++b) {
    const auto sample = simulate(fit.params, n, derive_seed(500, static_cast<std::uint64_t>(b)));
    FitOptions r;
    r.starts = 0;
    r.warm_starts = {fit.params};
    r.convergence = 1e-11;
    reps.push_back(em_fit(spec, sample, r).params);
  }
  const auto& d = spec.dims;
  int compared = 0;
  for (int id = 0; id < row_count(d); ++id) {
    const auto row = row_ref(d, id);
    for (int c = 0; c < static_cast<int>(truth.row(row).size()); ++c) {
      const CellRef cell{row, c};
      const auto s = se.at(d, cell);
      ASSERT_TRUE(s.has_value()) << describe(cell);
      double mean = 0.0;
      for (const auto& p : reps) mean += p.at(cell);
      mean /= B;
      double var = 0.0;
      for (const auto& p : reps) var += (p.at(cell) - mean) * (p.at(cell) - mean);
      const double boot_sd = std::sqrt(var / (B - 1));
      EXPECT_NEAR(*s / boot_sd, 1.0, 0.15) << describe(cell) << " info " << *s << " bootstrap " << boot_sd;
      ++compared;
    }
  }
  EXPECT_EQ(compared, 2 + 18 + 8);
}

TEST(Estimation, TableDigestDistinguishesTables) {
  auto a = support::bundled();
  auto b = a;
  EXPECT_EQ(table_digest(a), table_digest(b));
  b.add(0, std::vector<int>{0, 0, 0}, 1);
  EXPECT_NE(table_digest(a), table_digest(b));
}
