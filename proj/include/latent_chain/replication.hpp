#pragma once

// End-to-end replication of the fellowship peer-review analysis: published
// tables, the bundled model variants, gender fixtures, and a checked report.

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "latent_chain/acceptance.hpp"
#include "latent_chain/estimation.hpp"
#include "latent_chain/inference.hpp"
#include "latent_chain/model.hpp"
#include "latent_chain/panel_data.hpp"
#include "latent_chain/reliability.hpp"
#include "latent_chain/serialization.hpp"

namespace latent_chain::replication {

enum class Fellowship { doctoral = 0, postdoc = 1 };

inline const char* fellowship_label(Fellowship f) { return f == Fellowship::doctoral ? "doctoral" : "post-doctoral"; }
inline const char* fellowship_key(Fellowship f) { return f == Fellowship::doctoral ? "doctoral" : "postdoc"; }

namespace published {

// Lexicographic pattern order 111, 112, ..., 333.
inline constexpr std::array<std::uint64_t, 27> table1_doctoral{143, 254, 142, 9,  74, 155, 1,  9,  112,
                                                               8,   20,  26,  1,  16, 84,  0,  1,  103,
                                                               2,   9,   26,  1,  8,  65,  0,  0,  205};
inline constexpr std::array<std::uint64_t, 27> table1_postdoc{31, 62, 46, 3, 23, 48, 1, 7, 57, 0, 4, 8, 2, 5,
                                                              27, 0,  1,  44, 0, 1, 6, 1, 1, 22, 0, 2, 78};

struct Table2Column {
  double data_stability;
  double stability, true_stability, error_stability;
  double change, true_change, error_change;
  double total_error;
};
inline constexpr Table2Column table2_doctoral{0.24, 0.23, 0.20, 0.03, 0.77, 0.58, 0.19, 0.22};
inline constexpr Table2Column table2_postdoc{0.22, 0.21, 0.19, 0.02, 0.79, 0.61, 0.18, 0.21};

inline constexpr double delta[3] = {0.62, 0.18, 0.20};
inline constexpr double rho[3][3] = {{0.92, 0.06, 0.02}, {0.17, 0.81, 0.02}, {0.00, 0.00, 1.00}};
/// Standard errors; negative marks "n.e.".
inline constexpr double rho_se[3][3] = {{0.02, 0.01, 0.01}, {0.03, 0.04, 0.04}, {-1, -1, -1}};

// [fellowship][transition][from][to]
inline constexpr double tau[2][2][3][3] = {
    {{{0.64, 0.26, 0.10}, {0.00, 0.54, 0.46}, {0.00, 0.32, 0.68}},
     {{0.18, 0.62, 0.20}, {0.00, 0.21, 0.79}, {0.00, 0.00, 1.00}}},
    {{{0.52, 0.28, 0.20}, {0.00, 0.46, 0.54}, {0.00, 0.26, 0.74}},
     {{0.13, 0.60, 0.27}, {0.00, 0.22, 0.78}, {0.00, 0.04, 0.96}}}};
inline constexpr double tau_se[2][2][3][3] = {
    {{{0.02, 0.03, 0.02}, {-1, 0.04, 0.04}, {-1, 0.03, 0.03}}, {{0.03, 0.05, 0.04}, {-1, 0.03, 0.03}, {-1, -1, -1}}},
    {{{0.04, 0.04, 0.03}, {-1, 0.07, 0.07}, {-1, 0.05, 0.05}}, {{0.05, 0.07, 0.05}, {-1, 0.04, 0.04}, {-1, 0.02, 0.02}}}};

struct Table4Row {
  int df;
  double lr;
  double p_boot;
};
// [fellowship][M1, M2]
inline constexpr Table4Row table4[2][2] = {{{39, 76.65, 0.00}, {31, 50.96, 0.02}}, {{38, 40.75, 0.35}, {32, 36.38, 0.26}}};
inline constexpr double delta_lr[2] = {25.69, 4.37};
inline constexpr int delta_df[2] = {8, 6};

// Doctoral M2 transitions, [male, female][transition][from][to].
inline constexpr double table5[2][2][3][3] = {
    {{{0.67, 0.23, 0.10}, {0.00, 0.61, 0.39}, {0.00, 0.27, 0.73}},
     {{0.23, 0.60, 0.17}, {0.00, 0.21, 0.79}, {0.00, 0.00, 1.00}}},
    {{{0.59, 0.30, 0.11}, {0.00, 0.45, 0.55}, {0.01, 0.36, 0.63}},
     {{0.07, 0.67, 0.26}, {0.00, 0.20, 0.80}, {0.00, 0.00, 1.00}}}};

}  // namespace published

inline TableLayout fellowship_layout() { return {3, {"1", "2", "3"}, {"doctoral", "post-doctoral"}}; }
inline TableLayout gender_layout() { return {3, {"1", "2", "3"}, {"male", "female"}}; }

inline PanelTable published_table1() {
  PanelTable t(fellowship_layout());
  for (std::uint64_t i = 0; i < 27; ++i) {
    t.add_index(0, i, published::table1_doctoral[i]);
    t.add_index(1, i, published::table1_postdoc[i]);
  }
  return t;
}

/// Non-stationary latent model with rho tied over occasions and delta, rho
/// tied over the two groups; tau free per group and transition.
inline ModelSpec main_spec() {
  ModelSpec spec;
  spec.dims = {2, 3, 3, 3};
  constraints::tie_rho_over_time(spec.constraints, spec.dims);
  constraints::tie_delta_rho_over_groups(spec.constraints, spec.dims);
  return spec;
}

/// Gender models over (male, female): M1 ties every parameter across the two
/// groups; M2 frees tau per gender.
inline ModelSpec gender_spec(bool m2) {
  ModelSpec spec = main_spec();
  if (!m2) constraints::tie_tau_over_groups(spec.constraints, spec.dims);
  return spec;
}

namespace detail {

inline void fill_shared(ParameterSet& p) {
  for (int h = 0; h < 2; ++h)
    for (int a = 0; a < 3; ++a) {
      p.delta_at(h, a) = published::delta[a];
      for (int t = 0; t < 3; ++t)
        for (int j = 0; j < 3; ++j) p.rho_at(t, h, a, j) = published::rho[a][j];
    }
}

inline void fill_tau(ParameterSet& p, int h, const double (&tau)[2][3][3]) {
  for (int t = 0; t < 2; ++t)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) p.tau_at(t, h, a, b) = tau[t][a][b];
}

}  // namespace detail

/// Published estimates as a parameter set over (doctoral, post-doctoral).
inline ParameterSet table3_parameters() {
  ParameterSet p({2, 3, 3, 3});
  p.gamma = {1474.0 / 1954.0, 480.0 / 1954.0};
  detail::fill_shared(p);
  detail::fill_tau(p, 0, published::tau[0]);
  detail::fill_tau(p, 1, published::tau[1]);
  return p;
}

/// Generating parameters for the gender fixtures. Doctoral uses the published
/// gender-specific transitions. Post-doctoral transitions are not published;
/// the constructed pair averages to the pooled post-doctoral estimates and
/// has the boundary pattern that the published degrees of freedom imply.
inline ParameterSet gender_generator(Fellowship f) {
  ParameterSet p({2, 3, 3, 3});
  p.gamma = {0.5, 0.5};
  detail::fill_shared(p);
  if (f == Fellowship::doctoral) {
    detail::fill_tau(p, 0, published::table5[0]);
    detail::fill_tau(p, 1, published::table5[1]);
  } else {
    static constexpr double first[2][3][3] = {{{0.52, 0.28, 0.20}, {0.00, 0.46, 0.54}, {0.00, 0.26, 0.74}},
                                              {{0.00, 0.70, 0.30}, {0.00, 0.22, 0.78}, {0.00, 0.08, 0.92}}};
    static constexpr double second[2][3][3] = {{{0.52, 0.28, 0.20}, {0.00, 0.46, 0.54}, {0.00, 0.26, 0.74}},
                                               {{0.26, 0.50, 0.24}, {0.00, 0.22, 0.78}, {0.00, 0.00, 1.00}}};
    detail::fill_tau(p, 0, first);
    detail::fill_tau(p, 1, second);
  }
  return p;
}

/// Gender group sizes for the fixtures. The real split is not published; a
/// large equal split keeps rounding from moving estimates across the
/// boundary threshold, so the fixture fits reproduce the generating pattern.
inline std::array<std::uint64_t, 2> fixture_sizes(Fellowship) { return {100000, 100000}; }

/// Noise-free stand-in for the unpublished gender tables.
inline PanelTable gender_fixture(Fellowship f) {
  const auto sizes = fixture_sizes(f);
  return expected_count_table(gender_generator(f), sizes, gender_layout());
}

inline FitOptions fit_options(std::uint64_t seed, int threads) {
  FitOptions o;
  o.starts = acceptance::table3_starts;
  o.boundary_tol = acceptance::replication_boundary_tol;
  o.seed = seed;
  o.threads = threads;
  return o;
}

enum class Status { pass, fail, skipped, info, discrepancy };

inline const char* status_name(Status s) {
  switch (s) {
    case Status::pass:
      return "pass";
    case Status::fail:
      return "fail";
    case Status::skipped:
      return "skipped";
    case Status::info:
      return "info";
    case Status::discrepancy:
      return "discrepancy";
  }
  return "?";
}

struct Check {
  /// Acceptance criterion the check belongs to; 0 for data integrity and
  /// informational rows.
  int criterion = 0;
  std::string table;
  std::string item;
  std::optional<double> published;
  std::optional<double> value;
  double tolerance = 0.0;
  Status status = Status::info;
  std::string note;
};

struct Options {
  PanelTable data;
  /// Real gender splits (groups male, female), when available.
  std::optional<PanelTable> gender[2];
  std::uint64_t seed = acceptance::default_seed;
  int threads = 1;
  int bootstrap_replicates = acceptance::bootstrap_replicates;
};

struct Result {
  std::vector<Check> checks;
  nlohmann::json report;
  std::string text;
  FitResult main_fit;

  bool passed() const {
    for (const auto& c : checks)
      if (c.status == Status::fail) return false;
    return true;
  }
  std::vector<const Check*> failures() const {
    std::vector<const Check*> out;
    for (const auto& c : checks)
      if (c.status == Status::fail) out.push_back(&c);
    return out;
  }
};

namespace detail {

inline std::string pattern_label(std::uint64_t index) {
  const auto p = pattern_from_index(index, 3, 3);
  std::string s;
  for (int y : p) s += static_cast<char>('1' + y);
  return s;
}

inline std::string cell_name(const char* name, int t, int a, int b) {
  std::ostringstream os;
  os << name << "(t" << t + 1 << "->t" << t + 2 << ") " << a + 1 << "->" << b + 1;
  return os.str();
}

/// Within-tolerance check; a published 0 or 1 must be reproduced exactly.
inline Check value_check(int criterion, std::string table, std::string item, double published, double value,
                         double tolerance) {
  Check c{criterion, std::move(table), std::move(item), published, value, tolerance, Status::pass, {}};
  if (published == 0.0 || published == 1.0) {
    c.tolerance = 0.0;
    c.note = "boundary";
    c.status = value == published ? Status::pass : Status::fail;
  } else {
    c.status = std::abs(value - published) <= tolerance + 1e-12 ? Status::pass : Status::fail;
  }
  return c;
}

inline Check exact_check(int criterion, std::string table, std::string item, int published, int value) {
  return {criterion,       std::move(table), std::move(item),
          published,       value,            0.0,
          published == value ? Status::pass : Status::fail, {}};
}

inline Check skipped(int criterion, std::string table, std::string item, std::optional<double> published) {
  return {criterion, std::move(table), std::move(item), published, std::nullopt, 0.0, Status::skipped,
          "data not public"};
}

inline Check info(std::string table, std::string item, std::optional<double> published, std::optional<double> value,
                  std::string note = {}) {
  return {0, std::move(table), std::move(item), published, value, 0.0, Status::info, std::move(note)};
}

inline nlohmann::json fit_summary(const FitResult& fit) {
  return {{"log_likelihood", fit.log_likelihood},
          {"g_squared", fit.g_squared},
          {"free_parameters", fit.free_parameters},
          {"degrees_of_freedom", fit.degrees_of_freedom},
          {"converged", fit.converged},
          {"starts_at_best", fit.diagnostics.starts_at_best},
          {"largest_log_likelihood_decrease", fit.diagnostics.largest_decrease}};
}

inline std::string format_number(const std::optional<double>& v, int precision) {
  if (!v) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

inline std::string format_checks(const std::vector<Check>& checks) {
  std::ostringstream os;
  std::string current;
  for (const auto& c : checks) {
    if (c.table != current) {
      current = c.table;
      os << '\n' << current << '\n';
      os << std::left << std::setw(40) << "  item" << std::right << std::setw(10) << "published" << std::setw(10)
         << "fitted" << std::setw(9) << "delta" << std::setw(8) << "tol" << "  status\n";
    }
    std::optional<double> delta;
    if (c.published && c.value) delta = *c.value - *c.published;
    os << "  " << std::left << std::setw(38) << c.item << std::right << std::setw(10) << format_number(c.published, 4)
       << std::setw(10) << format_number(c.value, 4) << std::setw(9) << format_number(delta, 4) << std::setw(8)
       << (c.status == Status::pass || c.status == Status::fail ? format_number(c.tolerance, 2) : "") << "  "
       << status_name(c.status);
    if (!c.note.empty()) os << " (" << c.note << ")";
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const Check& c) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"criterion", c.criterion},
                   {"table", c.table},
                   {"item", c.item},
                   {"published", opt(c.published)},
                   {"fitted", opt(c.value)},
                   {"tolerance", c.tolerance},
                   {"status", status_name(c.status)}};
  if (!c.note.empty()) j["note"] = c.note;
  return j;
}

}  // namespace detail

/// Runs the whole replication. Deterministic given the options.
inline Result replicate(const Options& options) {
  using detail::exact_check;
  using detail::info;
  using detail::skipped;
  using detail::value_check;
  Result out;
  auto& checks = out.checks;
  nlohmann::json report;

  // Table 1: the bundled data must be the published counts.
  const auto& data = options.data;
  if (!(data.layout() == fellowship_layout())) {
    checks.push_back({0, "Table 1", "layout (groups doctoral, post-doctoral; categories 1-3; T = 3)", std::nullopt,
                      std::nullopt, 0.0, Status::fail, "data layout differs"});
  } else {
    const auto reference = published_table1();
    int mismatches = 0;
    for (int h = 0; h < 2; ++h)
      for (std::uint64_t i = 0; i < 27; ++i) {
        const auto want = reference.count(h, i), got = data.count(h, i);
        if (want == got) continue;
        ++mismatches;
        checks.push_back({0, "Table 1", std::string(h == 0 ? "doctoral " : "post-doctoral ") + detail::pattern_label(i),
                          static_cast<double>(want), static_cast<double>(got), 0.0, Status::fail, "count differs"});
      }
    if (mismatches == 0)
      checks.push_back({0, "Table 1", "all 54 cells", 1954.0, static_cast<double>(data.grand_total()), 0.0,
                        Status::pass, {}});
  }

  // Table 3: the main fit.
  const auto spec = main_spec();
  const auto fit_opts = fit_options(derive_seed(options.seed, 1), options.threads);
  auto fit = em_fit(spec, data, fit_opts);
  fit.standard_errors = standard_errors(fit, data, spec);
  const auto& p = fit.params;
  const auto& se = *fit.standard_errors;
  const double tol3 = acceptance::table3_tolerance;
  auto se_text = [](std::optional<double> v) { return v ? detail::format_number(v, 3) : std::string("n.e."); };
  for (int a = 0; a < 3; ++a)
    checks.push_back(value_check(1, "Table 3a", "delta class " + std::to_string(a + 1), published::delta[a],
                                 p.delta_at(0, a), tol3));
  for (int a = 0; a < 3; ++a)
    for (int j = 0; j < 3; ++j) {
      auto c = value_check(1, "Table 3a", "rho class " + std::to_string(a + 1) + " category " + std::to_string(j + 1),
                           published::rho[a][j], p.rho_at(0, 0, a, j), tol3);
      const double pse = published::rho_se[a][j];
      c.note += (c.note.empty() ? "" : "; ") + std::string("se ") + se_text(se.at(spec.dims, {RowRef::rho(0, 0, a), j})) +
                " vs " + (pse < 0 ? std::string("n.e.") : detail::format_number(pse, 2));
      checks.push_back(std::move(c));
    }
  for (int h = 0; h < 2; ++h)
    for (int t = 0; t < 2; ++t)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          auto c = value_check(1, std::string("Table 3b ") + fellowship_label(static_cast<Fellowship>(h)),
                               detail::cell_name("tau", t, a, b), published::tau[h][t][a][b], p.tau_at(t, h, a, b), tol3);
          const double pse = published::tau_se[h][t][a][b];
          c.note += (c.note.empty() ? "" : "; ") + std::string("se ") +
                    se_text(se.at(spec.dims, {RowRef::tau(t, h, a), b})) + " vs " +
                    (pse < 0 ? std::string("n.e.") : detail::format_number(pse, 2));
          checks.push_back(std::move(c));
        }
  checks.push_back(info("Table 3 fit", "G^2", std::nullopt, fit.g_squared));
  checks.push_back(info("Table 3 fit", "degrees of freedom", std::nullopt, fit.degrees_of_freedom));

  // Table 2: decomposition of the Table 3 fit.
  nlohmann::json table2 = nlohmann::json::object();
  std::vector<StabilityColumn> columns;
  for (int h = 0; h < 2; ++h) {
    const auto f = static_cast<Fellowship>(h);
    const auto& pub = h == 0 ? published::table2_doctoral : published::table2_postdoc;
    const auto d = stability_decomposition(p, h, TrueStateRule::exact_path);
    const auto alt = stability_decomposition(p, h, TrueStateRule::constancy_class);
    const std::string table = std::string("Table 2 ") + fellowship_label(f);
    const double tol2 = acceptance::table2_tolerance;
    checks.push_back(value_check(5, table, "stability", pub.stability, d.stability, tol2));
    checks.push_back(value_check(5, table, "true stability", pub.true_stability, d.true_stability, tol2));
    checks.push_back(value_check(5, table, "measurement error of stability", pub.error_stability, d.error_stability, tol2));
    checks.push_back(value_check(5, table, "change", pub.change, d.change, tol2));
    checks.push_back(value_check(5, table, "true change", pub.true_change, d.true_change, tol2));
    checks.push_back(value_check(5, table, "measurement error of change", pub.error_change, d.error_change, tol2));
    checks.push_back(value_check(5, table, "total measurement error", pub.total_error, d.total_error, tol2));
    checks.push_back(value_check(5, table, "reliability (1 - error of change)", 1.0 - pub.error_change,
                                 reliability_coefficient(d), tol2));
    const double observed = manifest_stability(data, fellowship_label(f));
    const bool agrees = std::abs(observed - pub.data_stability) <= 0.005;
    checks.push_back({0, table, "data stability (observed)", pub.data_stability, observed, 0.0,
                      agrees ? Status::pass : Status::discrepancy,
                      agrees ? "" : "published value does not follow from Table 1"});
    checks.push_back(info(table, "true change, constancy rule", std::nullopt, alt.true_change));
    checks.push_back(info(table, "error of change, constancy rule", std::nullopt, alt.error_change));
    checks.push_back(info(table, "model manifest stability", std::nullopt, d.manifest_stability));
    table2[fellowship_key(f)] = {{"data_stability", observed},
                                 {"exact_path", to_json(d)},
                                 {"constancy_class", to_json(alt)}};
    columns.push_back({fellowship_label(f), observed, d});
  }

  // Tables 4 and 5: gender models.
  nlohmann::json gender = nlohmann::json::object();
  for (int fi = 0; fi < 2; ++fi) {
    const auto f = static_cast<Fellowship>(fi);
    const std::string name = fellowship_label(f);
    const std::string table4 = "Table 4 " + name;
    nlohmann::json g;

    const auto fixture = gender_fixture(f);
    const auto fx1 = em_fit(gender_spec(false), fixture, fit_options(derive_seed(options.seed, 10 + fi), options.threads));
    const auto fx2 = em_fit(gender_spec(true), fixture, fit_options(derive_seed(options.seed, 20 + fi), options.threads));
    const auto& pub = published::table4[fi];
    checks.push_back(exact_check(2, table4, "df M1 (fixture)", pub[0].df, fx1.degrees_of_freedom));
    checks.push_back(exact_check(2, table4, "df M2 (fixture)", pub[1].df, fx2.degrees_of_freedom));
    checks.push_back(exact_check(2, table4, "delta df M1 - M2 (fixture)", published::delta_df[fi],
                                 fx1.degrees_of_freedom - fx2.degrees_of_freedom));
    g["fixture"] = {{"group_sizes", fixture_sizes(f)},
                    {"m1", detail::fit_summary(fx1)},
                    {"m2", detail::fit_summary(fx2)}};

    const auto& real = options.gender[fi];
    if (!real) {
      for (int m = 0; m < 2; ++m) {
        const std::string mn = m == 0 ? "M1" : "M2";
        checks.push_back(skipped(2, table4, "df " + mn, pub[m].df));
        checks.push_back(skipped(3, table4, "LR " + mn, pub[m].lr));
        checks.push_back(skipped(3, table4, "bootstrap p " + mn, pub[m].p_boot));
      }
      checks.push_back(skipped(4, table4, "delta LR M1 - M2", published::delta_lr[fi]));
      checks.push_back(skipped(4, table4, "delta df M1 - M2", published::delta_df[fi]));
      checks.push_back(skipped(4, table4, "chi-square p", std::nullopt));
      if (f == Fellowship::doctoral) checks.push_back(skipped(0, "Table 5", "gender-specific transitions", std::nullopt));
      gender[fellowship_key(f)] = std::move(g);
      continue;
    }

    FitResult fits[2];
    BootstrapOptions bopts;
    bopts.threads = options.threads;
    for (int m = 0; m < 2; ++m) {
      const auto mspec = gender_spec(m == 1);
      fits[m] = em_fit(mspec, *real, fit_options(derive_seed(options.seed, 30 + 2 * fi + m), options.threads));
      const std::string mn = m == 0 ? "M1" : "M2";
      checks.push_back(exact_check(2, table4, "df " + mn, pub[m].df, fits[m].degrees_of_freedom));
      checks.push_back(value_check(3, table4, "LR " + mn, pub[m].lr, fits[m].g_squared, acceptance::lr_tolerance));
      const auto boot = bootstrap_gof(fits[m], mspec, *real, options.bootstrap_replicates,
                                      derive_seed(options.seed, 40 + 2 * fi + m), bopts);
      auto bc = value_check(3, table4, "bootstrap p " + mn, pub[m].p_boot, boot.p_value, acceptance::bootstrap_p_tolerance);
      if (pub[m].p_boot == 0.0) {
        // A published 0.00 is a rounded estimate, not a boundary.
        bc.tolerance = acceptance::bootstrap_p_tolerance;
        bc.note = "published 0.00";
        bc.status = boot.p_value <= acceptance::bootstrap_p_tolerance ? Status::pass : Status::fail;
      }
      bc.note += (bc.note.empty() ? "" : "; ") + std::to_string(boot.exceed_count) + " of " +
                 std::to_string(boot.replicate_count) + " replicates >= observed";
      checks.push_back(std::move(bc));
      g[m == 0 ? "m1" : "m2"] = {{"fit", detail::fit_summary(fits[m])}, {"bootstrap", to_json(boot)}};
    }
    const auto cmp = compare_nested(fits[0], fits[1]);
    checks.push_back(value_check(4, table4, "delta LR M1 - M2", published::delta_lr[fi], cmp.delta_lr,
                                 acceptance::delta_lr_tolerance));
    checks.push_back(exact_check(4, table4, "delta df M1 - M2", published::delta_df[fi], cmp.delta_df));
    const bool significant = cmp.chi_square_p < acceptance::comparison_alpha;
    const bool want_significant = f == Fellowship::doctoral;
    checks.push_back({4, table4, want_significant ? "chi-square p < 0.01" : "chi-square p > 0.01", std::nullopt,
                      cmp.chi_square_p, acceptance::comparison_alpha,
                      significant == want_significant ? Status::pass : Status::fail, {}});
    g["comparison"] = to_json(cmp);

    if (f == Fellowship::doctoral) {
      const auto& p2 = fits[1].params;
      for (int sex = 0; sex < 2; ++sex)
        for (int t = 0; t < 2; ++t)
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
              checks.push_back(value_check(0, std::string("Table 5 ") + (sex == 0 ? "male" : "female"),
                                           detail::cell_name("tau", t, a, b), published::table5[sex][t][a][b],
                                           p2.tau_at(t, sex, a, b), acceptance::table3_tolerance));
      g["m2_parameters"] = to_json(p2);
    }
    gender[fellowship_key(f)] = std::move(g);
  }

  report["artifact"] = "latent-chain";
  report["version"] = version;
  report["command"] = "replicate";
  report["seed"] = options.seed;
  report["data_digest"] = hex64(table_digest(data));
  report["main_fit"] = to_json(fit);
  report["table2"] = std::move(table2);
  report["gender"] = std::move(gender);
  nlohmann::json jchecks = nlohmann::json::array();
  for (const auto& c : checks) jchecks.push_back(detail::to_json(c));
  report["checks"] = std::move(jchecks);
  nlohmann::json failed = nlohmann::json::array();
  for (const auto* c : out.failures()) failed.push_back(c->table + ": " + c->item);
  report["failures"] = std::move(failed);
  report["passed"] = out.passed();

  std::ostringstream text;
  text << "Replication report (seed " << options.seed << ")\n";
  text << detail::format_checks(checks);
  text << "\nStability and change (exact-path rule)\n" << format_stability_table(columns);
  text << "\n" << (out.passed() ? "all checks passed" : "replication mismatch") << '\n';

  out.report = std::move(report);
  out.text = text.str();
  out.main_fit = std::move(fit);
  return out;
}

}  // namespace latent_chain::replication
