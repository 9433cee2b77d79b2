// Acceptance runner: one line per criterion, [PASS], [FAIL], or [SKIP].
// Exit status is nonzero when a criterion fails, except for the known
// deviations listed in README.md, which are still printed as [FAIL].

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "latent_chain/acceptance.hpp"
#include "latent_chain/app.hpp"
#include "latent_chain/estimation.hpp"
#include "latent_chain/inference.hpp"
#include "latent_chain/replication.hpp"
#include "oracles.hpp"

namespace lc = latent_chain;
namespace acc = latent_chain::acceptance;
namespace rep = latent_chain::replication;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Outcome { pass, fail, skip };

struct Line {
  int criterion;
  std::string name;
  Outcome outcome;
  std::string detail;
  bool known_deviation = false;
};

std::vector<Line> lines;

void report(int criterion, std::string name, Outcome outcome, std::string detail, bool known = false) {
  const char* tag = outcome == Outcome::pass ? "[PASS]" : outcome == Outcome::fail ? "[FAIL]" : "[SKIP]";
  std::cout << tag << ' ' << criterion << ' ' << name << ": " << detail;
  if (known && outcome == Outcome::fail) std::cout << " (known deviation)";
  std::cout << std::endl;
  lines.push_back({criterion, std::move(name), outcome, std::move(detail), known});
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Tallies the replication checks of one criterion.
void from_checks(const json& checks, int criterion, const std::string& name) {
  int passed = 0, failed = 0, skipped = 0;
  std::string first_failure;
  for (const auto& c : checks) {
    if (c.at("criterion").get<int>() != criterion) continue;
    const auto s = c.at("status").get<std::string>();
    if (s == "pass") ++passed;
    if (s == "skipped") ++skipped;
    if (s == "fail") {
      if (first_failure.empty()) first_failure = c.at("table").get<std::string>() + " " + c.at("item").get<std::string>();
      ++failed;
    }
  }
  if (failed > 0)
    report(criterion, name, Outcome::fail, std::to_string(failed) + " mismatched, first: " + first_failure);
  else if (passed == 0 && skipped > 0)
    report(criterion, name, Outcome::skip, "skipped: data not public (" + std::to_string(skipped) + " values)");
  else
    report(criterion, name, Outcome::pass, std::to_string(passed) + " values within tolerance");
}

/// Runs the replicate command into a file and returns its bytes.
std::string replicate_to_file(const fs::path& path, std::uint64_t seed, int& exit_code) {
  const std::string out = path.string();
  const std::string seed_text = std::to_string(seed);
  const char* argv[] = {"latent-chain", "replicate", "--seed", seed_text.c_str(), "--out", out.c_str()};
  std::ostringstream sink_out, sink_err;
  exit_code = lc::app::run(6, argv, sink_out, sink_err);
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Largest per-iteration log-likelihood drop relative to |LL| across a fit.
struct MonotoneProbe {
  double worst = 0.0;
  long iterations = 0;
  std::map<int, double> last;

  void attach(lc::FitOptions& o) {
    last.clear();
    o.threads = 1;
    o.trace = [this](int chain, int, double ll) {
      ++iterations;
      auto it = last.find(chain);
      if (it != last.end() && std::isfinite(ll) && std::isfinite(it->second))
        worst = std::max(worst, (it->second - ll) / std::abs(ll));
      last[chain] = ll;
    };
  }
  void absorb(const lc::FitResult& fit) {
    worst = std::max(worst, fit.diagnostics.largest_decrease / std::abs(fit.log_likelihood));
  }
};

lc::ParameterSet interior_generator() {
  lc::ParameterSet p({2, 3, 3, 3});
  p.gamma = {0.5, 0.5};
  const double rho[3][3] = {{0.85, 0.10, 0.05}, {0.10, 0.80, 0.10}, {0.05, 0.10, 0.85}};
  const double delta[3] = {0.5, 0.3, 0.2};
  const double tau[2][2][3][3] = {
      {{{0.70, 0.20, 0.10}, {0.15, 0.70, 0.15}, {0.10, 0.20, 0.70}},
       {{0.60, 0.30, 0.10}, {0.20, 0.60, 0.20}, {0.05, 0.25, 0.70}}},
      {{{0.65, 0.25, 0.10}, {0.10, 0.75, 0.15}, {0.10, 0.15, 0.75}},
       {{0.75, 0.15, 0.10}, {0.15, 0.65, 0.20}, {0.10, 0.10, 0.80}}}};
  for (int h = 0; h < 2; ++h)
    for (int a = 0; a < 3; ++a) {
      p.delta_at(h, a) = delta[a];
      for (int t = 0; t < 3; ++t)
        for (int j = 0; j < 3; ++j) p.rho_at(t, h, a, j) = rho[a][j];
      for (int t = 0; t < 2; ++t)
        for (int b = 0; b < 3; ++b) p.tau_at(t, h, a, b) = tau[h][t][a][b];
    }
  return p;
}

void criterion_6(std::uint64_t seed) {
  std::mt19937_64 gen(lc::derive_seed(seed, 60));
  double worst = 0.0;
  for (int draw = 0; draw < acc::oracle_draws; ++draw) {
    const auto d = oracle::random_dims(gen, acc::oracle_max_classes, acc::oracle_max_occasions,
                                       acc::oracle_max_categories);
    const auto p = oracle::random_parameters(gen, d);
    const int h = std::uniform_int_distribution<int>(0, d.groups - 1)(gen);
    worst = std::max(worst, oracle::forward_backward_error(p, h, oracle::random_pattern(gen, d)));
  }
  report(6, "oracle equivalence", worst <= acc::oracle_relative_tolerance ? Outcome::pass : Outcome::fail,
         std::to_string(acc::oracle_draws) + " draws, worst discrepancy " + fmt(worst, 3) + " (tolerance " +
             fmt(acc::oracle_relative_tolerance, 3) + ")");
}

void criterion_7(std::uint64_t seed, const lc::PanelTable& data, MonotoneProbe& probe) {
  // Gender fixture fits.
  for (auto f : {rep::Fellowship::doctoral, rep::Fellowship::postdoc}) {
    const auto table = rep::gender_fixture(f);
    for (bool m2 : {false, true}) {
      auto o = rep::fit_options(lc::derive_seed(seed, 72 + 2 * static_cast<int>(f) + m2), 1);
      probe.attach(o);
      probe.absorb(lc::em_fit(rep::gender_spec(m2), table, o));
    }
  }

  // Simulate-then-fit recovery at the published estimates.
  const auto truth = rep::table3_parameters();
  const auto spec = rep::main_spec();
  const std::vector<std::uint64_t> sizes{acc::recovery_group_size, acc::recovery_group_size};
  const auto sim = lc::simulate(truth, sizes, lc::derive_seed(seed, 70), rep::fellowship_layout());
  auto o = rep::fit_options(lc::derive_seed(seed, 71), 1);
  probe.attach(o);
  const auto fit = lc::em_fit(spec, sim, o);
  probe.absorb(fit);
  auto se = lc::standard_errors(fit, sim, spec);
  double worst = 0.0, worst_z = 0.0;
  int with_se = 0;
  std::string where;
  const auto& d = truth.dims;
  for (int id = 0; id < lc::row_count(d); ++id) {
    const auto r = lc::row_ref(d, id);
    for (int c = 0; c < static_cast<int>(truth.row(r).size()); ++c) {
      const lc::CellRef cell{r, c};
      const double err = std::abs(fit.params.at(cell) - truth.at(cell));
      if (err > worst) {
        worst = err;
        where = lc::describe(cell);
      }
      const auto s = se.at(d, cell);
      if (s && *s > 0.0) worst_z = std::max(worst_z, err / *s);
      if (s) ++with_se;
    }
  }
  report(7, "parameter recovery", worst <= acc::recovery_tolerance ? Outcome::pass : Outcome::fail,
         "n = " + std::to_string(acc::recovery_group_size) + " per group, max |error| " + fmt(worst, 3) + " at " +
             where + " (tolerance " + fmt(acc::recovery_tolerance, 2) + "), max |error|/SE " + fmt(worst_z, 3) + " over " + std::to_string(with_se) + " estimable cells" +
             (se.diagnostic.empty() ? "" : " [" + se.diagnostic + "]"),
         true);

  // Bootstrap G^2 mean under a true interior model.
  const std::vector<std::uint64_t> small{5000, 5000};
  const auto boot_data = lc::simulate(interior_generator(), small, lc::derive_seed(seed, 80), rep::fellowship_layout());
  lc::FitOptions bo;
  bo.seed = lc::derive_seed(seed, 81);
  probe.attach(bo);
  const auto boot_fit = lc::em_fit(spec, boot_data, bo);
  probe.absorb(boot_fit);
  const auto boot = lc::bootstrap_gof(boot_fit, spec, boot_data, acc::bootstrap_mean_replicates,
                                      lc::derive_seed(seed, 82), lc::BootstrapOptions{});
  const double mean = boot.mean_replicate_lr();
  const double df = boot_fit.degrees_of_freedom;
  const double rel = std::abs(mean - df) / df;
  report(7, "bootstrap mean G2", rel <= acc::bootstrap_mean_relative ? Outcome::pass : Outcome::fail,
         "mean " + fmt(mean) + " over " + std::to_string(acc::bootstrap_mean_replicates) + " replicates vs df " +
             fmt(df) + " (relative gap " + fmt(rel, 3) + ", tolerance " + fmt(acc::bootstrap_mean_relative, 2) + ")");

  // Main fit on the bundled data.
  auto mo = rep::fit_options(lc::derive_seed(seed, 1), 1);
  probe.attach(mo);
  probe.absorb(lc::em_fit(spec, data, mo));
  report(7, "EM monotone", probe.worst <= acc::monotone_relative_slack ? Outcome::pass : Outcome::fail,
         std::to_string(probe.iterations) + " iterations over 8 fits, largest relative drop " + fmt(probe.worst, 3) +
             " (slack " + fmt(acc::monotone_relative_slack, 3) + ")");
}

}  // namespace

int main() {
  const std::uint64_t seed = acc::default_seed;
  const fs::path dir = lc::app::bundled_data_dir();
  const auto data = lc::app::load_table(dir / "bif_fellowships.csv", dir / "bif_schema.json");

  // 1: runtime of the 32-start main fit.
  const auto t0 = std::chrono::steady_clock::now();
  const auto main_fit = lc::em_fit(rep::main_spec(), data, rep::fit_options(lc::derive_seed(seed, 1), 1));
  const double runtime = seconds_since(t0);

  // 8: two replicate runs; the first also supplies criteria 1-5.
  const fs::path tmp = fs::temp_directory_path();
  const auto first_path = tmp / ("latent_chain_acceptance_" + std::to_string(::getpid()) + "_a.json");
  const auto second_path = tmp / ("latent_chain_acceptance_" + std::to_string(::getpid()) + "_b.json");
  int code_a = 0, code_b = 0;
  const auto first = replicate_to_file(first_path, seed, code_a);
  const auto second = replicate_to_file(second_path, seed, code_b);
  fs::remove(first_path);
  fs::remove(second_path);
  json replicate_report;
  try {
    replicate_report = json::parse(first);
  } catch (const json::exception&) {
    std::cout << "[FAIL] replicate produced no report (exit " << code_a << ")" << std::endl;
    return 1;
  }
  const auto& checks = replicate_report.at("checks");

  from_checks(checks, 1, "Table 3 estimates");
  report(1, "Table 3 runtime", runtime < acc::table3_runtime_seconds ? Outcome::pass : Outcome::fail,
         fmt(runtime, 3) + " s for " + std::to_string(acc::table3_starts) + " starts, G2 " +
             fmt(main_fit.g_squared) + " on " + std::to_string(main_fit.degrees_of_freedom) + " df (limit " +
             fmt(acc::table3_runtime_seconds, 3) + " s)");
  from_checks(checks, 2, "degrees of freedom");
  from_checks(checks, 3, "Table 4 statistics");
  from_checks(checks, 4, "nested comparison");
  from_checks(checks, 5, "Table 2 decomposition");

  criterion_6(seed);
  MonotoneProbe probe;
  criterion_7(seed, data, probe);

  const bool identical = !first.empty() && first == second;
  report(8, "determinism", identical ? Outcome::pass : Outcome::fail,
         identical ? "two replicate runs wrote byte-identical reports (" + std::to_string(first.size()) + " bytes)"
                   : "replicate reports differ");

  int failures = 0, known = 0;
  for (const auto& l : lines)
    if (l.outcome == Outcome::fail) (l.known_deviation ? known : failures)++;
  std::cout << (failures == 0 ? "acceptance: ok" : "acceptance: FAILED") << " (" << failures << " failing, " << known
            << " known deviation" << (known == 1 ? "" : "s") << ")" << std::endl;
  return failures == 0 ? 0 : 1;
}
