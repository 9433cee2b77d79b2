#pragma once

// Stability/change decomposition of the joint (manifest pattern x latent
// path) law into true and measurement-error parts.
//
// Stability is the mass on constant latent paths (111, 222, ...), change the
// mass on the remaining paths. The "true" share of each is the mass whose
// manifest pattern reproduces its latent path; the rest is measurement error.

#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "latent_chain/errors.hpp"
#include "latent_chain/model.hpp"

namespace latent_chain {

enum class TrueStateRule {
  /// True mass: manifest pattern equal to the latent path (requires A = J).
  exact_path,
  /// True mass: manifest pattern constant iff the latent path is constant.
  constancy_class,
};

struct ReliabilityDecomposition {
  TrueStateRule rule = TrueStateRule::exact_path;
  double stability = 0.0;
  double true_stability = 0.0;
  double error_stability = 0.0;
  double change = 0.0;
  double true_change = 0.0;
  double error_change = 0.0;
  double total_error = 0.0;
  double reliability = 0.0;
  /// Model-expected share of constant manifest patterns.
  double manifest_stability = 0.0;
};

inline ReliabilityDecomposition stability_decomposition(const ParameterSet& params, int group,
                                                        TrueStateRule rule = TrueStateRule::exact_path) {
  const auto& d = params.dims;
  if (rule == TrueStateRule::exact_path && d.classes != d.categories)
    throw ModelError("exact-path decomposition needs as many latent classes as categories");
  const auto jt = joint_pattern_table(params, group);

  std::vector<bool> pattern_constant(jt.num_patterns), path_constant(jt.num_paths);
  for (std::uint64_t i = 0; i < jt.num_patterns; ++i)
    pattern_constant[i] = is_constant(pattern_from_index(i, d.categories, d.occasions));
  for (std::uint64_t k = 0; k < jt.num_paths; ++k)
    path_constant[k] = is_constant(pattern_from_index(k, d.classes, d.occasions));

  ReliabilityDecomposition r;
  r.rule = rule;
  double total = 0.0;
  for (std::uint64_t i = 0; i < jt.num_patterns; ++i) {
    for (std::uint64_t k = 0; k < jt.num_paths; ++k) {
      const double m = jt.at(i, k);
      if (m == 0.0) continue;
      total += m;
      if (pattern_constant[i]) r.manifest_stability += m;
      const bool is_true = rule == TrueStateRule::exact_path ? i == k : pattern_constant[i] == path_constant[k];
      if (path_constant[k]) {
        r.stability += m;
        if (is_true) r.true_stability += m;
      } else if (is_true) {
        r.true_change += m;
      }
    }
  }
  r.change = total - r.stability;
  r.error_stability = r.stability - r.true_stability;
  r.error_change = r.change - r.true_change;
  r.total_error = r.error_stability + r.error_change;
  r.reliability = 1.0 - r.error_change;
  return r;
}

inline double reliability_coefficient(const ReliabilityDecomposition& decomposition) {
  return 1.0 - decomposition.error_change;
}

struct StabilityColumn {
  std::string group;
  double data_stability = 0.0;
  ReliabilityDecomposition model;
};

/// Plain-text stability/change table: observed share (4 decimals) next to
/// the model decomposition (2 decimals), one block per group.
inline std::string format_stability_table(const std::vector<StabilityColumn>& columns) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(34) << "" << std::right << std::setw(8) << "Data" << std::setw(14) << "Markov model"
     << '\n';
  auto line = [&](const std::string& label, std::optional<double> data, double model) {
    os << std::left << std::setw(34) << label << std::right << std::setw(8);
    if (data)
      os << std::setprecision(4) << *data << std::setprecision(2);
    else
      os << "";
    os << std::setw(14) << model << '\n';
  };
  for (const auto& c : columns) {
    os << c.group << '\n';
    line("  Stability", c.data_stability, c.model.stability);
    line("    true stability", std::nullopt, c.model.true_stability);
    line("    measurement error", std::nullopt, c.model.error_stability);
    line("  Change", 1.0 - c.data_stability, c.model.change);
    line("    true change", std::nullopt, c.model.true_change);
    line("    measurement error", std::nullopt, c.model.error_change);
    line("  Total measurement error", std::nullopt, c.model.total_error);
    line("  Reliability (1 - error of change)", std::nullopt, c.model.reliability);
  }
  return os.str();
}

}  // namespace latent_chain
