#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "latent_chain/model.hpp"
#include "latent_chain/panel_data.hpp"

namespace latent_chain {

/// Likelihood-ratio statistic against the saturated multinomial model.
/// `excludes_observed_cell` is set (and `value` is +inf) when the model
/// assigns zero probability to a cell with observations.
struct GSquared {
  double value = 0.0;
  bool excludes_observed_cell = false;
  std::string first_excluded;
};

inline GSquared g_squared(const PanelTable& table, const ParameterSet& params) {
  check_compatible(params, table);
  GSquared out;
  const int J = table.num_categories(), T = table.occasions();
  for (int h = 0; h < table.num_groups(); ++h) {
    const double n_h = static_cast<double>(table.total(h));
    for (const auto& [idx, c] : table.cells(h)) {
      const auto pattern = pattern_from_index(idx, J, T);
      const double expected = n_h * cell_probability(params, h, pattern);
      const double n = static_cast<double>(c);
      if (!(expected > 0.0)) {
        if (!out.excludes_observed_cell) {
          out.first_excluded = table.layout().groups[static_cast<std::size_t>(h)] + ":";
          for (int y : pattern) out.first_excluded += table.layout().categories[static_cast<std::size_t>(y)];
        }
        out.excludes_observed_cell = true;
        continue;
      }
      out.value += 2.0 * n * std::log(n / expected);
    }
  }
  if (out.excludes_observed_cell) out.value = std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace latent_chain
