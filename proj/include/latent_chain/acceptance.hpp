#pragma once

// Tolerances shared by the replication report, the acceptance runner, and
// the tests. Changing a value here changes all three.

#include <cstdint>

namespace latent_chain {

inline constexpr const char* version = "0.1.0";

namespace acceptance {

// 1. Table 3
inline constexpr double table3_tolerance = 0.02;
inline constexpr double table3_runtime_seconds = 30.0;
inline constexpr int table3_starts = 32;

// 2. Table 4 degrees of freedom (exact)
inline constexpr int df_doctoral_m1 = 39;
inline constexpr int df_doctoral_m2 = 31;
inline constexpr int df_postdoc_m1 = 38;
inline constexpr int df_postdoc_m2 = 32;

// 3. Table 4 statistics
inline constexpr double lr_tolerance = 0.5;
inline constexpr double bootstrap_p_tolerance = 0.07;
inline constexpr int bootstrap_replicates = 500;

// 4. Nested comparison
inline constexpr double delta_lr_tolerance = 0.5;
inline constexpr double comparison_alpha = 0.01;

// 5. Table 2
inline constexpr double table2_tolerance = 0.01;

// 6. Oracle equivalence
inline constexpr double oracle_relative_tolerance = 1e-12;
inline constexpr int oracle_draws = 1000;
inline constexpr int oracle_max_classes = 4;
inline constexpr int oracle_max_occasions = 5;
inline constexpr int oracle_max_categories = 4;

// 7. Estimator soundness
/// Allowed log-likelihood drop between EM iterates, relative to |LL|;
/// covers floating-point summation noise only.
inline constexpr double monotone_relative_slack = 1e-12;
inline constexpr double recovery_tolerance = 0.01;
inline constexpr std::uint64_t recovery_group_size = 50000;
inline constexpr double bootstrap_mean_relative = 0.15;
inline constexpr int bootstrap_mean_replicates = 200;

/// Bundled replication runs snap estimates this close to 0 or 1.
inline constexpr double replication_boundary_tol = 0.005;
inline constexpr std::uint64_t default_seed = 20240601;

}  // namespace acceptance
}  // namespace latent_chain
