#pragma once

#include <stdexcept>
#include <string>

namespace latent_chain {

/// Malformed or inconsistent input data (CSV rows, schema, category maps).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Structural problem with a model: bad dimensions, infeasible constraints.
struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Run configuration could not be resolved.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace latent_chain
