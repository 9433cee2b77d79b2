#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "latent_chain/panel_data.hpp"

namespace support {

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string data_path(const std::string& name) { return std::string(LATENT_CHAIN_DATA_DIR) + "/" + name; }

inline latent_chain::PanelTable bundled() {
  return latent_chain::parse_panel_csv(slurp(data_path("bif_fellowships.csv")),
                                       latent_chain::parse_schema_text(slurp(data_path("bif_schema.json"))));
}

}  // namespace support
