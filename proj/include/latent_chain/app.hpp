#pragma once

// Command-line commands. Each command reads a JSON run config, writes a JSON
// report, and returns the process exit code.
//
// Exit codes: 0 ok, 1 usage/config/data error, 2 non-convergence,
// 3 replication mismatch.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "latent_chain/acceptance.hpp"
#include "latent_chain/errors.hpp"
#include "latent_chain/estimation.hpp"
#include "latent_chain/inference.hpp"
#include "latent_chain/panel_data.hpp"
#include "latent_chain/reliability.hpp"
#include "latent_chain/replication.hpp"
#include "latent_chain/serialization.hpp"

#ifndef LATENT_CHAIN_DATA_DIR
#define LATENT_CHAIN_DATA_DIR "data"
#endif

namespace latent_chain::app {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_not_converged = 2, exit_mismatch = 3 };

inline constexpr const char* seed_env = "LATENT_CHAIN_SEED";
inline constexpr const char* data_dir_env = "LATENT_CHAIN_DATA_DIR";
inline constexpr const char* gender_dir_env = "LATENT_CHAIN_GENDER_DIR";

inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string read_file(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(what + " not found or unreadable: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write output file: " + path.string());
  out << content;
}

inline std::optional<std::uint64_t> parse_seed_text(const std::string& text, const std::string& source) {
  if (text.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(source + ": seed must be a non-negative integer, got '" + text + "'");
  }
}

/// --seed, then the config, then LATENT_CHAIN_SEED, then the built-in default.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> cli, std::optional<std::uint64_t> config) {
  if (cli) return *cli;
  if (config) return *config;
  if (const char* env = std::getenv(seed_env))
    if (auto v = parse_seed_text(env, seed_env)) return *v;
  return acceptance::default_seed;
}

/// A parsed run config. Paths are resolved against the config's directory.
struct RunConfig {
  fs::path path;
  std::string text;
  json doc;
  std::optional<fs::path> data;
  std::optional<fs::path> schema;
  std::optional<fs::path> parameters;
  std::optional<fs::path> output;
  std::optional<std::uint64_t> seed;
  FitOptions fit;
  bool standard_errors = true;
  int bootstrap_replicates = acceptance::bootstrap_replicates;
  int fallback_starts = 4;
  std::vector<std::uint64_t> sizes;

  std::string hash() const { return hex64(fnv1a(text)); }
};

namespace detail {

[[noreturn]] inline void field_error(const std::string& field, const std::string& message) {
  throw ConfigError("config field '" + field + "': " + message);
}

inline const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline int get_int(const json& obj, const char* key, const std::string& prefix, int fallback, int min) {
  const auto* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer() || v->get<long long>() < min)
    field_error(prefix + key, "expected an integer >= " + std::to_string(min));
  return v->get<int>();
}

inline double get_double(const json& obj, const char* key, const std::string& prefix, double fallback) {
  const auto* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) field_error(prefix + key, "expected a number");
  return v->get<double>();
}

inline std::optional<fs::path> get_path(const json& obj, const char* key, const fs::path& base,
                                        const std::string& prefix = "") {
  const auto* v = find(obj, key);
  if (!v) return std::nullopt;
  if (!v->is_string()) field_error(prefix + key, "expected a path string");
  fs::path p = v->get<std::string>();
  return p.is_absolute() ? p : base / p;
}

inline std::optional<std::uint64_t> get_seed(const json& obj, const char* key, const std::string& prefix) {
  const auto* v = find(obj, key);
  if (!v) return std::nullopt;
  if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
    field_error(prefix + key, "expected a non-negative integer");
  return v->get<std::uint64_t>();
}

}  // namespace detail

inline RunConfig parse_config(std::string text, const fs::path& path) {
  RunConfig cfg;
  cfg.path = path;
  cfg.text = std::move(text);
  try {
    cfg.doc = json::parse(cfg.text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!cfg.doc.is_object()) throw ConfigError("config " + path.string() + " must be a JSON object");
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  const auto& d = cfg.doc;
  cfg.data = detail::get_path(d, "data", base);
  cfg.schema = detail::get_path(d, "schema", base);
  cfg.parameters = detail::get_path(d, "parameters", base);
  cfg.output = detail::get_path(d, "output", base);
  cfg.seed = detail::get_seed(d, "seed", "");

  if (const auto* f = detail::find(d, "fit")) {
    if (!f->is_object()) detail::field_error("fit", "expected an object");
    cfg.fit.starts = detail::get_int(*f, "starts", "fit.", cfg.fit.starts, 1);
    cfg.fit.max_iterations = detail::get_int(*f, "max_iterations", "fit.", cfg.fit.max_iterations, 1);
    cfg.fit.convergence = detail::get_double(*f, "convergence", "fit.", cfg.fit.convergence);
    cfg.fit.boundary_tol = detail::get_double(*f, "boundary_tol", "fit.", cfg.fit.boundary_tol);
    cfg.fit.threads = detail::get_int(*f, "threads", "fit.", cfg.fit.threads, 0);
    if (const auto* v = detail::find(*f, "identity_start")) {
      if (!v->is_boolean()) detail::field_error("fit.identity_start", "expected true or false");
      cfg.fit.identity_start = v->get<bool>();
    }
    if (const auto* v = detail::find(*f, "standard_errors")) {
      if (!v->is_boolean()) detail::field_error("fit.standard_errors", "expected true or false");
      cfg.standard_errors = v->get<bool>();
    }
    if (!(cfg.fit.convergence > 0.0)) detail::field_error("fit.convergence", "must be > 0");
    if (!(cfg.fit.boundary_tol > 0.0 && cfg.fit.boundary_tol < 0.5))
      detail::field_error("fit.boundary_tol", "must be in (0, 0.5)");
  }
  if (const auto* b = detail::find(d, "bootstrap")) {
    if (!b->is_object()) detail::field_error("bootstrap", "expected an object");
    cfg.bootstrap_replicates = detail::get_int(*b, "replicates", "bootstrap.", cfg.bootstrap_replicates, 1);
    cfg.fallback_starts = detail::get_int(*b, "fallback_starts", "bootstrap.", cfg.fallback_starts, 0);
  }
  if (const auto* s = detail::find(d, "simulate")) {
    if (!s->is_object()) detail::field_error("simulate", "expected an object");
    if (const auto* z = detail::find(*s, "sizes")) {
      if (!z->is_array()) detail::field_error("simulate.sizes", "expected an array of counts");
      for (const auto& v : *z) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
          detail::field_error("simulate.sizes", "expected non-negative integers");
        cfg.sizes.push_back(v.get<std::uint64_t>());
      }
    }
  }
  return cfg;
}

inline RunConfig load_config(const fs::path& path) { return parse_config(read_file(path, "config file"), path); }

inline PanelSchema load_schema(const fs::path& path) {
  try {
    return parse_schema_text(read_file(path, "schema file"));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline PanelTable load_table(const fs::path& data, const fs::path& schema_path) {
  const auto schema = load_schema(schema_path);
  const auto text = read_file(data, "data file");
  try {
    return parse_panel_csv(text, schema);
  } catch (const DataError& e) {
    throw DataError(data.string() + ": " + e.what());
  }
}

inline PanelTable load_data(const RunConfig& cfg) {
  if (!cfg.data) detail::field_error("data", "required");
  if (!cfg.schema) detail::field_error("schema", "required");
  return load_table(*cfg.data, *cfg.schema);
}

namespace detail {

inline int index_field(const json& cell, const char* key, int limit, const std::string& field,
                       const std::vector<std::string>* labels = nullptr) {
  const auto* v = find(cell, key);
  if (!v) field_error(field + "." + key, "required");
  if (v->is_string() && labels) {
    const auto s = v->get<std::string>();
    for (std::size_t i = 0; i < labels->size(); ++i)
      if ((*labels)[i] == s) return static_cast<int>(i);
    field_error(field + "." + key, "unknown label '" + s + "'");
  }
  if (!v->is_number_integer()) field_error(field + "." + key, "expected a 1-based index");
  const int i = v->get<int>();
  if (i < 1 || i > limit) field_error(field + "." + key, "index " + std::to_string(i) + " out of range 1.." + std::to_string(limit));
  return i - 1;
}

}  // namespace detail

/// Builds the model from the config's "model" block for a table layout.
/// Constraint names: tie-rho-over-time, tie-delta-rho-over-groups,
/// tie-tau-over-groups, stationary-tau, manifest. Fixed cells use 1-based
/// indices or labels for groups and categories.
inline ModelSpec build_spec(const json& doc, const TableLayout& layout) {
  const auto* m = detail::find(doc, "model");
  if (!m) detail::field_error("model", "required");
  if (!m->is_object()) detail::field_error("model", "expected an object");
  ModelSpec spec;
  spec.dims.groups = layout.num_groups();
  spec.dims.categories = layout.num_categories();
  spec.dims.occasions = layout.occasions;

  std::vector<std::string> names;
  if (const auto* c = detail::find(*m, "constraints")) {
    if (!c->is_array()) detail::field_error("model.constraints", "expected an array of names");
    for (const auto& v : *c) {
      if (!v.is_string()) detail::field_error("model.constraints", "expected constraint names");
      names.push_back(v.get<std::string>());
    }
  }
  const bool manifest = std::find(names.begin(), names.end(), "manifest") != names.end();
  const auto* classes = detail::find(*m, "classes");
  if (!classes && !manifest) detail::field_error("model.classes", "required");
  spec.dims.classes = classes ? detail::get_int(*m, "classes", "model.", 0, 1) : spec.dims.categories;
  if (manifest && spec.dims.classes != spec.dims.categories)
    detail::field_error("model.classes", "manifest model needs as many classes as categories");

  for (const auto& n : names) {
    if (n == "tie-rho-over-time")
      constraints::tie_rho_over_time(spec.constraints, spec.dims);
    else if (n == "tie-delta-rho-over-groups")
      constraints::tie_delta_rho_over_groups(spec.constraints, spec.dims);
    else if (n == "tie-tau-over-groups")
      constraints::tie_tau_over_groups(spec.constraints, spec.dims);
    else if (n == "stationary-tau")
      spec.stationary = true;
    else if (n == "manifest")
      spec.manifest = true;
    else
      detail::field_error("model.constraints", "unknown constraint '" + n + "'");
  }

  if (const auto* fixed = detail::find(*m, "fixed")) {
    if (!fixed->is_array()) detail::field_error("model.fixed", "expected an array");
    const auto& d = spec.dims;
    for (std::size_t i = 0; i < fixed->size(); ++i) {
      const auto& cell = (*fixed)[i];
      const std::string field = "model.fixed[" + std::to_string(i) + "]";
      if (!cell.is_object()) detail::field_error(field, "expected an object");
      const auto* kind = detail::find(cell, "param");
      if (!kind || !kind->is_string()) detail::field_error(field + ".param", "expected delta, rho, or tau");
      const auto k = kind->get<std::string>();
      const int g = detail::index_field(cell, "group", d.groups, field, &layout.groups);
      CellRef ref;
      if (k == "delta") {
        ref = {RowRef::delta(g), detail::index_field(cell, "class", d.classes, field)};
      } else if (k == "rho") {
        ref = {RowRef::rho(detail::index_field(cell, "occasion", d.occasions, field), g,
                           detail::index_field(cell, "class", d.classes, field)),
               detail::index_field(cell, "category", d.categories, field, &layout.categories)};
      } else if (k == "tau") {
        if (d.transitions() < 1) detail::field_error(field, "model has no transitions");
        ref = {RowRef::tau(detail::index_field(cell, "transition", d.transitions(), field), g,
                           detail::index_field(cell, "from", d.classes, field)),
               detail::index_field(cell, "to", d.classes, field)};
      } else {
        detail::field_error(field + ".param", "expected delta, rho, or tau, got '" + k + "'");
      }
      const auto* value = detail::find(cell, "value");
      if (!value || !value->is_number()) detail::field_error(field + ".value", "expected a number in [0, 1]");
      spec.constraints.fixes.push_back({ref, value->get<double>()});
    }
  }
  try {
    resolve_blocks(spec);
  } catch (const ModelError& e) {
    detail::field_error("model", e.what());
  }
  return spec;
}

inline json report_header(const std::string& command, const RunConfig* cfg, std::uint64_t seed) {
  json j{{"artifact", "latent-chain"}, {"version", version}, {"command", command}, {"seed", seed}};
  if (cfg) {
    j["config"] = cfg->path.generic_string();
    j["config_hash"] = cfg->hash();
  }
  return j;
}

/// Writes to `path` when given, else to `out`.
inline void emit(const std::string& content, const std::optional<fs::path>& path, std::ostream& out) {
  if (path)
    write_file(*path, content);
  else
    out << content;
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

struct CommonArgs {
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::optional<int> threads;
};

inline FitResult fit_from_config(const RunConfig& cfg, const PanelTable& table, const ModelSpec& spec,
                                 std::uint64_t seed, const CommonArgs& args) {
  FitOptions opts = cfg.fit;
  opts.seed = seed;
  if (args.threads) opts.threads = *args.threads;
  auto fit = em_fit(spec, table, opts);
  if (cfg.standard_errors) fit.standard_errors = standard_errors(fit, table, spec);
  return fit;
}

inline int cmd_fit(const RunConfig& cfg, const CommonArgs& args, Streams io) {
  const auto table = load_data(cfg);
  const auto spec = build_spec(cfg.doc, table.layout());
  const auto seed = resolve_seed(args.seed, cfg.seed);
  const auto fit = fit_from_config(cfg, table, spec, seed, args);
  auto report = report_header("fit", &cfg, seed);
  report["data"] = cfg.data->generic_string();
  report["groups"] = table.layout().groups;
  report["fit"] = to_json(fit);
  emit(report.dump(2) + "\n", args.out ? args.out : cfg.output, io.out);
  if (!fit.converged) {
    io.err << "fit: no start converged within " << cfg.fit.max_iterations << " iterations\n";
    return exit_not_converged;
  }
  return exit_ok;
}

inline int cmd_bootstrap(const RunConfig& cfg, const CommonArgs& args, std::optional<int> replicates,
                         const std::optional<fs::path>& replicates_csv, Streams io) {
  const auto table = load_data(cfg);
  const auto spec = build_spec(cfg.doc, table.layout());
  const auto seed = resolve_seed(args.seed, cfg.seed);
  const auto fit = fit_from_config(cfg, table, spec, seed, args);
  BootstrapOptions bopts;
  bopts.fallback_starts = cfg.fallback_starts;
  bopts.threads = args.threads ? *args.threads : cfg.fit.threads;
  bopts.max_iterations = cfg.fit.max_iterations;
  bopts.convergence = cfg.fit.convergence;
  const int B = replicates ? *replicates : cfg.bootstrap_replicates;
  if (B < 1) throw ConfigError("bootstrap: replicate count must be >= 1");
  const auto boot = bootstrap_gof(fit, spec, table, B, derive_seed(seed, 1), bopts);

  auto report = report_header("bootstrap", &cfg, seed);
  report["data"] = cfg.data->generic_string();
  report["fit"] = to_json(fit);
  report["bootstrap"] = to_json(boot);
  report["absolute_fit_test"] = "parametric bootstrap";
  emit(report.dump(2) + "\n", args.out ? args.out : cfg.output, io.out);
  if (replicates_csv) {
    std::ostringstream csv;
    csv << std::setprecision(17) << "replicate,lr,converged,excludes_observed_cell\n";
    for (std::size_t b = 0; b < boot.replicates.size(); ++b) {
      const auto& r = boot.replicates[b];
      csv << b + 1 << ',' << r.lr << ',' << (r.converged ? 1 : 0) << ',' << (r.excludes_observed_cell ? 1 : 0) << '\n';
    }
    write_file(*replicates_csv, csv.str());
  }
  if (!fit.converged) {
    io.err << "bootstrap: the original fit did not converge\n";
    return exit_not_converged;
  }
  return exit_ok;
}

inline int cmd_compare(const RunConfig& first, const RunConfig& second, const CommonArgs& args, Streams io) {
  const auto table_a = load_data(first);
  const auto table_b = load_data(second);
  if (!(table_a == table_b)) throw ConfigError("compare: the two configs reference different data");
  const auto spec_a = build_spec(first.doc, table_a.layout());
  const auto spec_b = build_spec(second.doc, table_b.layout());
  const bool b_relaxes_a = is_relaxation_of(spec_b, spec_a);
  const bool a_relaxes_b = is_relaxation_of(spec_a, spec_b);
  if (!b_relaxes_a && !a_relaxes_b) throw ConfigError("compare: the two models are not nested");
  const bool a_restricted = b_relaxes_a;
  const auto& rcfg = a_restricted ? first : second;
  const auto& gcfg = a_restricted ? second : first;
  const auto& rspec = a_restricted ? spec_a : spec_b;
  const auto& gspec = a_restricted ? spec_b : spec_a;
  const auto seed = resolve_seed(args.seed, first.seed);
  const auto restricted = fit_from_config(rcfg, table_a, rspec, seed, args);
  const auto general = fit_from_config(gcfg, table_a, gspec, derive_seed(seed, 1), args);
  const auto cmp = compare_nested(restricted, general);

  auto report = report_header("compare", nullptr, seed);
  report["restricted"] = {{"config", rcfg.path.generic_string()},
                          {"config_hash", rcfg.hash()},
                          {"g_squared", restricted.g_squared},
                          {"degrees_of_freedom", restricted.degrees_of_freedom},
                          {"converged", restricted.converged}};
  report["general"] = {{"config", gcfg.path.generic_string()},
                       {"config_hash", gcfg.hash()},
                       {"g_squared", general.g_squared},
                       {"degrees_of_freedom", general.degrees_of_freedom},
                       {"converged", general.converged}};
  report["comparison"] = to_json(cmp);
  report["difference_test"] = "chi-square on the likelihood-ratio difference";
  emit(report.dump(2) + "\n", args.out, io.out);
  for (const auto& w : cmp.warnings) io.err << "compare: " << w << '\n';
  return restricted.converged && general.converged ? exit_ok : exit_not_converged;
}

/// Parameters from a parameter document or from a fit/bootstrap report.
inline ParameterSet load_parameters(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path, "parameter file"));
  } catch (const json::parse_error& e) {
    throw ConfigError("parameter file " + path.string() + " is not valid JSON: " + e.what());
  }
  const json* node = &doc;
  if (doc.contains("fit")) node = &doc.at("fit");
  if (node->contains("parameters")) node = &node->at("parameters");
  try {
    auto p = parameters_from_json(*node);
    ModelSpec free_spec;
    free_spec.dims = p.dims;
    const auto report = validate(free_spec, p, 1e-9);
    if (!report.ok) throw ModelError(report.message);
    return p;
  } catch (const std::exception& e) {
    throw ConfigError("parameter file " + path.string() + ": " + e.what());
  }
}

inline int cmd_simulate(const RunConfig& cfg, const CommonArgs& args, std::optional<std::vector<std::uint64_t>> sizes,
                        Streams io) {
  if (!cfg.parameters) detail::field_error("parameters", "required for simulate");
  const auto params = load_parameters(*cfg.parameters);
  const auto& d = params.dims;
  TableLayout layout = TableLayout::numbered(d.groups, d.categories, d.occasions);
  if (cfg.schema) {
    const auto schema = load_schema(*cfg.schema);
    if (static_cast<int>(schema.categories.size()) != d.categories)
      throw ConfigError("schema declares " + std::to_string(schema.categories.size()) + " categories, parameters have " +
                        std::to_string(d.categories));
    layout.categories = schema.categories;
    if (!schema.groups.empty()) {
      if (static_cast<int>(schema.groups.size()) != d.groups)
        throw ConfigError("schema declares " + std::to_string(schema.groups.size()) + " groups, parameters have " +
                          std::to_string(d.groups));
      layout.groups = schema.groups;
    }
  }
  const auto n = sizes ? *sizes : cfg.sizes;
  if (static_cast<int>(n.size()) != d.groups)
    throw ConfigError("simulate: need " + std::to_string(d.groups) + " group sizes (--sizes or simulate.sizes)");
  const auto seed = resolve_seed(args.seed, cfg.seed);
  const auto table = simulate(params, n, seed, layout);
  std::ostringstream csv;
  csv << "# simulated by latent-chain " << version << ", seed " << seed << ", config hash " << cfg.hash() << '\n';
  write_panel_csv(csv, table);
  emit(csv.str(), args.out ? args.out : cfg.output, io.out);
  return exit_ok;
}

struct ReplicateArgs {
  std::optional<fs::path> data;
  std::optional<fs::path> schema;
  std::optional<fs::path> gender_dir;
  std::optional<int> bootstrap_replicates;
};

inline fs::path bundled_data_dir() {
  if (const char* env = std::getenv(data_dir_env)) return env;
  return LATENT_CHAIN_DATA_DIR;
}

inline int cmd_replicate(const RunConfig* cfg, const CommonArgs& args, const ReplicateArgs& rargs, Streams io) {
  const fs::path dir = bundled_data_dir();
  replication::Options opts;
  fs::path data = dir / "bif_fellowships.csv";
  fs::path schema = dir / "bif_schema.json";
  std::optional<fs::path> gender_dir;
  if (cfg) {
    if (cfg->data) data = *cfg->data;
    if (cfg->schema) schema = *cfg->schema;
    const fs::path base = cfg->path.has_parent_path() ? cfg->path.parent_path() : fs::path(".");
    gender_dir = detail::get_path(cfg->doc, "gender_dir", base);
    opts.bootstrap_replicates = cfg->bootstrap_replicates;
  }
  if (rargs.data) data = *rargs.data;
  if (rargs.schema) schema = *rargs.schema;
  if (rargs.gender_dir)
    gender_dir = rargs.gender_dir;
  else if (!gender_dir)
    if (const char* env = std::getenv(gender_dir_env)) gender_dir = fs::path(env);
  if (rargs.bootstrap_replicates) opts.bootstrap_replicates = *rargs.bootstrap_replicates;
  if (opts.bootstrap_replicates < 1) throw ConfigError("replicate: bootstrap replicate count must be >= 1");

  opts.data = load_table(data, schema);
  if (gender_dir) {
    if (!fs::is_directory(*gender_dir)) throw ConfigError("gender data directory not found: " + gender_dir->string());
    const auto gschema = dir / "bif_gender_schema.json";
    const char* files[2] = {"bif_gender_doctoral.csv", "bif_gender_postdoc.csv"};
    for (int f = 0; f < 2; ++f) {
      const auto path = *gender_dir / files[f];
      if (!fs::exists(path)) continue;
      auto t = load_table(path, gschema);
      if (!(t.layout() == replication::gender_layout()))
        throw DataError(path.string() + ": expected groups male, female and categories 1-3 over 3 occasions");
      opts.gender[f] = std::move(t);
    }
  }
  opts.seed = resolve_seed(args.seed, cfg ? cfg->seed : std::nullopt);
  if (args.threads) opts.threads = *args.threads;

  const auto result = replication::replicate(opts);
  auto report = report_header("replicate", cfg, opts.seed);
  for (auto& [k, v] : result.report.items())
    if (!report.contains(k)) report[k] = v;
  io.out << result.text;
  if (args.out) write_file(*args.out, report.dump(2) + "\n");
  if (!result.passed()) {
    io.err << "replicate: mismatched cells:\n";
    for (const auto* c : result.failures()) io.err << "  " << c->table << ": " << c->item << '\n';
    return exit_mismatch;
  }
  return exit_ok;
}

/// Parses argv and dispatches. Never throws; errors become exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App cli{"Latent Markov chain models for categorical panel data", "latent-chain"};
  cli.require_subcommand(1);
  cli.set_version_flag("--version", version);

  CommonArgs common;
  std::optional<std::uint64_t> seed_opt;
  std::string out_path;
  int threads = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_opt, "Run seed (overrides config and LATENT_CHAIN_SEED)");
    sub->add_option("--out", out_path, "Report output path");
    sub->add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  };

  std::vector<std::string> configs;
  auto* fit = cli.add_subcommand("fit", "Fit a model and write a JSON report");
  fit->add_option("--config", configs, "Run config")->required()->expected(1);
  add_common(fit);

  int replicates = 0;
  std::string replicates_csv;
  auto* boot = cli.add_subcommand("bootstrap", "Fit and run a parametric-bootstrap goodness-of-fit test");
  boot->add_option("--config", configs, "Run config")->required()->expected(1);
  boot->add_option("--replicates", replicates, "Bootstrap replicates (overrides config)")->check(CLI::PositiveNumber);
  boot->add_option("--replicates-csv", replicates_csv, "Write replicate statistics as CSV");
  add_common(boot);

  auto* cmp = cli.add_subcommand("compare", "Likelihood-ratio difference test of two nested models");
  cmp->add_option("--config", configs, "Run config (give twice)")->required()->expected(2)->take_all();
  add_common(cmp);

  std::string sizes_text;
  auto* sim = cli.add_subcommand("simulate", "Draw a table from a parameter file");
  sim->add_option("--config", configs, "Run config")->required()->expected(1);
  sim->add_option("--sizes", sizes_text, "Comma-separated group sizes");
  add_common(sim);

  ReplicateArgs rargs;
  std::string data_path, schema_path, gender_dir;
  int rep_boot = 0;
  auto* rep = cli.add_subcommand("replicate", "Reproduce the bundled analysis and check it against published values");
  rep->add_option("--config", configs, "Optional run config")->expected(1);
  rep->add_option("--data", data_path, "Replace the bundled data file");
  rep->add_option("--schema", schema_path, "Schema for --data");
  rep->add_option("--gender-dir", gender_dir, "Directory with gender-split tables");
  rep->add_option("--bootstrap-replicates", rep_boot, "Replicates per bootstrap test")->check(CLI::PositiveNumber);
  add_common(rep);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e, out, err) == 0 ? exit_ok : exit_config;
  }
  common.seed = seed_opt;
  if (!out_path.empty()) common.out = out_path;
  if (threads > 0) common.threads = threads;
  if (threads == 0 && (fit->count("--threads") + boot->count("--threads") + cmp->count("--threads") +
                       sim->count("--threads") + rep->count("--threads")) > 0)
    common.threads = 0;
  Streams io{out, err};

  try {
    if (*fit) return cmd_fit(load_config(configs.at(0)), common, io);
    if (*boot) {
      std::optional<int> b;
      if (replicates > 0) b = replicates;
      std::optional<fs::path> csv;
      if (!replicates_csv.empty()) csv = replicates_csv;
      return cmd_bootstrap(load_config(configs.at(0)), common, b, csv, io);
    }
    if (*cmp) return cmd_compare(load_config(configs.at(0)), load_config(configs.at(1)), common, io);
    if (*sim) {
      std::optional<std::vector<std::uint64_t>> sizes;
      if (!sizes_text.empty()) {
        sizes.emplace();
        std::stringstream ss(sizes_text);
        std::string item;
        while (std::getline(ss, item, ',')) {
          const auto v = parse_seed_text(item, "--sizes");
          if (!v) throw ConfigError("--sizes: empty entry");
          sizes->push_back(*v);
        }
      }
      return cmd_simulate(load_config(configs.at(0)), common, sizes, io);
    }
    if (*rep) {
      if (!data_path.empty()) rargs.data = data_path;
      if (!schema_path.empty()) rargs.schema = schema_path;
      if (!gender_dir.empty()) rargs.gender_dir = gender_dir;
      if (rep_boot > 0) rargs.bootstrap_replicates = rep_boot;
      std::optional<RunConfig> cfg;
      if (!configs.empty()) cfg = load_config(configs.at(0));
      return cmd_replicate(cfg ? &*cfg : nullptr, common, rargs, io);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return exit_config;
  } catch (const ModelError& e) {
    err << "model error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  }
  return exit_config;
}

}  // namespace latent_chain::app
