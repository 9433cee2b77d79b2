#pragma once

// JSON forms of models, parameters, and reports. Indices in JSON are 1-based.
// Doubles are written in shortest round-trip form, so parameter documents
// reload bit-exactly.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "latent_chain/errors.hpp"
#include "latent_chain/estimation.hpp"
#include "latent_chain/inference.hpp"
#include "latent_chain/model.hpp"
#include "latent_chain/reliability.hpp"

namespace latent_chain {

using nlohmann::json;

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline json to_json(const Dimensions& d) {
  return {{"groups", d.groups}, {"categories", d.categories}, {"occasions", d.occasions}, {"classes", d.classes}};
}

inline Dimensions dimensions_from_json(const json& j) {
  Dimensions d;
  d.groups = j.at("groups").get<int>();
  d.categories = j.at("categories").get<int>();
  d.occasions = j.at("occasions").get<int>();
  d.classes = j.at("classes").get<int>();
  d.check();
  return d;
}

inline const char* kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::delta:
      return "delta";
    case ParamKind::rho:
      return "rho";
    case ParamKind::tau:
      return "tau";
  }
  return "?";
}

inline ParamKind kind_from_name(const std::string& s) {
  if (s == "delta") return ParamKind::delta;
  if (s == "rho") return ParamKind::rho;
  if (s == "tau") return ParamKind::tau;
  throw ModelError("unknown parameter kind '" + s + "'");
}

inline json to_json(const RowRef& r) {
  json j{{"param", kind_name(r.kind)}, {"group", r.group + 1}};
  if (r.kind == ParamKind::rho) {
    j["occasion"] = r.occasion + 1;
    j["class"] = r.from + 1;
  } else if (r.kind == ParamKind::tau) {
    j["transition"] = r.occasion + 1;
    j["from"] = r.from + 1;
  }
  return j;
}

inline RowRef row_from_json(const json& j) {
  RowRef r;
  r.kind = kind_from_name(j.at("param").get<std::string>());
  r.group = j.at("group").get<int>() - 1;
  if (r.kind == ParamKind::rho) {
    r.occasion = j.at("occasion").get<int>() - 1;
    r.from = j.at("class").get<int>() - 1;
  } else if (r.kind == ParamKind::tau) {
    r.occasion = j.at("transition").get<int>() - 1;
    r.from = j.at("from").get<int>() - 1;
  }
  return r;
}

inline json to_json(const CellRef& c) {
  json j = to_json(c.row);
  j["column"] = c.column + 1;
  return j;
}

inline CellRef cell_from_json(const json& j) { return {row_from_json(j), j.at("column").get<int>() - 1}; }

inline json to_json(const ModelSpec& spec) {
  json ties = json::array();
  for (const auto& tie : spec.constraints.ties) {
    json t = json::array();
    for (const auto& r : tie) t.push_back(to_json(r));
    ties.push_back(std::move(t));
  }
  json fixes = json::array();
  for (const auto& f : spec.constraints.fixes) {
    json c = to_json(f.cell);
    c["value"] = f.value;
    fixes.push_back(std::move(c));
  }
  return {{"dims", to_json(spec.dims)},
          {"manifest", spec.manifest},
          {"stationary", spec.stationary},
          {"ties", std::move(ties)},
          {"fixes", std::move(fixes)}};
}

inline ModelSpec model_spec_from_json(const json& j) {
  ModelSpec spec;
  spec.dims = dimensions_from_json(j.at("dims"));
  spec.manifest = j.value("manifest", false);
  spec.stationary = j.value("stationary", false);
  if (j.contains("ties"))
    for (const auto& t : j.at("ties")) {
      std::vector<RowRef> tie;
      for (const auto& r : t) tie.push_back(row_from_json(r));
      spec.constraints.ties.push_back(std::move(tie));
    }
  if (j.contains("fixes"))
    for (const auto& f : j.at("fixes")) spec.constraints.fixes.push_back({cell_from_json(f), f.at("value").get<double>()});
  return spec;
}

namespace detail {

/// Nests a flat row-major array into JSON arrays of the given shape.
template <typename T, typename Convert>
json nest(const std::vector<T>& flat, const std::vector<int>& shape, Convert convert) {
  std::size_t pos = 0;
  auto rec = [&](auto&& self, std::size_t level) -> json {
    json arr = json::array();
    for (int i = 0; i < shape[level]; ++i)
      arr.push_back(level + 1 == shape.size() ? convert(flat[pos++]) : self(self, level + 1));
    return arr;
  };
  return rec(rec, 0);
}

template <typename T, typename Convert>
std::vector<T> flatten(const json& j, const std::vector<int>& shape, Convert convert, const std::string& name) {
  std::vector<T> out;
  auto rec = [&](auto&& self, const json& node, std::size_t level) -> void {
    if (!node.is_array() || static_cast<int>(node.size()) != shape[level])
      throw ModelError("'" + name + "' does not have the expected shape");
    for (const auto& child : node) {
      if (level + 1 == shape.size())
        out.push_back(convert(child));
      else
        self(self, child, level + 1);
    }
  };
  rec(rec, j, 0);
  return out;
}

inline std::vector<int> delta_shape(const Dimensions& d) { return {d.groups, d.classes}; }
inline std::vector<int> rho_shape(const Dimensions& d) { return {d.occasions, d.groups, d.classes, d.categories}; }
inline std::vector<int> tau_shape(const Dimensions& d) { return {d.transitions(), d.groups, d.classes, d.classes}; }

}  // namespace detail

inline json to_json(const ParameterSet& p) {
  const auto& d = p.dims;
  auto id = [](double v) { return json(v); };
  json tau = d.transitions() > 0 ? detail::nest(p.tau, detail::tau_shape(d), id) : json::array();
  return {{"dims", to_json(d)},
          {"gamma", p.gamma},
          {"delta", detail::nest(p.delta, detail::delta_shape(d), id)},
          {"rho", detail::nest(p.rho, detail::rho_shape(d), id)},
          {"tau", std::move(tau)}};
}

inline ParameterSet parameters_from_json(const json& j) {
  try {
    const auto d = dimensions_from_json(j.at("dims"));
    ParameterSet p(d);
    auto num = [](const json& v) { return v.get<double>(); };
    p.gamma = j.at("gamma").get<std::vector<double>>();
    if (static_cast<int>(p.gamma.size()) != d.groups) throw ModelError("'gamma' does not have one entry per group");
    p.delta = detail::flatten<double>(j.at("delta"), detail::delta_shape(d), num, "delta");
    p.rho = detail::flatten<double>(j.at("rho"), detail::rho_shape(d), num, "rho");
    if (d.transitions() > 0) p.tau = detail::flatten<double>(j.at("tau"), detail::tau_shape(d), num, "tau");
    return p;
  } catch (const json::exception& e) {
    throw ModelError(std::string("parameter document: ") + e.what());
  }
}

/// Parameters together with the constraint declarations they were built under.
inline json parameter_document(const ParameterSet& p, const ModelSpec& spec) {
  json j = to_json(p);
  j["model"] = to_json(spec);
  return j;
}

inline json to_json(const ParameterErrors& e, const Dimensions& d) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json tau = d.transitions() > 0 ? detail::nest(e.tau, detail::tau_shape(d), opt) : json::array();
  json j{{"delta", detail::nest(e.delta, detail::delta_shape(d), opt)},
         {"rho", detail::nest(e.rho, detail::rho_shape(d), opt)},
         {"tau", std::move(tau)}};
  if (!e.diagnostic.empty()) j["diagnostic"] = e.diagnostic;
  return j;
}

inline json to_json(const FitDiagnostics& diag) {
  json boundary = json::array();
  for (const auto& c : diag.boundary_cells) boundary.push_back(to_json(c));
  json empty = json::array();
  for (const auto& r : diag.empty_rows) empty.push_back(to_json(r));
  std::vector<bool> conv(diag.start_converged.begin(), diag.start_converged.end());
  json j{{"best_start", diag.best_start},
         {"starts_at_best", diag.starts_at_best},
         {"iterations", diag.iterations},
         {"final_log_likelihoods", diag.final_log_likelihoods},
         {"start_converged", conv},
         {"boundary_tol", diag.boundary_tol},
         {"boundary_cells", std::move(boundary)},
         {"empty_rows", std::move(empty)},
         {"canonicalized", diag.canonicalized},
         {"polish_iterations", diag.polish_iterations},
         {"largest_log_likelihood_decrease", diag.largest_decrease}};
  if (!diag.note.empty()) j["note"] = diag.note;
  return j;
}

inline json to_json(const FitResult& fit) {
  return {{"model", to_json(fit.spec)},
          {"parameters", to_json(fit.params)},
          {"standard_errors", fit.standard_errors ? to_json(*fit.standard_errors, fit.spec.dims) : json(nullptr)},
          {"log_likelihood", fit.log_likelihood},
          {"g_squared", fit.g_squared},
          {"free_parameters", fit.free_parameters},
          {"degrees_of_freedom", fit.degrees_of_freedom},
          {"converged", fit.converged},
          {"data_digest", hex64(fit.data_digest)},
          {"diagnostics", to_json(fit.diagnostics)}};
}

inline json to_json(const BootstrapReport& r) {
  json lrs = json::array();
  json conv = json::array();
  for (const auto& rep : r.replicates) {
    lrs.push_back(rep.lr);
    conv.push_back(rep.converged);
  }
  return {{"observed_lr", r.observed_lr},
          {"replicates", r.replicate_count},
          {"exceed_count", r.exceed_count},
          {"p_value", r.p_value},
          {"p_value_estimator", "(exceed_count + 1) / (replicates + 1)"},
          {"mean_replicate_lr", r.mean_replicate_lr()},
          {"seed", r.seed},
          {"fallback_starts", r.fallback_starts},
          {"replicate_lr", std::move(lrs)},
          {"replicate_converged", std::move(conv)}};
}

inline json to_json(const ComparisonReport& c) {
  return {{"delta_lr", c.delta_lr},
          {"delta_df", c.delta_df},
          {"chi_square_p", c.chi_square_p},
          {"restricted_fit_failed", c.restricted_fit_failed},
          {"warnings", c.warnings}};
}

inline json to_json(const ReliabilityDecomposition& r) {
  return {{"rule", r.rule == TrueStateRule::exact_path ? "exact_path" : "constancy_class"},
          {"stability", r.stability},
          {"true_stability", r.true_stability},
          {"error_stability", r.error_stability},
          {"change", r.change},
          {"true_change", r.true_change},
          {"error_change", r.error_change},
          {"total_error", r.total_error},
          {"reliability", r.reliability},
          {"manifest_stability", r.manifest_stability}};
}

}  // namespace latent_chain
