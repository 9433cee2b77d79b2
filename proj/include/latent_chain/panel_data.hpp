#pragma once

// Grouped categorical panel data: frequencies of response patterns observed
// over T occasions, one frequency table per group.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "latent_chain/errors.hpp"

namespace latent_chain {

/// A response pattern: one 0-based category index per occasion.
using Pattern = std::vector<int>;

/// Number of patterns in the J^T lattice.
inline std::uint64_t pattern_count(int categories, int occasions) {
  std::uint64_t n = 1;
  for (int t = 0; t < occasions; ++t) n *= static_cast<std::uint64_t>(categories);
  return n;
}

/// Lexicographic index of a pattern; the first occasion is most significant.
inline std::uint64_t pattern_index(std::span<const int> pattern, int categories) {
  std::uint64_t idx = 0;
  for (int y : pattern) idx = idx * static_cast<std::uint64_t>(categories) + static_cast<std::uint64_t>(y);
  return idx;
}

inline Pattern pattern_from_index(std::uint64_t index, int categories, int occasions) {
  Pattern p(static_cast<std::size_t>(occasions));
  for (int t = occasions - 1; t >= 0; --t) {
    p[static_cast<std::size_t>(t)] = static_cast<int>(index % static_cast<std::uint64_t>(categories));
    index /= static_cast<std::uint64_t>(categories);
  }
  return p;
}

inline bool is_constant(std::span<const int> pattern) {
  return std::adjacent_find(pattern.begin(), pattern.end(), std::not_equal_to<>{}) == pattern.end();
}

/// Labels and dimensions shared by observed and model-generated tables.
struct TableLayout {
  int occasions = 0;
  std::vector<std::string> categories;
  std::vector<std::string> groups;

  int num_categories() const { return static_cast<int>(categories.size()); }
  int num_groups() const { return static_cast<int>(groups.size()); }
  std::uint64_t num_patterns() const { return pattern_count(num_categories(), occasions); }

  int group_index(std::string_view label) const {
    auto it = std::find(groups.begin(), groups.end(), label);
    if (it == groups.end()) throw DataError("unknown group label '" + std::string(label) + "'");
    return static_cast<int>(it - groups.begin());
  }

  int category_index(std::string_view label) const {
    auto it = std::find(categories.begin(), categories.end(), label);
    if (it == categories.end()) throw DataError("unknown category label '" + std::string(label) + "'");
    return static_cast<int>(it - categories.begin());
  }

  friend bool operator==(const TableLayout&, const TableLayout&) = default;

  /// Labels "1".."J" and "g1".."gH".
  static TableLayout numbered(int groups, int categories, int occasions) {
    TableLayout layout;
    layout.occasions = occasions;
    for (int j = 1; j <= categories; ++j) layout.categories.push_back(std::to_string(j));
    for (int h = 1; h <= groups; ++h) layout.groups.push_back("g" + std::to_string(h));
    return layout;
  }
};

/// Sparse frequency table over response patterns. Absent cells are zero.
class PanelTable {
 public:
  using CellMap = std::map<std::uint64_t, std::uint64_t>;

  PanelTable() = default;
  explicit PanelTable(TableLayout layout) : layout_(std::move(layout)), cells_(layout_.groups.size()) {
    if (layout_.occasions < 1) throw DataError("panel table needs at least one occasion");
    if (layout_.num_categories() < 2) throw DataError("panel table needs at least two categories");
    if (layout_.groups.empty()) throw DataError("panel table needs at least one group");
  }

  const TableLayout& layout() const { return layout_; }
  int occasions() const { return layout_.occasions; }
  int num_categories() const { return layout_.num_categories(); }
  int num_groups() const { return layout_.num_groups(); }

  /// Adds `count` observations of `pattern` to `group`; duplicates accumulate.
  void add(int group, std::span<const int> pattern, std::uint64_t count) {
    check_group(group);
    if (static_cast<int>(pattern.size()) != layout_.occasions)
      throw DataError("pattern length " + std::to_string(pattern.size()) + " does not match " +
                      std::to_string(layout_.occasions) + " occasions");
    for (int y : pattern)
      if (y < 0 || y >= num_categories()) throw DataError("category index out of range");
    add_index(group, pattern_index(pattern, num_categories()), count);
  }

  void add_index(int group, std::uint64_t index, std::uint64_t count) {
    check_group(group);
    if (index >= layout_.num_patterns()) throw DataError("pattern index out of range");
    if (count == 0) return;
    cells_[static_cast<std::size_t>(group)][index] += count;
  }

  std::uint64_t count(int group, std::uint64_t index) const {
    check_group(group);
    const auto& m = cells_[static_cast<std::size_t>(group)];
    auto it = m.find(index);
    return it == m.end() ? 0 : it->second;
  }

  std::uint64_t count(int group, std::span<const int> pattern) const {
    return count(group, pattern_index(pattern, num_categories()));
  }

  /// Non-zero cells of one group keyed by lexicographic pattern index.
  const CellMap& cells(int group) const {
    check_group(group);
    return cells_[static_cast<std::size_t>(group)];
  }

  std::uint64_t total(int group) const {
    std::uint64_t n = 0;
    for (const auto& [idx, c] : cells(group)) n += c;
    return n;
  }

  std::uint64_t grand_total() const {
    std::uint64_t n = 0;
    for (int h = 0; h < num_groups(); ++h) n += total(h);
    return n;
  }

  std::vector<std::uint64_t> group_totals() const {
    std::vector<std::uint64_t> out;
    for (int h = 0; h < num_groups(); ++h) out.push_back(total(h));
    return out;
  }

  /// Dense J^T counts for one group.
  std::vector<double> dense(int group) const {
    std::vector<double> out(layout_.num_patterns(), 0.0);
    for (const auto& [idx, c] : cells(group)) out[idx] = static_cast<double>(c);
    return out;
  }

  friend bool operator==(const PanelTable& a, const PanelTable& b) {
    return a.layout_ == b.layout_ && a.cells_ == b.cells_;
  }

 private:
  void check_group(int group) const {
    if (group < 0 || group >= num_groups()) throw DataError("group index out of range");
  }

  TableLayout layout_;
  std::vector<CellMap> cells_;
};

/// Ordered category and group labels from the JSON schema sidecar. An empty
/// group list means groups are taken in order of first appearance.
struct PanelSchema {
  std::vector<std::string> categories;
  std::vector<std::string> groups;
};

inline PanelSchema parse_schema_json(const nlohmann::json& j) {
  PanelSchema schema;
  if (!j.is_object() || !j.contains("categories"))
    throw DataError("schema: missing 'categories'");
  try {
    schema.categories = j.at("categories").get<std::vector<std::string>>();
    if (j.contains("groups")) schema.groups = j.at("groups").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("schema: ") + e.what());
  }
  if (schema.categories.size() < 2) throw DataError("schema: at least two categories required");
  auto unique = [](std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return std::adjacent_find(v.begin(), v.end()) == v.end();
  };
  if (!unique(schema.categories)) throw DataError("schema: duplicate category label");
  if (!unique(schema.groups)) throw DataError("schema: duplicate group label");
  return schema;
}

inline PanelSchema parse_schema_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("schema: ") + e.what());
  }
  return parse_schema_json(j);
}

inline nlohmann::json schema_to_json(const TableLayout& layout) {
  return {{"categories", layout.categories}, {"groups", layout.groups}};
}

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

inline std::uint64_t parse_count(const std::string& field, std::size_t line_no) {
  auto fail = [&] {
    throw DataError("line " + std::to_string(line_no) + ": count '" + field +
                    "' is not a non-negative integer");
  };
  if (field.empty()) fail();
  std::uint64_t value = 0;
  for (char c : field) {
    if (c < '0' || c > '9') fail();
    value = value * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return value;
}

}  // namespace detail

/// Reads `group,t1,...,tT,count` CSV. Blank lines and lines starting with '#'
/// are skipped; duplicate (group, pattern) rows are summed.
inline PanelTable parse_panel_csv(std::istream& in, const PanelSchema& schema) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    header = detail::split_csv_line(t);
    break;
  }
  if (header.empty()) throw DataError("csv: missing header row");
  if (header.size() < 3 || header.front() != "group" || header.back() != "count")
    throw DataError("csv: header must be 'group,t1,...,tT,count'");
  const int occasions = static_cast<int>(header.size()) - 2;
  for (int t = 0; t < occasions; ++t)
    if (header[static_cast<std::size_t>(t) + 1] != "t" + std::to_string(t + 1))
      throw DataError("csv: occasion column " + std::to_string(t + 1) + " must be named 't" +
                      std::to_string(t + 1) + "'");

  struct Row {
    std::string group;
    Pattern pattern;
    std::uint64_t count;
  };
  std::vector<Row> rows;
  std::vector<std::string> seen_groups;
  TableLayout probe;
  probe.categories = schema.categories;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = detail::split_csv_line(t);
    if (fields.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    Row row;
    row.group = fields.front();
    for (int k = 0; k < occasions; ++k) {
      const auto& label = fields[static_cast<std::size_t>(k) + 1];
      try {
        row.pattern.push_back(probe.category_index(label));
      } catch (const DataError&) {
        throw DataError("line " + std::to_string(line_no) + ": unknown category label '" + label + "'");
      }
    }
    row.count = detail::parse_count(fields.back(), line_no);
    if (std::find(seen_groups.begin(), seen_groups.end(), row.group) == seen_groups.end())
      seen_groups.push_back(row.group);
    rows.push_back(std::move(row));
  }

  TableLayout layout;
  layout.occasions = occasions;
  layout.categories = schema.categories;
  layout.groups = schema.groups.empty() ? seen_groups : schema.groups;
  if (layout.groups.empty()) throw DataError("csv: no groups declared or observed");
  PanelTable table(layout);
  for (const auto& row : rows) {
    int g = 0;
    try {
      g = layout.group_index(row.group);
    } catch (const DataError&) {
      throw DataError("csv: group '" + row.group + "' is not declared in the schema");
    }
    table.add(g, row.pattern, row.count);
  }
  return table;
}

inline PanelTable parse_panel_csv(std::string_view text, const PanelSchema& schema) {
  std::istringstream in{std::string(text)};
  return parse_panel_csv(in, schema);
}

/// Writes non-zero cells in group order then lexicographic pattern order.
inline void write_panel_csv(std::ostream& out, const PanelTable& table) {
  const auto& layout = table.layout();
  out << "group";
  for (int t = 1; t <= layout.occasions; ++t) out << ",t" << t;
  out << ",count\n";
  for (int h = 0; h < table.num_groups(); ++h) {
    for (const auto& [idx, c] : table.cells(h)) {
      out << layout.groups[static_cast<std::size_t>(h)];
      for (int y : pattern_from_index(idx, layout.num_categories(), layout.occasions))
        out << ',' << layout.categories[static_cast<std::size_t>(y)];
      out << ',' << c << '\n';
    }
  }
}

inline std::string write_panel_csv(const PanelTable& table) {
  std::ostringstream out;
  write_panel_csv(out, table);
  return out.str();
}

inline std::uint64_t total_count(const PanelTable& table, std::string_view group) {
  return table.total(table.layout().group_index(group));
}

/// Collapses categories: `mapping[old] = new` (0-based) must cover every old
/// category and hit every index in 0..J'-1. Frequencies of patterns that
/// coincide after mapping are summed.
inline PanelTable merge_categories(const PanelTable& table, std::span<const int> mapping,
                                   std::vector<std::string> new_labels = {}) {
  const int J = table.num_categories();
  if (static_cast<int>(mapping.size()) != J)
    throw DataError("category mapping must assign all " + std::to_string(J) + " categories");
  const int J2 = mapping.empty() ? 0 : *std::max_element(mapping.begin(), mapping.end()) + 1;
  std::vector<bool> hit(static_cast<std::size_t>(std::max(J2, 0)), false);
  for (int m : mapping) {
    if (m < 0) throw DataError("category mapping contains a negative target");
    hit[static_cast<std::size_t>(m)] = true;
  }
  if (J2 < 2) throw DataError("category mapping leaves fewer than two categories");
  if (std::find(hit.begin(), hit.end(), false) != hit.end())
    throw DataError("category mapping is not surjective onto 1.." + std::to_string(J2));

  TableLayout layout = table.layout();
  if (new_labels.empty()) {
    new_labels.assign(static_cast<std::size_t>(J2), std::string{});
    for (int j = 0; j < J; ++j) {
      auto& l = new_labels[static_cast<std::size_t>(mapping[static_cast<std::size_t>(j)])];
      l += (l.empty() ? "" : "+") + layout.categories[static_cast<std::size_t>(j)];
    }
  }
  if (static_cast<int>(new_labels.size()) != J2) throw DataError("merged label count does not match J'");
  layout.categories = std::move(new_labels);

  PanelTable out(layout);
  for (int h = 0; h < table.num_groups(); ++h) {
    for (const auto& [idx, c] : table.cells(h)) {
      auto p = pattern_from_index(idx, J, table.occasions());
      for (auto& y : p) y = mapping[static_cast<std::size_t>(y)];
      out.add(h, p, c);
    }
  }
  return out;
}

/// Observed share of constant patterns (c, c, ..., c) in one group.
inline double manifest_stability(const PanelTable& table, std::string_view group) {
  const int h = table.layout().group_index(group);
  const auto n = table.total(h);
  if (n == 0) throw DataError("group '" + std::string(group) + "' has no observations");
  std::uint64_t constant = 0;
  for (const auto& [idx, c] : table.cells(h))
    if (is_constant(pattern_from_index(idx, table.num_categories(), table.occasions()))) constant += c;
  return static_cast<double>(constant) / static_cast<double>(n);
}

}  // namespace latent_chain
