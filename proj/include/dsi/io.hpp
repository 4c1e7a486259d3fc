#pragma once

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dsi/core.hpp"

namespace dsi::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Round-trip decimal formatting (up to 17 significant digits).
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return {buf, res.ptr};
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError("cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                     : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r')
    out.back().remove_suffix(1);
  return out;
}

inline std::ofstream open_for_write(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline std::ifstream open_for_read(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("missing artifact: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

inline void write_json(const fs::path& path, const json& j) {
  auto out = open_for_write(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline json read_json(const fs::path& path) {
  auto in = open_for_read(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

// Ensemble CSV: header "quantity,time,member_<id>,...", one row per
// (quantity, time) in flattening order.

inline void write_ensemble_csv(const fs::path& path, const Ensemble& e) {
  auto out = open_for_write(path);
  const auto& schema = *e.schema();
  out << "quantity,time";
  for (Index i = 0; i < e.size(); ++i) out << ",member_" << e.id(i);
  out << '\n';
  for (Index q = 0; q < schema.n_qoi(); ++q) {
    for (Index t = 0; t < schema.n_t(); ++t) {
      out << schema.quantity_names()[static_cast<std::size_t>(q)] << ','
          << format_double(schema.times()[static_cast<std::size_t>(t)]);
      const Index row = schema.flat_index(q, t);
      for (Index i = 0; i < e.size(); ++i) out << ',' << format_double(e.matrix()(row, i));
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline Ensemble read_ensemble_csv(const fs::path& path) {
  auto in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty ensemble file " + path.string());
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "quantity" || header[1] != "time")
    throw IoError("bad ensemble header in " + path.string());
  const std::size_t n_r = header.size() - 2;
  std::vector<std::uint64_t> ids;
  bool sequential = false;
  for (std::size_t c = 2; c < header.size(); ++c) {
    std::string_view h = header[c];
    std::uint64_t id = c - 2;
    if (h.starts_with("member_")) {
      h.remove_prefix(7);
      auto res = std::from_chars(h.data(), h.data() + h.size(), id);
      if (res.ec != std::errc{} || res.ptr != h.data() + h.size()) sequential = true;
    } else {
      sequential = true;
    }
    ids.push_back(id);
  }
  if (sequential) ids.clear();

  std::vector<std::string> names;
  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw IoError("row with " + std::to_string(cells.size()) + " cells in " + path.string());
    const std::string name(cells[0]);
    const double time = parse_double(cells[1]);
    if (names.empty() || names.back() != name) names.push_back(name);
    if (names.size() == 1) times.push_back(time);
    std::vector<double> row(n_r);
    for (std::size_t i = 0; i < n_r; ++i) row[i] = parse_double(cells[i + 2]);
    rows.push_back(std::move(row));
  }
  auto schema = make_schema(names, times);
  if (static_cast<Index>(rows.size()) != schema->n_f())
    throw SchemaError("ensemble file " + path.string() + " is not a full quantity x time grid");
  Matrix m(schema->n_f(), static_cast<Index>(n_r));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t i = 0; i < n_r; ++i) m(static_cast<Index>(r), static_cast<Index>(i)) = rows[r][i];
  return {schema, std::move(m), std::move(ids)};
}

/// Single data vector in the ensemble layout with one value column.
inline void write_data_vector_csv(const fs::path& path, const DataVector& d) {
  write_ensemble_csv(path, Ensemble(d.schema(), d.flat(), {0}));
}

inline DataVector read_data_vector_csv(const fs::path& path) {
  Ensemble e = read_ensemble_csv(path);
  if (e.size() != 1) throw SchemaError(path.string() + " must hold exactly one data vector");
  return e.member(0);
}

// Plain matrix CSV: one line per row, no header.

inline void write_matrix_csv(const fs::path& path, const Matrix& m) {
  auto out = open_for_write(path);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline Matrix read_matrix_csv(const fs::path& path) {
  auto in = open_for_read(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    for (auto cell : split_csv(line)) row.push_back(parse_double(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError("ragged matrix in " + path.string());
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

inline json to_json(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector vector_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

// ObservationSet JSON: {"entries":[[q,t],...],"values":[...],"error_std":[...]}

inline json to_json(const ObservationSet& obs) {
  json entries = json::array();
  for (const auto& e : obs.entries()) entries.push_back({e.quantity, e.time});
  return {{"entries", entries}, {"values", to_json(obs.values())}, {"error_std", to_json(obs.error_std())}};
}

inline ObservationSet observations_from_json(const json& j) {
  try {
    std::vector<ObservationEntry> entries;
    for (const auto& e : j.at("entries")) {
      if (!e.is_array() || e.size() != 2) throw SchemaError("observation entry must be [q, t]");
      entries.push_back({e[0].get<Index>(), e[1].get<Index>()});
    }
    return {std::move(entries), vector_from_json(j.at("values")), vector_from_json(j.at("error_std"))};
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed observation set: ") + e.what());
  }
}

inline void write_observations(const fs::path& path, const ObservationSet& obs) {
  write_json(path, to_json(obs));
}

inline ObservationSet read_observations(const fs::path& path) {
  return observations_from_json(read_json(path));
}

}  // namespace dsi::io
