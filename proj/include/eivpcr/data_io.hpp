#pragma once

// CSV and JSON persistence for matrices, panels, fitted models and reports.
//
// Numbers are parsed with std::from_chars and written with std::to_chars at
// 17 significant digits, so neither direction depends on the C locale and
// write→read reproduces every double bit for bit.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include <json.hpp>

#include "eivpcr/pcr.hpp"
#include "eivpcr/sim_lab.hpp"
#include "eivpcr/synthetic_controls.hpp"

namespace eivpcr::io {

using nlohmann::json;

inline constexpr int kModelSchemaVersion = 1;

struct CsvMatrixSpec {
  std::string path;
  bool has_header = false;
  bool has_row_labels = false;  // first column holds row identifiers
  std::vector<std::string> na_tokens{"NA", "nan", ""};
  char delimiter = ',';
};

struct CsvMatrix {
  MaskedMatrix data;
  std::vector<std::string> column_labels;  // empty without a header
  std::vector<std::string> row_labels;     // empty without row labels
};

// ---------------------------------------------------------------------------
// Low-level CSV

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  out << contents;
  if (!out) throw Error(Errc::Io, "write failed for " + path);
}

/// RFC-4180 records: quoted fields may contain delimiters, doubled quotes and
/// newlines. Accepts \n and \r\n; a trailing newline does not add a record.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text, char delim) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool any = false;  // current record has content
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
      any = true;
    } else if (c == delim) {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      continue;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (in_quotes) throw Error(Errc::ParseError, "unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

inline std::string quote_field(std::string_view s, char delim) {
  if (s.find_first_of(std::string{delim, '"', '\n', '\r'}) == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

/// 17 significant digits, locale independent.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

inline CsvMatrix read_masked_csv(const CsvMatrixSpec& spec) {
  if (spec.na_tokens.empty()) throw Error(Errc::BadParam, "na_tokens must be nonempty");
  const auto records = detail::parse_csv(detail::read_file(spec.path), spec.delimiter);

  CsvMatrix out;
  std::size_t first = 0;
  if (spec.has_header) {
    if (records.empty()) throw Error(Errc::ParseError, spec.path + ": missing header row");
    out.column_labels = records[0];
    if (spec.has_row_labels && !out.column_labels.empty()) out.column_labels.erase(out.column_labels.begin());
    first = 1;
  }
  const std::size_t n_rows = records.size() - first;
  const std::size_t width = n_rows > 0 ? records[first].size() : (spec.has_header ? records[0].size() : 0);
  const std::size_t label_cols = spec.has_row_labels ? 1 : 0;
  if (width < label_cols) throw Error(Errc::Ragged, spec.path + ": row has no label column");
  const std::size_t n_cols = width - label_cols;
  if (spec.has_header && out.column_labels.size() != n_cols) {
    throw Error(Errc::Ragged, spec.path + ": header width differs from data width");
  }

  Matrix values(static_cast<Index>(n_rows), static_cast<Index>(n_cols));
  Mask mask(values.rows(), values.cols());
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto& rec = records[first + r];
    if (rec.size() != width) {
      throw Error(Errc::Ragged, spec.path + ": line " + std::to_string(first + r + 1) + " has " +
                                    std::to_string(rec.size()) + " fields, expected " + std::to_string(width));
    }
    if (spec.has_row_labels) out.row_labels.push_back(rec[0]);
    for (std::size_t c = 0; c < n_cols; ++c) {
      const std::string_view token = detail::trim(rec[c + label_cols]);
      const auto i = static_cast<Index>(r);
      const auto j = static_cast<Index>(c);
      if (std::find(spec.na_tokens.begin(), spec.na_tokens.end(), token) != spec.na_tokens.end()) {
        mask(i, j) = false;
        values(i, j) = 0.0;
        continue;
      }
      const auto v = detail::parse_double(token);
      if (!v) {
        throw Error(Errc::ParseError, spec.path + ": row " + std::to_string(first + r + 1) + ", column " +
                                          std::to_string(c + label_cols + 1) + ": cannot parse '" +
                                          std::string(token) + "'");
      }
      mask(i, j) = true;
      values(i, j) = *v;
    }
  }
  out.data = MaskedMatrix(std::move(values), std::move(mask));
  return out;
}

inline std::string masked_csv_string(const CsvMatrix& m, char delim = ',') {
  std::string out;
  const bool labels = !m.row_labels.empty();
  if (!m.column_labels.empty()) {
    if (labels) out += detail::quote_field("", delim) + delim;
    for (std::size_t c = 0; c < m.column_labels.size(); ++c) {
      if (c) out.push_back(delim);
      out += detail::quote_field(m.column_labels[c], delim);
    }
    out.push_back('\n');
  }
  for (Index i = 0; i < m.data.rows(); ++i) {
    if (labels) out += detail::quote_field(m.row_labels[static_cast<std::size_t>(i)], delim) + delim;
    for (Index j = 0; j < m.data.cols(); ++j) {
      if (j) out.push_back(delim);
      out += m.data.observed(i, j) ? format_double(m.data.values()(i, j)) : "NA";
    }
    out.push_back('\n');
  }
  return out;
}

inline void write_masked_csv(const std::string& path, const CsvMatrix& m, char delim = ',') {
  detail::write_file(path, masked_csv_string(m, delim));
}

inline void write_masked_csv(const std::string& path, const MaskedMatrix& m, char delim = ',') {
  write_masked_csv(path, CsvMatrix{m, {}, {}}, delim);
}

/// A single fully observed column or row.
inline Vector read_vector_csv(const CsvMatrixSpec& spec) {
  const CsvMatrix m = read_masked_csv(spec);
  if (!m.data.fully_observed()) throw Error(Errc::ParseError, spec.path + ": vector has missing entries");
  if (m.data.cols() == 1) return m.data.values().col(0);
  if (m.data.rows() == 1) return m.data.values().row(0).transpose();
  throw Error(Errc::ShapeMismatch, spec.path + ": expected a single column or row");
}

// ---------------------------------------------------------------------------
// Panels

using UnitRef = std::variant<std::string, Index>;

/// Resolve a unit by header label, falling back to a 0-based column index
/// when the string is an integer and no label matches.
inline Index resolve_unit(const std::vector<std::string>& labels, Index n_cols, const UnitRef& target) {
  if (const auto* idx = std::get_if<Index>(&target)) {
    if (*idx < 0 || *idx >= n_cols) throw Error(Errc::UnknownUnit, "unit index out of range");
    return *idx;
  }
  const std::string& name = std::get<std::string>(target);
  for (std::size_t j = 0; j < labels.size(); ++j)
    if (labels[j] == name) return static_cast<Index>(j);
  Index idx = 0;
  const auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), idx);
  if (ec == std::errc() && ptr == name.data() + name.size() && idx >= 0 && idx < n_cols) return idx;
  throw Error(Errc::UnknownUnit, "no unit named '" + name + "'");
}

inline PanelDataset read_panel_csv(const CsvMatrixSpec& spec, const UnitRef& target, Index pre_periods) {
  CsvMatrix m = read_masked_csv(spec);
  const Index target_col = resolve_unit(m.column_labels, m.data.cols(), target);
  if (pre_periods < 1 || pre_periods >= m.data.rows()) {
    throw Error(Errc::BadShape, "pre_periods must be in [1, rows)");
  }
  return PanelDataset(std::move(m.data), target_col, pre_periods, std::move(m.column_labels), std::move(m.row_labels));
}

// ---------------------------------------------------------------------------
// Models

namespace detail {

inline json vector_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline json columns_json(const Matrix& m) {
  json cols = json::array();
  for (Index j = 0; j < m.cols(); ++j) cols.push_back(vector_json(m.col(j)));
  return cols;
}

inline Vector vector_from(const json& j, const char* field) {
  if (!j.is_array()) throw Error(Errc::SchemaMismatch, std::string(field) + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(Errc::SchemaMismatch, std::string(field) + " must hold numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Matrix columns_from(const json& j, Index rows, const char* field) {
  if (!j.is_array()) throw Error(Errc::SchemaMismatch, std::string(field) + " must be an array of columns");
  Matrix m(rows, static_cast<Index>(j.size()));
  for (std::size_t c = 0; c < j.size(); ++c) {
    const Vector col = vector_from(j[c], field);
    if (col.size() != rows) throw Error(Errc::CorruptModel, std::string(field) + " column has wrong length");
    m.col(static_cast<Index>(c)) = col;
  }
  return m;
}

inline const json& require(const json& doc, const char* field) {
  const auto it = doc.find(field);
  if (it == doc.end()) throw Error(Errc::SchemaMismatch, std::string("missing field ") + field);
  return *it;
}

}  // namespace detail

inline json model_to_json(const PcrModel& model) {
  json doc;
  doc["schema_version"] = kModelSchemaVersion;
  doc["n"] = model.n;
  doc["p"] = model.p;
  doc["k"] = model.k;
  doc["rho_hat"] = model.rho_hat;
  doc["beta_hat"] = detail::vector_json(model.beta_hat);
  doc["singular_values"] = detail::vector_json(model.retained.singular_values);
  doc["spectrum"] = detail::vector_json(model.spectrum);
  doc["left_vectors"] = detail::columns_json(model.retained.left);
  doc["right_vectors"] = detail::columns_json(model.retained.right);
  return doc;
}

/// Rejects documents whose contents break the fitted-model invariants.
inline void validate_model(const PcrModel& m) {
  auto corrupt = [](const std::string& why) { throw Error(Errc::CorruptModel, why); };
  if (m.k < 1 || m.k > std::min(m.n, m.p)) corrupt("k outside [1, min(n, p)]");
  if (!(m.rho_hat > 0.0 && m.rho_hat <= 1.0)) corrupt("rho_hat outside (0, 1]");
  if (m.beta_hat.size() != m.p || !m.beta_hat.allFinite()) corrupt("beta_hat has wrong length or non-finite entries");
  const Vector& s = m.retained.singular_values;
  if (s.size() != m.k) corrupt("singular_values length differs from k");
  for (Index i = 0; i < s.size(); ++i) {
    if (!(s(i) > 0.0) || !std::isfinite(s(i))) corrupt("retained singular values must be positive");
    if (i + 1 < s.size() && s(i) < s(i + 1)) corrupt("singular values are not nonincreasing");
  }
  for (Index i = 0; i + 1 < m.spectrum.size(); ++i)
    if (m.spectrum(i) < m.spectrum(i + 1)) corrupt("spectrum is not nonincreasing");
  if (m.spectrum.size() != std::min(m.n, m.p)) corrupt("spectrum length differs from min(n, p)");
  if (m.retained.left.rows() != m.n || m.retained.left.cols() != m.k) corrupt("left_vectors shape");
  if (m.retained.right.rows() != m.p || m.retained.right.cols() != m.k) corrupt("right_vectors shape");
  const double tol = 1e-10 * static_cast<double>(std::max(m.n, m.p));
  const Matrix eye = Matrix::Identity(m.k, m.k);
  if ((m.retained.left.transpose() * m.retained.left - eye).cwiseAbs().maxCoeff() > tol) corrupt("left_vectors not orthonormal");
  if ((m.retained.right.transpose() * m.retained.right - eye).cwiseAbs().maxCoeff() > tol) corrupt("right_vectors not orthonormal");
  const Vector off = m.beta_hat - m.retained.right * (m.retained.right.transpose() * m.beta_hat);
  if (off.norm() > 1e-8 * (1.0 + m.beta_hat.norm())) corrupt("beta_hat leaves the span of the retained right vectors");
}

inline PcrModel model_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(Errc::SchemaMismatch, "model document must be an object");
  const json& version = detail::require(doc, "schema_version");
  if (!version.is_number_integer() || version.get<int>() != kModelSchemaVersion) {
    throw Error(Errc::SchemaMismatch, "unsupported schema_version");
  }
  auto integer = [&](const char* field) {
    const json& j = detail::require(doc, field);
    if (!j.is_number_integer()) throw Error(Errc::SchemaMismatch, std::string(field) + " must be an integer");
    return j.get<Index>();
  };
  PcrModel m;
  m.n = integer("n");
  m.p = integer("p");
  m.k = integer("k");
  const json& rho = detail::require(doc, "rho_hat");
  if (!rho.is_number()) throw Error(Errc::SchemaMismatch, "rho_hat must be a number");
  m.rho_hat = rho.get<double>();
  m.beta_hat = detail::vector_from(detail::require(doc, "beta_hat"), "beta_hat");
  m.retained.singular_values = detail::vector_from(detail::require(doc, "singular_values"), "singular_values");
  m.spectrum = detail::vector_from(detail::require(doc, "spectrum"), "spectrum");
  if (m.n < 0 || m.p < 0) throw Error(Errc::CorruptModel, "negative dimensions");
  m.retained.left = detail::columns_from(detail::require(doc, "left_vectors"), m.n, "left_vectors");
  m.retained.right = detail::columns_from(detail::require(doc, "right_vectors"), m.p, "right_vectors");
  validate_model(m);
  return m;
}

inline void write_model(const PcrModel& model, const std::string& path) {
  detail::write_file(path, model_to_json(model).dump(2) + "\n");
}

inline PcrModel read_model(const std::string& path) {
  json doc;
  try {
    doc = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(Errc::SchemaMismatch, path + ": not valid JSON (" + e.what() + ")");
  }
  return model_from_json(doc);
}

// ---------------------------------------------------------------------------
// Experiment reports

/// One row per trial: experiment, config_id, seed, params..., metrics...
inline std::string report_csv_string(const sim::ExperimentReport& report) {
  std::string out = "experiment,config_id,seed";
  if (report.trials.empty()) return out + "\n";
  const auto& first = report.trials.front();
  for (const auto& [k, v] : first.params) out += "," + k;
  for (const auto& [k, v] : first.metrics) out += "," + k;
  out.push_back('\n');
  for (const auto& t : report.trials) {
    out += report.experiment + "," + detail::quote_field(t.config_id, ',') + "," + std::to_string(t.seed);
    for (const auto& [k, v] : t.params) out += "," + format_double(v);
    for (const auto& [k, v] : t.metrics) out += "," + format_double(v);
    out.push_back('\n');
  }
  return out;
}

inline json report_json(const sim::ExperimentReport& report) {
  json doc;
  doc["experiment"] = report.experiment;
  doc["trials"] = report.trials.size();
  json configs = json::array();
  for (const auto& a : report.aggregates) {
    json c;
    c["config_id"] = a.config_id;
    c["trials"] = a.trials;
    json params = json::object();
    for (const auto& [k, v] : a.params) params[k] = v;
    c["params"] = params;
    json metrics = json::object();
    for (const auto& m : a.metrics) metrics[m.name] = {{"mean", m.mean}, {"std", m.std}};
    c["metrics"] = metrics;
    json derived = json::object();
    for (const auto& [k, v] : a.derived) derived[k] = v;
    c["derived"] = derived;
    configs.push_back(std::move(c));
  }
  doc["configs"] = std::move(configs);
  return doc;
}

inline void write_report_csv(const sim::ExperimentReport& report, const std::string& path) {
  detail::write_file(path, report_csv_string(report));
}

inline void write_report_json(const sim::ExperimentReport& report, const std::string& path) {
  detail::write_file(path, report_json(report).dump(2) + "\n");
}

}  // namespace eivpcr::io
