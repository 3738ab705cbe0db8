#pragma once

// CSV data input and fit reports (aligned text and a long-format CSV that
// re-parses to the exact in-memory doubles).

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ellbias/errors.hpp"
#include "ellbias/fit.hpp"
#include "ellbias/model.hpp"

namespace ellbias {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

/// Splits a CSV line; fields may be double-quoted ("" escapes a quote).
inline std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false, was_quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (quoted) {
      if (ch == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        cur += '"';
        ++k;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"' && trim(cur).empty()) {
      cur.clear();
      quoted = was_quoted = true;
    } else if (ch == ',') {
      out.emplace_back(was_quoted ? cur : std::string(trim(cur)));
      cur.clear();
      was_quoted = false;
    } else {
      cur += ch;
    }
  }
  out.emplace_back(was_quoted ? cur : std::string(trim(cur)));
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

/// Whole-field parse; accepts an optional leading '+', "nan" and "inf".
inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

/// Shortest representation that parses back to the same double.
inline std::string exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fixed6(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

}  // namespace detail

/// Numeric table read from a headered CSV file.
struct DataTable {
  std::string source = "<input>";
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<int> lines;  // file line number of each row

  int rows_count() const { return static_cast<int>(rows.size()); }

  bool has(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }

  int column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    std::string have;
    for (const auto& h : header) have += (have.empty() ? "" : ", ") + h;
    throw ConfigError(source + ": missing column '" + name + "' (columns: " + have + ")");
  }

  VectorXd values(const std::string& name) const {
    const int j = column(name);
    VectorXd v(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) v(i) = rows[i][j];
    return v;
  }
};

inline DataTable read_csv(std::istream& in, const std::string& source = "<input>") {
  DataTable t;
  t.source = source;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (!have_header) {
      for (const auto& f : fields) {
        if (f.empty()) throw ConfigError(source + ": line " + std::to_string(lineno) + ": empty column name");
        t.header.push_back(f);
      }
      have_header = true;
      continue;
    }
    const std::string where = source + ": row " + std::to_string(t.rows.size() + 1) + " (line " +
                              std::to_string(lineno) + ")";
    if (fields.size() != t.header.size())
      throw ConfigError(where + ": expected " + std::to_string(t.header.size()) + " fields, found " +
                        std::to_string(fields.size()));
    std::vector<double> row(fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (!detail::parse_double(fields[j], row[j]) || !std::isfinite(row[j]))
        throw ConfigError(where + ": column '" + t.header[j] + "': cannot parse '" +
                          fields[j] + "' as a finite number");
    }
    t.rows.push_back(std::move(row));
    t.lines.push_back(lineno);
  }
  if (!have_header) throw ConfigError(source + ": no header line");
  if (t.rows.empty()) throw ConfigError(source + ": no data rows");
  return t;
}

inline DataTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open data file '" + path + "'");
  return read_csv(in, path);
}

// ---------------------------------------------------------------------------
// Fit reports

/// One value of a fit report. kind is one of estimate, se, bias, converged,
/// iterations, loglik, aic, bic, aicc, n, p.
struct ReportRow {
  std::string kind;
  std::string name;
  std::string estimator;
  double value = 0.0;

  bool operator==(const ReportRow&) const = default;
};

inline std::vector<ReportRow> fit_report_rows(const ModelSpec& model, const FitResult& res) {
  std::vector<ReportRow> rows;
  rows.push_back({"n", "", "", static_cast<double>(res.n)});
  rows.push_back({"p", "", "", static_cast<double>(res.p)});
  for (Estimator e : {Estimator::MLE, Estimator::BC, Estimator::BR}) {
    const auto& est = res.get(e);
    if (!est) continue;
    const std::string en = estimator_name(e);
    rows.push_back({"converged", "", en, est->converged ? 1.0 : 0.0});
    rows.push_back({"iterations", "", en, static_cast<double>(est->iterations)});
    if (est->theta.size() != model.p()) continue;
    for (int r = 0; r < model.p(); ++r) {
      rows.push_back({"estimate", model.parameter_name(r), en, est->theta(r)});
      const double se = est->se.size() == model.p() ? est->se(r) : std::numeric_limits<double>::quiet_NaN();
      rows.push_back({"se", model.parameter_name(r), en, se});
    }
  }
  if (res.bias.size() == model.p())
    for (int r = 0; r < model.p(); ++r) rows.push_back({"bias", model.parameter_name(r), "", res.bias(r)});
  rows.push_back({"loglik", "", "", res.loglik});
  rows.push_back({"aic", "", "", res.aic});
  rows.push_back({"bic", "", "", res.bic});
  rows.push_back({"aicc", "", "", res.aicc});
  return rows;
}

inline void write_fit_report_csv(const std::vector<ReportRow>& rows, std::ostream& os) {
  os << "kind,name,estimator,value\n";
  for (const auto& r : rows) os << r.kind << ',' << detail::csv_field(r.name) << ',' << r.estimator << ',' << detail::exact(r.value) << '\n';
}

inline std::vector<ReportRow> read_fit_report_csv(std::istream& in) {
  std::vector<ReportRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != 4) throw ConfigError("report line " + std::to_string(lineno) + ": expected 4 fields");
    ReportRow r{f[0], f[1], f[2], 0.0};
    if (!detail::parse_double(f[3], r.value))
      throw ConfigError("report line " + std::to_string(lineno) + ": bad value '" + std::string(f[3]) + "'");
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Estimates with standard errors in parentheses, one column per estimator.
inline void write_fit_report_text(const ModelSpec& model, const FitResult& res, std::ostream& os) {
  os << model.family().name() << " model, n = " << res.n << ", p = " << res.p << "\n";
  std::vector<Estimator> shown;
  for (Estimator e : {Estimator::MLE, Estimator::BC, Estimator::BR})
    if (res.get(e)) shown.push_back(e);
  const int w = 26;
  os << std::left << std::setw(14) << "parameter";
  for (Estimator e : shown) os << std::right << std::setw(w) << estimator_name(e);
  if (res.bias.size() == model.p()) os << std::right << std::setw(14) << "bias";
  os << "\n";
  for (int r = 0; r < model.p(); ++r) {
    os << std::left << std::setw(14) << model.parameter_name(r);
    for (Estimator e : shown) {
      const auto& est = *res.get(e);
      std::string cell = "-";
      if (est.theta.size() == model.p()) {
        cell = detail::fixed6(est.theta(r));
        if (est.se.size() == model.p()) cell += " (" + detail::fixed6(est.se(r)) + ")";
      }
      os << std::right << std::setw(w) << cell;
    }
    if (res.bias.size() == model.p()) os << std::right << std::setw(14) << detail::fixed6(res.bias(r));
    os << "\n";
  }
  os << "log-likelihood " << detail::fixed6(res.loglik) << "  AIC " << detail::fixed6(res.aic) << "  BIC "
     << detail::fixed6(res.bic) << "  AICc " << detail::fixed6(res.aicc) << "\n";
  for (Estimator e : shown) {
    const auto& est = *res.get(e);
    os << estimator_name(e) << ": " << (est.converged ? "converged" : "not converged");
    if (est.iterations > 0) os << " after " << est.iterations << " iterations";
    if (!est.message.empty()) os << " (" << est.message << ")";
    os << "\n";
  }
}

}  // namespace ellbias
