#include "distbalance/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "distbalance/error.hpp"

namespace distbalance {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool needs_quotes(const std::string& s) {
  return s.find_first_of(",\"\r\n") != std::string::npos;
}

std::string quote(const std::string& s) {
  if (!needs_quotes(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

int CsvTable::find(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable parse_csv(std::istream& in, const std::string& source) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::size_t pos = 0;
  if (text.rfind("\xEF\xBB\xBF", 0) == 0) pos = 3;

  std::vector<std::vector<std::string>> records;
  std::vector<int> starts;
  int line = 1;
  while (pos < text.size()) {
    std::vector<std::string> record;
    std::string field;
    const int start = line;
    bool quoted = false;
    bool was_quoted = false;
    bool end_of_record = false;
    while (pos < text.size() && !end_of_record) {
      const char c = text[pos++];
      if (quoted) {
        if (c == '"') {
          if (pos < text.size() && text[pos] == '"') {
            field += '"';
            ++pos;
          } else {
            quoted = false;
          }
        } else {
          if (c == '\n') ++line;
          field += c;
        }
        continue;
      }
      switch (c) {
        case '"':
          if (!trim(field).empty()) {
            throw Error(ErrorKind::input, source + ": line " + std::to_string(line) +
                                              ": stray quote inside an unquoted field");
          }
          field.clear();
          quoted = true;
          was_quoted = true;
          break;
        case ',':
          record.push_back(was_quoted ? field : trim(field));
          field.clear();
          was_quoted = false;
          break;
        case '\r':
          break;
        case '\n':
          ++line;
          end_of_record = true;
          break;
        default:
          field += c;
      }
    }
    if (quoted) {
      throw Error(ErrorKind::input,
                  source + ": line " + std::to_string(start) + ": unterminated quoted field");
    }
    record.push_back(was_quoted ? field : trim(field));
    // Blank lines carry no record.
    if (record.size() == 1 && record[0].empty() && !was_quoted) continue;
    records.push_back(std::move(record));
    starts.push_back(start);
  }

  if (records.empty()) throw Error(ErrorKind::input, source + ": missing header row");
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (table.header[j].empty()) {
      throw Error(ErrorKind::input,
                  source + ": header column " + std::to_string(j + 1) + " has no name");
    }
    for (std::size_t i = 0; i < j; ++i) {
      if (table.header[i] == table.header[j]) {
        throw Error(ErrorKind::input, source + ": duplicate column '" + table.header[j] + "'");
      }
    }
  }
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      std::ostringstream msg;
      msg << source << ": line " << starts[r] << ": expected " << table.header.size()
          << " fields, found " << records[r].size();
      throw Error(ErrorKind::input, msg.str());
    }
    table.rows.push_back(std::move(records[r]));
    table.lines.push_back(starts[r]);
  }
  return table;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::input, "cannot open '" + path + "'");
  return parse_csv(in, path);
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) value = 0.0;  // drop the sign of negative zero
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_number(const std::string& text) {
  std::string_view s = text;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (j) out << ',';
      out << quote(fields[j]);
    }
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

ObservationalDataset to_dataset(const CsvTable& table, const DatasetColumns& columns) {
  auto require = [&](const std::string& name, const char* role) {
    const int j = table.find(name);
    if (j < 0) {
      throw Error(ErrorKind::input, std::string(role) + " column '" + name + "' not found");
    }
    return j;
  };
  const int t_col = require(columns.treatment, "treatment");
  const int y_col = columns.outcome ? require(*columns.outcome, "outcome") : -1;
  const int w_col = columns.weight ? require(*columns.weight, "weight") : -1;

  std::vector<int> x_cols;
  if (columns.covariates.empty()) {
    for (int j = 0; j < static_cast<int>(table.header.size()); ++j) {
      if (j != t_col && j != y_col && j != w_col) x_cols.push_back(j);
    }
  } else {
    for (const auto& name : columns.covariates) x_cols.push_back(require(name, "covariate"));
  }

  const auto n = static_cast<Eigen::Index>(table.rows.size());
  ObservationalDataset data;
  data.treatment.resize(table.rows.size());
  data.covariates.resize(n, static_cast<Eigen::Index>(x_cols.size()));
  for (int j : x_cols) data.covariate_names.push_back(table.header[j]);
  if (y_col >= 0) data.outcome = Vector(n);
  if (w_col >= 0) data.base_weights.resize(n);

  auto number = [&](std::size_t r, int j) {
    const auto v = parse_number(table.rows[r][j]);
    if (!v) {
      std::ostringstream msg;
      msg << "line " << table.lines[r] << ", column '" << table.header[j] << "': cannot parse '"
          << table.rows[r][j] << "' as a finite number";
      throw Error(ErrorKind::input, msg.str());
    }
    return *v;
  };

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    const double t = number(r, t_col);
    if (t != 0.0 && t != 1.0) {
      std::ostringstream msg;
      msg << "line " << table.lines[r] << ", column '" << table.header[t_col]
          << "': treatment must be 0 or 1, found '" << table.rows[r][t_col] << "'";
      throw Error(ErrorKind::input, msg.str());
    }
    data.treatment[r] = static_cast<int>(t);
    for (std::size_t c = 0; c < x_cols.size(); ++c) {
      data.covariates(i, static_cast<Eigen::Index>(c)) = number(r, x_cols[c]);
    }
    if (y_col >= 0) (*data.outcome)[i] = number(r, y_col);
    if (w_col >= 0) data.base_weights[i] = number(r, w_col);
  }
  data.validate();
  return data;
}

void write_dataset(std::ostream& out, const ObservationalDataset& data,
                   const std::string& treatment_name, const std::string& outcome_name) {
  std::vector<std::string> header{treatment_name};
  if (data.outcome) header.push_back(outcome_name);
  for (int j = 0; j < data.covariates.cols(); ++j) header.push_back(data.name(j));
  std::vector<std::vector<std::string>> rows;
  rows.reserve(data.treatment.size());
  for (int i = 0; i < data.units(); ++i) {
    std::vector<std::string> row{std::to_string(data.treatment[i])};
    if (data.outcome) row.push_back(format_number((*data.outcome)[i]));
    for (int j = 0; j < data.covariates.cols(); ++j) {
      row.push_back(format_number(data.covariates(i, j)));
    }
    rows.push_back(std::move(row));
  }
  write_csv(out, header, rows);
}

}  // namespace distbalance
