#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "distbalance/dataset.hpp"

namespace distbalance {

// Comma separated, header row required, optional RFC 4180 quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // source line where each row starts

  /// Index of a header entry, or -1.
  int find(const std::string& name) const;
};

CsvTable parse_csv(std::istream& in, const std::string& source = "<input>");
CsvTable read_csv(const std::string& path);

/// Shortest decimal text that reads back to the same double.
std::string format_number(double value);

/// Strict parse of a whole field; nullopt on anything but a finite number.
std::optional<double> parse_number(const std::string& text);

void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

struct DatasetColumns {
  std::string treatment = "treatment";
  std::optional<std::string> outcome;
  std::optional<std::string> weight;
  // Empty means every column not used above.
  std::vector<std::string> covariates;
};

ObservationalDataset to_dataset(const CsvTable& table, const DatasetColumns& columns);

/// Writes treatment, the outcome when present, then the covariates.
void write_dataset(std::ostream& out, const ObservationalDataset& data,
                   const std::string& treatment_name = "treatment",
                   const std::string& outcome_name = "outcome");

}  // namespace distbalance
