#include <algorithm>
#include <cmath>
#include <sstream>

#include "distbalance/dataset.hpp"
#include "distbalance/error.hpp"

namespace distbalance {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::input: return "input";
    case ErrorKind::domain: return "domain";
    case ErrorKind::invalid_weights: return "invalid_weights";
    case ErrorKind::support: return "support";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::singular: return "singular";
    case ErrorKind::overlap: return "overlap";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::input:
    case ErrorKind::domain:
    case ErrorKind::invalid_weights:
      return 2;
    case ErrorKind::convergence:
    case ErrorKind::singular:
    case ErrorKind::overlap:
      return 3;
    case ErrorKind::support:
    case ErrorKind::infeasible:
      return 4;
  }
  return 1;
}

void ObservationalDataset::validate() const {
  const auto n = static_cast<Eigen::Index>(treatment.size());
  if (covariates.rows() != n) {
    std::ostringstream msg;
    msg << "covariate matrix has " << covariates.rows() << " rows, treatment has " << n;
    throw Error(ErrorKind::input, msg.str());
  }
  if (!covariate_names.empty() &&
      static_cast<Eigen::Index>(covariate_names.size()) != covariates.cols()) {
    throw Error(ErrorKind::input, "covariate name count does not match column count");
  }
  int treated = 0;
  for (int d : treatment) {
    if (d != 0 && d != 1) throw Error(ErrorKind::input, "treatment indicator must be 0 or 1");
    treated += d;
  }
  if (treated == 0 || treated == n) {
    throw Error(ErrorKind::input, "need at least one treated and one control unit");
  }
  if (!covariates.allFinite()) throw Error(ErrorKind::input, "covariates contain non-finite values");
  if (outcome) {
    if (outcome->size() != n) throw Error(ErrorKind::input, "outcome length does not match");
    if (!outcome->allFinite()) throw Error(ErrorKind::input, "outcome contains non-finite values");
  }
  if (base_weights.size() == 0) return;
  if (base_weights.size() != n) throw Error(ErrorKind::input, "base weight length does not match");
  if (!base_weights.allFinite() || (base_weights.array() <= 0.0).any()) {
    throw Error(ErrorKind::input, "base weights must be strictly positive");
  }
}

Vector ObservationalDataset::base() const {
  if (base_weights.size() == 0) return Vector::Ones(static_cast<Eigen::Index>(treatment.size()));
  return base_weights;
}

std::string ObservationalDataset::name(int column) const {
  if (covariate_names.empty()) return "X" + std::to_string(column + 1);
  return covariate_names[column];
}

int ObservationalDataset::treated_count() const {
  return static_cast<int>(std::count(treatment.begin(), treatment.end(), 1));
}

std::vector<int> ObservationalDataset::treated_rows() const {
  std::vector<int> rows;
  for (int k = 0; k < units(); ++k) {
    if (treatment[k] == 1) rows.push_back(k);
  }
  return rows;
}

std::vector<int> ObservationalDataset::control_rows() const {
  std::vector<int> rows;
  for (int k = 0; k < units(); ++k) {
    if (treatment[k] == 0) rows.push_back(k);
  }
  return rows;
}

int ObservationalDataset::column_index(const std::string& column_name) const {
  for (int j = 0; j < static_cast<int>(covariates.cols()); ++j) {
    if (name(j) == column_name) return j;
  }
  throw Error(ErrorKind::input, "unknown covariate '" + column_name + "'");
}

bool ObservationalDataset::is_binary_column(int column) const {
  for (Eigen::Index k = 0; k < covariates.rows(); ++k) {
    const double v = covariates(k, column);
    if (v != 0.0 && v != 1.0) return false;
  }
  return true;
}

std::vector<double> gather(const Matrix& m, int column, const std::vector<int>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(m(r, column));
  return out;
}

std::vector<double> gather(const Vector& v, const std::vector<int>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(v[r]);
  return out;
}

}  // namespace distbalance
