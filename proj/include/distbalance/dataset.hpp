#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace distbalance {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Observational sample: treatment indicator, covariates, optional outcome
/// and base weights. Rows are units, covariate columns are addressed by
/// index or by name.
struct ObservationalDataset {
  std::vector<int> treatment;
  Matrix covariates;
  std::vector<std::string> covariate_names;
  std::optional<Vector> outcome;
  Vector base_weights;

  /// Throws ErrorKind::input when the invariants do not hold: matching
  /// lengths, binary treatment with both groups present, finite covariates,
  /// strictly positive base weights. Empty covariate names default to
  /// X1..Xp; an empty base weight vector means uniform weights.
  void validate() const;

  /// Base weights, ones when none were given.
  Vector base() const;
  std::string name(int column) const;

  int units() const { return static_cast<int>(treatment.size()); }
  int treated_count() const;
  int control_count() const { return units() - treated_count(); }

  std::vector<int> treated_rows() const;
  std::vector<int> control_rows() const;

  int column_index(const std::string& column_name) const;
  bool is_binary_column(int column) const;
};

/// Gathers the given rows of one covariate column.
std::vector<double> gather(const Matrix& m, int column, const std::vector<int>& rows);
std::vector<double> gather(const Vector& v, const std::vector<int>& rows);

}  // namespace distbalance
