#include "distbalance/deb.hpp"

#include <optional>
#include <sstream>

#include "distbalance/error.hpp"

namespace distbalance {

DebSystem build_deb_system(const ObservationalDataset& data, const BalanceSpec& spec) {
  data.validate();
  const auto resolved = resolve(data, spec);
  const auto treated = data.treated_rows();
  const auto controls = data.control_rows();
  const double n1 = static_cast<double>(treated.size());
  const auto n0 = static_cast<Eigen::Index>(controls.size());

  DebSystem out;
  out.control_rows = controls;
  out.treated_count = static_cast<int>(treated.size());
  out.warnings = resolved.warnings;

  const auto m = static_cast<Eigen::Index>(resolved.mean_columns.size() + resolved.quantiles.size());
  auto& sys = out.system;
  sys.matrix.resize(n0, m);
  sys.targets.resize(m);
  sys.base_weights = Vector(n0);
  const Vector base = data.base();
  for (Eigen::Index k = 0; k < n0; ++k) sys.base_weights[k] = base[controls[k]];

  Eigen::Index col = 0;
  for (int j : resolved.mean_columns) {
    double mean = 0.0;
    for (int r : treated) mean += data.covariates(r, j);
    mean /= n1;
    for (Eigen::Index k = 0; k < n0; ++k) sys.matrix(k, col) = data.covariates(controls[k], j);
    sys.targets[col] = mean;
    out.columns.push_back({ColumnKind::mean, data.name(j), j, 0.0, mean});
    ++col;
  }

  // Sorting is shared by all orders of one covariate.
  int cached_column = -1;
  std::optional<SortedColumn> treated_col;
  std::optional<SortedColumn> control_col;
  for (const auto& q : resolved.quantiles) {
    if (q.column != cached_column) {
      treated_col.emplace(gather(data.covariates, q.column, treated));
      control_col.emplace(gather(data.covariates, q.column, controls));
      cached_column = q.column;
    }
    const double target = sample_quantile(*treated_col, q.alpha);
    AVector av;
    try {
      av = build_a_vector(*control_col, target, {q.alpha, spec.variant, spec.logistic_slope}, n1);
    } catch (const Error& e) {
      std::ostringstream msg;
      msg << "covariate '" << data.name(q.column) << "' at order " << q.alpha << ": " << e.what();
      throw Error(e.kind(), msg.str());
    }
    sys.matrix.col(col) = av.entries;
    sys.targets[col] = q.alpha / n1;
    out.columns.push_back({ColumnKind::quantile, data.name(q.column), q.column, q.alpha, target});
    ++col;
  }
  return out;
}

Vector DebResult::control_weights(int units) const {
  Vector full = Vector::Zero(units);
  for (std::size_t k = 0; k < system.control_rows.size(); ++k) {
    full[system.control_rows[k]] = solution.weights[static_cast<Eigen::Index>(k)];
  }
  return full;
}

DebResult deb_weights(const ObservationalDataset& data, const BalanceSpec& spec,
                      EntropyOptions options) {
  DebResult out;
  out.system = build_deb_system(data, spec);
  out.solution = entropy_calibrate(out.system.system, options);
  return out;
}

}  // namespace distbalance
