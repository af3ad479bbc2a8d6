#pragma once

#include <string>
#include <vector>

#include "distbalance/balance_spec.hpp"
#include "distbalance/calibration.hpp"

namespace distbalance {

/// Control-group constraint system: treatment means for the mean columns
/// and treatment-group quantile targets for the quantile columns.
struct DebSystem {
  ConstraintSystem system;
  std::vector<ConstraintColumn> columns;
  std::vector<int> control_rows;
  int treated_count = 0;
  std::vector<std::string> warnings;
};

DebSystem build_deb_system(const ObservationalDataset& data, const BalanceSpec& spec);

struct DebResult {
  WeightSolution solution;  // one weight per control unit, summing to one
  DebSystem system;

  /// Full-length weights: solution weights on control rows, zero elsewhere.
  Vector control_weights(int units) const;
};

DebResult deb_weights(const ObservationalDataset& data, const BalanceSpec& spec,
                      EntropyOptions options = {});

}  // namespace distbalance
