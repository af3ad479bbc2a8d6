#pragma once

#include "distbalance/dataset.hpp"
#include "distbalance/dps.hpp"

namespace distbalance {

struct BalanceReport {
  double cvm = 0.0;
  double ks = 0.0;
  Vector mean_gaps;  // weighted treated mean minus weighted control mean
};

/// E_n[(w1 - w0) 1{X <= x}] at x = row `point` of `covariates`, with the
/// weights exactly as given and a componentwise comparison.
double dist_imbalance(int point, const Matrix& covariates, const PsWeights& weights);

/// Joint-CDF imbalance statistics over all sample points. Each group's
/// weights are rescaled to mean one across the sample, so DistImb is the
/// difference of the weighted group CDFs, then multiplied by sqrt(n).
class BalanceEvaluator {
 public:
  explicit BalanceEvaluator(const Matrix& covariates);

  BalanceReport evaluate(const PsWeights& weights) const;

  /// sqrt(n) * DistImb at every sample point.
  Vector scaled_imbalance(const PsWeights& weights) const;

 private:
  Matrix covariates_;
  Matrix dominance_;  // (j, k) = 1 if row k <= row j componentwise
};

BalanceReport balance_statistics(const Matrix& covariates, const PsWeights& weights);

}  // namespace distbalance
