#pragma once

#include <string>
#include <vector>

#include "distbalance/balance_spec.hpp"

namespace distbalance {

/// Propensity design [1 | X | A]: intercept, raw mean-balanced covariates
/// and quantile columns. Treated rows of A are bracketed within the treated
/// sample, control rows within the control sample, both against the
/// treatment-group quantile and scaled by 1/n1.
struct AugmentedDesign {
  Matrix matrix;
  std::vector<ConstraintColumn> columns;
  int treated_count = 0;
  std::vector<std::string> warnings;
};

AugmentedDesign build_augmented_design(const ObservationalDataset& data, const BalanceSpec& spec);

enum class Identification { just, over };

struct PropensityFit {
  Vector gamma;  // coefficients on the design columns
  Vector fitted_ps;
  Identification identification = Identification::just;
  double gmm_objective = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<int> dropped_columns;
};

struct DpsOptions {
  double tol = 1e-10;
  int max_iter = 200;
};

/// Logistic propensity model whose coefficients solve the covariate
/// balancing moment conditions on the design columns. `just` solves the
/// balance conditions exactly; `over` adds the logistic score conditions and
/// runs two-step GMM.
PropensityFit fit_dps(const AugmentedDesign& design, const std::vector<int>& treatment,
                      Identification identification, DpsOptions options = {});

/// Inverse probability weights, Hajek-normalised within each group. Both
/// vectors are full length and zero outside their own group.
struct PsWeights {
  Vector treated;
  Vector control;
};

PsWeights ps_weights(const Vector& propensity, const std::vector<int>& treatment);
inline PsWeights ps_weights(const PropensityFit& fit, const std::vector<int>& treatment) {
  return ps_weights(fit.fitted_ps, treatment);
}

/// Uniform within-group weights (no adjustment).
PsWeights uniform_weights(const std::vector<int>& treatment);

}  // namespace distbalance
