#pragma once

#include <vector>

#include "distbalance/dataset.hpp"

namespace distbalance {

/// Calibration equations matrix' * w = targets with base weights d.
struct ConstraintSystem {
  Matrix matrix;  // units x constraints
  Vector targets;
  Vector base_weights;

  void validate() const;
};

struct WeightSolution {
  Vector weights;
  Vector duals;  // one per constraint column; zero for pruned columns
  double residual_norm = 0.0;  // max |matrix' * w - targets|
  int iterations = 0;
  bool converged = false;
  std::vector<int> dropped_columns;
};

struct EntropyOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

/// Chi-square distance calibration, closed form. Weights may be negative.
WeightSolution linear_calibrate(const ConstraintSystem& system);

/// Kullback-Leibler calibration with the normalisation sum(w) = 1 always
/// appended. Weights are d * exp(matrix * duals) / Z.
WeightSolution entropy_calibrate(const ConstraintSystem& system, EntropyOptions options = {});

/// sum_k w_k log(w_k / d_k) with both vectors normalised to unit mass.
double kl_divergence(const Vector& weights, const Vector& base_weights);

/// Columns that are constant or (nearly) collinear with an earlier column.
/// With `affine` set, collinearity is judged on centred columns (an
/// intercept is implied), otherwise on raw columns.
std::vector<int> redundant_columns(const Matrix& matrix, bool affine);

}  // namespace distbalance
