#pragma once

#include <limits>
#include <span>
#include <vector>

#include "distbalance/dataset.hpp"

namespace distbalance {

/// One sample column together with its ascending sort permutation.
class SortedColumn {
 public:
  explicit SortedColumn(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  const std::vector<int>& order() const { return order_; }
  double sorted(std::size_t i) const { return values_[order_[i]]; }
  double min() const { return sorted(0); }
  double max() const { return sorted(size() - 1); }

  /// Neighbouring order statistics around t: lower is the largest value
  /// <= t (or -inf), upper the smallest value > t (or +inf).
  struct Bracket {
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
    /// Interpolation fraction (t - lower) / (upper - lower); zero when t
    /// lies below the whole sample.
    double beta = 0.0;
  };
  Bracket bracket(double t) const;

 private:
  std::vector<double> values_;
  std::vector<int> order_;
};

enum class QuantileVariant { step, logistic };

struct QuantileSpec {
  double alpha = 0.5;
  QuantileVariant variant = QuantileVariant::step;
  // Steepness of the logistic approximation; <= 0 selects the data-driven
  // default (see default_logistic_slope).
  double logistic_slope = 0.0;
};

struct AVector {
  Vector entries;
  double scale = 1.0;
  double target_alpha = 0.5;
};

/// Interpolating Heaviside: 1 below the bracket, the interpolation fraction
/// at the upper bracket point, 0 above it.
double modified_heaviside(double t, double y, const SortedColumn& sample);

/// Weighted interpolated distribution function at t.
double interpolated_cdf(double t, const SortedColumn& values, std::span<const double> weights);

/// Inverse of interpolated_cdf: inf{t : cdf(t) >= alpha}, linear between
/// consecutive distinct order statistics.
double weighted_quantile(const SortedColumn& values, std::span<const double> weights, double alpha);

/// Same with unit weights.
double sample_quantile(const SortedColumn& values, double alpha);

/// 1000 / IQR clamped to [1e2, 1e8]; falls back to 1000 / SD, then 1e6.
double default_logistic_slope(const SortedColumn& column);

/// Calibration coefficients pinning the distribution function of `column`
/// at `target_quantile` to spec.alpha. Entries lie in [0, 1/scale].
AVector build_a_vector(const SortedColumn& column, double target_quantile,
                       const QuantileSpec& spec, double scale);

void validate(const QuantileSpec& spec);

}  // namespace distbalance
