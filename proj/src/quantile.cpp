#include "distbalance/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "distbalance/error.hpp"

namespace distbalance {

namespace {

void check_weights(std::span<const double> weights, std::size_t n) {
  if (weights.size() != n) {
    std::ostringstream msg;
    msg << "weight vector has " << weights.size() << " entries, sample has " << n;
    throw Error(ErrorKind::invalid_weights, msg.str());
  }
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw Error(ErrorKind::invalid_weights, "weights must be finite and nonnegative");
    }
    total += w;
  }
  if (!(total > 0.0)) throw Error(ErrorKind::invalid_weights, "weights sum to zero");
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    std::ostringstream msg;
    msg << "quantile order " << alpha << " outside (0, 1)";
    throw Error(ErrorKind::domain, msg.str());
  }
}

}  // namespace

SortedColumn::SortedColumn(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw Error(ErrorKind::input, "empty sample column");
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorKind::input, "sample column contains non-finite values");
  }
  order_.resize(values_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::stable_sort(order_.begin(), order_.end(),
                   [this](int a, int b) { return values_[a] < values_[b]; });
}

SortedColumn::Bracket SortedColumn::bracket(double t) const {
  // First sorted position with value > t.
  auto it = std::upper_bound(order_.begin(), order_.end(), t,
                             [this](double v, int idx) { return v < values_[idx]; });
  Bracket b;
  if (it != order_.end()) b.upper = values_[*it];
  if (it != order_.begin()) b.lower = values_[*std::prev(it)];
  if (std::isfinite(b.lower) && std::isfinite(b.upper)) {
    b.beta = (t - b.lower) / (b.upper - b.lower);
  }
  return b;
}

double modified_heaviside(double t, double y, const SortedColumn& sample) {
  const auto b = sample.bracket(t);
  if (y <= b.lower) return 1.0;
  if (y == b.upper) return b.beta;
  return 0.0;
}

double interpolated_cdf(double t, const SortedColumn& values, std::span<const double> weights) {
  check_weights(weights, values.size());
  const auto b = values.bracket(t);
  double total = 0.0;
  double below = 0.0;
  const auto& v = values.values();
  for (std::size_t k = 0; k < v.size(); ++k) {
    total += weights[k];
    if (v[k] <= b.lower) {
      below += weights[k];
    } else if (v[k] == b.upper) {
      below += weights[k] * b.beta;
    }
  }
  return std::clamp(below / total, 0.0, 1.0);
}

double weighted_quantile(const SortedColumn& values, std::span<const double> weights, double alpha) {
  check_alpha(alpha);
  check_weights(weights, values.size());

  const auto& order = values.order();
  const auto& v = values.values();
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double level = alpha * total;

  // Walk the distinct values; `cum` is the mass at or below `prev`.
  std::size_t i = 0;
  double prev = v[order[0]];
  double cum = 0.0;
  while (i < order.size() && v[order[i]] == prev) cum += weights[order[i++]];
  if (level <= cum) return prev;

  while (i < order.size()) {
    const double cur = v[order[i]];
    double mass = 0.0;
    while (i < order.size() && v[order[i]] == cur) mass += weights[order[i++]];
    if (cum + mass >= level && mass > 0.0) {
      const double frac = std::clamp((level - cum) / mass, 0.0, 1.0);
      return prev + frac * (cur - prev);
    }
    cum += mass;
    prev = cur;
  }
  return values.max();
}

double sample_quantile(const SortedColumn& values, double alpha) {
  const std::vector<double> ones(values.size(), 1.0);
  return weighted_quantile(values, ones, alpha);
}

double default_logistic_slope(const SortedColumn& column) {
  double spread = 0.0;
  if (column.size() > 1) {
    spread = sample_quantile(column, 0.75) - sample_quantile(column, 0.25);
    if (!(spread > 0.0)) {
      const auto& v = column.values();
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      spread = std::sqrt(ss / double(v.size() - 1));
    }
  }
  if (!(spread > 0.0)) return 1e6;
  return std::clamp(1000.0 / spread, 1e2, 1e8);
}

void validate(const QuantileSpec& spec) {
  check_alpha(spec.alpha);
  if (spec.variant == QuantileVariant::logistic && spec.logistic_slope < 0.0) {
    throw Error(ErrorKind::domain, "logistic slope must be positive");
  }
}

AVector build_a_vector(const SortedColumn& column, double target_quantile,
                       const QuantileSpec& spec, double scale) {
  validate(spec);
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorKind::domain, "a-vector scale must be positive");
  }
  if (!std::isfinite(target_quantile)) {
    throw Error(ErrorKind::domain, "target quantile must be finite");
  }

  const auto& v = column.values();
  AVector out;
  out.scale = scale;
  out.target_alpha = spec.alpha;
  out.entries.resize(static_cast<Eigen::Index>(v.size()));
  const double unit = 1.0 / scale;

  if (spec.variant == QuantileVariant::step) {
    const auto b = column.bracket(target_quantile);
    for (std::size_t k = 0; k < v.size(); ++k) {
      double h = 0.0;
      if (v[k] <= b.lower) {
        h = 1.0;
      } else if (v[k] == b.upper) {
        h = b.beta;
      }
      out.entries[static_cast<Eigen::Index>(k)] = unit * h;
    }
  } else {
    const double slope = spec.logistic_slope > 0.0 ? spec.logistic_slope
                                                   : default_logistic_slope(column);
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double z = 2.0 * slope * (target_quantile - v[k]);
      out.entries[static_cast<Eigen::Index>(k)] = unit / (1.0 + std::exp(-z));
    }
  }

  if (!(out.entries.maxCoeff() > 0.0)) {
    std::ostringstream msg;
    msg << "no sample support below quantile target " << target_quantile
        << " (sample minimum " << column.min() << ")";
    throw Error(ErrorKind::support, msg.str());
  }
  return out;
}

}  // namespace distbalance
