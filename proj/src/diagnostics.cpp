#include "distbalance/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "distbalance/error.hpp"

namespace distbalance {

namespace {

bool dominated(const Matrix& x, Eigen::Index k, Eigen::Index j) {
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    if (x(k, c) > x(j, c)) return false;
  }
  return true;
}

void check(const Matrix& covariates, const PsWeights& w) {
  if (w.treated.size() != covariates.rows() || w.control.size() != covariates.rows()) {
    throw Error(ErrorKind::input, "weight length does not match covariates");
  }
}

}  // namespace

double dist_imbalance(int point, const Matrix& covariates, const PsWeights& weights) {
  check(covariates, weights);
  const Eigen::Index n = covariates.rows();
  double sum = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (dominated(covariates, k, point)) sum += weights.treated[k] - weights.control[k];
  }
  return sum / double(n);
}

BalanceEvaluator::BalanceEvaluator(const Matrix& covariates)
    : covariates_(covariates), dominance_(covariates.rows(), covariates.rows()) {
  const Eigen::Index n = covariates.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) dominance_(j, k) = dominated(covariates, k, j) ? 1.0 : 0.0;
  }
}

Vector BalanceEvaluator::scaled_imbalance(const PsWeights& weights) const {
  check(covariates_, weights);
  const double n = double(covariates_.rows());
  const double st = weights.treated.sum();
  const double sc = weights.control.sum();
  if (!(st > 0.0 && sc > 0.0)) throw Error(ErrorKind::invalid_weights, "group weights sum to zero");
  // Mean-one weights: (1/n) sum (n w~1 - n w~0) 1{.} = sum (w~1 - w~0) 1{.}
  const Vector diff = weights.treated / st - weights.control / sc;
  return std::sqrt(n) * (dominance_ * diff);
}

BalanceReport BalanceEvaluator::evaluate(const PsWeights& weights) const {
  const Vector imb = scaled_imbalance(weights);
  BalanceReport r;
  r.cvm = std::sqrt(imb.squaredNorm() / double(imb.size()));
  r.ks = imb.cwiseAbs().maxCoeff();
  const Vector wt = weights.treated / weights.treated.sum();
  const Vector wc = weights.control / weights.control.sum();
  r.mean_gaps = covariates_.transpose() * (wt - wc);
  return r;
}

BalanceReport balance_statistics(const Matrix& covariates, const PsWeights& weights) {
  check(covariates, weights);
  const Eigen::Index n = covariates.rows();
  const double st = weights.treated.sum();
  const double sc = weights.control.sum();
  if (!(st > 0.0 && sc > 0.0)) throw Error(ErrorKind::invalid_weights, "group weights sum to zero");
  const Vector diff = weights.treated / st - weights.control / sc;
  // Streams over evaluation points instead of storing the n x n dominance
  // matrix.
  BalanceReport r;
  double ss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (dominated(covariates, k, j)) sum += diff[k];
    }
    const double scaled = std::sqrt(double(n)) * sum;
    ss += scaled * scaled;
    r.ks = std::max(r.ks, std::abs(scaled));
  }
  r.cvm = std::sqrt(ss / double(n));
  r.mean_gaps = covariates.transpose() * diff;
  return r;
}

}  // namespace distbalance
