#include "distbalance/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "distbalance/error.hpp"

namespace distbalance {

namespace {

constexpr double kCollinear = 1.0 - 1e-10;
constexpr double kDivergedDual = 1e3;

bool is_constant(const Eigen::Ref<const Vector>& col) {
  const double hi = col.maxCoeff();
  const double lo = col.minCoeff();
  return hi - lo <= 1e-14 * std::max(1.0, std::abs(hi));
}

std::vector<int> complement(const std::vector<int>& dropped, int m) {
  std::vector<int> kept;
  for (int j = 0; j < m; ++j) {
    if (!std::binary_search(dropped.begin(), dropped.end(), j)) kept.push_back(j);
  }
  return kept;
}

Matrix select_columns(const Matrix& m, const std::vector<int>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = m.col(cols[j]);
  return out;
}

Vector select(const Vector& v, const std::vector<int>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out[j] = v[idx[j]];
  return out;
}

double max_residual(const Matrix& a, const Vector& w, const Vector& t) {
  if (a.cols() == 0) return 0.0;
  return (a.transpose() * w - t).cwiseAbs().maxCoeff();
}

}  // namespace

void ConstraintSystem::validate() const {
  if (matrix.rows() == 0) throw Error(ErrorKind::input, "constraint system has no units");
  if (targets.size() != matrix.cols()) {
    throw Error(ErrorKind::input, "target count does not match constraint columns");
  }
  if (base_weights.size() != matrix.rows()) {
    throw Error(ErrorKind::input, "base weight count does not match units");
  }
  if (!matrix.allFinite() || !targets.allFinite()) {
    throw Error(ErrorKind::input, "constraint system contains non-finite values");
  }
  if (!base_weights.allFinite() || (base_weights.array() <= 0.0).any()) {
    throw Error(ErrorKind::input, "base weights must be strictly positive");
  }
}

std::vector<int> redundant_columns(const Matrix& matrix, bool affine) {
  const Eigen::Index m = matrix.cols();
  std::vector<int> dropped;
  std::vector<Vector> kept_unit;  // normalised kept columns
  bool have_constant = false;
  for (Eigen::Index j = 0; j < m; ++j) {
    Vector col = matrix.col(j);
    if (is_constant(col)) {
      if (affine || have_constant) {
        dropped.push_back(static_cast<int>(j));
      } else {
        have_constant = true;
      }
      continue;
    }
    if (affine) col.array() -= col.mean();
    const double norm = col.norm();
    if (!(norm > 0.0)) {
      dropped.push_back(static_cast<int>(j));
      continue;
    }
    col /= norm;
    bool duplicate = false;
    for (const auto& u : kept_unit) {
      const double c = u.dot(col);
      if ((affine && std::abs(c) > kCollinear) || (!affine && c > kCollinear)) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) {
      dropped.push_back(static_cast<int>(j));
    } else {
      kept_unit.push_back(std::move(col));
    }
  }
  return dropped;
}

WeightSolution linear_calibrate(const ConstraintSystem& system) {
  system.validate();
  const auto& a = system.matrix;
  const auto& d = system.base_weights;
  const int m = static_cast<int>(a.cols());

  WeightSolution out;
  out.dropped_columns = redundant_columns(a, false);
  const auto kept = complement(out.dropped_columns, m);
  const Matrix ak = select_columns(a, kept);
  const Vector tk = select(system.targets, kept);

  out.duals = Vector::Zero(m);
  if (kept.empty()) {
    out.weights = d;
  } else {
    const Matrix scaled = d.cwiseSqrt().asDiagonal() * ak;
    Eigen::ColPivHouseholderQR<Matrix> qr(scaled);
    qr.setThreshold(1e-10);
    if (qr.rank() < ak.cols()) {
      std::ostringstream msg;
      msg << "constraint system is rank deficient; offending columns:";
      const auto& perm = qr.colsPermutation().indices();
      for (Eigen::Index i = qr.rank(); i < ak.cols(); ++i) msg << ' ' << kept[perm[i]];
      throw Error(ErrorKind::singular, msg.str());
    }
    const Matrix gram = ak.transpose() * d.asDiagonal() * ak;
    const Vector gap = tk - ak.transpose() * d;
    const Vector lambda = gram.colPivHouseholderQr().solve(gap);
    out.weights = d + d.cwiseProduct(ak * lambda);
    for (std::size_t j = 0; j < kept.size(); ++j) out.duals[kept[j]] = lambda[j];
  }

  out.iterations = 1;
  out.residual_norm = max_residual(a, out.weights, system.targets);
  const Vector resid = a.transpose() * out.weights - system.targets;
  for (int j = 0; j < m; ++j) {
    if (std::abs(resid[j]) > 1e-8 * std::max(1.0, std::abs(system.targets[j]))) {
      const bool was_dropped = std::binary_search(out.dropped_columns.begin(),
                                                  out.dropped_columns.end(), j);
      std::ostringstream msg;
      msg << "constraint " << j << " not reproduced (residual " << resid[j] << ")";
      throw Error(was_dropped ? ErrorKind::infeasible : ErrorKind::singular, msg.str());
    }
  }
  out.converged = true;
  return out;
}

WeightSolution entropy_calibrate(const ConstraintSystem& system, EntropyOptions options) {
  system.validate();
  const auto& a = system.matrix;
  const auto& t = system.targets;
  const auto& d = system.base_weights;
  const Eigen::Index n = a.rows();
  const int m = static_cast<int>(a.cols());

  WeightSolution out;
  out.dropped_columns = redundant_columns(a, true);
  const auto kept = complement(out.dropped_columns, m);

  // A constant column is reproduced by the normalisation only if its target
  // equals the constant.
  for (int j : out.dropped_columns) {
    if (is_constant(a.col(j)) &&
        std::abs(a(0, j) - t[j]) > options.tol * std::max(1.0, std::abs(t[j]))) {
      std::ostringstream msg;
      msg << "constant constraint column " << j << " cannot reach target " << t[j];
      throw Error(ErrorKind::infeasible, msg.str());
    }
  }

  // Centre on the targets and scale to unit spread: the dual then minimises
  // log sum_k d_k exp(g_k' lambda).
  const int k = static_cast<int>(kept.size());
  Matrix g(n, k);
  Vector spread(k);
  for (int j = 0; j < k; ++j) {
    const auto col = a.col(kept[j]);
    const double mean = col.mean();
    spread[j] = std::sqrt((col.array() - mean).square().mean());
    g.col(j) = (col.array() - t[kept[j]]) / spread[j];
    const double lo = g.col(j).minCoeff();
    const double hi = g.col(j).maxCoeff();
    if (!(lo < -1e-12 && hi > 1e-12)) {
      std::ostringstream msg;
      msg << "target " << t[kept[j]] << " of constraint " << kept[j]
          << " lies outside the range reachable with positive weights ["
          << col.minCoeff() << ", " << col.maxCoeff() << "]";
      throw Error(ErrorKind::infeasible, msg.str());
    }
  }

  const Vector log_d = d.array().log();
  Vector lambda = Vector::Zero(k);
  Vector w(n);
  auto evaluate = [&](const Vector& lam, Vector& weights) {
    Vector eta = log_d;
    if (k > 0) eta.noalias() += g * lam;
    const double top = eta.maxCoeff();
    weights = (eta.array() - top).exp();
    const double z = weights.sum();
    weights /= z;
    return top + std::log(z);
  };
  auto scaled_residual = [&](const Vector& weights) -> Vector {
    if (k == 0) return Vector::Zero(0);
    return g.transpose() * weights;
  };
  auto done = [&](const Vector& grad, const Vector& weights) {
    if (k > 0 && grad.cwiseAbs().maxCoeff() > options.tol) return false;
    return max_residual(a, weights, t) <= options.tol;
  };

  double f = evaluate(lambda, w);
  Vector grad = scaled_residual(w);
  int iter = 0;
  bool converged = done(grad, w);
  Vector trial_w(n);
  while (!converged && iter < options.max_iter) {
    ++iter;
    Matrix hess = g.transpose() * w.asDiagonal() * g;
    hess.noalias() -= grad * grad.transpose();

    Vector step;
    double ridge = 0.0;
    const double base_ridge = 1e-12 * std::max(1.0, hess.trace() / k);
    for (int attempt = 0; attempt < 30; ++attempt) {
      Matrix damped = hess;
      damped.diagonal().array() += ridge;
      Eigen::LDLT<Matrix> ldlt(damped);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        step = ldlt.solve(-grad);
        if (step.allFinite() && step.dot(grad) < 0.0) break;
      }
      ridge = ridge == 0.0 ? base_ridge : ridge * 100.0;
      step.resize(0);
    }
    if (step.size() == 0) step = -grad;

    const double slope = step.dot(grad);
    bool accepted = false;
    // Below rounding level of f the sufficient-decrease test is meaningless;
    // the gradient decides instead.
    if (-slope > 1e-13 * std::max(1.0, std::abs(f))) {
      double s = 1.0;
      for (int halving = 0; halving < 60; ++halving) {
        const Vector trial = lambda + s * step;
        const double ft = evaluate(trial, trial_w);
        if (std::isfinite(ft) && ft <= f + 1e-4 * s * slope) {
          lambda = trial;
          f = ft;
          w = trial_w;
          accepted = true;
          break;
        }
        s *= 0.5;
      }
    }
    if (!accepted) {
      const Vector trial = lambda + step;
      const double ft = evaluate(trial, trial_w);
      const Vector tg = scaled_residual(trial_w);
      if (!std::isfinite(ft) || tg.norm() >= grad.norm()) break;
      lambda = trial;
      f = ft;
      w = trial_w;
    }
    // Weights spanning more than exp(+-700) mean the targets are out of reach.
    if (lambda.cwiseAbs().maxCoeff() > kDivergedDual) break;
    grad = scaled_residual(w);
    converged = done(grad, w);
  }

  out.weights = w;
  out.iterations = iter;
  out.residual_norm = max_residual(a, w, t);
  out.duals = Vector::Zero(m);
  for (int j = 0; j < k; ++j) out.duals[kept[j]] = lambda[j] / spread[j];

  if (!converged) {
    const double ess = 1.0 / w.squaredNorm();
    const double dual_size = k > 0 ? lambda.cwiseAbs().maxCoeff() : 0.0;
    std::ostringstream msg;
    if (dual_size > kDivergedDual || ess < 1.5) {
      msg << "calibration targets appear infeasible (dual norm " << dual_size
          << ", effective sample size " << ess << ")";
      throw Error(ErrorKind::infeasible, msg.str());
    }
    msg << "entropy calibration did not converge after " << iter
        << " iterations (residual " << out.residual_norm << ")";
    throw ConvergenceError(msg.str(), out.residual_norm, iter);
  }

  // Dropped collinear columns must hold at the solution as well.
  const Vector resid = a.transpose() * w - t;
  for (int j : out.dropped_columns) {
    if (std::abs(resid[j]) > std::max(options.tol, 1e-6 * std::abs(t[j]))) {
      std::ostringstream msg;
      msg << "redundant constraint " << j << " is inconsistent with the others (residual "
          << resid[j] << ")";
      throw Error(ErrorKind::infeasible, msg.str());
    }
  }
  out.converged = true;
  return out;
}

double kl_divergence(const Vector& weights, const Vector& base_weights) {
  const double ws = weights.sum();
  const double ds = base_weights.sum();
  double kl = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    const double v = weights[k] / ws;
    if (v > 0.0) kl += v * std::log(v / (base_weights[k] / ds));
  }
  return kl;
}

}  // namespace distbalance
