#include "distbalance/dps.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "distbalance/calibration.hpp"
#include "distbalance/error.hpp"

namespace distbalance {

AugmentedDesign build_augmented_design(const ObservationalDataset& data, const BalanceSpec& spec) {
  data.validate();
  const auto resolved = resolve(data, spec);
  const auto treated = data.treated_rows();
  const auto controls = data.control_rows();
  const double n1 = static_cast<double>(treated.size());
  const auto n = static_cast<Eigen::Index>(data.units());

  AugmentedDesign out;
  out.treated_count = static_cast<int>(treated.size());
  out.warnings = resolved.warnings;
  const auto cols =
      static_cast<Eigen::Index>(1 + resolved.mean_columns.size() + resolved.quantiles.size());
  out.matrix.resize(n, cols);
  out.matrix.col(0).setOnes();
  out.columns.push_back({ColumnKind::intercept, "(intercept)", -1, 0.0, 0.0});

  Eigen::Index col = 1;
  for (int j : resolved.mean_columns) {
    out.matrix.col(col++) = data.covariates.col(j);
    out.columns.push_back({ColumnKind::mean, data.name(j), j, 0.0, 0.0});
  }

  int cached = -1;
  std::optional<SortedColumn> treated_col;
  std::optional<SortedColumn> control_col;
  for (const auto& q : resolved.quantiles) {
    if (q.column != cached) {
      treated_col.emplace(gather(data.covariates, q.column, treated));
      control_col.emplace(gather(data.covariates, q.column, controls));
      cached = q.column;
    }
    const double target = sample_quantile(*treated_col, q.alpha);
    const QuantileSpec qs{q.alpha, spec.variant, spec.logistic_slope};
    try {
      const auto a1 = build_a_vector(*treated_col, target, qs, n1);
      const auto a0 = build_a_vector(*control_col, target, qs, n1);
      for (std::size_t k = 0; k < treated.size(); ++k) {
        out.matrix(treated[k], col) = a1.entries[static_cast<Eigen::Index>(k)];
      }
      for (std::size_t k = 0; k < controls.size(); ++k) {
        out.matrix(controls[k], col) = a0.entries[static_cast<Eigen::Index>(k)];
      }
    } catch (const Error& e) {
      std::ostringstream msg;
      msg << "covariate '" << data.name(q.column) << "' at order " << q.alpha << ": " << e.what();
      throw Error(e.kind(), msg.str());
    }
    out.columns.push_back({ColumnKind::quantile, data.name(q.column), q.column, q.alpha, target});
    ++col;
  }
  return out;
}

namespace {

constexpr double kOverlapEps = 1e-12;

// Design with the intercept first and the remaining columns centred and
// scaled; coefficients map back through `center` and `scale`.
struct Standardized {
  Matrix z;
  std::vector<int> source;  // design column of each z column
  Vector center;
  Vector scale;
  std::vector<int> dropped;
};

Standardized standardize(const Matrix& x) {
  Standardized s;
  const Eigen::Index n = x.rows();
  const Matrix rest = x.rightCols(x.cols() - 1);
  const auto redundant = redundant_columns(rest, true);
  s.source.push_back(0);
  for (Eigen::Index j = 0; j < rest.cols(); ++j) {
    if (std::binary_search(redundant.begin(), redundant.end(), static_cast<int>(j))) {
      s.dropped.push_back(static_cast<int>(j + 1));
    } else {
      s.source.push_back(static_cast<int>(j + 1));
    }
  }
  const auto k = static_cast<Eigen::Index>(s.source.size());
  s.z.resize(n, k);
  s.center = Vector::Zero(k);
  s.scale = Vector::Ones(k);
  s.z.col(0).setOnes();
  for (Eigen::Index j = 1; j < k; ++j) {
    const auto c = x.col(s.source[j]);
    s.center[j] = c.mean();
    s.scale[j] = std::sqrt((c.array() - s.center[j]).square().mean());
    s.z.col(j) = (c.array() - s.center[j]) / s.scale[j];
  }
  return s;
}

Vector to_design_coefficients(const Standardized& s, const Vector& theta, Eigen::Index cols) {
  Vector gamma = Vector::Zero(cols);
  double intercept = theta[0];
  for (Eigen::Index j = 1; j < theta.size(); ++j) {
    gamma[s.source[j]] = theta[j] / s.scale[j];
    intercept -= theta[j] * s.center[j] / s.scale[j];
  }
  gamma[0] = intercept;
  return gamma;
}

// Per-unit quantities of the logistic model at one coefficient vector.
struct Model {
  Vector eta;
  Vector p;
  Vector balance;        // D/p - (1-D)/(1-p)
  Vector balance_slope;  // -d balance / d eta
  Vector score;          // D - p
  Vector score_slope;    // p (1 - p)
};

Model evaluate(const Matrix& z, const Vector& d, const Vector& theta) {
  Model m;
  m.eta = z * theta;
  const auto n = m.eta.size();
  m.p.resize(n);
  m.balance.resize(n);
  m.balance_slope.resize(n);
  m.score.resize(n);
  m.score_slope.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = m.eta[i];
    const double p = e >= 0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
    m.p[i] = p;
    if (d[i] > 0.5) {
      const double en = std::exp(-e);
      m.balance[i] = 1.0 + en;
      m.balance_slope[i] = en;
    } else {
      const double ep = std::exp(e);
      m.balance[i] = -(1.0 + ep);
      m.balance_slope[i] = ep;
    }
    m.score[i] = d[i] - p;
    m.score_slope[i] = p * (1.0 - p);
  }
  return m;
}

Matrix weighted_gram(const Matrix& z, const Vector& w) {
  return z.transpose() * (z.array().colwise() * w.array()).matrix();
}

struct ConcaveResult {
  Vector theta;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
};

// Newton ascent with backtracking; `eval` returns objective, gradient and
// negative Hessian.
template <typename Eval>
ConcaveResult maximize_concave(Eval eval, Vector theta, double tol, int max_iter) {
  ConcaveResult r;
  Vector grad;
  Matrix neg_hess;
  double f = eval(theta, &grad, &neg_hess);
  for (; r.iterations < max_iter; ++r.iterations) {
    if (grad.cwiseAbs().maxCoeff() <= tol) {
      r.converged = true;
      break;
    }
    Vector step;
    double ridge = 0.0;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Matrix h = neg_hess;
      h.diagonal().array() += ridge;
      Eigen::LDLT<Matrix> ldlt(h);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        step = ldlt.solve(grad);
        if (step.allFinite() && step.dot(grad) > 0.0) break;
      }
      step.resize(0);
      ridge = ridge == 0.0 ? 1e-12 * std::max(1.0, neg_hess.trace()) : ridge * 100.0;
    }
    if (step.size() == 0) step = grad;
    const double slope = step.dot(grad);
    bool moved = false;
    Vector g2;
    Matrix h2;
    if (slope > 1e-13 * std::max(1.0, std::abs(f))) {
      double s = 1.0;
      for (int halving = 0; halving < 60; ++halving) {
        const Vector trial = theta + s * step;
        const double ft = eval(trial, &g2, &h2);
        if (std::isfinite(ft) && ft >= f + 1e-4 * s * slope) {
          theta = trial;
          f = ft;
          grad = g2;
          neg_hess = h2;
          moved = true;
          break;
        }
        s *= 0.5;
      }
    }
    if (!moved) {
      // Flat to rounding: accept the full step when it shrinks the gradient.
      const Vector trial = theta + step;
      const double ft = eval(trial, &g2, &h2);
      if (!std::isfinite(ft) || !g2.allFinite() || g2.norm() >= grad.norm()) break;
      theta = trial;
      f = ft;
      grad = g2;
      neg_hess = h2;
    }
  }
  r.theta = theta;
  r.grad_norm = grad.cwiseAbs().maxCoeff();
  if (!r.converged && r.grad_norm <= tol) r.converged = true;
  return r;
}

Vector logistic_mle(const Matrix& z, const Vector& d) {
  const double n = static_cast<double>(z.rows());
  auto eval = [&](const Vector& theta, Vector* grad, Matrix* neg_hess) {
    const Vector eta = z * theta;
    double ll = 0.0;
    Vector resid(eta.size());
    Vector w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double e = eta[i];
      const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      ll += d[i] * e - softplus;
      const double p = e >= 0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
      resid[i] = d[i] - p;
      w[i] = p * (1.0 - p);
    }
    *grad = z.transpose() * resid / n;
    *neg_hess = weighted_gram(z, w) / n;
    return ll / n;
  };
  Vector start = Vector::Zero(z.cols());
  const double share = d.mean();
  start[0] = std::log(share / (1.0 - share));
  return maximize_concave(eval, start, 1e-10, 100).theta;
}

// Balance conditions are the gradient of a concave function, so the
// just-identified system is solved by Newton ascent.
ConcaveResult solve_just(const Matrix& z, const Vector& d, const Vector& start, DpsOptions options) {
  const double n = static_cast<double>(z.rows());
  auto eval = [&](const Vector& theta, Vector* grad, Matrix* neg_hess) {
    const Vector eta = z * theta;
    double f = 0.0;
    Vector c(eta.size());
    Vector h(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double e = eta[i];
      if (d[i] > 0.5) {
        const double en = std::exp(-e);
        f += e - en;
        c[i] = 1.0 + en;
        h[i] = en;
      } else {
        const double ep = std::exp(e);
        f -= e + ep;
        c[i] = -(1.0 + ep);
        h[i] = ep;
      }
    }
    *grad = z.transpose() * c / n;
    *neg_hess = weighted_gram(z, h) / n;
    return f / n;
  };
  return maximize_concave(eval, start, options.tol, options.max_iter);
}

Vector stacked_moments(const Matrix& z, const Model& m) {
  const double n = static_cast<double>(z.rows());
  const auto k = z.cols();
  Vector g(2 * k);
  g.head(k) = z.transpose() * m.score / n;
  g.tail(k) = z.transpose() * m.balance / n;
  return g;
}

Matrix stacked_jacobian(const Matrix& z, const Model& m) {
  const double n = static_cast<double>(z.rows());
  const auto k = z.cols();
  Matrix j(2 * k, k);
  j.topRows(k) = -weighted_gram(z, m.score_slope) / n;
  j.bottomRows(k) = -weighted_gram(z, m.balance_slope) / n;
  return j;
}

// Covariance of the stacked moments conditional on the design, evaluated at
// the given model, plus a small ridge.
Matrix moment_covariance(const Matrix& z, const Model& m) {
  const double n = static_cast<double>(z.rows());
  const auto k = z.cols();
  const Vector v = m.score_slope;
  Matrix cov(2 * k, 2 * k);
  cov.topLeftCorner(k, k) = weighted_gram(z, v) / n;
  const Matrix cross = z.transpose() * z / n;
  cov.topRightCorner(k, k) = cross;
  cov.bottomLeftCorner(k, k) = cross;
  cov.bottomRightCorner(k, k) = weighted_gram(z, v.cwiseInverse()) / n;
  const double ridge = 1e-8 * cov.trace() / double(2 * k);
  cov.diagonal().array() += ridge;
  return cov;
}

struct GmmResult {
  Vector theta;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Levenberg-Marquardt on g(theta)' W g(theta) with W = L L'.
// Half Hessian of g'Wg is J'WJ plus the curvature of the moments weighted
// by Wg; dropping the second part (Gauss-Newton) converges only linearly
// when the over-identified minimum leaves a sizeable residual.
Matrix moment_curvature(const Matrix& z, const Vector& d, const Model& m, const Vector& wg) {
  const auto k = z.cols();
  const double n = static_cast<double>(z.rows());
  const Vector top = z * wg.head(k);
  const Vector bottom = z * wg.tail(k);
  Vector c(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double p = m.p[i];
    const double score_curv = -p * (1.0 - p) * (1.0 - 2.0 * p);
    const double balance_curv = d[i] > 0.5 ? m.balance_slope[i] : -m.balance_slope[i];
    c[i] = score_curv * top[i] + balance_curv * bottom[i];
  }
  return weighted_gram(z, c) / n;
}

GmmResult minimize_gmm(const Matrix& z, const Vector& d, const Matrix& chol_lower, Vector theta,
                       DpsOptions options) {
  struct State {
    double q;
    Vector r;
    Vector grad;
    Matrix hess;
  };
  auto value = [&](const Vector& th) {
    const Model m = evaluate(z, d, th);
    const Vector r = chol_lower.transpose() * stacked_moments(z, m);
    return r.squaredNorm();
  };
  auto full = [&](const Vector& th) {
    const Model m = evaluate(z, d, th);
    State st;
    st.r = chol_lower.transpose() * stacked_moments(z, m);
    st.q = st.r.squaredNorm();
    const Matrix jr = chol_lower.transpose() * stacked_jacobian(z, m);
    st.grad = jr.transpose() * st.r;
    st.hess = jr.transpose() * jr;
    st.hess += moment_curvature(z, d, m, chol_lower * st.r);
    st.hess = 0.5 * (st.hess + st.hess.transpose());
    return st;
  };

  GmmResult out;
  State st = full(theta);
  double mu = 1e-6;
  for (; out.iterations < options.max_iter; ++out.iterations) {
    if (!std::isfinite(st.q) || !st.grad.allFinite()) break;
    if (st.grad.cwiseAbs().maxCoeff() <= options.tol * std::max(1.0, st.q)) {
      out.converged = true;
      break;
    }
    const Vector scale = st.hess.diagonal().cwiseAbs().cwiseMax(1e-12);
    bool improved = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Matrix a = st.hess;
      a.diagonal() += mu * scale;
      Eigen::LDLT<Matrix> ldlt(a);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        mu = std::max(mu * 10.0, 1e-8);
        continue;
      }
      const Vector step = ldlt.solve(-st.grad);
      if (!step.allFinite()) {
        mu = std::max(mu * 10.0, 1e-8);
        continue;
      }
      const Vector trial = theta + step;
      const double qt = value(trial);
      if (std::isfinite(qt) && qt < st.q) {
        theta = trial;
        st = full(theta);
        mu = std::max(mu / 10.0, 1e-12);
        improved = true;
        break;
      }
      mu = std::max(mu * 10.0, 1e-8);
    }
    if (!improved) {
      // No descent left at working precision; accept if the gradient is small
      // relative to the problem scale.
      out.converged = st.grad.cwiseAbs().maxCoeff() <= 1e-7 * std::max(1.0, st.q);
      break;
    }
  }
  out.theta = theta;
  out.objective = st.q;
  return out;
}

void check_overlap(const Vector& p) {
  const double lo = p.minCoeff();
  const double hi = p.maxCoeff();
  if (!(lo > kOverlapEps && hi < 1.0 - kOverlapEps) || !p.allFinite()) {
    std::ostringstream msg;
    msg << "fitted propensity scores reach the boundary (range [" << lo << ", " << hi << "])";
    throw Error(ErrorKind::overlap, msg.str());
  }
}

}  // namespace

PropensityFit fit_dps(const AugmentedDesign& design, const std::vector<int>& treatment,
                      Identification identification, DpsOptions options) {
  const auto n = design.matrix.rows();
  if (static_cast<Eigen::Index>(treatment.size()) != n) {
    throw Error(ErrorKind::input, "treatment length does not match the design");
  }
  if (design.matrix.cols() == 0 || (design.matrix.col(0).array() != 1.0).any()) {
    throw Error(ErrorKind::input, "design must start with an intercept column");
  }
  Vector d(n);
  for (Eigen::Index i = 0; i < n; ++i) d[i] = treatment[i];
  if (d.sum() <= 0.0 || d.sum() >= double(n)) {
    throw Error(ErrorKind::input, "need at least one treated and one control unit");
  }

  const Standardized s = standardize(design.matrix);
  PropensityFit fit;
  fit.identification = identification;
  fit.dropped_columns = s.dropped;

  const Vector start = logistic_mle(s.z, d);
  Vector theta;
  if (identification == Identification::just) {
    const auto r = solve_just(s.z, d, start, options);
    theta = r.theta;
    fit.iterations = r.iterations;
    fit.converged = r.converged;
    const Model m = evaluate(s.z, d, theta);
    const Vector g = s.z.transpose() * m.balance / double(n);
    fit.gmm_objective = g.squaredNorm();
    if (!fit.converged) {
      std::ostringstream msg;
      msg << "balance equations not solved after " << r.iterations << " iterations (max |g| "
          << r.grad_norm << ")";
      check_overlap(m.p);
      throw ConvergenceError(msg.str(), r.grad_norm, r.iterations);
    }
  } else {
    const auto k = 2 * s.z.cols();
    const Matrix identity = Matrix::Identity(k, k);
    const auto first = minimize_gmm(s.z, d, identity, start, options);
    const Model m1 = evaluate(s.z, d, first.theta);
    check_overlap(m1.p);
    const Matrix cov = moment_covariance(s.z, m1);
    // W = cov^{-1}; with cov = L L', W = L^{-T} L^{-1}.
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::singular, "moment covariance is not positive definite");
    }
    const Matrix lower_inv = llt.matrixL().solve(identity);
    const Matrix chol_w = lower_inv.transpose();
    const auto second = minimize_gmm(s.z, d, chol_w, first.theta, options);
    theta = second.theta;
    fit.iterations = first.iterations + second.iterations;
    fit.converged = first.converged && second.converged;
    fit.gmm_objective = second.objective;
    if (!fit.converged) {
      throw ConvergenceError("two-step GMM did not converge", second.objective, fit.iterations);
    }
  }

  const Model m = evaluate(s.z, d, theta);
  check_overlap(m.p);
  fit.fitted_ps = m.p;
  fit.gamma = to_design_coefficients(s, theta, design.matrix.cols());
  return fit;
}

PsWeights ps_weights(const Vector& propensity, const std::vector<int>& treatment) {
  const auto n = propensity.size();
  if (static_cast<Eigen::Index>(treatment.size()) != n) {
    throw Error(ErrorKind::input, "treatment length does not match propensity scores");
  }
  PsWeights w{Vector::Zero(n), Vector::Zero(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = propensity[i];
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::overlap, "propensity score outside (0, 1)");
    if (treatment[i] == 1) {
      w.treated[i] = 1.0 / p;
    } else {
      w.control[i] = 1.0 / (1.0 - p);
    }
  }
  const double st = w.treated.sum();
  const double sc = w.control.sum();
  if (!(st > 0.0 && sc > 0.0)) throw Error(ErrorKind::input, "both groups must be nonempty");
  w.treated /= st;
  w.control /= sc;
  return w;
}

PsWeights uniform_weights(const std::vector<int>& treatment) {
  const Vector half = Vector::Constant(static_cast<Eigen::Index>(treatment.size()), 0.5);
  return ps_weights(half, treatment);
}

}  // namespace distbalance
