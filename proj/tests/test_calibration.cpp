#include <doctest.h>

#include <random>

#include "distbalance/calibration.hpp"
#include "distbalance/error.hpp"
#include "oracles.hpp"

using namespace distbalance;

namespace {

struct Instance {
  ConstraintSystem system;
  Vector feasible;  // a strictly positive solution, normalised
};

Instance random_instance(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.2, 1.0);
  Instance out;
  out.system.matrix.resize(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.system.matrix(i, j) = normal(rng);
  out.system.base_weights.resize(n);
  out.feasible.resize(n);
  for (int i = 0; i < n; ++i) {
    out.system.base_weights[i] = unit(rng);
    out.feasible[i] = unit(rng);
  }
  out.feasible /= out.feasible.sum();
  out.system.targets = out.system.matrix.transpose() * out.feasible;
  return out;
}

}  // namespace

TEST_CASE("linear calibration keeps base weights that already satisfy the targets") {
  ConstraintSystem s;
  s.matrix = Matrix(3, 1);
  s.matrix << 1, 2, 3;
  s.base_weights = Vector::Ones(3);
  s.targets = Vector::Constant(1, 6.0);
  const auto r = linear_calibrate(s);
  CHECK((r.weights - s.base_weights).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(r.converged);
}

TEST_CASE("linear calibration scales up to a total") {
  ConstraintSystem s;
  s.matrix = Matrix::Ones(3, 1);
  s.base_weights = Vector::Ones(3);
  s.targets = Vector::Constant(1, 6.0);
  const auto r = linear_calibrate(s);
  for (int k = 0; k < 3; ++k) CHECK(r.weights[k] == doctest::Approx(2.0));
}

TEST_CASE("linear calibration matches the KKT oracle on random systems") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 300; ++rep) {
    const int n = 3 + rep % 6;
    const int m = 1 + rep % 3;
    auto inst = random_instance(rng, n, m);
    inst.system.targets.array() += 0.3;  // negative weights are allowed
    const auto r = linear_calibrate(inst.system);
    const Vector ref = oracle::kkt_linear(inst.system.matrix, inst.system.targets,
                                          inst.system.base_weights);
    REQUIRE((r.weights - ref).cwiseAbs().maxCoeff() < 1e-8);
    REQUIRE(r.residual_norm < 1e-8);
  }
}

TEST_CASE("linear calibration reports a rank deficient system") {
  ConstraintSystem s;
  s.matrix = Matrix(4, 3);
  s.matrix << 1, 0, 1, 2, 1, 3, 0, 1, 1, 1, 1, 2;  // third = first + second
  s.base_weights = Vector::Ones(4);
  s.targets = Vector(3);
  s.targets << 1, 1, 2;
  try {
    linear_calibrate(s);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::singular);
    CHECK(std::string(e.what()).find("offending") != std::string::npos);
  }
}

TEST_CASE("linear calibration drops an exact duplicate column with a consistent target") {
  ConstraintSystem s;
  s.matrix = Matrix(4, 2);
  s.matrix << 1, 1, 2, 2, 3, 3, 4, 4;
  s.base_weights = Vector::Ones(4);
  s.targets = Vector::Constant(2, 12.0);
  const auto r = linear_calibrate(s);
  CHECK(r.dropped_columns == std::vector<int>{1});
  CHECK((s.matrix.transpose() * r.weights - s.targets).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("entropy calibration without constraints returns normalised base weights") {
  ConstraintSystem s;
  s.matrix = Matrix(3, 0);
  s.base_weights = Vector(3);
  s.base_weights << 1, 2, 5;
  s.targets = Vector(0);
  const auto r = entropy_calibrate(s);
  CHECK((r.weights - s.base_weights / 8.0).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("entropy calibration two-unit example") {
  ConstraintSystem s;
  s.matrix = Matrix(2, 1);
  s.matrix << 0, 1;
  s.base_weights = Vector::Ones(2);
  s.targets = Vector::Constant(1, 0.25);
  const auto r = entropy_calibrate(s);
  CHECK(r.weights[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.weights[1] == doctest::Approx(0.25).epsilon(1e-12));
  // w1 / w0 = exp(lambda) = 1/3.
  CHECK(r.duals[0] == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-10));
}

TEST_CASE("entropy calibration attains the grid minimum of the divergence") {
  std::mt19937_64 rng(29);
  for (int rep = 0; rep < 60; ++rep) {
    const int m = 1 + rep % 3;
    const int slack = 1 + rep % 2;  // dimension of the feasible set
    auto inst = random_instance(rng, m + 1 + slack, m);
    const auto r = entropy_calibrate(inst.system);
    REQUIRE(r.residual_norm < 1e-8);
    const double ours = kl_divergence(r.weights, inst.system.base_weights);
    const double grid = oracle::grid_min_kl(inst.system.matrix, inst.system.targets,
                                            inst.system.base_weights, slack == 1 ? 20000 : 400);
    REQUIRE(std::isfinite(grid));
    CHECK(ours <= grid + 1e-12);
    CHECK(ours >= grid - 5e-3);
    CHECK(ours <= kl_divergence(inst.feasible, inst.system.base_weights) + 1e-12);
  }
}

TEST_CASE("entropy weights are positive, feasible and rebuilt from the duals") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 5 + rep % 40;
    const int m = 1 + rep % 4;
    auto inst = random_instance(rng, n, m);
    const auto r = entropy_calibrate(inst.system);
    REQUIRE(r.converged);
    REQUIRE(r.residual_norm < 1e-8);
    REQUIRE((r.weights.array() > 0.0).all());
    CHECK(r.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
    Vector rebuilt = inst.system.base_weights.cwiseProduct(
        (inst.system.matrix * r.duals).array().exp().matrix());
    rebuilt /= rebuilt.sum();
    CHECK((rebuilt - r.weights).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("entropy weights ignore a common scale of the base weights") {
  std::mt19937_64 rng(37);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = random_instance(rng, 30, 3);
    const auto a = entropy_calibrate(inst.system);
    inst.system.base_weights *= 17.5;
    const auto b = entropy_calibrate(inst.system);
    CHECK((a.weights - b.weights).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("entropy calibration detects targets outside the reachable range") {
  ConstraintSystem s;
  s.matrix = Matrix(3, 1);
  s.matrix << 0, 1, 2;
  s.base_weights = Vector::Ones(3);
  s.targets = Vector::Constant(1, 2.5);
  try {
    entropy_calibrate(s);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::infeasible);
  }
  // Each target reachable alone, jointly impossible: x and 1 - x cannot
  // both average 0.9.
  s.matrix = Matrix(3, 2);
  s.matrix << 0, 1, 0.5, 0.5, 1, 0;
  s.targets = Vector::Constant(2, 0.9);
  try {
    entropy_calibrate(s);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::infeasible);
  }
}

TEST_CASE("entropy calibration reports non-convergence with its residual") {
  std::mt19937_64 rng(41);
  auto inst = random_instance(rng, 50, 4);
  // Far from the base weights, still feasible.
  inst.system.targets = inst.system.matrix.transpose() *
                        (inst.feasible.array().pow(4.0).matrix() / inst.feasible.array().pow(4.0).sum());
  try {
    entropy_calibrate(inst.system, {1e-8, 1});
    FAIL("no error");
  } catch (const ConvergenceError& e) {
    CHECK(e.kind() == ErrorKind::convergence);
    CHECK(e.residual() > 1e-8);
    CHECK(e.iterations() == 1);
  }
}

TEST_CASE("entropy calibration prunes duplicated and constant columns") {
  std::mt19937_64 rng(43);
  auto inst = random_instance(rng, 25, 2);
  Matrix wide(25, 4);
  wide << inst.system.matrix, inst.system.matrix.col(0) * 2.0 + Vector::Ones(25),
      Vector::Constant(25, 3.0);
  ConstraintSystem s{wide, Vector(4), inst.system.base_weights};
  s.targets << inst.system.targets, 2.0 * inst.system.targets[0] + 1.0, 3.0;
  const auto r = entropy_calibrate(s);
  CHECK(r.dropped_columns == std::vector<int>{2, 3});
  CHECK((wide.transpose() * r.weights - s.targets).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("kl divergence") {
  Vector d = Vector::Ones(4);
  CHECK(kl_divergence(d, d) == 0.0);
  Vector w(4);
  w << 0.5, 0.5, 0.0, 0.0;
  CHECK(kl_divergence(w, d) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("constraint system validation") {
  ConstraintSystem s{Matrix::Ones(2, 1), Vector::Ones(1), Vector::Ones(3)};
  CHECK_THROWS_AS(s.validate(), Error);
  s.base_weights = Vector::Ones(2);
  s.base_weights[1] = 0.0;
  CHECK_THROWS_AS(s.validate(), Error);
  s.base_weights[1] = 1.0;
  CHECK_NOTHROW(s.validate());
}
