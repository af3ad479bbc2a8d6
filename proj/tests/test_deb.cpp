#include <doctest.h>

#include <algorithm>
#include <random>

#include "distbalance/deb.hpp"
#include "distbalance/error.hpp"
#include "distbalance/quantile.hpp"
#include "distbalance/simulation.hpp"

using namespace distbalance;

namespace {

ObservationalDataset make_data(const std::vector<int>& d, const Matrix& x) {
  ObservationalDataset data;
  data.treatment = d;
  data.covariates = x;
  return data;
}

// Treated and control drawn from the same distribution.
ObservationalDataset identical_groups(int n_per_group, int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix x(2 * n_per_group, p);
  std::vector<int> d(2 * n_per_group);
  for (int i = 0; i < 2 * n_per_group; ++i) {
    d[i] = i < n_per_group ? 1 : 0;
    for (int j = 0; j < p; ++j) x(i, j) = normal(rng);
  }
  return make_data(d, x);
}

ObservationalDataset sim1_sample(Design design, std::uint64_t rep) {
  Sim1Config c;
  c.design = design;
  c.outcome = OutcomeModel::Y1;
  return generate_sim1(c, ReplicationRng(5, rep));
}

BalanceSpec deciles_spec() {
  BalanceSpec spec;
  spec.mean_covariates = {"X1", "X2", "X3", "X4", "X5", "X6"};
  spec.quantile_covariates = at_orders({"X1", "X2", "X3", "X4", "X5"}, deciles());
  return spec;
}

}  // namespace

TEST_CASE("means-only system is classic entropy balancing") {
  const auto data = identical_groups(50, 3, 1);
  BalanceSpec spec;
  spec.mean_covariates = {"X1", "X2", "X3"};
  const auto sys = build_deb_system(data, spec);
  REQUIRE(sys.system.matrix.cols() == 3);
  REQUIRE(sys.system.matrix.rows() == 50);
  for (int j = 0; j < 3; ++j) {
    CHECK(sys.system.targets[j] == doctest::Approx(data.covariates.col(j).head(50).mean()));
    CHECK(sys.columns[j].kind == ColumnKind::mean);
  }
  const auto r = deb_weights(data, spec);
  const auto direct = entropy_calibrate(ConstraintSystem{data.covariates.bottomRows(50),
                                                         sys.system.targets, Vector::Ones(50)});
  CHECK((r.solution.weights - direct.weights).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("two-point control group quantile column by hand") {
  Matrix x(6, 1);
  x << 0, 0.5, 1, 1, 0, 1;
  const auto data = make_data({1, 1, 1, 1, 0, 0}, x);
  BalanceSpec spec;
  spec.quantile_covariates = {{"X1", {0.5}}};
  const auto sys = build_deb_system(data, spec);
  REQUIRE(sys.system.matrix.cols() == 1);
  CHECK(sys.columns[0].target_quantile == doctest::Approx(0.5));
  CHECK(sys.system.matrix(0, 0) == doctest::Approx(0.25));
  CHECK(sys.system.matrix(1, 0) == doctest::Approx(0.125));
  CHECK(sys.system.targets[0] == doctest::Approx(0.125));
  CHECK(sys.treated_count == 4);
}

TEST_CASE("deciles on five covariates give fifty constraints") {
  auto data = sim1_sample(Design::D1, 0);
  BalanceSpec spec;
  spec.mean_covariates = {"X1", "X2", "X3", "X4", "X5"};
  spec.quantile_covariates = at_orders({"X1", "X2", "X3", "X4", "X5"}, deciles());
  const auto sys = build_deb_system(data, spec);
  CHECK(sys.system.matrix.cols() == 50);
  CHECK(sys.columns.size() == 50);
}

TEST_CASE("binary covariates are left out of quantile balancing") {
  auto data = sim1_sample(Design::D1, 1);
  BalanceSpec spec;
  spec.mean_covariates = {"X6"};
  spec.quantile_covariates = {{"X6", {0.5}}, {"X1", {0.5}}};
  const auto sys = build_deb_system(data, spec);
  CHECK(sys.system.matrix.cols() == 2);
  REQUIRE(sys.warnings.size() == 1);
  CHECK(sys.warnings[0].find("X6") != std::string::npos);
}

TEST_CASE("balanced means and quantiles after distributional entropy balancing") {
  for (auto design : {Design::D1, Design::D3}) {
    for (std::uint64_t rep = 0; rep < 3; ++rep) {
      const auto data = sim1_sample(design, rep);
      const auto spec = deciles_spec();
      const auto r = deb_weights(data, spec);
      REQUIRE(r.solution.converged);
      const Vector w = r.control_weights(data.units());
      CHECK(w.sum() == doctest::Approx(1.0));
      const auto treated = data.treated_rows();
      const auto controls = data.control_rows();
      std::vector<double> cw;
      for (int k : controls) cw.push_back(w[k]);
      for (int j = 0; j < 6; ++j) {
        double tm = 0.0;
        for (int k : treated) tm += data.covariates(k, j);
        tm /= double(treated.size());
        double cm = 0.0;
        for (int k : controls) cm += w[k] * data.covariates(k, j);
        CHECK(std::abs(tm - cm) < 1e-8);
      }
      for (const auto& q : spec.quantile_covariates) {
        const int j = data.column_index(q.covariate);
        const SortedColumn tcol(gather(data.covariates, j, treated));
        const SortedColumn ccol(gather(data.covariates, j, controls));
        for (double a : q.alphas) {
          const double target = sample_quantile(tcol, a);
          CHECK(std::abs(interpolated_cdf(target, ccol, cw) - a) < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("weights stay close to uniform when the groups already match") {
  // The largest single deviation is driven by a few tail units, so the
  // check is on the 99th percentile.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = identical_groups(2000, 1, seed);
    BalanceSpec spec;
    spec.mean_covariates = {"X1"};
    spec.quantile_covariates = {{"X1", quartiles()}};
    const auto r = deb_weights(data, spec);
    Vector dev = (r.solution.weights.array() * 2000.0 - 1.0).abs();
    std::sort(dev.begin(), dev.end());
    CHECK(dev[1980] < 0.25);
  }
}

TEST_CASE("more quantile constraints never lower the divergence") {
  const auto data = sim1_sample(Design::D2, 4);
  BalanceSpec spec;
  spec.mean_covariates = {"X1", "X2", "X3", "X4", "X5", "X6"};
  double prev = kl_divergence(deb_weights(data, spec).solution.weights, Vector::Ones(1000));
  for (const auto& name : {"X1", "X2", "X3", "X4", "X5"}) {
    spec.quantile_covariates.push_back({name, quartiles()});
    const auto r = deb_weights(data, spec);
    const double kl = kl_divergence(r.solution.weights, Vector::Ones(1000));
    CHECK(kl >= prev - 1e-12);
    prev = kl;
  }
  spec.quantile_covariates = at_orders({"X1", "X2", "X3", "X4", "X5"}, deciles());
  CHECK(kl_divergence(deb_weights(data, spec).solution.weights, Vector::Ones(1000)) >= prev - 1e-12);
}

TEST_CASE("treatment quantile outside the control support is rejected") {
  Matrix x(8, 1);
  x << -5, -4, 1, 2, 1, 2, 3, 4;
  const auto data = make_data({1, 1, 1, 1, 0, 0, 0, 0}, x);
  BalanceSpec spec;
  spec.quantile_covariates = {{"X1", {0.25}}};
  try {
    deb_weights(data, spec);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK((e.kind() == ErrorKind::support || e.kind() == ErrorKind::infeasible));
    CHECK(std::string(e.what()).find("X1") != std::string::npos);
  }
}

TEST_CASE("mean target outside the control range is infeasible") {
  Matrix x(6, 1);
  x << 10, 11, 12, 1, 2, 3;
  const auto data = make_data({1, 1, 1, 0, 0, 0}, x);
  BalanceSpec spec;
  spec.mean_covariates = {"X1"};
  try {
    deb_weights(data, spec);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::infeasible);
  }
}

TEST_CASE("balance spec validation") {
  BalanceSpec empty;
  CHECK_THROWS_AS(empty.validate(), Error);
  BalanceSpec bad;
  bad.quantile_covariates = {{"X1", {0.5, 0.25}}};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.quantile_covariates = {{"X1", {0.0}}};
  CHECK_THROWS_AS(bad.validate(), Error);
  const auto data = identical_groups(5, 1, 2);
  BalanceSpec unknown;
  unknown.mean_covariates = {"nope"};
  CHECK_THROWS_AS(build_deb_system(data, unknown), Error);
}
