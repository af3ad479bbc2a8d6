#include <doctest.h>

#include <cmath>

#include "distbalance/deb.hpp"
#include "distbalance/error.hpp"
#include "distbalance/simulation.hpp"

using namespace distbalance;

namespace {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

Moments moments(const Vector& v) {
  Moments m;
  m.mean = v.mean();
  m.variance = (v.array() - m.mean).square().sum() / double(v.size() - 1);
  return m;
}

void same_tables(const SimulationTable& a, const SimulationTable& b) {
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    CHECK(a.rows[k].method == b.rows[k].method);
    CHECK(a.rows[k].bias == b.rows[k].bias);
    CHECK(a.rows[k].variance == b.rows[k].variance);
    CHECK(a.rows[k].rmse == b.rows[k].rmse);
  }
  REQUIRE(a.balance.size() == b.balance.size());
  for (std::size_t k = 0; k < a.balance.size(); ++k) {
    CHECK(a.balance[k].cvm_mean == b.balance[k].cvm_mean);
    CHECK(a.balance[k].ks_median == b.balance[k].ks_median);
  }
  CHECK(a.failures == b.failures);
}

}  // namespace

TEST_CASE("first covariate has mean zero and variance two") {
  const int count = 100000;
  const auto u = draw_sim1_units(Sim1Config{}, ReplicationRng(1, 0), count);
  const auto m = moments(u.x.col(0));
  CHECK(std::abs(m.mean) < 3.0 * std::sqrt(2.0 / count));
  CHECK(std::abs(m.variance - 2.0) < 3.0 * 2.0 * std::sqrt(2.0 / count));
  // Off-diagonal covariance entries of the first three covariates.
  const Matrix c = u.x.leftCols(3).rowwise() - u.x.leftCols(3).colwise().mean();
  const Matrix cov = c.transpose() * c / double(count - 1);
  CHECK(cov(0, 1) == doctest::Approx(1.0).epsilon(0.03));
  CHECK(cov(0, 2) == doctest::Approx(-1.0).epsilon(0.03));
  CHECK(cov(1, 2) == doctest::Approx(-0.5).epsilon(0.03));
  CHECK(u.x.col(3).minCoeff() >= -3.0);
  CHECK(u.x.col(3).maxCoeff() <= 3.0);
  CHECK(((u.x.col(5).array() == 0.0) || (u.x.col(5).array() == 1.0)).all());
}

TEST_CASE("skewed assignment error has mean one half and variance 67.6") {
  Sim1Config c;
  c.design = Design::D3;
  const int count = 100000;
  const auto u = draw_sim1_units(c, ReplicationRng(2, 0), count);
  const auto m = moments(u.error);
  CHECK(std::abs(m.mean - 0.5) < 3.0 * std::sqrt(67.6 / count));
  // Chi-squared(5) has excess kurtosis 12/5.
  CHECK(std::abs(m.variance - 67.6) < 3.0 * 67.6 * std::sqrt((2.0 + 2.4) / count));
  CHECK(2.6 == doctest::Approx(std::sqrt(67.6 / 10.0)));
}

TEST_CASE("equalised arms have the requested size") {
  Sim1Config c;
  c.n_per_group = 150;
  const auto data = generate_sim1(c, ReplicationRng(3, 1));
  CHECK(data.units() == 300);
  CHECK(data.treated_count() == 150);
  for (int i = 0; i < 150; ++i) CHECK(data.treatment[i] == 1);
  CHECK_NOTHROW(data.validate());
}

TEST_CASE("second design propensity and transformed covariates") {
  Sim2Config c;
  c.n = 100000;
  const auto s = generate_sim2(c, ReplicationRng(4, 0));
  const auto p = moments(s.true_ps);
  CHECK(std::abs(p.mean - 0.5) < 3.0 * std::sqrt(p.variance / c.n));
  const auto w4 = moments(s.w.col(3));
  CHECK(std::abs(w4.mean - 20.0) < 3.0 * std::sqrt(2.0 / c.n));
  CHECK(s.data.covariate_names[0] == "X1");
  c.specification = Specification::misspecified;
  c.n = 50;
  const auto m = generate_sim2(c, ReplicationRng(4, 0));
  CHECK(m.data.covariates == m.w);
  CHECK(m.data.covariate_names[3] == "W4");
  for (int k = 0; k < 50; ++k) {
    CHECK(m.w(k, 0) == doctest::Approx(std::exp(m.x(k, 0) / 2.0)));
    CHECK(m.w(k, 2) == doctest::Approx(std::pow(m.x(k, 0) * m.x(k, 1) / 25.0 + 0.6, 3)));
  }
}

TEST_CASE("summary of replicated estimates") {
  const auto one = summarize("m", Estimand::ATT, std::nullopt, 0.0, {0.3});
  CHECK(one.variance == 0.0);
  CHECK(one.rmse == doctest::Approx(0.3));
  const auto r = summarize("m", Estimand::QTE, 0.5, 10.0, {9.0, 10.5, 12.0, 8.25});
  CHECK(r.bias == doctest::Approx(-0.0625));
  CHECK(r.mean_estimate == doctest::Approx(9.9375));
  CHECK(r.rmse * r.rmse - r.bias * r.bias - r.variance == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.replications == 4);
}

TEST_CASE("single replication run") {
  Sim1Config c;
  c.n_per_group = 200;
  c.replications = 1;
  c.methods = {Sim1Method::EB};
  const auto t = run_monte_carlo(c, 1);
  REQUIRE(t.rows.size() == 1 + effect_alphas().size());
  for (const auto& row : t.rows) {
    CHECK(row.variance == 0.0);
    CHECK(row.rmse == doctest::Approx(std::abs(row.bias)).epsilon(1e-15));
  }
}

TEST_CASE("monte carlo tables do not depend on the worker count") {
  Sim1Config c;
  c.replications = 8;
  c.design = Design::D2;
  c.outcome = OutcomeModel::Y2;
  const auto a = run_monte_carlo(c, 1);
  for (int threads : {2, 8}) same_tables(a, run_monte_carlo(c, threads));
  for (const auto& row : a.rows) {
    CHECK(row.rmse * row.rmse - row.bias * row.bias - row.variance ==
          doctest::Approx(0.0).epsilon(1e-12));
  }

  Sim2Config s;
  s.n = 300;
  s.replications = 6;
  s.specification = Specification::misspecified;
  s.methods = {Sim2Method::CBPS_j, Sim2Method::CBPS_o, Sim2Method::DPS_o_MQ};
  const auto b = run_monte_carlo(s, 1);
  REQUIRE(b.balance.size() == 3);
  for (int threads : {2, 8}) same_tables(b, run_monte_carlo(s, threads));
  CHECK(b.find("CBPS (o)", Estimand::ATE) != nullptr);
  CHECK(b.find("CBPS (o)", Estimand::QTE, 0.9) != nullptr);
}

TEST_CASE("balancing removes most of the selection bias") {
  Sim1Config c;
  c.n_per_group = 500;
  double raw = 0.0;
  double balanced = 0.0;
  const int reps = 10;
  for (int r = 0; r < reps; ++r) {
    const auto data = generate_sim1(c, ReplicationRng(6, r));
    const Vector uniform = Vector::Ones(data.units());
    raw += estimate_att(data, uniform).estimate / reps;
    BalanceSpec spec;
    spec.mean_covariates = data.covariate_names;
    const auto w = deb_weights(data, spec).control_weights(data.units());
    balanced += estimate_att(data, w).estimate / reps;
  }
  CHECK(std::abs(raw) > 1.0);
  CHECK(std::abs(balanced) < 0.25 * std::abs(raw));
}

TEST_CASE("method names parse back") {
  for (auto m : {Sim1Method::EB, Sim1Method::DEB_MQ, Sim1Method::DEB_MD}) {
    CHECK(parse_sim1_method(to_string(m)) == m);
  }
  for (auto m : Sim2Config{}.methods) CHECK(parse_sim2_method(to_string(m)) == m);
  CHECK_FALSE(parse_sim1_method("nope").has_value());
}

TEST_CASE("configuration validation") {
  Sim1Config c;
  c.replications = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.replications = 1;
  c.x5_df = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  Sim2Config s;
  s.n = 1;
  CHECK_THROWS_AS(s.validate(), Error);
}
