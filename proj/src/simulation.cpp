#include "distbalance/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "distbalance/deb.hpp"
#include "distbalance/diagnostics.hpp"
#include "distbalance/dps.hpp"
#include "distbalance/error.hpp"

namespace distbalance {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr double kTrueSim2Effect = 10.0;

}  // namespace

std::mt19937_64 ReplicationRng::stream(Stream id) const {
  std::uint64_t h = splitmix64(seed_);
  h = splitmix64(h ^ replication_);
  h = splitmix64(h ^ static_cast<std::uint64_t>(id));
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

void Sim1Config::validate() const {
  if (n_per_group < 2) throw Error(ErrorKind::input, "n_per_group must be at least 2");
  if (replications < 1) throw Error(ErrorKind::input, "replications must be at least 1");
  if (raw_size != 0 && raw_size < 2) throw Error(ErrorKind::input, "raw_size must be at least 2");
  if (!(x5_df > 0.0) || !std::isfinite(x5_df)) {
    throw Error(ErrorKind::input, "x5_df must be positive");
  }
  if (methods.empty()) throw Error(ErrorKind::input, "no methods selected");
}

void Sim2Config::validate() const {
  if (n < 2) throw Error(ErrorKind::input, "n must be at least 2");
  if (replications < 1) throw Error(ErrorKind::input, "replications must be at least 1");
  if (methods.empty()) throw Error(ErrorKind::input, "no methods selected");
}

Sim1Draw draw_sim1_units(const Sim1Config& config, const ReplicationRng& rng, int count) {
  config.validate();
  if (count < 1) throw Error(ErrorKind::input, "count must be positive");
  auto gen = rng.stream(ReplicationRng::Stream::covariates);
  auto assign = rng.stream(ReplicationRng::Stream::assignment);
  auto noise = rng.stream(ReplicationRng::Stream::outcome);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  std::chi_squared_distribution<double> chi_x5(config.x5_df);
  std::chi_squared_distribution<double> chi5(5.0);
  std::bernoulli_distribution coin(0.5);

  // Cholesky factor of [[2, 1, -1], [1, 1, -0.5], [-1, -0.5, 1]].
  const double r2 = std::sqrt(2.0);
  const double rh = std::sqrt(0.5);

  Sim1Draw out;
  auto& x = out.x;
  auto& y = out.y;
  x.resize(count, 6);
  y.resize(count);
  out.error.resize(count);
  out.treatment.resize(count);
  for (int k = 0; k < count; ++k) {
    const double z1 = normal(gen);
    const double z2 = normal(gen);
    const double z3 = normal(gen);
    x(k, 0) = r2 * z1;
    x(k, 1) = z1 / r2 + rh * z2;
    x(k, 2) = -z1 / r2 + rh * z3;
    x(k, 3) = unif(gen);
    x(k, 4) = chi_x5(gen);
    x(k, 5) = coin(gen) ? 1.0 : 0.0;

    double eps = 0.0;
    switch (config.design) {
      case Design::D1: eps = std::sqrt(30.0) * normal(assign); break;
      case Design::D2: eps = 10.0 * normal(assign); break;
      case Design::D3: eps = 2.6 * (chi5(assign) - 5.0) + 0.5; break;
    }
    out.error[k] = eps;
    const double index = x(k, 0) + 2.0 * x(k, 1) - 2.0 * x(k, 2) - x(k, 3) - 0.5 * x(k, 4) +
                         x(k, 5) + eps;
    out.treatment[k] = index > 0.0 ? 1 : 0;

    const double eta = normal(noise);
    switch (config.outcome) {
      case OutcomeModel::Y1:
        y[k] = x(k, 0) + x(k, 1) + x(k, 2) - x(k, 3) + x(k, 4) + x(k, 5) + eta;
        break;
      case OutcomeModel::Y2:
        y[k] = x(k, 0) + x(k, 1) + 0.2 * x(k, 2) * x(k, 3) - std::sqrt(x(k, 4)) + eta;
        break;
      case OutcomeModel::Y3: {
        const double sum = x(k, 0) + x(k, 1) + x(k, 4);
        y[k] = sum * sum + eta;
        break;
      }
    }
  }
  return out;
}

ObservationalDataset generate_sim1(const Sim1Config& config, const ReplicationRng& rng) {
  config.validate();
  const int raw = config.raw_size > 0 ? config.raw_size : 10 * config.n_per_group;
  const Sim1Draw units = draw_sim1_units(config, rng, raw);
  const auto& x = units.x;
  const auto& y = units.y;
  auto pick = rng.stream(ReplicationRng::Stream::resample);
  std::vector<int> treated;
  std::vector<int> controls;
  for (int k = 0; k < raw; ++k) (units.treatment[k] ? treated : controls).push_back(k);
  if (treated.empty() || controls.empty()) {
    throw Error(ErrorKind::input, "raw draw produced an empty treatment arm; increase raw_size");
  }

  const int n = config.n_per_group;
  ObservationalDataset out;
  out.covariates.resize(2 * n, 6);
  out.outcome = Vector(2 * n);
  out.treatment.resize(2 * n);
  out.covariate_names = {"X1", "X2", "X3", "X4", "X5", "X6"};
  auto draw = [&](const std::vector<int>& pool, int offset, int arm) {
    std::uniform_int_distribution<std::size_t> index(0, pool.size() - 1);
    for (int i = 0; i < n; ++i) {
      const int src = pool[index(pick)];
      out.covariates.row(offset + i) = x.row(src);
      (*out.outcome)[offset + i] = y[src];
      out.treatment[offset + i] = arm;
    }
  };
  draw(treated, 0, 1);
  draw(controls, n, 0);
  return out;
}

Sim2Sample generate_sim2(const Sim2Config& config, const ReplicationRng& rng) {
  config.validate();
  const int n = config.n;
  auto gen = rng.stream(ReplicationRng::Stream::covariates);
  auto assign = rng.stream(ReplicationRng::Stream::assignment);
  auto noise = rng.stream(ReplicationRng::Stream::outcome);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Sim2Sample s;
  s.x.resize(n, 4);
  s.w.resize(n, 4);
  s.true_ps.resize(n);
  std::vector<int> d(n);
  Vector y(n);
  int treated = 0;
  while (treated == 0 || treated == n) {
    treated = 0;
    for (int k = 0; k < n; ++k) {
      for (int j = 0; j < 4; ++j) s.x(k, j) = normal(gen);
      const double x1 = s.x(k, 0), x2 = s.x(k, 1), x3 = s.x(k, 2), x4 = s.x(k, 3);
      const double w1 = std::exp(x1 / 2.0);
      s.w(k, 0) = w1;
      s.w(k, 1) = x2 / (1.0 + std::exp(w1));
      s.w(k, 2) = std::pow(x1 * x2 / 25.0 + 0.6, 3);
      s.w(k, 3) = x2 + x4 + 20.0;

      const double index = -x1 + 0.5 * x2 - 0.25 * x3 - 0.1 * x4;
      const double p = 1.0 / (1.0 + std::exp(-index));
      s.true_ps[k] = p;
      d[k] = p > unif(assign) ? 1 : 0;
      treated += d[k];

      const double m = 27.4 * x1 + 13.7 * x2 + 13.7 * x3 + 13.7 * x4;
      const double y1 = 210.0 + m + normal(noise);
      const double y0 = 200.0 - m + normal(noise);
      y[k] = d[k] ? y1 : y0;
    }
  }
  s.data.treatment = d;
  s.data.outcome = y;
  if (config.specification == Specification::correct) {
    s.data.covariates = s.x;
    s.data.covariate_names = {"X1", "X2", "X3", "X4"};
  } else {
    s.data.covariates = s.w;
    s.data.covariate_names = {"W1", "W2", "W3", "W4"};
  }
  return s;
}

std::string to_string(Sim1Method m) {
  switch (m) {
    case Sim1Method::EB: return "EB";
    case Sim1Method::DEB_MQ: return "DEB MQ";
    case Sim1Method::DEB_MD: return "DEB MD";
  }
  return "?";
}

std::string to_string(Sim2Method m) {
  switch (m) {
    case Sim2Method::CBPS_j: return "CBPS (j)";
    case Sim2Method::CBPS_o: return "CBPS (o)";
    case Sim2Method::DPS_j_MQ: return "DPS (j MQ)";
    case Sim2Method::DPS_j_MD: return "DPS (j MD)";
    case Sim2Method::DPS_j_D: return "DPS (j D)";
    case Sim2Method::DPS_o_MQ: return "DPS (o MQ)";
    case Sim2Method::DPS_o_MD: return "DPS (o MD)";
    case Sim2Method::DPS_o_D: return "DPS (o D)";
  }
  return "?";
}

namespace {

std::string normalize_method(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == ' ' || c == '_' || c == '-' || c == '(' || c == ')') continue;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

std::optional<Sim1Method> parse_sim1_method(const std::string& s) {
  const auto key = normalize_method(s);
  for (auto m : {Sim1Method::EB, Sim1Method::DEB_MQ, Sim1Method::DEB_MD}) {
    if (normalize_method(to_string(m)) == key) return m;
  }
  return std::nullopt;
}

std::optional<Sim2Method> parse_sim2_method(const std::string& s) {
  const auto key = normalize_method(s);
  for (auto m : {Sim2Method::CBPS_j, Sim2Method::CBPS_o, Sim2Method::DPS_j_MQ, Sim2Method::DPS_j_MD,
                 Sim2Method::DPS_j_D, Sim2Method::DPS_o_MQ, Sim2Method::DPS_o_MD,
                 Sim2Method::DPS_o_D}) {
    if (normalize_method(to_string(m)) == key) return m;
  }
  return std::nullopt;
}

std::vector<double> effect_alphas() { return {0.10, 0.25, 0.50, 0.75, 0.90}; }

const SimulationRow* SimulationTable::find(const std::string& method, Estimand estimand,
                                           std::optional<double> alpha) const {
  for (const auto& r : rows) {
    if (r.method != method || r.estimand != estimand) continue;
    if (alpha.has_value() != r.alpha.has_value()) continue;
    if (alpha && std::abs(*alpha - *r.alpha) > 1e-12) continue;
    return &r;
  }
  return nullptr;
}

const BalanceSummary* SimulationTable::find_balance(const std::string& method) const {
  for (const auto& b : balance) {
    if (b.method == method) return &b;
  }
  return nullptr;
}

SimulationRow summarize(const std::string& method, Estimand estimand, std::optional<double> alpha,
                        double truth, const std::vector<double>& estimates) {
  SimulationRow row;
  row.method = method;
  row.estimand = estimand;
  row.alpha = alpha;
  row.truth = truth;
  row.replications = static_cast<int>(estimates.size());
  if (estimates.empty()) return row;
  double mean = 0.0;
  for (double e : estimates) mean += e;
  mean /= double(estimates.size());
  double ss = 0.0;
  for (double e : estimates) ss += (e - mean) * (e - mean);
  row.mean_estimate = mean;
  row.bias = mean - truth;
  row.variance = estimates.size() > 1 ? ss / double(estimates.size() - 1) : 0.0;
  row.rmse = std::sqrt(row.bias * row.bias + row.variance);
  return row;
}

int worker_count(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("DISTBALANCE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

namespace {

// Per-method output of one replication; empty estimates mark a failure.
struct MethodOutcome {
  std::vector<double> estimates;  // average effect then one per effect alpha
  double cvm = 0.0;
  double ks = 0.0;
  bool ok = false;
};

using Replication = std::vector<MethodOutcome>;

template <typename Fn>
std::vector<Replication> run_replications(int count, int threads, Fn body) {
  std::vector<Replication> results(count);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (int r = next++; r < count; r = next++) {
      try {
        results[r] = body(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const int workers = std::min(worker_count(threads), count);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

SimulationTable aggregate(const std::vector<Replication>& reps, const std::vector<std::string>& names,
                          Estimand average, Estimand quantile, double truth, bool with_balance) {
  SimulationTable table;
  table.replications = static_cast<int>(reps.size());
  const auto alphas = effect_alphas();
  for (std::size_t m = 0; m < names.size(); ++m) {
    std::vector<std::vector<double>> per_estimand(1 + alphas.size());
    std::vector<double> cvm;
    std::vector<double> ks;
    int failed = 0;
    for (const auto& rep : reps) {
      const auto& o = rep[m];
      if (!o.ok) {
        ++failed;
        continue;
      }
      for (std::size_t e = 0; e < o.estimates.size(); ++e) per_estimand[e].push_back(o.estimates[e]);
      cvm.push_back(o.cvm);
      ks.push_back(o.ks);
    }
    table.failures[names[m]] = failed;
    if (double(failed) >= 0.02 * double(reps.size())) {
      std::ostringstream msg;
      msg << "method " << names[m] << " failed in " << failed << " of " << reps.size()
          << " replications";
      throw Error(ErrorKind::convergence, msg.str());
    }
    table.rows.push_back(summarize(names[m], average, std::nullopt, truth, per_estimand[0]));
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      table.rows.push_back(summarize(names[m], quantile, alphas[a], truth, per_estimand[a + 1]));
    }
    if (with_balance) {
      BalanceSummary b;
      b.method = names[m];
      for (double v : cvm) b.cvm_mean += v;
      for (double v : ks) b.ks_mean += v;
      b.cvm_mean /= double(cvm.size());
      b.ks_mean /= double(ks.size());
      b.cvm_median = median(cvm);
      b.ks_median = median(ks);
      table.balance.push_back(b);
    }
  }
  return table;
}

BalanceSpec sim1_spec(Sim1Method m) {
  BalanceSpec spec;
  spec.mean_covariates = {"X1", "X2", "X3", "X4", "X5", "X6"};
  const std::vector<std::string> continuous{"X1", "X2", "X3", "X4", "X5"};
  if (m == Sim1Method::DEB_MQ) spec.quantile_covariates = at_orders(continuous, quartiles());
  if (m == Sim1Method::DEB_MD) spec.quantile_covariates = at_orders(continuous, deciles());
  return spec;
}

struct Sim2Arm {
  BalanceSpec spec;
  Identification identification;
};

Sim2Arm sim2_arm(Sim2Method m, const std::vector<std::string>& names) {
  Sim2Arm arm;
  bool means = true;
  std::vector<double> orders;
  switch (m) {
    case Sim2Method::CBPS_j: arm.identification = Identification::just; break;
    case Sim2Method::CBPS_o: arm.identification = Identification::over; break;
    case Sim2Method::DPS_j_MQ: arm.identification = Identification::just; orders = quartiles(); break;
    case Sim2Method::DPS_j_MD: arm.identification = Identification::just; orders = deciles(); break;
    case Sim2Method::DPS_j_D:
      arm.identification = Identification::just;
      orders = deciles();
      means = false;
      break;
    case Sim2Method::DPS_o_MQ: arm.identification = Identification::over; orders = quartiles(); break;
    case Sim2Method::DPS_o_MD: arm.identification = Identification::over; orders = deciles(); break;
    case Sim2Method::DPS_o_D:
      arm.identification = Identification::over;
      orders = deciles();
      means = false;
      break;
  }
  if (means) arm.spec.mean_covariates = names;
  if (!orders.empty()) arm.spec.quantile_covariates = at_orders(names, orders);
  return arm;
}

}  // namespace

SimulationTable run_monte_carlo(const Sim1Config& config, int threads) {
  config.validate();
  const auto alphas = effect_alphas();
  auto body = [&](int r) {
    const ReplicationRng rng(config.seed, static_cast<std::uint64_t>(r));
    const auto data = generate_sim1(config, rng);
    Replication rep(config.methods.size());
    for (std::size_t m = 0; m < config.methods.size(); ++m) {
      try {
        const auto result = deb_weights(data, sim1_spec(config.methods[m]));
        const Vector w = result.control_weights(data.units());
        auto& o = rep[m];
        o.estimates.push_back(estimate_att(data, w).estimate);
        for (double a : alphas) o.estimates.push_back(estimate_qtt(data, w, a).estimate);
        o.ok = true;
      } catch (const Error&) {
        rep[m] = MethodOutcome{};
      }
    }
    return rep;
  };
  const auto reps = run_replications(config.replications, threads, body);
  std::vector<std::string> names;
  for (auto m : config.methods) names.push_back(to_string(m));
  return aggregate(reps, names, Estimand::ATT, Estimand::QTT, 0.0, false);
}

SimulationTable run_monte_carlo(const Sim2Config& config, int threads) {
  config.validate();
  const auto alphas = effect_alphas();
  auto body = [&](int r) {
    const ReplicationRng rng(config.seed, static_cast<std::uint64_t>(r));
    const auto sample = generate_sim2(config, rng);
    const auto& data = sample.data;
    const BalanceEvaluator evaluator(data.covariates);
    Replication rep(config.methods.size());
    for (std::size_t m = 0; m < config.methods.size(); ++m) {
      try {
        const auto arm = sim2_arm(config.methods[m], data.covariate_names);
        const auto design = build_augmented_design(data, arm.spec);
        const auto fit = fit_dps(design, data.treatment, arm.identification);
        const auto w = ps_weights(fit, data.treatment);
        auto& o = rep[m];
        o.estimates.push_back(estimate_ate(data, w).estimate);
        for (double a : alphas) o.estimates.push_back(estimate_qte(data, w, a).estimate);
        const auto bal = evaluator.evaluate(w);
        o.cvm = bal.cvm;
        o.ks = bal.ks;
        o.ok = true;
      } catch (const Error&) {
        rep[m] = MethodOutcome{};
      }
    }
    return rep;
  };
  const auto reps = run_replications(config.replications, threads, body);
  std::vector<std::string> names;
  for (auto m : config.methods) names.push_back(to_string(m));
  return aggregate(reps, names, Estimand::ATE, Estimand::QTE, kTrueSim2Effect, true);
}

}  // namespace distbalance
