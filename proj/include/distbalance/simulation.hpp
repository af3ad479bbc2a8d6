#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "distbalance/dataset.hpp"
#include "distbalance/effects.hpp"

namespace distbalance {

/// Independent generator streams per (seed, replication, stream id), so a
/// replication's draws do not depend on which worker runs it.
class ReplicationRng {
 public:
  enum class Stream : std::uint64_t { covariates = 1, assignment = 2, outcome = 3, resample = 4 };

  ReplicationRng(std::uint64_t seed, std::uint64_t replication)
      : seed_(seed), replication_(replication) {}

  std::mt19937_64 stream(Stream id) const;

 private:
  std::uint64_t seed_;
  std::uint64_t replication_;
};

// Entropy balancing study.
enum class Design { D1, D2, D3 };
enum class OutcomeModel { Y1, Y2, Y3 };
enum class Sim1Method { EB, DEB_MQ, DEB_MD };

struct Sim1Config {
  Design design = Design::D1;
  OutcomeModel outcome = OutcomeModel::Y1;
  int n_per_group = 1000;
  int replications = 500;
  std::vector<Sim1Method> methods{Sim1Method::EB, Sim1Method::DEB_MQ, Sim1Method::DEB_MD};
  std::uint64_t seed = 1;
  // Units drawn before splitting and resampling each arm to n_per_group;
  // 0 means 10 * n_per_group.
  int raw_size = 0;
  // Degrees of freedom of the chi-squared covariate X5.
  double x5_df = 1.0;

  void validate() const;
};

/// Units before the arms are equalised: covariates, outcome, treatment and
/// the assignment error term.
struct Sim1Draw {
  Matrix x;
  Vector y;
  std::vector<int> treatment;
  Vector error;
};

Sim1Draw draw_sim1_units(const Sim1Config& config, const ReplicationRng& rng, int count);

/// Six covariates X1..X6, treatment and outcome; exactly n_per_group units
/// per arm (treated rows first), resampled with replacement.
ObservationalDataset generate_sim1(const Sim1Config& config, const ReplicationRng& rng);

// Propensity score study.
enum class Specification { correct, misspecified };
enum class Sim2Method { CBPS_j, CBPS_o, DPS_j_MQ, DPS_j_MD, DPS_j_D, DPS_o_MQ, DPS_o_MD, DPS_o_D };

struct Sim2Config {
  Specification specification = Specification::correct;
  int n = 1000;
  int replications = 500;
  std::vector<Sim2Method> methods{Sim2Method::CBPS_j,   Sim2Method::CBPS_o,   Sim2Method::DPS_j_MQ,
                                  Sim2Method::DPS_j_MD, Sim2Method::DPS_j_D,  Sim2Method::DPS_o_MQ,
                                  Sim2Method::DPS_o_MD, Sim2Method::DPS_o_D};
  std::uint64_t seed = 1;

  void validate() const;
};

struct Sim2Sample {
  ObservationalDataset data;  // covariates are X or W depending on the specification
  Matrix x;
  Matrix w;
  Vector true_ps;
};

Sim2Sample generate_sim2(const Sim2Config& config, const ReplicationRng& rng);

std::string to_string(Sim1Method m);
std::string to_string(Sim2Method m);
std::optional<Sim1Method> parse_sim1_method(const std::string& s);
std::optional<Sim2Method> parse_sim2_method(const std::string& s);

/// Quantile orders reported for QTT / QTE.
std::vector<double> effect_alphas();

struct SimulationRow {
  std::string method;
  Estimand estimand = Estimand::ATT;
  std::optional<double> alpha;
  double truth = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double variance = 0.0;  // denominator R - 1
  double rmse = 0.0;
  int replications = 0;
};

struct BalanceSummary {
  std::string method;
  double cvm_mean = 0.0;
  double cvm_median = 0.0;
  double ks_mean = 0.0;
  double ks_median = 0.0;
};

struct SimulationTable {
  std::vector<SimulationRow> rows;
  std::vector<BalanceSummary> balance;
  std::map<std::string, int> failures;
  int replications = 0;

  const SimulationRow* find(const std::string& method, Estimand estimand,
                            std::optional<double> alpha = std::nullopt) const;
  const BalanceSummary* find_balance(const std::string& method) const;
};

/// Bias, variance and RMSE of replicated estimates around a known truth.
SimulationRow summarize(const std::string& method, Estimand estimand, std::optional<double> alpha,
                        double truth, const std::vector<double>& estimates);

/// Worker count: `requested` (0 = hardware concurrency), capped by the
/// DISTBALANCE_THREADS environment variable.
int worker_count(int requested);

/// Replications run in parallel; aggregation is by replication index so the
/// table does not depend on the worker count. Throws when a method fails in
/// 2% or more of the replications.
SimulationTable run_monte_carlo(const Sim1Config& config, int threads = 0);
SimulationTable run_monte_carlo(const Sim2Config& config, int threads = 0);

}  // namespace distbalance
