#include "distbalance/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <ostream>
#include <sstream>

#include "distbalance/csv.hpp"
#include "distbalance/deb.hpp"
#include "distbalance/diagnostics.hpp"
#include "distbalance/dps.hpp"
#include "distbalance/effects.hpp"
#include "distbalance/error.hpp"
#include "distbalance/simulation.hpp"

namespace distbalance {

namespace {

using nlohmann::ordered_json;

enum class Method { eb, deb, cbps, dps };

struct DataOptions {
  std::string input;
  std::string output;
  std::string report;
  std::string treatment_col = "treatment";
  std::string outcome_col;
  std::string weight_col;
  std::vector<std::string> mean_covariates;
  std::vector<std::string> quantile_covariates;
  Method method = Method::deb;
  Identification identification = Identification::over;
  QuantileVariant variant = QuantileVariant::step;
  double slope = 0.0;
  std::vector<double> alphas = effect_alphas();
  std::string format = "csv";
};

struct SimOptions {
  std::string study = "deb";
  std::string design = "D1";
  std::string outcome = "Y1";
  std::string spec = "correct";
  int reps = 500;
  std::uint64_t seed = 1;
  int n = 1000;
  int threads = 0;
  double x5_df = 1.0;
  int raw_size = 0;
  std::vector<std::string> methods;
  std::string format = "csv";
  std::string output;
  std::string balance_output;
  int replication = 0;  // generate only
};

bool is_propensity(Method m) { return m == Method::cbps || m == Method::dps; }

QuantileBalance parse_quantile_request(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw Error(ErrorKind::input,
                "quantile request '" + text + "' must look like name:alpha[,alpha...]");
  }
  QuantileBalance q;
  q.covariate = text.substr(0, colon);
  const std::string list = text.substr(colon + 1);
  if (list == "quartiles") {
    q.alphas = quartiles();
  } else if (list == "deciles") {
    q.alphas = deciles();
  } else {
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto v = parse_number(item);
      if (!v) throw Error(ErrorKind::input, "bad quantile order '" + item + "' in '" + text + "'");
      q.alphas.push_back(*v);
    }
  }
  return q;
}

// Spec from the flags; with no covariates named everything is balanced at
// the mean, plus deciles for the distributional methods.
BalanceSpec make_spec(const DataOptions& o, const ObservationalDataset& data) {
  BalanceSpec spec;
  spec.variant = o.variant;
  spec.logistic_slope = o.slope;
  spec.mean_covariates = o.mean_covariates;
  for (const auto& q : o.quantile_covariates) spec.quantile_covariates.push_back(parse_quantile_request(q));
  if (spec.mean_covariates.empty() && spec.quantile_covariates.empty()) {
    spec.mean_covariates = data.covariate_names;
    if (o.method == Method::deb || o.method == Method::dps) {
      std::vector<std::string> continuous;
      for (int j = 0; j < data.covariates.cols(); ++j) {
        if (!data.is_binary_column(j)) continuous.push_back(data.name(j));
      }
      spec.quantile_covariates = at_orders(continuous, deciles());
    }
  }
  if ((o.method == Method::eb || o.method == Method::cbps) && !spec.quantile_covariates.empty()) {
    throw Error(ErrorKind::input,
                "quantile constraints need --method deb or dps; eb and cbps balance means only");
  }
  spec.validate();
  return spec;
}

std::vector<std::string> spec_covariates(const BalanceSpec& spec) {
  std::vector<std::string> names = spec.mean_covariates;
  for (const auto& q : spec.quantile_covariates) {
    if (std::find(names.begin(), names.end(), q.covariate) == names.end()) {
      names.push_back(q.covariate);
    }
  }
  return names;
}

ObservationalDataset load(const DataOptions& o, bool need_outcome) {
  if (o.input.empty()) throw Error(ErrorKind::input, "--input is required");
  if (need_outcome && o.outcome_col.empty()) {
    throw Error(ErrorKind::input, "--outcome-col is required for effect estimation");
  }
  DatasetColumns cols;
  cols.treatment = o.treatment_col;
  if (!o.outcome_col.empty()) cols.outcome = o.outcome_col;
  if (!o.weight_col.empty()) cols.weight = o.weight_col;
  const auto table = read_csv(o.input);
  auto data = to_dataset(table, cols);
  return data;
}

std::string column_label(const ConstraintColumn& c) {
  switch (c.kind) {
    case ColumnKind::intercept: return "(intercept)";
    case ColumnKind::mean: return "mean(" + c.covariate + ")";
    case ColumnKind::quantile: return "q" + format_number(c.alpha) + "(" + c.covariate + ")";
  }
  return c.covariate;
}

struct Fitted {
  PsWeights weights;
  std::optional<Vector> propensity;
  ordered_json solver;
  std::vector<std::string> warnings;
};

Fitted fit(const DataOptions& o, const ObservationalDataset& data, const BalanceSpec& spec) {
  Fitted f;
  if (!is_propensity(o.method)) {
    const auto r = deb_weights(data, spec);
    f.weights.control = r.control_weights(data.units());
    f.weights.treated = uniform_weights(data.treatment).treated;
    f.warnings = r.system.warnings;
    ordered_json dropped = ordered_json::array();
    for (int j : r.solution.dropped_columns) dropped.push_back(column_label(r.system.columns[j]));
    f.solver = {{"solver", "entropy"},
                {"converged", r.solution.converged},
                {"iterations", r.solution.iterations},
                {"residual", r.solution.residual_norm},
                {"constraints", r.system.columns.size()},
                {"dropped_constraints", dropped}};
  } else {
    const auto design = build_augmented_design(data, spec);
    const auto p = fit_dps(design, data.treatment, o.identification);
    f.weights = ps_weights(p, data.treatment);
    f.propensity = p.fitted_ps;
    f.warnings = design.warnings;
    ordered_json dropped = ordered_json::array();
    for (int j : p.dropped_columns) dropped.push_back(column_label(design.columns[j]));
    ordered_json coef = ordered_json::object();
    for (std::size_t j = 0; j < design.columns.size(); ++j) {
      coef[column_label(design.columns[j])] = p.gamma[static_cast<Eigen::Index>(j)];
    }
    f.solver = {{"solver", "propensity"},
                {"identification", o.identification == Identification::just ? "just" : "over"},
                {"converged", p.converged},
                {"iterations", p.iterations},
                {"gmm_objective", p.gmm_objective},
                {"coefficients", coef},
                {"dropped_columns", dropped}};
  }
  return f;
}

ordered_json balance_json(const BalanceReport& r, const std::vector<std::string>& names) {
  ordered_json gaps = ordered_json::object();
  for (std::size_t j = 0; j < names.size(); ++j) gaps[names[j]] = r.mean_gaps[static_cast<Eigen::Index>(j)];
  return {{"cvm", r.cvm}, {"ks", r.ks}, {"mean_gaps", gaps}};
}

Matrix select_covariates(const ObservationalDataset& data, const std::vector<std::string>& names) {
  Matrix x(data.covariates.rows(), static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const int c = data.column_index(names[j]);
    if (c < 0) throw Error(ErrorKind::input, "unknown covariate '" + names[j] + "'");
    x.col(static_cast<Eigen::Index>(j)) = data.covariates.col(c);
  }
  return x;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::eb: return "eb";
    case Method::deb: return "deb";
    case Method::cbps: return "cbps";
    case Method::dps: return "dps";
  }
  return "";
}

void emit(const std::string& path, std::ostream& out, const std::string& text) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorKind::input, "cannot write '" + path + "'");
  file << text;
  if (!file) throw Error(ErrorKind::input, "failed writing '" + path + "'");
}

std::vector<std::vector<std::string>> weight_rows(const ObservationalDataset& data, const Fitted& f) {
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < data.units(); ++i) {
    const bool treated = data.treatment[i] == 1;
    std::vector<std::string> row{std::to_string(i + 1), std::to_string(data.treatment[i]),
                                 format_number(treated ? f.weights.treated[i] : f.weights.control[i])};
    if (f.propensity) row.push_back(format_number((*f.propensity)[i]));
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_balance(const DataOptions& o, std::ostream& out) {
  const auto data = load(o, false);
  const auto spec = make_spec(o, data);
  const auto f = fit(o, data, spec);

  const auto names = spec_covariates(spec);
  const Matrix x = select_covariates(data, names);
  ordered_json report;
  report["method"] = method_name(o.method);
  report["units"] = data.units();
  report["treated"] = data.treated_count();
  report["controls"] = data.control_count();
  report["diagnostics"] = f.solver;
  report["warnings"] = f.warnings;
  report["balance"] = {{"before", balance_json(balance_statistics(x, uniform_weights(data.treatment)), names)},
                       {"after", balance_json(balance_statistics(x, f.weights), names)}};

  std::vector<std::string> header{"unit", "treatment", "weight"};
  if (f.propensity) header.push_back("propensity");
  const auto rows = weight_rows(data, f);

  if (o.format == "json") {
    ordered_json weights = ordered_json::array();
    for (const auto& r : rows) {
      ordered_json w = {{"unit", std::stoi(r[0])}, {"treatment", std::stoi(r[1])},
                        {"weight", *parse_number(r[2])}};
      if (f.propensity) w["propensity"] = *parse_number(r[3]);
      weights.push_back(w);
    }
    report["weights"] = weights;
    emit(o.output, out, report.dump(2) + "\n");
  } else {
    std::ostringstream csv;
    write_csv(csv, header, rows);
    emit(o.output, out, csv.str());
  }
  if (!o.report.empty()) emit(o.report, out, report.dump(2) + "\n");
  return 0;
}

int cmd_effects(const DataOptions& o, std::ostream& out) {
  const auto data = load(o, true);
  const auto spec = make_spec(o, data);
  const auto f = fit(o, data, spec);
  for (double a : o.alphas) {
    if (!(a > 0.0 && a < 1.0)) throw Error(ErrorKind::domain, "quantile orders must lie in (0, 1)");
  }

  std::vector<EffectReport> effects;
  if (!is_propensity(o.method)) {
    effects.push_back(estimate_att(data, f.weights.control));
    for (double a : o.alphas) effects.push_back(estimate_qtt(data, f.weights.control, a));
  } else {
    effects.push_back(estimate_ate(data, f.weights));
    for (double a : o.alphas) effects.push_back(estimate_qte(data, f.weights, a));
  }

  if (o.format == "json") {
    ordered_json rows = ordered_json::array();
    for (const auto& e : effects) {
      rows.push_back({{"estimand", std::string(to_string(e.estimand))},
                      {"alpha", e.alpha ? ordered_json(*e.alpha) : ordered_json(nullptr)},
                      {"estimate", e.estimate},
                      {"treated_component", e.treated_component},
                      {"control_component", e.control_component}});
    }
    ordered_json doc = {{"method", method_name(o.method)},
                        {"diagnostics", f.solver},
                        {"warnings", f.warnings},
                        {"effects", rows}};
    emit(o.output, out, doc.dump(2) + "\n");
  } else {
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : effects) {
      rows.push_back({std::string(to_string(e.estimand)), e.alpha ? format_number(*e.alpha) : "",
                      format_number(e.estimate), format_number(e.treated_component),
                      format_number(e.control_component)});
    }
    std::ostringstream csv;
    write_csv(csv, {"estimand", "alpha", "estimate", "treated_component", "control_component"}, rows);
    emit(o.output, out, csv.str());
  }
  if (!o.report.empty()) {
    ordered_json doc = {{"diagnostics", f.solver}, {"warnings", f.warnings}};
    emit(o.report, out, doc.dump(2) + "\n");
  }
  return 0;
}

Design parse_design(const std::string& s) {
  if (s == "D1") return Design::D1;
  if (s == "D2") return Design::D2;
  if (s == "D3") return Design::D3;
  throw Error(ErrorKind::input, "unknown design '" + s + "' (expected D1, D2 or D3)");
}

OutcomeModel parse_outcome(const std::string& s) {
  if (s == "Y1") return OutcomeModel::Y1;
  if (s == "Y2") return OutcomeModel::Y2;
  if (s == "Y3") return OutcomeModel::Y3;
  throw Error(ErrorKind::input, "unknown outcome model '" + s + "' (expected Y1, Y2 or Y3)");
}

Specification parse_specification(const std::string& s) {
  if (s == "correct") return Specification::correct;
  if (s == "misspecified") return Specification::misspecified;
  throw Error(ErrorKind::input, "unknown specification '" + s + "'");
}

Sim1Config sim1_config(const SimOptions& o) {
  Sim1Config c;
  c.design = parse_design(o.design);
  c.outcome = parse_outcome(o.outcome);
  c.n_per_group = o.n;
  c.replications = o.reps;
  c.seed = o.seed;
  c.raw_size = o.raw_size;
  c.x5_df = o.x5_df;
  if (!o.methods.empty()) {
    c.methods.clear();
    for (const auto& m : o.methods) {
      const auto parsed = parse_sim1_method(m);
      if (!parsed) throw Error(ErrorKind::input, "unknown method '" + m + "' for the deb study");
      c.methods.push_back(*parsed);
    }
  }
  c.validate();
  return c;
}

Sim2Config sim2_config(const SimOptions& o) {
  Sim2Config c;
  c.specification = parse_specification(o.spec);
  c.n = o.n;
  c.replications = o.reps;
  c.seed = o.seed;
  if (!o.methods.empty()) {
    c.methods.clear();
    for (const auto& m : o.methods) {
      const auto parsed = parse_sim2_method(m);
      if (!parsed) throw Error(ErrorKind::input, "unknown method '" + m + "' for the dps study");
      c.methods.push_back(*parsed);
    }
  }
  c.validate();
  return c;
}

int cmd_simulate(const SimOptions& o, std::ostream& out) {
  SimulationTable table;
  ordered_json config;
  if (o.study == "deb") {
    const auto c = sim1_config(o);
    table = run_monte_carlo(c, o.threads);
    config = {{"study", "deb"}, {"design", o.design}, {"outcome", o.outcome},
              {"n_per_group", c.n_per_group}, {"replications", c.replications},
              {"seed", c.seed}, {"x5_df", c.x5_df},
              {"raw_size", c.raw_size > 0 ? c.raw_size : 10 * c.n_per_group}};
  } else if (o.study == "dps") {
    const auto c = sim2_config(o);
    table = run_monte_carlo(c, o.threads);
    config = {{"study", "dps"}, {"specification", o.spec}, {"n", c.n},
              {"replications", c.replications}, {"seed", c.seed}};
  } else {
    throw Error(ErrorKind::input, "unknown study '" + o.study + "' (expected deb or dps)");
  }

  if (o.format == "json") {
    ordered_json rows = ordered_json::array();
    for (const auto& r : table.rows) {
      rows.push_back({{"method", r.method},
                      {"estimand", std::string(to_string(r.estimand))},
                      {"alpha", r.alpha ? ordered_json(*r.alpha) : ordered_json(nullptr)},
                      {"truth", r.truth},
                      {"mean_estimate", r.mean_estimate},
                      {"bias", r.bias},
                      {"variance", r.variance},
                      {"rmse", r.rmse},
                      {"replications", r.replications}});
    }
    ordered_json balance = ordered_json::array();
    for (const auto& b : table.balance) {
      balance.push_back({{"method", b.method},
                         {"cvm_mean", b.cvm_mean},
                         {"cvm_median", b.cvm_median},
                         {"ks_mean", b.ks_mean},
                         {"ks_median", b.ks_median}});
    }
    ordered_json failures = ordered_json::object();
    for (const auto& [m, k] : table.failures) failures[m] = k;
    ordered_json doc = {{"config", config}, {"rows", rows}, {"balance", balance}, {"failures", failures}};
    emit(o.output, out, doc.dump(2) + "\n");
  } else {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : table.rows) {
      rows.push_back({r.method, std::string(to_string(r.estimand)),
                      r.alpha ? format_number(*r.alpha) : "", format_number(r.bias),
                      format_number(r.variance), format_number(r.rmse)});
    }
    std::ostringstream csv;
    write_csv(csv, {"method", "estimand", "alpha", "bias", "variance", "rmse"}, rows);
    emit(o.output, out, csv.str());
  }
  if (!o.balance_output.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& b : table.balance) {
      rows.push_back({b.method, format_number(b.cvm_mean), format_number(b.cvm_median),
                      format_number(b.ks_mean), format_number(b.ks_median)});
    }
    std::ostringstream csv;
    write_csv(csv, {"method", "cvm_mean", "cvm_median", "ks_mean", "ks_median"}, rows);
    emit(o.balance_output, out, csv.str());
  }
  return 0;
}

int cmd_generate(const SimOptions& o, std::ostream& out) {
  if (o.replication < 0) throw Error(ErrorKind::input, "--replication must be nonnegative");
  const ReplicationRng rng(o.seed, static_cast<std::uint64_t>(o.replication));
  ObservationalDataset data;
  if (o.study == "deb") {
    auto c = sim1_config(o);
    data = generate_sim1(c, rng);
  } else if (o.study == "dps") {
    data = generate_sim2(sim2_config(o), rng).data;
  } else {
    throw Error(ErrorKind::input, "unknown study '" + o.study + "' (expected deb or dps)");
  }
  std::ostringstream csv;
  write_dataset(csv, data);
  emit(o.output, out, csv.str());
  return 0;
}

void add_data_options(CLI::App& cmd, DataOptions& o) {
  const std::map<std::string, Method> methods{
      {"eb", Method::eb}, {"deb", Method::deb}, {"cbps", Method::cbps}, {"dps", Method::dps}};
  const std::map<std::string, Identification> ids{{"just", Identification::just},
                                                  {"over", Identification::over}};
  const std::map<std::string, QuantileVariant> variants{{"step", QuantileVariant::step},
                                                        {"logistic", QuantileVariant::logistic}};
  cmd.add_option("--input", o.input, "Input CSV with a header row")->required();
  cmd.add_option("--output", o.output, "Output path (stdout when omitted)");
  cmd.add_option("--report", o.report, "Also write the JSON diagnostics report here");
  cmd.add_option("--treatment-col", o.treatment_col, "Treatment column (values 0/1)")
      ->capture_default_str();
  cmd.add_option("--outcome-col", o.outcome_col, "Outcome column");
  cmd.add_option("--weight-col", o.weight_col, "Base (design) weight column");
  cmd.add_option("--mean-covariates", o.mean_covariates, "Covariates balanced at the mean")
      ->delimiter(',');
  cmd.add_option("--quantile-covariates", o.quantile_covariates,
                 "name:alpha[,alpha...] or name:quartiles|deciles; repeatable");
  cmd.add_option("--method", o.method, "eb, deb, cbps or dps")
      ->transform(CLI::CheckedTransformer(methods, CLI::ignore_case))
      ->capture_default_str();
  cmd.add_option("--identification", o.identification, "Propensity moments: just or over")
      ->transform(CLI::CheckedTransformer(ids, CLI::ignore_case));
  cmd.add_option("--variant", o.variant, "Quantile constraint form: step or logistic")
      ->transform(CLI::CheckedTransformer(variants, CLI::ignore_case));
  cmd.add_option("--slope", o.slope, "Logistic slope (default from the data spread)");
  cmd.add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
}

void add_sim_options(CLI::App& cmd, SimOptions& o, bool generate) {
  cmd.add_option("--study", o.study, "deb or dps")->check(CLI::IsMember({"deb", "dps"}))
      ->capture_default_str();
  cmd.add_option("--design", o.design, "D1, D2 or D3 (deb study)")->capture_default_str();
  cmd.add_option("--outcome", o.outcome, "Y1, Y2 or Y3 (deb study)")->capture_default_str();
  cmd.add_option("--spec", o.spec, "correct or misspecified (dps study)")
      ->check(CLI::IsMember({"correct", "misspecified"}))
      ->capture_default_str();
  cmd.add_option("--seed", o.seed, "Random seed")->capture_default_str();
  cmd.add_option("--n", o.n, "Units per arm (deb) or sample size (dps)")->capture_default_str();
  cmd.add_option("--x5-df", o.x5_df, "Degrees of freedom of X5 (deb study)")->capture_default_str();
  cmd.add_option("--raw-size", o.raw_size, "Units drawn before resampling (0: 10 per analysed unit)");
  cmd.add_option("--output", o.output, "Output path (stdout when omitted)");
  if (generate) {
    cmd.add_option("--replication", o.replication, "Replication index")->capture_default_str();
    return;
  }
  cmd.add_option("--reps", o.reps, "Monte Carlo replications")->capture_default_str();
  cmd.add_option("--threads", o.threads, "Worker threads (0: all cores)");
  cmd.add_option("--methods", o.methods, "Methods to run, e.g. eb,deb-md or cbps-o,dps-o-d")
      ->delimiter(',');
  cmd.add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  cmd.add_option("--balance-output", o.balance_output, "CSV path for the balance summary");
}

void write_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  const ordered_json doc = {{"error", kind}, {"message", message}, {"exit_code", code}};
  err << doc.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distributional covariate balancing: weights, effects and simulations"};
  app.name("distbalance");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML config file; command line flags take precedence");

  DataOptions balance_opts;
  DataOptions effects_opts;
  SimOptions sim_opts;
  SimOptions gen_opts;
  auto* balance = app.add_subcommand("balance", "Estimate balancing weights and report balance");
  add_data_options(*balance, balance_opts);
  auto* effects = app.add_subcommand("effects", "Estimate ATT/QTT or ATE/QTE");
  add_data_options(*effects, effects_opts);
  effects->add_option("--alphas", effects_opts.alphas, "Quantile orders")->delimiter(',');
  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo study");
  add_sim_options(*simulate, sim_opts, false);
  auto* generate = app.add_subcommand("generate", "Write one simulated dataset as CSV");
  add_sim_options(*generate, gen_opts, true);

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    write_error(err, "input", e.what(), 2);
    return 2;
  }

  try {
    if (balance->parsed()) return cmd_balance(balance_opts, out);
    if (effects->parsed()) return cmd_effects(effects_opts, out);
    if (simulate->parsed()) return cmd_simulate(sim_opts, out);
    return cmd_generate(gen_opts, out);
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    write_error(err, std::string(to_string(e.kind())), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    write_error(err, "internal", e.what(), 1);
    return 1;
  }
}

}  // namespace distbalance
