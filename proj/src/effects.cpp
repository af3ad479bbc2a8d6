#include "distbalance/effects.hpp"

#include <cmath>

#include "distbalance/error.hpp"
#include "distbalance/quantile.hpp"

namespace distbalance {

namespace {

const Vector& outcome_of(const ObservationalDataset& data) {
  if (!data.outcome) throw Error(ErrorKind::input, "dataset has no outcome column");
  if (data.outcome->size() != data.units()) {
    throw Error(ErrorKind::input, "outcome length does not match");
  }
  return *data.outcome;
}

// Outcomes and weights of one group.
struct Group {
  std::vector<double> y;
  std::vector<double> w;
};

Group group(const ObservationalDataset& data, const Vector& weights, int arm) {
  const Vector& y = outcome_of(data);
  if (weights.size() != data.units()) throw Error(ErrorKind::input, "weight length does not match");
  Group g;
  double total = 0.0;
  for (int k = 0; k < data.units(); ++k) {
    if (data.treatment[k] != arm) continue;
    const double w = weights[k];
    if (!std::isfinite(w) || w < 0.0) {
      throw Error(ErrorKind::invalid_weights, "group weights must be finite and nonnegative");
    }
    g.y.push_back(y[k]);
    g.w.push_back(w);
    total += w;
  }
  if (!(total > 0.0)) throw Error(ErrorKind::invalid_weights, "group weights sum to zero");
  return g;
}

double weighted_mean(const Group& g) {
  double sw = 0.0;
  double swy = 0.0;
  for (std::size_t k = 0; k < g.y.size(); ++k) {
    sw += g.w[k];
    swy += g.w[k] * g.y[k];
  }
  return swy / sw;
}

double quantile_of(const Group& g, double alpha) {
  return weighted_quantile(SortedColumn(g.y), g.w, alpha);
}

EffectReport report(Estimand e, std::optional<double> alpha, double treated, double control) {
  return {e, alpha, treated - control, treated, control};
}

}  // namespace

std::string_view to_string(Estimand e) noexcept {
  switch (e) {
    case Estimand::ATT: return "ATT";
    case Estimand::QTT: return "QTT";
    case Estimand::ATE: return "ATE";
    case Estimand::QTE: return "QTE";
  }
  return "?";
}

EffectReport estimate_att(const ObservationalDataset& data, const Vector& control_weights) {
  const Vector ones = Vector::Ones(data.units());
  const auto treated = group(data, ones, 1);
  const auto control = group(data, control_weights, 0);
  return report(Estimand::ATT, std::nullopt, weighted_mean(treated), weighted_mean(control));
}

EffectReport estimate_qtt(const ObservationalDataset& data, const Vector& control_weights,
                          double alpha) {
  const Vector ones = Vector::Ones(data.units());
  const auto treated = group(data, ones, 1);
  const auto control = group(data, control_weights, 0);
  return report(Estimand::QTT, alpha, quantile_of(treated, alpha), quantile_of(control, alpha));
}

EffectReport estimate_ate(const ObservationalDataset& data, const PsWeights& weights) {
  const auto treated = group(data, weights.treated, 1);
  const auto control = group(data, weights.control, 0);
  return report(Estimand::ATE, std::nullopt, weighted_mean(treated), weighted_mean(control));
}

EffectReport estimate_qte(const ObservationalDataset& data, const PsWeights& weights, double alpha) {
  const auto treated = group(data, weights.treated, 1);
  const auto control = group(data, weights.control, 0);
  return report(Estimand::QTE, alpha, quantile_of(treated, alpha), quantile_of(control, alpha));
}

}  // namespace distbalance
