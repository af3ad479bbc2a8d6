#pragma once

#include <optional>
#include <string_view>

#include "distbalance/dataset.hpp"
#include "distbalance/dps.hpp"

namespace distbalance {

enum class Estimand { ATT, QTT, ATE, QTE };

std::string_view to_string(Estimand e) noexcept;

struct EffectReport {
  Estimand estimand = Estimand::ATT;
  std::optional<double> alpha;
  double estimate = 0.0;
  double treated_component = 0.0;
  double control_component = 0.0;
};

// `control_weights` are full length; entries on treated rows are ignored.
EffectReport estimate_att(const ObservationalDataset& data, const Vector& control_weights);
EffectReport estimate_qtt(const ObservationalDataset& data, const Vector& control_weights,
                          double alpha);

EffectReport estimate_ate(const ObservationalDataset& data, const PsWeights& weights);
EffectReport estimate_qte(const ObservationalDataset& data, const PsWeights& weights, double alpha);

}  // namespace distbalance
