#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "preftrain/tournament.hpp"

namespace preftrain {

struct MixConfig {
  double alpha = 0.7;
  double epsilon = 1e-8;  // degenerate-std floor

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw Error(ErrorCode::RangeError, "alpha must lie in [0, 1]");
    if (!(epsilon > 0.0)) throw Error(ErrorCode::RangeError, "epsilon must be > 0");
  }
};

struct AdvantageVector {
  enum class Source { dim_mean, overall, combined };

  std::vector<double> values;
  Source source = Source::overall;
  double alpha = 0.0;      // set for source == combined
  bool degenerate = false;  // group std was <= epsilon; values are all zero
};

// Group-relative standardization: (R - mean) / std with the population (1/G)
// std convention. sigma <= epsilon yields the all-zeros vector: a constant
// reward group carries no learning signal.
inline AdvantageVector standardize(const RewardVector& rewards, double epsilon) {
  if (rewards.values.size() < 2)
    throw Error(ErrorCode::RangeError, "standardize requires a group of size >= 2");
  AdvantageVector adv;
  adv.source = rewards.kind == RewardVector::Kind::dim_mean ? AdvantageVector::Source::dim_mean
                                                            : AdvantageVector::Source::overall;
  double n = static_cast<double>(rewards.values.size());
  double mean = 0.0;
  for (double v : rewards.values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : rewards.values) var += (v - mean) * (v - mean);
  var /= n;
  double sd = std::sqrt(var);
  if (sd <= epsilon) {
    adv.degenerate = true;
    adv.values.assign(rewards.values.size(), 0.0);
    return adv;
  }
  for (double v : rewards.values) adv.values.push_back((v - mean) / sd);
  return adv;
}

// alpha * A_dim + (1 - alpha) * A_overall, elementwise. The endpoints return
// the corresponding input bitwise.
inline AdvantageVector combine(const AdvantageVector& a_dim, const AdvantageVector& a_overall,
                               const MixConfig& cfg) {
  cfg.validate();
  if (a_dim.values.size() != a_overall.values.size())
    throw Error(ErrorCode::LengthMismatch, "advantage vectors have different lengths");
  if (a_dim.source != AdvantageVector::Source::dim_mean ||
      a_overall.source != AdvantageVector::Source::overall)
    throw Error(ErrorCode::InvalidArgument,
                "combine expects (dim_mean, overall) advantage sources");
  AdvantageVector out;
  out.source = AdvantageVector::Source::combined;
  out.alpha = cfg.alpha;
  out.degenerate = a_dim.degenerate && a_overall.degenerate;
  if (cfg.alpha == 1.0) {
    out.values = a_dim.values;
    return out;
  }
  if (cfg.alpha == 0.0) {
    out.values = a_overall.values;
    return out;
  }
  out.values.reserve(a_dim.values.size());
  for (std::size_t i = 0; i < a_dim.values.size(); i++)
    out.values.push_back(cfg.alpha * a_dim.values[i] + (1.0 - cfg.alpha) * a_overall.values[i]);
  return out;
}

}  // namespace preftrain
