#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "preftrain/trace.hpp"

namespace preftrain {

// Deterministic synthetic judge. Stands in for a VLM judge so the reward math
// is testable: every verdict is a pure function of (instance, OracleParams).

struct DynamicRule {
  std::string flag;       // trigger: PromptSpec constraint flag name
  std::string dimension;  // dimension instantiated when triggered
  std::string scorer;     // registered scoring function id
};

struct OracleParams {
  enum class OverallRule { majority_with_alignment_tiebreak };

  AnchorSet anchors = AnchorSet::toy();
  std::vector<DynamicRule> dynamic_rules = {
      {"min_spread", "spread", "spread"},
      {"symmetry", "symmetry", "symmetry"},
  };
  OverallRule overall_rule = OverallRule::majority_with_alignment_tiebreak;
  // Size and seed of the frozen per-prompt reference sample behind the
  // "alignment" scorer. Part of the params so scores stay pure.
  int ref_sample_size = 128;
  std::uint64_t ref_seed = 0x5eedf00dcafe1234ull;
  double bounds_halfwidth = 1.0;  // "quality" in-bounds box: [-w, w]^2
};

namespace detail {

inline double mean_pairwise_dist(const std::vector<Vec2>& xs, const std::vector<Vec2>& ys) {
  double acc = 0.0;
  for (const auto& x : xs)
    for (const auto& y : ys) acc += dist(x, y);
  return acc / (static_cast<double>(xs.size()) * static_cast<double>(ys.size()));
}

// Energy distance between a point set and the prompt's target mixture,
// estimated against a frozen reference sample drawn from the mixture.
inline double energy_distance_to_target(const OracleParams& params, const PromptSpec& prompt,
                                        const std::vector<Vec2>& points) {
  RngStream rng = RngStream::derive(params.ref_seed, "oracle-ref", prompt.stable_hash());
  std::vector<Vec2> ref(static_cast<std::size_t>(params.ref_sample_size));
  for (auto& p : ref) p = prompt.sample(rng);
  return 2.0 * mean_pairwise_dist(points, ref) - mean_pairwise_dist(points, points) -
         mean_pairwise_dist(ref, ref);
}

inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

using ScorerFn = std::function<double(const OracleParams&, const PromptSpec&, const Candidate&)>;

inline const std::map<std::string, ScorerFn>& scorer_registry() {
  static const std::map<std::string, ScorerFn> registry = {
      // Higher is better for every scorer.
      {"alignment",
       [](const OracleParams& p, const PromptSpec& s, const Candidate& c) {
         return -detail::energy_distance_to_target(p, s, c.points);
       }},
      {"quality",
       [](const OracleParams& p, const PromptSpec&, const Candidate& c) {
         double w = p.bounds_halfwidth;
         std::size_t in = 0;
         for (const auto& pt : c.points)
           if (pt.x >= -w && pt.x <= w && pt.y >= -w && pt.y <= w) in++;
         return static_cast<double>(in) / static_cast<double>(c.points.size());
       }},
      {"centering",
       [](const OracleParams&, const PromptSpec& s, const Candidate& c) {
         return -dist(c.centroid(), s.mixture_mean());
       }},
      {"dispersion",
       [](const OracleParams&, const PromptSpec& s, const Candidate& c) {
         return -std::abs(c.total_variance() - s.mixture_variance());
       }},
      {"spread",
       [](const OracleParams&, const PromptSpec& s, const Candidate& c) {
         double v = c.total_variance();
         // Saturate smoothly at the prompt's threshold: strictly increasing
         // (no exact ties between distinct spreads), diminishing past t.
         if (s.constraints.min_spread) {
           double t = *s.constraints.min_spread;
           return t * (1.0 - std::exp(-v / t));
         }
         return v;
       }},
      {"symmetry",
       [](const OracleParams&, const PromptSpec&, const Candidate& c) {
         std::vector<Vec2> mirrored;
         mirrored.reserve(c.points.size());
         for (const auto& p : c.points) mirrored.push_back({-p.x, p.y});
         return -(2.0 * detail::mean_pairwise_dist(c.points, mirrored) -
                  2.0 * detail::mean_pairwise_dist(c.points, c.points));
       }},
  };
  return registry;
}

inline void validate_oracle_params(const OracleParams& params) {
  params.anchors.validate();
  const auto& registry = scorer_registry();
  for (const auto& a : params.anchors.anchors)
    if (registry.find(a) == registry.end())
      throw Error(ErrorCode::UnknownDimension, "anchor '" + a + "' has no registered scorer");
  for (const auto& r : params.dynamic_rules) {
    if (registry.find(r.scorer) == registry.end())
      throw Error(ErrorCode::UnknownDimension, "dynamic rule scorer '" + r.scorer + "' not registered");
    if (params.anchors.is_anchor(r.dimension))
      throw Error(ErrorCode::InvalidArgument,
                  "dynamic dimension '" + r.dimension + "' collides with an anchor");
  }
  if (params.ref_sample_size < 1)
    throw Error(ErrorCode::RangeError, "ref_sample_size must be >= 1");
}

inline bool rule_triggered(const DynamicRule& rule, const PromptSpec& prompt) {
  if (rule.flag == "min_spread") return prompt.constraints.min_spread.has_value();
  if (rule.flag == "symmetry") return prompt.constraints.symmetry;
  return false;
}

inline std::vector<const DynamicRule*> triggered_rules(const OracleParams& params,
                                                       const PromptSpec& prompt) {
  std::vector<const DynamicRule*> out;
  for (const auto& r : params.dynamic_rules)
    if (rule_triggered(r, prompt)) out.push_back(&r);
  return out;
}

// Per-dimension scalar before comparison. `dimension` must be an anchor or a
// dynamic dimension triggered by this prompt.
inline double oracle_score(const OracleParams& params, const PromptSpec& prompt,
                           const Candidate& candidate, const std::string& dimension) {
  std::string scorer_id;
  if (params.anchors.is_anchor(dimension)) {
    scorer_id = dimension;
  } else {
    for (const auto& r : params.dynamic_rules) {
      if (r.dimension == dimension) {
        if (!rule_triggered(r, prompt))
          throw Error(ErrorCode::UnknownDimension,
                      "dynamic dimension '" + dimension + "' not triggered by this prompt");
        scorer_id = r.scorer;
        break;
      }
    }
    if (scorer_id.empty())
      throw Error(ErrorCode::UnknownDimension, "unknown dimension '" + dimension + "'");
  }
  double v = scorer_registry().at(scorer_id)(params, prompt, candidate);
  if (!std::isfinite(v))
    throw Error(ErrorCode::NonFiniteState, "scorer '" + scorer_id + "' produced a non-finite score");
  return v;
}

// Full oracle judgment of one instance. Exact score ties raise Tie: the trace
// format has no abstention, the tournament layer owns the half-win rule.
inline EvaluationTrace oracle_judge_pair(const OracleParams& params,
                                         const PreferenceInstance& instance) {
  validate_oracle_params(params);
  const PromptSpec& prompt = instance.prompt.require_spec();
  const Candidate& a = instance.candidate_a.require_points();
  const Candidate& b = instance.candidate_b.require_points();

  std::vector<std::pair<std::string, DimensionKind>> dims;
  for (const auto& anchor : params.anchors.anchors) dims.emplace_back(anchor, DimensionKind::anchor);
  for (const auto* rule : triggered_rules(params, prompt))
    dims.emplace_back(rule->dimension, DimensionKind::dynamic);

  EvaluationTrace trace;
  trace.provenance = Provenance::oracle;
  int votes_a = 0;
  std::string reasoning;
  for (const auto& [name, kind] : dims) {
    double sa = oracle_score(params, prompt, a, name);
    double sb = oracle_score(params, prompt, b, name);
    if (sa == sb)
      throw Error(ErrorCode::Tie, "exact score tie on dimension '" + name + "'");
    CandidateId winner = sa > sb ? CandidateId::A : CandidateId::B;
    if (winner == CandidateId::A) votes_a++;
    DimensionBlock block;
    block.name = name;
    block.kind = kind;
    block.sub_criteria.push_back(
        {"scores", "A=" + detail::format_score(sa) + " B=" + detail::format_score(sb)});
    block.sub_criteria.push_back({"margin", detail::format_score(std::abs(sa - sb))});
    block.winner = winner;
    trace.dimensions.push_back(std::move(block));
    reasoning += name + ": " + to_string(winner) + " leads by " +
                 detail::format_score(std::abs(sa - sb)) + ". ";
  }
  int votes_b = static_cast<int>(dims.size()) - votes_a;
  if (votes_a != votes_b) {
    trace.overall_winner = votes_a > votes_b ? CandidateId::A : CandidateId::B;
  } else {
    // Tied vote: the first anchor (the alignment-role dimension) decides.
    trace.overall_winner = trace.dimensions.front().winner;
  }
  reasoning += "overall: " + std::string(to_string(trace.overall_winner)) + " (" +
               std::to_string(votes_a) + "-" + std::to_string(votes_b) + " votes).";
  trace.reasoning = std::move(reasoning);
  return trace;
}

// Reasoning-quality order for two traces that both picked the correct winner.
// Ranks by: dynamic dimensions correctly instantiated for this prompt, then
// total sub-criteria count, then a stable hash coin.
inline CandidateId oracle_rank_traces(const OracleParams& params, const PreferenceInstance& instance,
                                      const EvaluationTrace& trace_a, const EvaluationTrace& trace_b) {
  auto dynamic_hits = [&](const EvaluationTrace& t) {
    int hits = 0;
    if (instance.prompt.spec)
      for (const auto* rule : triggered_rules(params, *instance.prompt.spec))
        if (t.find(rule->dimension) != nullptr) hits++;
    return hits;
  };
  auto sub_count = [](const EvaluationTrace& t) {
    std::size_t n = 0;
    for (const auto& d : t.dimensions) n += d.sub_criteria.size();
    return n;
  };
  int ha = dynamic_hits(trace_a), hb = dynamic_hits(trace_b);
  if (ha != hb) return ha > hb ? CandidateId::A : CandidateId::B;
  std::size_t sa = sub_count(trace_a), sb = sub_count(trace_b);
  if (sa != sb) return sa > sb ? CandidateId::A : CandidateId::B;
  std::uint64_t ta = hash_combine(instance.stable_hash(), fnv1a(serialize_trace(trace_a)));
  std::uint64_t tb = hash_combine(instance.stable_hash(), fnv1a(serialize_trace(trace_b)));
  if (ta != tb) return ta > tb ? CandidateId::A : CandidateId::B;
  return (ta & 1) == 0 ? CandidateId::A : CandidateId::B;
}

}  // namespace preftrain
