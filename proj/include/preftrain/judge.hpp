#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "preftrain/oracle.hpp"
#include "preftrain/remote.hpp"

namespace preftrain {

// Judge backend: the deterministic oracle or a remote VLM endpoint. Tests may
// also drive debiased_judge with any type exposing the same judge()/anchors()
// surface (e.g. a flaky double).
class JudgeBackend {
 public:
  static JudgeBackend oracle(OracleParams params) {
    validate_oracle_params(params);
    JudgeBackend b;
    b.oracle_ = std::move(params);
    return b;
  }

  static JudgeBackend remote(RemoteConfig config) {
    config.validate();
    JudgeBackend b;
    b.remote_ = std::move(config);
    return b;
  }

  bool is_oracle() const { return oracle_.has_value(); }
  const OracleParams& oracle_params() const { return *oracle_; }

  const AnchorSet& anchors() const { return oracle_ ? oracle_->anchors : remote_->anchors; }

  EvaluationTrace judge(const PreferenceInstance& instance) const {
    if (oracle_) return oracle_judge_pair(*oracle_, instance);
    return remote_judge_pair(*remote_, instance);
  }

  CandidateId rank_traces(const PreferenceInstance& instance, const EvaluationTrace& trace_a,
                          const EvaluationTrace& trace_b) const {
    if (oracle_) return oracle_rank_traces(*oracle_, instance, trace_a, trace_b);
    return remote_judge_trajectory(*remote_, instance, trace_a, trace_b);
  }

 private:
  JudgeBackend() = default;
  std::optional<OracleParams> oracle_;
  std::optional<RemoteConfig> remote_;
};

template <typename Backend>
EvaluationTrace judge_pair(const Backend& backend, const PreferenceInstance& instance) {
  return backend.judge(instance);
}

// Aggregate of the two order-swapped judgments of one pair.
struct PairOutcome {
  CandidateId winner = CandidateId::A;
  std::vector<std::pair<std::string, CandidateId>> per_dim;  // forward-trace order
  std::vector<EvaluationTrace> traces;  // [forward, reversed]; the reversed
                                        // trace's labels refer to the swapped
                                        // presentation order
  bool debiased = false;
  std::vector<std::string> conflicts;  // slots the coin had to decide
};

namespace detail {

// Coin for order-conflicting slots. Picks a candidate identity (not a label):
// derived from the order-invariant instance hash, so the choice survives
// swapping candidate_a/candidate_b.
inline CandidateId debias_coin(const PreferenceInstance& instance, const std::string& slot) {
  bool heads = (hash_combine(instance.stable_hash(), fnv1a(slot)) & 1) == 0;
  bool a_is_low = instance.candidate_a.stable_hash() <= instance.candidate_b.stable_hash();
  return heads == a_is_low ? CandidateId::A : CandidateId::B;
}

}  // namespace detail

// Evaluates (A,B) and (B,A). A candidate takes a slot only by winning it under
// both orders; disagreements fall to the deterministic coin and are recorded.
template <typename Backend>
PairOutcome debiased_judge(const Backend& backend, const PreferenceInstance& instance) {
  EvaluationTrace forward = backend.judge(instance);
  EvaluationTrace reversed = backend.judge(instance.swapped());

  PairOutcome outcome;
  outcome.debiased = true;

  auto resolve = [&](const std::string& slot, CandidateId fwd, CandidateId rev_mapped) {
    if (fwd == rev_mapped) return fwd;
    outcome.conflicts.push_back(slot);
    return detail::debias_coin(instance, slot);
  };

  for (const auto& dim : forward.dimensions) {
    const DimensionBlock* rev = reversed.find(dim.name);
    if (rev == nullptr) continue;  // present under one order only: not comparable
    outcome.per_dim.emplace_back(dim.name, resolve(dim.name, dim.winner, opposite(rev->winner)));
  }
  outcome.winner = resolve("overall", forward.overall_winner, opposite(reversed.overall_winner));
  outcome.traces = {std::move(forward), std::move(reversed)};
  return outcome;
}

// Orders two traces that both predicted the correct winner; A means trace_a
// is the better-reasoned one.
template <typename Backend>
CandidateId judge_trajectory_quality(const Backend& backend, const PreferenceInstance& instance,
                                     const EvaluationTrace& trace_a,
                                     const EvaluationTrace& trace_b) {
  return backend.rank_traces(instance, trace_a, trace_b);
}

}  // namespace preftrain
