#pragma once

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "preftrain/judge.hpp"

namespace preftrain {

enum class Verdict { A, B, Tie };  // in a pair (i, j): A = i preferred, B = j

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::A: return "A";
    case Verdict::B: return "B";
    case Verdict::Tie: return "tie";
  }
  return "tie";
}

inline Verdict verdict_from_string(const std::string& s) {
  if (s == "A") return Verdict::A;
  if (s == "B") return Verdict::B;
  if (s == "tie") return Verdict::Tie;
  throw Error(ErrorCode::SchemaError, "verdict must be \"A\", \"B\" or \"tie\"");
}

struct PairResult {
  int i = 0;
  int j = 0;  // i < j
  Verdict overall = Verdict::Tie;
  std::vector<std::pair<std::string, Verdict>> dims;
  int conflicts = 0;
};

// All pairwise verdicts within one rollout group.
struct ComparisonMatrix {
  int group_size = 0;
  std::string prompt_id;
  AnchorSet anchors;
  std::vector<PairResult> pairs;  // lexicographic (i, j) order, i < j

  void validate() const {
    if (group_size < 2) throw Error(ErrorCode::RangeError, "group size must be >= 2");
    std::size_t expected =
        static_cast<std::size_t>(group_size) * static_cast<std::size_t>(group_size - 1) / 2;
    if (pairs.size() != expected)
      throw Error(ErrorCode::LengthMismatch, "matrix must have exactly G(G-1)/2 pair entries");
    for (const auto& p : pairs)
      if (p.i < 0 || p.j <= p.i || p.j >= group_size)
        throw Error(ErrorCode::RangeError, "pair entry references candidates outside the group");
  }

  Json to_json() const {
    Json pj = Json::array();
    for (const auto& p : pairs) {
      Json dims = Json::array();
      for (const auto& [name, v] : p.dims)
        dims.push_back(Json{{"name", name}, {"winner", to_string(v)}});
      pj.push_back(Json{{"i", p.i},
                        {"j", p.j},
                        {"overall", to_string(p.overall)},
                        {"dims", std::move(dims)},
                        {"conflicts", p.conflicts}});
    }
    Json j;
    j["group_size"] = group_size;
    j["prompt_id"] = prompt_id;
    j["anchors"] = anchors.to_json();
    j["pairs"] = std::move(pj);
    return j;
  }

  static ComparisonMatrix from_json(const Json& j) {
    ComparisonMatrix m;
    m.group_size = j.at("group_size").get<int>();
    m.prompt_id = j.at("prompt_id").get<std::string>();
    m.anchors = AnchorSet::from_json(j.at("anchors"));
    for (const auto& pj : j.at("pairs")) {
      PairResult p;
      p.i = pj.at("i").get<int>();
      p.j = pj.at("j").get<int>();
      p.overall = verdict_from_string(pj.at("overall").get<std::string>());
      for (const auto& d : pj.at("dims"))
        p.dims.emplace_back(d.at("name").get<std::string>(),
                            verdict_from_string(d.at("winner").get<std::string>()));
      p.conflicts = pj.at("conflicts").get<int>();
      m.pairs.push_back(std::move(p));
    }
    m.validate();
    return m;
  }
};

struct RewardVector {
  enum class Kind { overall, dim, dim_mean };

  std::vector<double> values;  // one per candidate, each in [0, 1]
  Kind kind = Kind::overall;
  std::string dim_name;  // set for kind == dim
};

namespace detail {

inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t k = 0; k < n; k++) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error = nullptr;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      std::size_t k = next.fetch_add(1);
      if (k >= n) return;
      try {
        fn(k);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; w++) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

// Full round robin over the group. A Tie from the judging layer becomes a
// recorded tie row (half-win per side); any other judge error aborts the
// whole tournament so no partial reward vector can leak out.
template <typename Backend>
ComparisonMatrix run_tournament(const std::vector<Candidate>& group, const PromptSpec& prompt,
                                const Backend& backend, int workers = 1) {
  if (group.size() < 2) throw Error(ErrorCode::RangeError, "tournament requires G >= 2");
  ComparisonMatrix matrix;
  matrix.group_size = static_cast<int>(group.size());
  matrix.prompt_id = prompt.prompt_id;
  matrix.anchors = backend.anchors();

  std::vector<std::pair<int, int>> keys;
  for (int i = 0; i < matrix.group_size; i++)
    for (int j = i + 1; j < matrix.group_size; j++) keys.emplace_back(i, j);
  matrix.pairs.resize(keys.size());

  detail::parallel_for(keys.size(), workers, [&](std::size_t k) {
    auto [i, j] = keys[k];
    PairResult result;
    result.i = i;
    result.j = j;
    bool tie = group[static_cast<std::size_t>(i)] == group[static_cast<std::size_t>(j)];
    if (!tie) {
      PreferenceInstance instance;
      instance.instance_id =
          prompt.prompt_id + "#" + std::to_string(i) + "-" + std::to_string(j);
      instance.prompt = PromptValue::of(prompt);
      instance.candidate_a = CandidateRef::of(group[static_cast<std::size_t>(i)]);
      instance.candidate_b = CandidateRef::of(group[static_cast<std::size_t>(j)]);
      try {
        PairOutcome outcome = debiased_judge(backend, instance);
        result.overall = outcome.winner == CandidateId::A ? Verdict::A : Verdict::B;
        for (const auto& [name, w] : outcome.per_dim)
          result.dims.emplace_back(name, w == CandidateId::A ? Verdict::A : Verdict::B);
        result.conflicts = static_cast<int>(outcome.conflicts.size());
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Tie) throw;
        tie = true;
      }
    }
    if (tie) {
      result.overall = Verdict::Tie;
      for (const auto& a : backend.anchors().anchors) result.dims.emplace_back(a, Verdict::Tie);
    }
    matrix.pairs[k] = std::move(result);
  });
  matrix.validate();
  return matrix;
}

// Win counts in half-win units: win = 2, tie = 1. Integer-exact, so the
// conservation law sum(halfwins) = G(G-1) holds without rounding.
inline std::vector<int> overall_win_halfcounts(const ComparisonMatrix& matrix) {
  matrix.validate();
  std::vector<int> half(static_cast<std::size_t>(matrix.group_size), 0);
  for (const auto& p : matrix.pairs) {
    switch (p.overall) {
      case Verdict::A: half[static_cast<std::size_t>(p.i)] += 2; break;
      case Verdict::B: half[static_cast<std::size_t>(p.j)] += 2; break;
      case Verdict::Tie:
        half[static_cast<std::size_t>(p.i)] += 1;
        half[static_cast<std::size_t>(p.j)] += 1;
        break;
    }
  }
  return half;
}

// Normalized overall win rate per candidate.
inline RewardVector overall_win_rates(const ComparisonMatrix& matrix) {
  std::vector<int> half = overall_win_halfcounts(matrix);
  RewardVector r;
  r.kind = RewardVector::Kind::overall;
  double denom = 2.0 * (matrix.group_size - 1);
  for (int h : half) r.values.push_back(static_cast<double>(h) / denom);
  return r;
}

// Win rate per candidate under one dimension. Anchors are present in every
// pair by schema; other names are normalized by the number of comparisons in
// which the dimension was actually judged for that candidate.
inline RewardVector dim_win_rates(const ComparisonMatrix& matrix, const std::string& dimension) {
  matrix.validate();
  std::size_t g = static_cast<std::size_t>(matrix.group_size);
  std::vector<int> half(g, 0), present(g, 0);
  for (const auto& p : matrix.pairs) {
    for (const auto& [name, v] : p.dims) {
      if (name != dimension) continue;
      present[static_cast<std::size_t>(p.i)]++;
      present[static_cast<std::size_t>(p.j)]++;
      switch (v) {
        case Verdict::A: half[static_cast<std::size_t>(p.i)] += 2; break;
        case Verdict::B: half[static_cast<std::size_t>(p.j)] += 2; break;
        case Verdict::Tie:
          half[static_cast<std::size_t>(p.i)] += 1;
          half[static_cast<std::size_t>(p.j)] += 1;
          break;
      }
    }
  }
  bool is_anchor = matrix.anchors.is_anchor(dimension);
  int total_present = 0;
  for (std::size_t i = 0; i < g; i++) total_present += present[i];
  if (total_present == 0)
    throw Error(ErrorCode::DimensionNeverJudged,
                "dimension '" + dimension + "' was not judged in any pair");
  RewardVector r;
  r.kind = RewardVector::Kind::dim;
  r.dim_name = dimension;
  for (std::size_t i = 0; i < g; i++) {
    int denom = is_anchor ? 2 * (matrix.group_size - 1) : 2 * present[i];
    r.values.push_back(denom == 0 ? 0.0 : static_cast<double>(half[i]) / denom);
  }
  return r;
}

// Elementwise mean of the D anchor win-rate vectors.
inline RewardVector mean_dim_win_rates(const ComparisonMatrix& matrix, const AnchorSet& anchors) {
  anchors.validate();
  RewardVector r;
  r.kind = RewardVector::Kind::dim_mean;
  r.values.assign(static_cast<std::size_t>(matrix.group_size), 0.0);
  double inv_d = 1.0 / static_cast<double>(anchors.anchors.size());
  for (const auto& a : anchors.anchors) {
    RewardVector rd = dim_win_rates(matrix, a);
    for (std::size_t i = 0; i < r.values.size(); i++) r.values[i] += rd.values[i] * inv_d;
  }
  return r;
}

}  // namespace preftrain
