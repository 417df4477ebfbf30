#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "preftrain/judge.hpp"

namespace preftrain {

struct DpoConfig {
  double beta_dpo = 0.1;
  int samples_per_instance = 2;
  double temperature = 0.7;

  void validate() const {
    if (!(beta_dpo > 0.0)) throw Error(ErrorCode::RangeError, "beta_dpo must be > 0");
    if (samples_per_instance < 2)
      throw Error(ErrorCode::RangeError, "samples_per_instance must be >= 2");
    if (!(temperature > 0.0)) throw Error(ErrorCode::RangeError, "temperature must be > 0");
  }
};

struct SampledResponse {
  EvaluationTrace trace;
  std::optional<double> logprob;  // under the policy that sampled it
  std::string sample_id;
  double temperature = 0.7;

  bool operator==(const SampledResponse&) const = default;

  Json to_json() const {
    Json j;
    j["sample_id"] = sample_id;
    j["temperature"] = temperature;
    if (logprob) j["logprob"] = *logprob;
    j["trace"] = trace_to_json(trace);
    return j;
  }

  static SampledResponse from_json(const Json& j) {
    SampledResponse r;
    if (!j.contains("sample_id")) throw Error(ErrorCode::SchemaError, "response missing 'sample_id'");
    r.sample_id = j["sample_id"].get<std::string>();
    if (!j.contains("temperature"))
      throw Error(ErrorCode::SchemaError, "response missing 'temperature'");
    r.temperature = j["temperature"].get<double>();
    if (!(r.temperature > 0.0)) throw Error(ErrorCode::RangeError, "temperature must be > 0");
    if (j.contains("logprob")) r.logprob = j["logprob"].get<double>();
    if (!j.contains("trace")) throw Error(ErrorCode::SchemaError, "response missing 'trace'");
    r.trace = trace_from_json(j["trace"]);
    return r;
  }
};

enum class PairRule { correctness, trajectory_judge };

inline const char* to_string(PairRule r) {
  return r == PairRule::correctness ? "correctness" : "trajectory_judge";
}

struct DpoPair {
  PreferenceInstance instance;
  SampledResponse chosen;
  SampledResponse rejected;
  PairRule pair_rule = PairRule::correctness;

  Json to_json() const {
    Json j;
    j["instance"] = instance.to_json();
    j["chosen"] = chosen.to_json();
    j["rejected"] = rejected.to_json();
    j["pair_rule"] = to_string(pair_rule);
    return j;
  }

  static DpoPair from_json(const Json& j) {
    DpoPair p;
    p.instance = PreferenceInstance::from_json(j.at("instance"));
    p.chosen = SampledResponse::from_json(j.at("chosen"));
    p.rejected = SampledResponse::from_json(j.at("rejected"));
    std::string rule = j.at("pair_rule").get<std::string>();
    if (rule == "correctness")
      p.pair_rule = PairRule::correctness;
    else if (rule == "trajectory_judge")
      p.pair_rule = PairRule::trajectory_judge;
    else
      throw Error(ErrorCode::SchemaError, "unknown pair_rule '" + rule + "'");
    return p;
  }
};

// 1 iff the trace's overall winner matches the gold label. Per-dimension
// winners do not enter the indicator.
inline int correctness(const SampledResponse& response, CandidateId gold) {
  return response.trace.overall_winner == gold ? 1 : 0;
}

// The preference-pair case table over (c(a), c(b)):
//   (1,0) -> (a,b)   (0,1) -> (b,a)   (1,1) -> trajectory judge   (0,0) -> none
template <typename Backend>
std::optional<DpoPair> build_pair(const PreferenceInstance& instance, const SampledResponse& resp_a,
                                  const SampledResponse& resp_b, CandidateId gold,
                                  const Backend& backend) {
  if (resp_a == resp_b)
    throw Error(ErrorCode::InvalidArgument, "the two sampled responses must be distinct");
  int ca = correctness(resp_a, gold);
  int cb = correctness(resp_b, gold);
  if (ca == 0 && cb == 0) return std::nullopt;
  DpoPair pair;
  pair.instance = instance;
  if (ca != cb) {
    pair.pair_rule = PairRule::correctness;
    pair.chosen = ca > cb ? resp_a : resp_b;
    pair.rejected = ca > cb ? resp_b : resp_a;
    return pair;
  }
  CandidateId preferred = judge_trajectory_quality(backend, instance, resp_a.trace, resp_b.trace);
  pair.pair_rule = PairRule::trajectory_judge;
  pair.chosen = preferred == CandidateId::A ? resp_a : resp_b;
  pair.rejected = preferred == CandidateId::A ? resp_b : resp_a;
  return pair;
}

// Standard DPO loss: -log sigmoid(beta * margin) with
// margin = (lp_theta_plus - lp_theta_minus) - (lp_ref_plus - lp_ref_minus).
// Depends on the four log-probs only through the margin.
inline double dpo_loss(double lp_theta_plus, double lp_theta_minus, double lp_ref_plus,
                       double lp_ref_minus, double beta) {
  if (!(beta > 0.0)) throw Error(ErrorCode::RangeError, "beta must be > 0");
  for (double v : {lp_theta_plus, lp_theta_minus, lp_ref_plus, lp_ref_minus})
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "non-finite log-probability");
  double margin = (lp_theta_plus - lp_theta_minus) - (lp_ref_plus - lp_ref_minus);
  double x = -beta * margin;  // loss = softplus(x), computed stably
  double loss = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "DPO loss is non-finite");
  return loss;
}

// ---------------------------------------------------------------------------
// SFT record assembly

struct SftBuildReport {
  int records = 0;
  std::vector<std::pair<std::string, std::string>> rejects;  // (instance_id, reason)
};

// Joins teacher traces (JSONL of {instance_id, trace}) against instances
// (JSONL of PreferenceInstance) into SftRecords. Bad rows land in the rejects
// file with a reason; they are never silently dropped.
inline SftBuildReport build_sft_records(const std::string& teacher_traces_path,
                                        const std::string& instances_path,
                                        const std::string& out_path,
                                        const std::string& rejects_path, const AnchorSet& anchors) {
  std::ifstream inst_in(instances_path, std::ios::binary);
  if (!inst_in) throw Error(ErrorCode::IoError, "cannot read instances: " + instances_path);
  std::map<std::string, PreferenceInstance> instances;
  std::string line;
  while (std::getline(inst_in, line)) {
    if (line.empty()) continue;
    PreferenceInstance inst = PreferenceInstance::from_json(Json::parse(line));
    if (!instances.emplace(inst.instance_id, inst).second)
      throw Error(ErrorCode::DuplicateKey, "duplicate instance id '" + inst.instance_id + "'");
  }

  std::ifstream traces_in(teacher_traces_path, std::ios::binary);
  if (!traces_in) throw Error(ErrorCode::IoError, "cannot read traces: " + teacher_traces_path);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write records: " + out_path);
  std::ofstream rejects(rejects_path, std::ios::binary);
  if (!rejects) throw Error(ErrorCode::IoError, "cannot write rejects: " + rejects_path);

  SftBuildReport report;
  std::size_t line_no = 0;
  while (std::getline(traces_in, line)) {
    line_no++;
    if (line.empty()) continue;
    std::string instance_id = "<line " + std::to_string(line_no) + ">";
    std::string reason;
    try {
      Json j = Json::parse(line);
      if (!j.contains("instance_id") || !j.contains("trace"))
        throw Error(ErrorCode::SchemaError, "teacher row needs 'instance_id' and 'trace'");
      instance_id = j["instance_id"].get<std::string>();
      EvaluationTrace trace = trace_from_json(j["trace"]);
      auto it = instances.find(instance_id);
      if (it == instances.end())
        throw Error(ErrorCode::SchemaError, "instance id '" + instance_id + "' does not resolve");
      ValidationReport validation = validate_trace(trace, anchors);
      if (!validation.ok()) {
        const auto& f = validation.findings.front();
        throw Error(ErrorCode::SchemaError,
                    std::string(to_string(f.cls)) + ": " + f.message);
      }
      SftRecord record{it->second, std::move(trace)};
      out << sft_record_to_json(record).dump() << "\n";
      report.records++;
      continue;
    } catch (const Error& e) {
      reason = e.what();
    } catch (const nlohmann::json::exception& e) {
      reason = std::string("SyntaxError: ") + e.what();
    }
    rejects << Json{{"instance_id", instance_id}, {"reason", reason}}.dump() << "\n";
    report.rejects.emplace_back(instance_id, reason);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Toy autoregressive categorical policy over verdict-token sequences

inline constexpr int kVerdictVocab = 16;

// Tokens: dimension k winner w -> 2k + w (k < 7), overall winner w -> 14 + w.
inline std::vector<int> encode_trace_tokens(const EvaluationTrace& trace) {
  if (trace.dimensions.size() > 7)
    throw Error(ErrorCode::RangeError, "token encoding supports at most 7 dimensions");
  std::vector<int> tokens;
  for (std::size_t k = 0; k < trace.dimensions.size(); k++)
    tokens.push_back(static_cast<int>(2 * k) +
                     (trace.dimensions[k].winner == CandidateId::B ? 1 : 0));
  tokens.push_back(14 + (trace.overall_winner == CandidateId::B ? 1 : 0));
  return tokens;
}

// Two-layer categorical autoregressive model: context = one-hot previous
// token plus one-hot position, one tanh hidden layer, softmax head.
struct ToySeqPolicy {
  int vocab = kVerdictVocab;
  int max_len = 8;
  int hidden = 12;
  std::vector<double> params;

  int input_dim() const { return vocab + max_len; }
  std::size_t param_count() const {
    return static_cast<std::size_t>(hidden) * input_dim() + hidden +
           static_cast<std::size_t>(vocab) * hidden + vocab;
  }

  static ToySeqPolicy init(int vocab, int max_len, int hidden, RngStream& rng) {
    ToySeqPolicy p;
    p.vocab = vocab;
    p.max_len = max_len;
    p.hidden = hidden;
    p.params.resize(p.param_count());
    double scale = 1.0 / std::sqrt(static_cast<double>(p.input_dim()));
    for (auto& v : p.params) v = scale * rng.normal();
    return p;
  }

  void validate_tokens(std::span<const int> tokens) const {
    if (tokens.empty() || static_cast<int>(tokens.size()) > max_len)
      throw Error(ErrorCode::RangeError, "token sequence length out of range");
    for (int t : tokens)
      if (t < 0 || t >= vocab) throw Error(ErrorCode::RangeError, "token id out of range");
  }

  // logits for position `pos` given previous token (-1 at the start).
  std::vector<double> logits(int prev, int pos) const {
    std::size_t w1 = 0;
    std::size_t b1 = static_cast<std::size_t>(hidden) * input_dim();
    std::size_t w2 = b1 + hidden;
    std::size_t b2 = w2 + static_cast<std::size_t>(vocab) * hidden;
    std::vector<double> h(static_cast<std::size_t>(hidden));
    for (int i = 0; i < hidden; i++) {
      double acc = params[b1 + static_cast<std::size_t>(i)];
      const double* row = &params[w1 + static_cast<std::size_t>(i) * input_dim()];
      if (prev >= 0) acc += row[prev];
      acc += row[vocab + pos];
      h[static_cast<std::size_t>(i)] = std::tanh(acc);
    }
    std::vector<double> out(static_cast<std::size_t>(vocab));
    for (int o = 0; o < vocab; o++) {
      double acc = params[b2 + static_cast<std::size_t>(o)];
      const double* row = &params[w2 + static_cast<std::size_t>(o) * hidden];
      for (int i = 0; i < hidden; i++) acc += row[i] * h[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(o)] = acc;
    }
    return out;
  }

  double seq_logprob(std::span<const int> tokens) const {
    validate_tokens(tokens);
    double lp = 0.0;
    int prev = -1;
    for (std::size_t pos = 0; pos < tokens.size(); pos++) {
      std::vector<double> z = logits(prev, static_cast<int>(pos));
      double zmax = *std::max_element(z.begin(), z.end());
      double lse = 0.0;
      for (double v : z) lse += std::exp(v - zmax);
      lse = zmax + std::log(lse);
      lp += z[static_cast<std::size_t>(tokens[pos])] - lse;
      prev = tokens[pos];
    }
    return lp;
  }

  // grad += weight * d seq_logprob / d params.
  void seq_logprob_grad(std::span<const int> tokens, double weight,
                        std::vector<double>& grad) const {
    validate_tokens(tokens);
    std::size_t w1 = 0;
    std::size_t b1 = static_cast<std::size_t>(hidden) * input_dim();
    std::size_t w2 = b1 + hidden;
    std::size_t b2 = w2 + static_cast<std::size_t>(vocab) * hidden;
    int prev = -1;
    for (std::size_t pos = 0; pos < tokens.size(); pos++) {
      // Forward with cached hidden activations.
      std::vector<double> h(static_cast<std::size_t>(hidden));
      for (int i = 0; i < hidden; i++) {
        double acc = params[b1 + static_cast<std::size_t>(i)];
        const double* row = &params[w1 + static_cast<std::size_t>(i) * input_dim()];
        if (prev >= 0) acc += row[prev];
        acc += row[vocab + static_cast<int>(pos)];
        h[static_cast<std::size_t>(i)] = std::tanh(acc);
      }
      std::vector<double> z(static_cast<std::size_t>(vocab));
      for (int o = 0; o < vocab; o++) {
        double acc = params[b2 + static_cast<std::size_t>(o)];
        const double* row = &params[w2 + static_cast<std::size_t>(o) * hidden];
        for (int i = 0; i < hidden; i++) acc += row[i] * h[static_cast<std::size_t>(i)];
        z[static_cast<std::size_t>(o)] = acc;
      }
      double zmax = *std::max_element(z.begin(), z.end());
      double lse = 0.0;
      for (double v : z) lse += std::exp(v - zmax);
      // d logp / d z_o = onehot(y) - softmax(z)
      std::vector<double> dz(static_cast<std::size_t>(vocab));
      for (int o = 0; o < vocab; o++) dz[static_cast<std::size_t>(o)] = -std::exp(z[static_cast<std::size_t>(o)] - zmax) / lse;
      dz[static_cast<std::size_t>(tokens[pos])] += 1.0;
      std::vector<double> dh(static_cast<std::size_t>(hidden), 0.0);
      for (int o = 0; o < vocab; o++) {
        double d = weight * dz[static_cast<std::size_t>(o)];
        const double* row = &params[w2 + static_cast<std::size_t>(o) * hidden];
        double* grow = &grad[w2 + static_cast<std::size_t>(o) * hidden];
        for (int i = 0; i < hidden; i++) {
          grow[i] += d * h[static_cast<std::size_t>(i)];
          dh[static_cast<std::size_t>(i)] += d * row[i];
        }
        grad[b2 + static_cast<std::size_t>(o)] += d;
      }
      for (int i = 0; i < hidden; i++) {
        double d = dh[static_cast<std::size_t>(i)] * (1.0 - h[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)]);
        double* grow = &grad[w1 + static_cast<std::size_t>(i) * input_dim()];
        if (prev >= 0) grow[prev] += d;
        grow[vocab + static_cast<int>(pos)] += d;
        grad[b1 + static_cast<std::size_t>(i)] += d;
      }
      prev = tokens[pos];
    }
  }

  Json to_json() const {
    return Json{{"vocab", vocab}, {"max_len", max_len}, {"hidden", hidden}, {"params", params}};
  }

  static ToySeqPolicy from_json(const Json& j) {
    ToySeqPolicy p;
    p.vocab = j.at("vocab").get<int>();
    p.max_len = j.at("max_len").get<int>();
    p.hidden = j.at("hidden").get<int>();
    p.params = j.at("params").get<std::vector<double>>();
    if (p.vocab < 2 || p.max_len < 1 || p.hidden < 1 || p.params.size() != p.param_count())
      throw Error(ErrorCode::SchemaError, "bad toy policy checkpoint");
    return p;
  }

  // Temperature sampling of a fixed-length sequence.
  std::vector<int> sample(int length, double temperature, RngStream& rng) const {
    if (length < 1 || length > max_len)
      throw Error(ErrorCode::RangeError, "sample length out of range");
    if (!(temperature > 0.0)) throw Error(ErrorCode::RangeError, "temperature must be > 0");
    std::vector<int> tokens;
    int prev = -1;
    for (int pos = 0; pos < length; pos++) {
      std::vector<double> z = logits(prev, pos);
      double zmax = *std::max_element(z.begin(), z.end());
      double total = 0.0;
      std::vector<double> p(z.size());
      for (std::size_t o = 0; o < z.size(); o++) {
        p[o] = std::exp((z[o] - zmax) / temperature);
        total += p[o];
      }
      double u = rng.uniform() * total;
      int pick = vocab - 1;
      double acc = 0.0;
      for (std::size_t o = 0; o < p.size(); o++) {
        acc += p[o];
        if (u < acc) {
          pick = static_cast<int>(o);
          break;
        }
      }
      tokens.push_back(pick);
      prev = pick;
    }
    return tokens;
  }
};

struct DpoTrainRow {
  int step = 0;
  double loss = 0.0;
  double margin = 0.0;  // mean beta-scaled implied reward margin
};

struct DpoTrainResult {
  ToySeqPolicy policy;
  std::vector<DpoTrainRow> metrics;
};

// Gradient descent on the mean DPO loss over (chosen, rejected) token pairs,
// with the initial policy frozen as the reference.
inline DpoTrainResult train_toy_dpo(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                                    const DpoConfig& cfg, ToySeqPolicy policy, int steps,
                                    double lr) {
  cfg.validate();
  if (pairs.empty()) throw Error(ErrorCode::InvalidArgument, "train_toy_dpo requires pairs");
  if (steps < 0) throw Error(ErrorCode::RangeError, "steps must be >= 0");
  ToySeqPolicy reference = policy;
  DpoTrainResult result;
  std::vector<double> grad(policy.param_count());
  double inv_n = 1.0 / static_cast<double>(pairs.size());
  for (int step = 0; step < steps; step++) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss_acc = 0.0;
    double margin_acc = 0.0;
    for (const auto& [chosen, rejected] : pairs) {
      double lp_plus = policy.seq_logprob(chosen);
      double lp_minus = policy.seq_logprob(rejected);
      double lr_plus = reference.seq_logprob(chosen);
      double lr_minus = reference.seq_logprob(rejected);
      double margin = (lp_plus - lp_minus) - (lr_plus - lr_minus);
      loss_acc += dpo_loss(lp_plus, lp_minus, lr_plus, lr_minus, cfg.beta_dpo) * inv_n;
      margin_acc += cfg.beta_dpo * margin * inv_n;
      // d loss / d margin = -beta * sigmoid(-beta * margin)
      double s = 1.0 / (1.0 + std::exp(cfg.beta_dpo * margin));
      double dmargin = -cfg.beta_dpo * s * inv_n;
      policy.seq_logprob_grad(chosen, dmargin, grad);
      policy.seq_logprob_grad(rejected, -dmargin, grad);
    }
    if (!std::isfinite(loss_acc)) throw Error(ErrorCode::NonFiniteLoss, "DPO loss diverged");
    for (std::size_t i = 0; i < grad.size(); i++) policy.params[i] -= lr * grad[i];
    result.metrics.push_back({step, loss_acc, margin_acc});
  }
  result.policy = std::move(policy);
  return result;
}

// ---------------------------------------------------------------------------
// Pair-construction pipeline over files

struct BuildPairsReport {
  int pairs = 0;
  int discarded_both_incorrect = 0;
  int rejects = 0;
  std::map<std::string, int> case_counts;  // "correctness" / "trajectory_judge"
};

// responses: JSONL {instance_id, sample_id, temperature, trace}
// gold:      JSONL PreferenceInstance with gold_label set
// manual:    optional JSONL {instance_id, chosen_sample_id} overriding the
//            trajectory judge in the both-correct case
template <typename Backend>
BuildPairsReport build_pairs_file(const std::string& responses_path, const std::string& gold_path,
                                  const Backend& backend, const std::string& out_path,
                                  const std::string& rejects_path,
                                  const std::string& manual_path = "") {
  std::ifstream gold_in(gold_path, std::ios::binary);
  if (!gold_in) throw Error(ErrorCode::IoError, "cannot read gold instances: " + gold_path);
  std::map<std::string, PreferenceInstance> instances;
  std::string line;
  while (std::getline(gold_in, line)) {
    if (line.empty()) continue;
    PreferenceInstance inst = PreferenceInstance::from_json(Json::parse(line));
    if (!instances.emplace(inst.instance_id, inst).second)
      throw Error(ErrorCode::DuplicateKey, "duplicate instance id '" + inst.instance_id + "'");
  }

  std::map<std::string, std::string> manual;
  if (!manual_path.empty()) {
    std::ifstream manual_in(manual_path, std::ios::binary);
    if (!manual_in) throw Error(ErrorCode::IoError, "cannot read manual review: " + manual_path);
    while (std::getline(manual_in, line)) {
      if (line.empty()) continue;
      Json j = Json::parse(line);
      manual[j.at("instance_id").get<std::string>()] =
          j.at("chosen_sample_id").get<std::string>();
    }
  }

  std::ifstream resp_in(responses_path, std::ios::binary);
  if (!resp_in) throw Error(ErrorCode::IoError, "cannot read responses: " + responses_path);
  std::map<std::string, std::vector<SampledResponse>> grouped;
  std::vector<std::string> order;  // deterministic output order: first appearance
  std::size_t line_no = 0;
  std::ofstream rejects(rejects_path, std::ios::binary);
  if (!rejects) throw Error(ErrorCode::IoError, "cannot write rejects: " + rejects_path);
  BuildPairsReport report;
  auto reject = [&](const std::string& id, const std::string& reason) {
    rejects << Json{{"instance_id", id}, {"reason", reason}}.dump() << "\n";
    report.rejects++;
  };
  while (std::getline(resp_in, line)) {
    line_no++;
    if (line.empty()) continue;
    try {
      Json j = Json::parse(line);
      std::string id = j.at("instance_id").get<std::string>();
      if (grouped.find(id) == grouped.end()) order.push_back(id);
      grouped[id].push_back(SampledResponse::from_json(j));
    } catch (const std::exception& e) {
      reject("<line " + std::to_string(line_no) + ">", e.what());
    }
  }

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write pairs: " + out_path);
  for (const auto& id : order) {
    const auto& responses = grouped[id];
    auto inst_it = instances.find(id);
    if (inst_it == instances.end()) {
      reject(id, "no gold instance for this id");
      continue;
    }
    if (!inst_it->second.gold_label) {
      reject(id, "gold instance has no gold_label");
      continue;
    }
    if (responses.size() != 2) {
      reject(id, "expected exactly 2 responses, got " + std::to_string(responses.size()));
      continue;
    }
    try {
      std::optional<DpoPair> pair =
          build_pair(inst_it->second, responses[0], responses[1], *inst_it->second.gold_label,
                     backend);
      if (!pair) {
        report.discarded_both_incorrect++;
        continue;
      }
      // Manual review overrides the judge in the both-correct case only.
      auto manual_it = manual.find(id);
      if (pair->pair_rule == PairRule::trajectory_judge && manual_it != manual.end()) {
        const std::string& want = manual_it->second;
        if (pair->rejected.sample_id == want) std::swap(pair->chosen, pair->rejected);
        else if (pair->chosen.sample_id != want)
          throw Error(ErrorCode::SchemaError,
                      "manual review names unknown sample id '" + want + "'");
      }
      out << pair->to_json().dump() << "\n";
      report.pairs++;
      report.case_counts[to_string(pair->pair_rule)]++;
    } catch (const Error& e) {
      reject(id, e.what());
    }
  }
  return report;
}

}  // namespace preftrain
