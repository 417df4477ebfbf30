#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "preftrain/candidate.hpp"

namespace preftrain {

enum class CandidateId { A, B };

inline CandidateId opposite(CandidateId c) {
  return c == CandidateId::A ? CandidateId::B : CandidateId::A;
}

inline const char* to_string(CandidateId c) { return c == CandidateId::A ? "A" : "B"; }

inline CandidateId candidate_id_from_string(const std::string& s) {
  if (s == "A") return CandidateId::A;
  if (s == "B") return CandidateId::B;
  throw Error(ErrorCode::SchemaError, "winner must be \"A\" or \"B\", got \"" + s + "\"");
}

enum class DimensionKind { anchor, dynamic };
enum class Provenance { oracle, remote, human };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::oracle: return "oracle";
    case Provenance::remote: return "remote";
    case Provenance::human: return "human";
  }
  return "oracle";
}

struct SubCriterion {
  std::string name;
  std::string finding;

  bool operator==(const SubCriterion&) const = default;
};

struct DimensionBlock {
  std::string name;
  DimensionKind kind = DimensionKind::anchor;
  std::vector<SubCriterion> sub_criteria;
  CandidateId winner = CandidateId::A;

  bool operator==(const DimensionBlock&) const = default;
};

// Structured judge output: dimension hierarchy, free-text reasoning, winners.
struct EvaluationTrace {
  std::vector<DimensionBlock> dimensions;
  std::string reasoning;
  CandidateId overall_winner = CandidateId::A;
  Provenance provenance = Provenance::oracle;

  bool operator==(const EvaluationTrace&) const = default;

  const DimensionBlock* find(const std::string& name) const {
    for (const auto& d : dimensions)
      if (d.name == name) return &d;
    return nullptr;
  }
};

// The D always-present dimensions for a task. Any dimension name outside the
// anchor list is dynamic.
struct AnchorSet {
  enum class Task { image_like, video_like, toy };

  Task task = Task::toy;
  std::vector<std::string> anchors;

  bool operator==(const AnchorSet&) const = default;

  void validate() const {
    if (anchors.empty()) throw Error(ErrorCode::SchemaError, "anchor set must be non-empty");
    std::set<std::string> seen;
    for (const auto& a : anchors)
      if (!seen.insert(a).second)
        throw Error(ErrorCode::SchemaError, "duplicate anchor name '" + a + "'");
  }

  bool is_anchor(const std::string& name) const {
    return std::find(anchors.begin(), anchors.end(), name) != anchors.end();
  }

  static AnchorSet toy() {
    // Continuous scorers only: exact ties between distinct candidates are
    // measure-zero, so tournaments keep a usable signal.
    return {Task::toy, {"alignment", "centering", "dispersion"}};
  }
  static AnchorSet image_like() {
    return {Task::image_like, {"semantic_alignment", "visual_quality", "aesthetics"}};
  }
  static AnchorSet video_like() {
    return {Task::video_like, {"semantic_alignment", "visual_quality", "temporal_coherence"}};
  }

  static const char* task_name(Task t) {
    switch (t) {
      case Task::image_like: return "image_like";
      case Task::video_like: return "video_like";
      case Task::toy: return "toy";
    }
    return "toy";
  }

  Json to_json() const {
    return Json{{"task", task_name(task)}, {"anchors", anchors}};
  }

  static AnchorSet from_json(const Json& j) {
    AnchorSet s;
    std::string t = j.at("task").get<std::string>();
    if (t == "image_like")
      s.task = Task::image_like;
    else if (t == "video_like")
      s.task = Task::video_like;
    else if (t == "toy")
      s.task = Task::toy;
    else
      throw Error(ErrorCode::SchemaError, "unknown anchor task '" + t + "'");
    s.anchors = j.at("anchors").get<std::vector<std::string>>();
    s.validate();
    return s;
  }
};

// Prompt plus two candidates, optionally with a gold preference label.
struct PreferenceInstance {
  std::string instance_id;
  PromptValue prompt;
  CandidateRef candidate_a;
  CandidateRef candidate_b;
  std::optional<CandidateId> gold_label;

  bool operator==(const PreferenceInstance&) const = default;

  void validate() const {
    if (candidate_a == candidate_b)
      throw Error(ErrorCode::SchemaError, "candidate_a and candidate_b must be distinct");
  }

  PreferenceInstance swapped() const {
    PreferenceInstance s = *this;
    std::swap(s.candidate_a, s.candidate_b);
    if (s.gold_label) s.gold_label = opposite(*s.gold_label);
    return s;
  }

  // Order-invariant: identical for (a,b) and (b,a). Debias coins and verdict
  // caches key off this.
  std::uint64_t stable_hash() const {
    std::uint64_t ha = candidate_a.stable_hash();
    std::uint64_t hb = candidate_b.stable_hash();
    std::uint64_t pair = hash_mix(ha + hb) ^ hash_mix(ha ^ hb);
    return hash_combine(fnv1a(instance_id), hash_combine(prompt.stable_hash(), pair));
  }

  Json to_json() const {
    Json j;
    j["instance_id"] = instance_id;
    j["prompt"] = prompt.to_json();
    j["candidate_a"] = candidate_a.to_json();
    j["candidate_b"] = candidate_b.to_json();
    if (gold_label) j["gold_label"] = to_string(*gold_label);
    return j;
  }

  static PreferenceInstance from_json(const Json& j) {
    PreferenceInstance p;
    if (!j.contains("instance_id") || !j["instance_id"].is_string())
      throw Error(ErrorCode::SchemaError, "instance missing string field 'instance_id'");
    p.instance_id = j["instance_id"].get<std::string>();
    if (!j.contains("prompt")) throw Error(ErrorCode::SchemaError, "instance missing field 'prompt'");
    p.prompt = PromptValue::from_json(j["prompt"]);
    if (!j.contains("candidate_a") || !j.contains("candidate_b"))
      throw Error(ErrorCode::SchemaError, "instance missing candidate_a/candidate_b");
    p.candidate_a = CandidateRef::from_json(j["candidate_a"]);
    p.candidate_b = CandidateRef::from_json(j["candidate_b"]);
    if (j.contains("gold_label"))
      p.gold_label = candidate_id_from_string(j["gold_label"].get<std::string>());
    p.validate();
    return p;
  }
};

struct SftRecord {
  PreferenceInstance instance;
  EvaluationTrace target_trace;

  bool operator==(const SftRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Trace wire format

inline Json trace_to_json(const EvaluationTrace& t) {
  Json dims = Json::array();
  for (const auto& d : t.dimensions) {
    Json subs = Json::array();
    for (const auto& s : d.sub_criteria)
      subs.push_back(Json{{"name", s.name}, {"finding", s.finding}});
    dims.push_back(Json{{"name", d.name},
                        {"kind", d.kind == DimensionKind::anchor ? "anchor" : "dynamic"},
                        {"sub_criteria", std::move(subs)},
                        {"winner", to_string(d.winner)}});
  }
  Json j;
  j["dimensions"] = std::move(dims);
  j["reasoning"] = t.reasoning;
  j["overall_winner"] = to_string(t.overall_winner);
  j["provenance"] = to_string(t.provenance);
  return j;
}

inline std::string serialize_trace(const EvaluationTrace& t) { return trace_to_json(t).dump(); }

inline EvaluationTrace trace_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, "trace document must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "dimensions" && key != "reasoning" && key != "overall_winner" && key != "provenance")
      throw Error(ErrorCode::SchemaError, "unknown trace field '" + key + "'");
  }
  EvaluationTrace t;
  if (!j.contains("dimensions") || !j["dimensions"].is_array())
    throw Error(ErrorCode::SchemaError, "trace missing array field 'dimensions'");
  for (const auto& d : j["dimensions"]) {
    DimensionBlock b;
    if (!d.contains("name") || !d["name"].is_string())
      throw Error(ErrorCode::SchemaError, "dimension missing string field 'name'");
    b.name = d["name"].get<std::string>();
    if (!d.contains("kind")) throw Error(ErrorCode::SchemaError, "dimension missing field 'kind'");
    std::string kind = d["kind"].get<std::string>();
    if (kind == "anchor")
      b.kind = DimensionKind::anchor;
    else if (kind == "dynamic")
      b.kind = DimensionKind::dynamic;
    else
      throw Error(ErrorCode::SchemaError, "dimension kind must be \"anchor\" or \"dynamic\"");
    if (!d.contains("sub_criteria") || !d["sub_criteria"].is_array())
      throw Error(ErrorCode::SchemaError, "dimension missing array field 'sub_criteria'");
    for (const auto& s : d["sub_criteria"]) {
      if (!s.contains("name") || !s.contains("finding"))
        throw Error(ErrorCode::SchemaError, "sub-criterion needs 'name' and 'finding'");
      b.sub_criteria.push_back({s["name"].get<std::string>(), s["finding"].get<std::string>()});
    }
    if (!d.contains("winner"))
      throw Error(ErrorCode::SchemaError, "dimension '" + b.name + "' missing field 'winner'");
    b.winner = candidate_id_from_string(d["winner"].get<std::string>());
    t.dimensions.push_back(std::move(b));
  }
  if (t.dimensions.empty()) throw Error(ErrorCode::SchemaError, "trace must have at least one dimension");
  if (!j.contains("reasoning") || !j["reasoning"].is_string())
    throw Error(ErrorCode::SchemaError, "trace missing string field 'reasoning'");
  t.reasoning = j["reasoning"].get<std::string>();
  if (!j.contains("overall_winner"))
    throw Error(ErrorCode::SchemaError, "trace missing field 'overall_winner'");
  t.overall_winner = candidate_id_from_string(j["overall_winner"].get<std::string>());
  if (j.contains("provenance")) {
    std::string p = j["provenance"].get<std::string>();
    if (p == "oracle")
      t.provenance = Provenance::oracle;
    else if (p == "remote")
      t.provenance = Provenance::remote;
    else if (p == "human")
      t.provenance = Provenance::human;
    else
      throw Error(ErrorCode::SchemaError, "unknown provenance '" + p + "'");
  }
  return t;
}

inline EvaluationTrace parse_trace(const std::string& raw) {
  Json j;
  try {
    j = Json::parse(raw);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::SyntaxError, e.what(), e.byte);
  }
  return trace_from_json(j);
}

// ---------------------------------------------------------------------------
// Validation

enum class FindingClass {
  EmptyDimensions,
  MissingAnchor,
  DuplicateDimension,
  KindMismatch,
  EmptySubCriteria,
};

inline const char* to_string(FindingClass c) {
  switch (c) {
    case FindingClass::EmptyDimensions: return "EmptyDimensions";
    case FindingClass::MissingAnchor: return "MissingAnchor";
    case FindingClass::DuplicateDimension: return "DuplicateDimension";
    case FindingClass::KindMismatch: return "KindMismatch";
    case FindingClass::EmptySubCriteria: return "EmptySubCriteria";
  }
  return "Unknown";
}

struct ValidationFinding {
  FindingClass cls;
  std::string dimension;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationFinding> findings;

  bool ok() const { return findings.empty(); }
};

// Findings are data, not failures: a trace that fails here is rejected by the
// caller (e.g. dropped into a rejects file), never repaired.
inline ValidationReport validate_trace(const EvaluationTrace& trace, const AnchorSet& anchors) {
  ValidationReport report;
  auto add = [&](FindingClass cls, const std::string& dim, std::string msg) {
    report.findings.push_back({cls, dim, std::move(msg)});
  };
  if (trace.dimensions.empty()) {
    add(FindingClass::EmptyDimensions, "", "trace has no dimensions");
    return report;
  }
  std::map<std::string, int> counts;
  for (const auto& d : trace.dimensions) counts[d.name]++;
  for (const auto& [name, n] : counts)
    if (n > 1)
      add(FindingClass::DuplicateDimension, name,
          "dimension '" + name + "' appears " + std::to_string(n) + " times");
  for (const auto& a : anchors.anchors)
    if (counts.find(a) == counts.end())
      add(FindingClass::MissingAnchor, a, "required anchor '" + a + "' is missing");
  for (const auto& d : trace.dimensions) {
    bool should_be_anchor = anchors.is_anchor(d.name);
    bool is_anchor = d.kind == DimensionKind::anchor;
    if (should_be_anchor != is_anchor)
      add(FindingClass::KindMismatch, d.name,
          "dimension '" + d.name + "' has kind " + (is_anchor ? "anchor" : "dynamic") +
              " but the anchor set says " + (should_be_anchor ? "anchor" : "dynamic"));
    if (is_anchor && d.sub_criteria.empty())
      add(FindingClass::EmptySubCriteria, d.name,
          "anchor dimension '" + d.name + "' has no sub-criteria");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Verdict projection

struct VerdictSet {
  std::vector<std::pair<std::string, CandidateId>> dims;  // trace order
  CandidateId overall = CandidateId::A;

  std::optional<CandidateId> winner_of(const std::string& name) const {
    for (const auto& [n, w] : dims)
      if (n == name) return w;
    return std::nullopt;
  }
};

inline VerdictSet extract_verdicts(const EvaluationTrace& trace) {
  VerdictSet v;
  for (const auto& d : trace.dimensions) v.dims.emplace_back(d.name, d.winner);
  v.overall = trace.overall_winner;
  return v;
}

// ---------------------------------------------------------------------------
// SftRecord wire format

inline Json sft_record_to_json(const SftRecord& r) {
  Json j;
  j["instance"] = r.instance.to_json();
  j["target_trace"] = trace_to_json(r.target_trace);
  return j;
}

inline SftRecord sft_record_from_json(const Json& j) {
  SftRecord r;
  if (!j.contains("instance") || !j.contains("target_trace"))
    throw Error(ErrorCode::SchemaError, "sft record needs 'instance' and 'target_trace'");
  r.instance = PreferenceInstance::from_json(j["instance"]);
  r.target_trace = trace_from_json(j["target_trace"]);
  return r;
}

}  // namespace preftrain
