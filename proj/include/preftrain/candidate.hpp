#pragma once

#include <optional>
#include <string>
#include <vector>

#include "preftrain/prompt.hpp"

namespace preftrain {

// A generated sample: M points in the plane.
struct Candidate {
  std::vector<Vec2> points;
  std::string prompt_id;

  bool operator==(const Candidate&) const = default;

  void validate() const {
    if (points.empty()) throw Error(ErrorCode::SchemaError, "candidate must have at least one point");
    for (const auto& p : points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw Error(ErrorCode::NonFiniteState, "candidate contains a non-finite point");
  }

  Vec2 centroid() const {
    Vec2 m{0.0, 0.0};
    for (const auto& p : points) m += p;
    return m * (1.0 / static_cast<double>(points.size()));
  }

  // Population variance of the point set: mean squared distance from centroid.
  double total_variance() const {
    Vec2 m = centroid();
    double acc = 0.0;
    for (const auto& p : points) acc += (p - m).norm2();
    return acc / static_cast<double>(points.size());
  }

  Json to_json() const {
    Json pts = Json::array();
    for (const auto& p : points) pts.push_back(Json::array({p.x, p.y}));
    Json j;
    j["points"] = std::move(pts);
    if (!prompt_id.empty()) j["prompt_id"] = prompt_id;
    return j;
  }

  static Candidate from_json(const Json& j) {
    Candidate c;
    if (!j.contains("points") || !j["points"].is_array())
      throw Error(ErrorCode::SchemaError, "candidate missing array field 'points'");
    for (const auto& p : j["points"]) {
      if (!p.is_array() || p.size() != 2)
        throw Error(ErrorCode::SchemaError, "candidate point must be a 2-array");
      c.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    if (j.contains("prompt_id")) c.prompt_id = j["prompt_id"].get<std::string>();
    c.validate();
    return c;
  }
};

// Reference to one side of a preference pair: inline toy points (resolvable by
// the oracle) or an opaque payload URI (forwarded to a remote judge).
struct CandidateRef {
  std::optional<Candidate> inline_points;
  std::string uri;

  bool operator==(const CandidateRef&) const = default;

  static CandidateRef of(Candidate c) { return {std::move(c), {}}; }
  static CandidateRef of_uri(std::string u) { return {std::nullopt, std::move(u)}; }

  const Candidate& require_points() const {
    if (!inline_points)
      throw Error(ErrorCode::InvalidArgument, "operation requires inline candidate points");
    return *inline_points;
  }

  Json to_json() const {
    return inline_points ? inline_points->to_json() : Json{{"uri", uri}};
  }

  static CandidateRef from_json(const Json& j) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaError, "candidate ref must be an object");
    if (j.contains("uri")) return of_uri(j["uri"].get<std::string>());
    return of(Candidate::from_json(j));
  }

  std::uint64_t stable_hash() const { return fnv1a(to_json().dump()); }
};

}  // namespace preftrain
