#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "preftrain/common.hpp"
#include "preftrain/rng.hpp"

namespace preftrain {

using Json = nlohmann::ordered_json;

struct MixtureComponent {
  Vec2 mean;
  double weight = 1.0;

  bool operator==(const MixtureComponent&) const = default;
};

struct ConstraintFlags {
  std::optional<double> min_spread;  // threshold on total sample variance
  bool symmetry = false;

  bool operator==(const ConstraintFlags&) const = default;
};

// Conditioning "prompt" for the toy generator: a 2-D Gaussian mixture target
// plus optional constraint flags that trigger dynamic judge dimensions.
struct PromptSpec {
  std::string prompt_id;
  std::vector<MixtureComponent> mixture;
  double component_std = 0.1;
  ConstraintFlags constraints;

  bool operator==(const PromptSpec&) const = default;

  void validate() const {
    if (prompt_id.empty()) throw Error(ErrorCode::SchemaError, "prompt_id must be non-empty");
    if (mixture.empty()) throw Error(ErrorCode::SchemaError, "mixture must be non-empty");
    double sum = 0.0;
    for (const auto& c : mixture) {
      if (!(c.weight > 0.0)) throw Error(ErrorCode::RangeError, "mixture weights must be > 0");
      sum += c.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw Error(ErrorCode::RangeError, "mixture weights must sum to 1 within 1e-9");
    if (!(component_std > 0.0)) throw Error(ErrorCode::RangeError, "component_std must be > 0");
    if (constraints.min_spread && !(*constraints.min_spread > 0.0))
      throw Error(ErrorCode::RangeError, "min_spread threshold must be > 0");
  }

  Vec2 mixture_mean() const {
    Vec2 m{0.0, 0.0};
    for (const auto& c : mixture) m += c.mean * c.weight;
    return m;
  }

  // E || x - E[x] ||^2 of the target mixture (isotropic components).
  double mixture_variance() const {
    Vec2 m = mixture_mean();
    double v = 2.0 * component_std * component_std;
    for (const auto& c : mixture) v += c.weight * (c.mean - m).norm2();
    return v;
  }

  // One draw from the target mixture.
  Vec2 sample(RngStream& rng) const {
    double u = rng.uniform();
    double acc = 0.0;
    const MixtureComponent* pick = &mixture.back();
    for (const auto& c : mixture) {
      acc += c.weight;
      if (u < acc) {
        pick = &c;
        break;
      }
    }
    Vec2 z = rng.normal2();
    return pick->mean + z * component_std;
  }

  Json to_json() const {
    Json j;
    j["prompt_id"] = prompt_id;
    Json mix = Json::array();
    for (const auto& c : mixture)
      mix.push_back(Json{{"mean", {c.mean.x, c.mean.y}}, {"weight", c.weight}});
    j["mixture"] = std::move(mix);
    j["component_std"] = component_std;
    Json cons = Json::object();
    if (constraints.min_spread) cons["min_spread"] = *constraints.min_spread;
    if (constraints.symmetry) cons["symmetry"] = true;
    if (!cons.empty()) j["constraints"] = std::move(cons);
    return j;
  }

  static PromptSpec from_json(const Json& j) {
    PromptSpec p;
    if (!j.is_object()) throw Error(ErrorCode::SchemaError, "prompt spec must be an object");
    if (!j.contains("prompt_id") || !j["prompt_id"].is_string())
      throw Error(ErrorCode::SchemaError, "prompt spec missing string field 'prompt_id'");
    p.prompt_id = j["prompt_id"].get<std::string>();
    if (!j.contains("mixture") || !j["mixture"].is_array())
      throw Error(ErrorCode::SchemaError, "prompt spec missing array field 'mixture'");
    for (const auto& c : j["mixture"]) {
      if (!c.contains("mean") || !c["mean"].is_array() || c["mean"].size() != 2)
        throw Error(ErrorCode::SchemaError, "mixture component 'mean' must be a 2-array");
      MixtureComponent mc;
      mc.mean = {c["mean"][0].get<double>(), c["mean"][1].get<double>()};
      if (!c.contains("weight")) throw Error(ErrorCode::SchemaError, "mixture component missing 'weight'");
      mc.weight = c["weight"].get<double>();
      p.mixture.push_back(mc);
    }
    if (!j.contains("component_std"))
      throw Error(ErrorCode::SchemaError, "prompt spec missing field 'component_std'");
    p.component_std = j["component_std"].get<double>();
    if (j.contains("constraints")) {
      const auto& cons = j["constraints"];
      if (!cons.is_object()) throw Error(ErrorCode::SchemaError, "'constraints' must be an object");
      for (const auto& [key, value] : cons.items()) {
        if (key == "min_spread")
          p.constraints.min_spread = value.get<double>();
        else if (key == "symmetry")
          p.constraints.symmetry = value.get<bool>();
        else
          throw Error(ErrorCode::SchemaError, "unknown constraint flag '" + key + "'");
      }
    }
    p.validate();
    return p;
  }

  std::uint64_t stable_hash() const { return fnv1a(to_json().dump()); }
};

// PreferenceInstance.prompt: a structured PromptSpec (required by the oracle)
// or opaque text (enough for remote judging).
struct PromptValue {
  std::optional<PromptSpec> spec;
  std::string text;

  bool operator==(const PromptValue&) const = default;

  static PromptValue of(PromptSpec s) { return {std::move(s), {}}; }
  static PromptValue of_text(std::string t) { return {std::nullopt, std::move(t)}; }

  const PromptSpec& require_spec() const {
    if (!spec)
      throw Error(ErrorCode::InvalidArgument, "operation requires a structured prompt spec");
    return *spec;
  }

  std::string display_text() const {
    return spec ? spec->to_json().dump() : text;
  }

  Json to_json() const { return spec ? spec->to_json() : Json(text); }

  static PromptValue from_json(const Json& j) {
    if (j.is_string()) return of_text(j.get<std::string>());
    return of(PromptSpec::from_json(j));
  }

  std::uint64_t stable_hash() const { return fnv1a(to_json().dump()); }
};

}  // namespace preftrain
