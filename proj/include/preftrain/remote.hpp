#pragma once

#include <cstdlib>
#include <string>

#include "httplib.h"
#include "preftrain/trace.hpp"

namespace preftrain {

struct RemoteConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080/judge
  std::string model;
  double timeout_s = 30.0;
  int max_retries = 2;
  std::string auth_env;  // name of the env var holding the bearer token
  AnchorSet anchors = AnchorSet::image_like();

  void validate() const {
    if (endpoint.empty()) throw Error(ErrorCode::SchemaError, "remote endpoint must be set");
    if (!(timeout_s > 0.0)) throw Error(ErrorCode::RangeError, "remote timeout must be > 0");
    if (max_retries < 0) throw Error(ErrorCode::RangeError, "remote max_retries must be >= 0");
    anchors.validate();
  }
};

namespace detail {

struct SplitUrl {
  std::string base;  // scheme://host:port
  std::string path;  // /path (default "/")
};

inline SplitUrl split_endpoint(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos)
    throw Error(ErrorCode::SchemaError, "remote endpoint must include a scheme: " + endpoint);
  auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

// POST with bounded retries. Only transport failures and 5xx are retried; the
// request body is never altered between attempts.
inline std::string remote_post(const RemoteConfig& cfg, const std::string& body) {
  SplitUrl url = split_endpoint(cfg.endpoint);
  httplib::Headers headers;
  if (!cfg.auth_env.empty()) {
    if (const char* token = std::getenv(cfg.auth_env.c_str()); token && *token)
      headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg.max_retries; attempt++) {
    httplib::Client client(url.base);
    auto whole = static_cast<time_t>(cfg.timeout_s);
    auto micros = static_cast<time_t>((cfg.timeout_s - static_cast<double>(whole)) * 1e6);
    client.set_connection_timeout(whole, micros);
    client.set_read_timeout(whole, micros);
    client.set_write_timeout(whole, micros);
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "server error: HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw Error(ErrorCode::RemoteError,
                  "remote judge returned HTTP " + std::to_string(res->status));
    return res->body;
  }
  throw Error(ErrorCode::RemoteError, "remote judge unreachable after " +
                                          std::to_string(cfg.max_retries + 1) +
                                          " attempts (" + last_error + ")");
}

}  // namespace detail

// Remote pair judgment. The response must be a valid trace document for the
// configured anchor set; anything else is rejected, never repaired.
inline EvaluationTrace remote_judge_pair(const RemoteConfig& cfg,
                                         const PreferenceInstance& instance) {
  cfg.validate();
  Json body;
  body["template_id"] = "pair_trace_v1";
  body["model"] = cfg.model;
  body["prompt"] = instance.prompt.to_json();
  body["candidate_a"] = instance.candidate_a.to_json();
  body["candidate_b"] = instance.candidate_b.to_json();
  body["anchors"] = cfg.anchors.anchors;
  std::string response = detail::remote_post(cfg, body.dump());
  EvaluationTrace trace;
  try {
    trace = parse_trace(response);
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, std::string("remote trace rejected: ") + e.what());
  }
  trace.provenance = Provenance::remote;
  ValidationReport report = validate_trace(trace, cfg.anchors);
  if (!report.ok())
    throw Error(ErrorCode::ParseError,
                "remote trace failed validation: " + report.findings.front().message);
  return trace;
}

// Remote reasoning-quality comparison of two traces; expects "a" or "b",
// either bare or as {"preferred": "..."}.
inline CandidateId remote_judge_trajectory(const RemoteConfig& cfg,
                                           const PreferenceInstance& instance,
                                           const EvaluationTrace& trace_a,
                                           const EvaluationTrace& trace_b) {
  cfg.validate();
  Json body;
  body["template_id"] = "trajectory_quality_v1";
  body["model"] = cfg.model;
  body["prompt"] = instance.prompt.to_json();
  body["trace_a"] = trace_to_json(trace_a);
  body["trace_b"] = trace_to_json(trace_b);
  std::string response = detail::remote_post(cfg, body.dump());
  std::string token;
  try {
    Json j = Json::parse(response);
    if (j.is_string())
      token = j.get<std::string>();
    else if (j.is_object() && j.contains("preferred"))
      token = j["preferred"].get<std::string>();
  } catch (const nlohmann::json::parse_error&) {
    token = response;  // allow a bare token body
  }
  while (!token.empty() && (token.back() == '\n' || token.back() == ' ')) token.pop_back();
  if (token == "a" || token == "A") return CandidateId::A;
  if (token == "b" || token == "B") return CandidateId::B;
  throw Error(ErrorCode::ParseError, "trajectory judge returned unparseable verdict: " + response);
}

}  // namespace preftrain
