#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "preftrain/dpo.hpp"
#include "preftrain/grpo.hpp"

namespace preftrain {

// Validation errors exit with 1, runtime failures with 2.
inline int exit_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::SyntaxError:
    case ErrorCode::SchemaError:
    case ErrorCode::RangeError:
    case ErrorCode::UnknownKey:
    case ErrorCode::EmptySweep:
    case ErrorCode::LengthMismatch:
    case ErrorCode::DuplicateKey:
    case ErrorCode::UnknownDimension:
    case ErrorCode::DimensionNeverJudged:
    case ErrorCode::InvalidArgument:
      return 1;
    default:
      return 2;
  }
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  enum class BackendKind { oracle, remote };

  GrpoConfig grpo;
  DpoConfig dpo;
  BackendKind backend_kind = BackendKind::oracle;
  OracleParams oracle;
  RemoteConfig remote;

  JudgeBackend make_backend() const {
    if (backend_kind == BackendKind::oracle) return JudgeBackend::oracle(oracle);
    return JudgeBackend::remote(remote);
  }

  Json to_json() const {
    Json backend;
    if (backend_kind == BackendKind::oracle) {
      backend["kind"] = "oracle";
      backend["anchors"] = oracle.anchors.to_json();
      backend["ref_sample_size"] = oracle.ref_sample_size;
      backend["ref_seed"] = oracle.ref_seed;
      backend["bounds_halfwidth"] = oracle.bounds_halfwidth;
    } else {
      backend["kind"] = "remote";
      backend["endpoint"] = remote.endpoint;
      backend["model"] = remote.model;
      backend["timeout_s"] = remote.timeout_s;
      backend["max_retries"] = remote.max_retries;
      backend["auth_env"] = remote.auth_env;
      backend["anchors"] = remote.anchors.to_json();
    }
    Json dpo_j;
    dpo_j["beta_dpo"] = dpo.beta_dpo;
    dpo_j["samples_per_instance"] = dpo.samples_per_instance;
    dpo_j["temperature"] = dpo.temperature;
    Json j;
    j["backend"] = std::move(backend);
    j["grpo"] = grpo_config_to_json(grpo);
    j["dpo"] = std::move(dpo_j);
    return j;
  }

  static RunConfig from_json(const Json& j) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaError, "config must be an object");
    RunConfig cfg;
    for (const auto& [key, value] : j.items()) {
      if (key == "grpo") {
        cfg.grpo = grpo_config_from_json(value);
      } else if (key == "dpo") {
        for (const auto& [dkey, dval] : value.items()) {
          if (dkey == "beta_dpo")
            cfg.dpo.beta_dpo = dval.get<double>();
          else if (dkey == "samples_per_instance")
            cfg.dpo.samples_per_instance = dval.get<int>();
          else if (dkey == "temperature")
            cfg.dpo.temperature = dval.get<double>();
          else
            throw Error(ErrorCode::UnknownKey, "unknown config key 'dpo." + dkey + "'");
        }
        cfg.dpo.validate();
      } else if (key == "backend") {
        std::string kind = value.contains("kind") ? value["kind"].get<std::string>() : "oracle";
        if (kind == "oracle") {
          cfg.backend_kind = BackendKind::oracle;
          for (const auto& [bkey, bval] : value.items()) {
            if (bkey == "kind") continue;
            if (bkey == "anchors")
              cfg.oracle.anchors = AnchorSet::from_json(bval);
            else if (bkey == "ref_sample_size")
              cfg.oracle.ref_sample_size = bval.get<int>();
            else if (bkey == "ref_seed")
              cfg.oracle.ref_seed = bval.get<std::uint64_t>();
            else if (bkey == "bounds_halfwidth")
              cfg.oracle.bounds_halfwidth = bval.get<double>();
            else
              throw Error(ErrorCode::UnknownKey, "unknown config key 'backend." + bkey + "'");
          }
          validate_oracle_params(cfg.oracle);
        } else if (kind == "remote") {
          cfg.backend_kind = BackendKind::remote;
          for (const auto& [bkey, bval] : value.items()) {
            if (bkey == "kind") continue;
            if (bkey == "endpoint")
              cfg.remote.endpoint = bval.get<std::string>();
            else if (bkey == "model")
              cfg.remote.model = bval.get<std::string>();
            else if (bkey == "timeout_s")
              cfg.remote.timeout_s = bval.get<double>();
            else if (bkey == "max_retries")
              cfg.remote.max_retries = bval.get<int>();
            else if (bkey == "auth_env")
              cfg.remote.auth_env = bval.get<std::string>();
            else if (bkey == "anchors")
              cfg.remote.anchors = AnchorSet::from_json(bval);
            else
              throw Error(ErrorCode::UnknownKey, "unknown config key 'backend." + bkey + "'");
          }
          cfg.remote.validate();
        } else {
          throw Error(ErrorCode::SchemaError, "backend kind must be \"oracle\" or \"remote\"");
        }
      } else {
        throw Error(ErrorCode::UnknownKey, "unknown config key '" + key + "'");
      }
    }
    return cfg;
  }
};

// Parse and validate a config file; unknown keys are errors, ranges are
// checked, defaults fill everything absent.
inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what(), e.byte);
  }
  try {
    return RunConfig::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics logs

struct MetricsRow {
  int step = 0;
  std::map<std::string, double> scalars;
};

// Reads a metrics log. A truncated (unparseable) final line is dropped; a bad
// line anywhere else is an error. Step indices must increase.
inline std::vector<MetricsRow> read_metrics(const std::string& run_dir) {
  std::string path = run_dir + "/metrics.jsonl";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingLog, "no metrics log at " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < lines.size(); i++) {
    Json j;
    try {
      j = Json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      if (i + 1 == lines.size()) break;  // crash-truncated tail
      throw Error(ErrorCode::ParseError, path + ": line " + std::to_string(i + 1) + ": " + e.what());
    }
    MetricsRow row;
    row.step = j.at("step").get<int>();
    for (const auto& [name, value] : j.at("metrics").items())
      row.scalars[name] = value.get<double>();
    if (!rows.empty() && row.step <= rows.back().step)
      throw Error(ErrorCode::ParseError, path + ": step indices are not increasing");
    rows.push_back(std::move(row));
  }
  return rows;
}

// Columnar export of a run's metrics, one row per step.
inline std::string export_curves(const std::string& run_dir) {
  std::vector<MetricsRow> rows = read_metrics(run_dir);
  std::set<std::string> names;
  for (const auto& r : rows)
    for (const auto& [name, value] : r.scalars) names.insert(name);
  std::string out_path = run_dir + "/curves.csv";
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + out_path);
  out << "step";
  for (const auto& n : names) out << "," << n;
  out << "\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.step;
    for (const auto& n : names) {
      auto it = r.scalars.find(n);
      std::snprintf(buf, sizeof(buf), "%.17g", it == r.scalars.end() ? 0.0 : it->second);
      out << "," << buf;
    }
    out << "\n";
  }
  return out_path;
}

// ---------------------------------------------------------------------------
// Alpha sweep

struct SweepRow {
  double alpha = 0.0;
  double final_win_rate_vs_ref = 0.0;
  double final_alignment_proxy = 0.0;
  std::string run_dir;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::string report_path;
};

// One train_grpo run per alpha, shared seed and prompts; everything else in
// the base config stays fixed.
template <typename Backend>
SweepReport alpha_sweep(const GrpoConfig& base, const std::vector<double>& alphas,
                        const std::string& out_dir, const Backend& backend,
                        const OracleParams& metric_oracle = OracleParams{},
                        bool log_progress = false) {
  if (alphas.empty()) throw Error(ErrorCode::EmptySweep, "alpha sweep needs at least one alpha");
  std::filesystem::create_directories(out_dir);
  SweepReport report;
  for (double alpha : alphas) {
    GrpoConfig cfg = base;
    cfg.mix.alpha = alpha;
    cfg.validate();
    char label[32];
    std::snprintf(label, sizeof(label), "alpha_%g", alpha);
    std::string run_dir = out_dir + "/" + label;
    TrainResult r = train_grpo(cfg, run_dir, backend, metric_oracle, log_progress);
    report.rows.push_back({alpha, r.final_win_rate_vs_ref, r.final_alignment_proxy, run_dir});
  }
  Json rows = Json::array();
  for (const auto& r : report.rows)
    rows.push_back(Json{{"alpha", r.alpha},
                        {"final_win_rate_vs_ref", r.final_win_rate_vs_ref},
                        {"final_alignment_proxy", r.final_alignment_proxy},
                        {"run_dir", r.run_dir}});
  report.report_path = out_dir + "/sweep_report.json";
  std::ofstream out(report.report_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write sweep report");
  out << Json{{"rows", std::move(rows)}}.dump(2) << "\n";
  return report;
}

}  // namespace preftrain
