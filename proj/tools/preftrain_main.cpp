// Umbrella CLI: judge, tournament, train-grpo, build-dpo-pairs,
// dpo-train-toy, sweep-alpha, export-curves.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "preftrain/harness.hpp"

namespace {

using namespace preftrain;

RunConfig resolve_config(const std::string& config_path, const std::string& backend_flag) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (backend_flag == "oracle") cfg.backend_kind = RunConfig::BackendKind::oracle;
  else if (backend_flag == "remote") cfg.backend_kind = RunConfig::BackendKind::remote;
  else if (!backend_flag.empty())
    throw Error(ErrorCode::InvalidArgument, "--backend must be oracle or remote");
  return cfg;
}

std::vector<PreferenceInstance> load_instances(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  std::vector<PreferenceInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (line.empty()) continue;
    try {
      out.push_back(PreferenceInstance::from_json(Json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::SyntaxError, path + ":" + std::to_string(line_no) + ": " + e.what(),
                  e.byte);
    }
  }
  return out;
}

int cmd_judge(const std::string& config_path, const std::string& backend_flag,
              const std::string& pairs_path, const std::string& out_path) {
  RunConfig cfg = resolve_config(config_path, backend_flag);
  JudgeBackend backend = cfg.make_backend();
  std::vector<PreferenceInstance> instances = load_instances(pairs_path);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + out_path);
  for (const auto& instance : instances) {
    PairOutcome outcome = debiased_judge(backend, instance);
    Json dims = Json::array();
    for (const auto& [name, w] : outcome.per_dim)
      dims.push_back(Json{{"name", name}, {"winner", to_string(w)}});
    Json traces = Json::array();
    for (const auto& t : outcome.traces) traces.push_back(trace_to_json(t));
    out << Json{{"instance_id", instance.instance_id},
                {"winner", to_string(outcome.winner)},
                {"per_dim", std::move(dims)},
                {"debiased", outcome.debiased},
                {"conflicts", outcome.conflicts},
                {"traces", std::move(traces)}}
               .dump()
        << "\n";
  }
  std::fprintf(stderr, "judged %zu pairs -> %s\n", instances.size(), out_path.c_str());
  return 0;
}

int cmd_tournament(const std::string& config_path, const std::string& backend_flag,
                   const std::string& group_path, const std::string& prompt_path,
                   const std::string& out_path, int workers) {
  RunConfig cfg = resolve_config(config_path, backend_flag);
  JudgeBackend backend = cfg.make_backend();
  std::ifstream group_in(group_path, std::ios::binary);
  if (!group_in) throw Error(ErrorCode::IoError, "cannot read " + group_path);
  std::vector<Candidate> group;
  std::string line;
  while (std::getline(group_in, line))
    if (!line.empty()) group.push_back(Candidate::from_json(Json::parse(line)));
  std::ifstream prompt_in(prompt_path, std::ios::binary);
  if (!prompt_in) throw Error(ErrorCode::IoError, "cannot read " + prompt_path);
  std::string prompt_text((std::istreambuf_iterator<char>(prompt_in)),
                          std::istreambuf_iterator<char>());
  PromptSpec prompt = PromptSpec::from_json(Json::parse(prompt_text));
  ComparisonMatrix matrix = run_tournament(group, prompt, backend, workers);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + out_path);
  out << matrix.to_json().dump(2) << "\n";
  RewardVector rates = overall_win_rates(matrix);
  std::fprintf(stderr, "tournament: G=%d, %zu pairs; overall win rates:", matrix.group_size,
               matrix.pairs.size());
  for (double v : rates.values) std::fprintf(stderr, " %.4f", v);
  std::fprintf(stderr, "\n");
  return 0;
}

int cmd_train_grpo(const std::string& config_path, const std::string& out_dir, bool quiet) {
  RunConfig cfg = resolve_config(config_path, "");
  std::fprintf(stderr,
               "train-grpo: G=%d T=%d sigma=%g eta=%g alpha=%g beta_kl=%g seed=%llu steps=%d\n",
               cfg.grpo.group_size, cfg.grpo.sample_steps, cfg.grpo.sigma, cfg.grpo.eta,
               cfg.grpo.mix.alpha, cfg.grpo.beta_kl,
               static_cast<unsigned long long>(cfg.grpo.seed), cfg.grpo.total_steps);
  JudgeBackend backend = cfg.make_backend();
  TrainResult result = train_grpo(cfg.grpo, out_dir, backend, cfg.oracle, !quiet);
  // Full-run snapshot including the backend section.
  {
    std::ofstream snap(out_dir + "/config.snapshot", std::ios::binary);
    snap << cfg.to_json().dump(2) << "\n";
  }
  std::fprintf(stderr, "done: %d steps, final win rate vs reference %.4f -> %s\n",
               result.steps_run, result.final_win_rate_vs_ref, result.run_dir.c_str());
  return 0;
}

int cmd_build_dpo_pairs(const std::string& config_path, const std::string& backend_flag,
                        const std::string& responses, const std::string& gold,
                        const std::string& out_path, const std::string& rejects,
                        const std::string& manual) {
  RunConfig cfg = resolve_config(config_path, backend_flag);
  JudgeBackend backend = cfg.make_backend();
  BuildPairsReport report = build_pairs_file(responses, gold, backend, out_path, rejects, manual);
  std::fprintf(stderr, "pairs=%d discarded(both incorrect)=%d rejects=%d", report.pairs,
               report.discarded_both_incorrect, report.rejects);
  for (const auto& [rule, n] : report.case_counts) std::fprintf(stderr, " %s=%d", rule.c_str(), n);
  std::fprintf(stderr, "\n");
  return 0;
}

int cmd_dpo_train_toy(const std::string& pairs_path, const std::string& out_dir, int steps,
                      double lr, std::uint64_t seed, int hidden) {
  std::ifstream in(pairs_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + pairs_path);
  std::vector<std::pair<std::vector<int>, std::vector<int>>> token_pairs;
  DpoConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    DpoPair pair = DpoPair::from_json(Json::parse(line));
    token_pairs.emplace_back(encode_trace_tokens(pair.chosen.trace),
                             encode_trace_tokens(pair.rejected.trace));
  }
  RngStream rng(seed);
  ToySeqPolicy policy = ToySeqPolicy::init(kVerdictVocab, 8, hidden, rng);
  DpoTrainResult result = train_toy_dpo(token_pairs, cfg, std::move(policy), steps, lr);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream metrics(out_dir + "/metrics.jsonl", std::ios::binary);
    for (const auto& row : result.metrics)
      metrics << Json{{"step", row.step}, {"loss", row.loss}, {"margin", row.margin}}.dump()
              << "\n";
  }
  {
    std::ofstream ckpt(out_dir + "/policy_final.json", std::ios::binary);
    ckpt << result.policy.to_json().dump(2) << "\n";
  }
  if (!result.metrics.empty())
    std::fprintf(stderr, "dpo: %zu pairs, loss %.6f -> %.6f, margin %.4f\n", token_pairs.size(),
                 result.metrics.front().loss, result.metrics.back().loss,
                 result.metrics.back().margin);
  return 0;
}

int cmd_sweep_alpha(const std::string& config_path, const std::vector<double>& alphas,
                    const std::string& out_dir, bool quiet) {
  RunConfig cfg = resolve_config(config_path, "");
  JudgeBackend backend = cfg.make_backend();
  SweepReport report = alpha_sweep(cfg.grpo, alphas, out_dir, backend, cfg.oracle, !quiet);
  std::fprintf(stderr, "%-8s %-22s %s\n", "alpha", "final_win_rate_vs_ref", "final_alignment");
  for (const auto& row : report.rows)
    std::fprintf(stderr, "%-8g %-22.4f %.5f\n", row.alpha, row.final_win_rate_vs_ref,
                 row.final_alignment_proxy);
  std::fprintf(stderr, "report: %s\n", report.report_path.c_str());
  return 0;
}

int cmd_export_curves(const std::string& run_dir) {
  std::string path = export_curves(run_dir);
  std::fprintf(stderr, "wrote %s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pairwise-preference reward engine for a toy flow generator"};
  app.require_subcommand(1);

  std::string config_path, backend_flag, pairs_path, out_path, group_path, prompt_path;
  std::string responses_path, gold_path, rejects_path, manual_path, run_dir;
  std::vector<double> alphas;
  int workers = 1, steps = 400, hidden = 12;
  double lr = 0.5;
  std::uint64_t seed = 7;
  bool quiet = false;

  auto* judge = app.add_subcommand("judge", "judge preference pairs (both orders, debiased)");
  judge->add_option("--backend", backend_flag, "oracle|remote");
  judge->add_option("--config", config_path, "run config JSON");
  judge->add_option("--pairs", pairs_path, "JSONL of preference instances")->required();
  judge->add_option("--out", out_path, "output JSONL")->required();

  auto* tournament = app.add_subcommand("tournament", "full round robin over a candidate group");
  tournament->add_option("--backend", backend_flag, "oracle|remote");
  tournament->add_option("--config", config_path, "run config JSON");
  tournament->add_option("--group", group_path, "JSONL of candidates")->required();
  tournament->add_option("--prompt", prompt_path, "prompt spec JSON file")->required();
  tournament->add_option("--out", out_path, "matrix JSON output")->required();
  tournament->add_option("--workers", workers, "concurrent pair judgments");

  auto* train = app.add_subcommand("train-grpo", "preference-reward GRPO on the toy generator");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", run_dir, "run output directory")->required();
  train->add_flag("--quiet", quiet, "suppress per-step progress lines");

  auto* build = app.add_subcommand("build-dpo-pairs", "construct DPO pairs from sampled traces");
  build->add_option("--backend", backend_flag, "oracle|remote");
  build->add_option("--config", config_path, "run config JSON");
  build->add_option("--responses", responses_path, "JSONL of sampled responses")->required();
  build->add_option("--gold", gold_path, "JSONL of gold-labeled instances")->required();
  build->add_option("--out", out_path, "pairs JSONL output")->required();
  build->add_option("--rejects", rejects_path, "rejects JSONL output")->required();
  build->add_option("--manual", manual_path, "manual-review overrides JSONL");

  auto* dpo = app.add_subcommand("dpo-train-toy", "DPO on the toy verdict-sequence policy");
  dpo->add_option("--pairs", pairs_path, "pairs JSONL")->required();
  dpo->add_option("--out", run_dir, "output directory")->required();
  dpo->add_option("--steps", steps, "gradient steps");
  dpo->add_option("--lr", lr, "learning rate");
  dpo->add_option("--seed", seed, "init seed");
  dpo->add_option("--hidden", hidden, "hidden width");

  auto* sweep = app.add_subcommand("sweep-alpha", "train-grpo once per alpha, shared seed");
  sweep->add_option("--config", config_path, "run config JSON")->required();
  sweep->add_option("--alphas", alphas, "alpha values")->required()->delimiter(',');
  sweep->add_option("--out", out_path, "sweep output directory")->required();
  sweep->add_flag("--quiet", quiet, "suppress per-step progress lines");

  auto* curves = app.add_subcommand("export-curves", "columnar CSV from a run's metrics log");
  curves->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (judge->parsed()) return cmd_judge(config_path, backend_flag, pairs_path, out_path);
    if (tournament->parsed())
      return cmd_tournament(config_path, backend_flag, group_path, prompt_path, out_path, workers);
    if (train->parsed()) return cmd_train_grpo(config_path, run_dir, quiet);
    if (build->parsed())
      return cmd_build_dpo_pairs(config_path, backend_flag, responses_path, gold_path, out_path,
                                 rejects_path, manual_path);
    if (dpo->parsed()) return cmd_dpo_train_toy(pairs_path, run_dir, steps, lr, seed, hidden);
    if (sweep->parsed()) return cmd_sweep_alpha(config_path, alphas, out_path, quiet);
    if (curves->parsed()) return cmd_export_curves(run_dir);
  } catch (const preftrain::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return preftrain::exit_class(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
