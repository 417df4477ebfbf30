#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "preftrain/advantage.hpp"
#include "preftrain/toygen.hpp"

namespace preftrain {

struct GrpoConfig {
  int group_size = 9;             // G, rollouts per prompt
  int sample_steps = 10;          // T
  int points_per_candidate = 24;  // M
  double eta = 0.2;               // clip threshold
  double beta_kl = 0.0;
  double sigma = 0.3;  // SDE noise level (tunable, not a paper value)
  MixConfig mix;       // alpha + epsilon
  double learning_rate = 0.003;
  int inner_epochs = 1;
  int total_steps = 200;
  int prompts_per_step = 1;
  bool shared_initial_noise = true;
  std::uint64_t seed = 0;
  std::string prompt_bank;  // JSONL of PromptSpec
  int eval_pairs = 16;
  int checkpoint_every = 50;
  int workers = 1;
  int pretrain_steps = 400;
  double pretrain_lr = 0.02;
  int pretrain_batch = 64;

  void validate() const {
    if (group_size < 2) throw Error(ErrorCode::RangeError, "group_size must be >= 2");
    if (sample_steps < 1) throw Error(ErrorCode::RangeError, "sample_steps must be >= 1");
    if (points_per_candidate < 1)
      throw Error(ErrorCode::RangeError, "points_per_candidate must be >= 1");
    if (!(eta > 0.0)) throw Error(ErrorCode::RangeError, "eta must be > 0");
    if (beta_kl < 0.0) throw Error(ErrorCode::RangeError, "beta_kl must be >= 0");
    if (!(sigma > 0.0)) throw Error(ErrorCode::RangeError, "sigma must be > 0 for SDE rollouts");
    mix.validate();
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::RangeError, "learning_rate must be > 0");
    if (inner_epochs < 1) throw Error(ErrorCode::RangeError, "inner_epochs must be >= 1");
    if (total_steps < 0) throw Error(ErrorCode::RangeError, "total_steps must be >= 0");
    if (prompts_per_step < 1) throw Error(ErrorCode::RangeError, "prompts_per_step must be >= 1");
    if (eval_pairs < 1) throw Error(ErrorCode::RangeError, "eval_pairs must be >= 1");
    if (checkpoint_every < 1) throw Error(ErrorCode::RangeError, "checkpoint_every must be >= 1");
    if (workers < 1) throw Error(ErrorCode::RangeError, "workers must be >= 1");
    if (pretrain_steps < 0) throw Error(ErrorCode::RangeError, "pretrain_steps must be >= 0");
  }
};

// Identifies a parameter snapshot; rollout batches record the fingerprint of
// the behavior policy that produced them.
inline std::string params_fingerprint(const PolicyParams& policy) {
  std::uint64_t h = fnv1a("policy");
  for (double v : policy.values) h = hash_combine(h, std::bit_cast<std::uint64_t>(v));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct RolloutBatch {
  PromptSpec prompt;
  std::vector<Trajectory> trajectories;  // G entries
  ComparisonMatrix matrix;
  AdvantageVector advantages;
  std::string behavior_snapshot_id;

  void validate() const {
    if (trajectories.empty()) throw Error(ErrorCode::RangeError, "rollout batch has no trajectories");
    if (advantages.values.size() != trajectories.size())
      throw Error(ErrorCode::LengthMismatch, "advantage length must equal group size");
    for (const auto& t : trajectories)
      if (t.prompt_id != prompt.prompt_id)
        throw Error(ErrorCode::InvalidArgument, "trajectory prompt does not match batch prompt");
  }
};

struct StepStats {
  int step = 0;
  double win_rate_vs_ref = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double alignment_proxy = 0.0;
  double wall_clock_s = 0.0;  // reported to the console, kept out of the
                              // metrics log so logs stay seed-deterministic
};

// ---------------------------------------------------------------------------
// Objective pieces

// log pi(x_{k+1} | x_k, c) for transition k, summed over the M points.
inline double traj_step_logprob(const PolicyParams& policy, const Trajectory& traj,
                                std::span<const double> embed, int k) {
  if (k < 0 || k >= traj.steps) throw Error(ErrorCode::RangeError, "step index out of range");
  double t = traj.time_of_step(k);
  double delta = 1.0 / traj.steps;
  double acc = 0.0;
  for (int m = 0; m < traj.points; m++)
    acc += step_logprob(policy, traj.states[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)],
                        traj.states[static_cast<std::size_t>(k) + 1][static_cast<std::size_t>(m)], t,
                        embed, traj.sigma, delta);
  return acc;
}

// r_k = pi_theta / pi_behavior for transition k of a stored trajectory.
inline double importance_ratio(const PolicyParams& policy, const PolicyParams& behavior,
                               const Trajectory& traj, const PromptSpec& prompt, int k) {
  std::vector<double> embed = embed_prompt(prompt);
  double diff = traj_step_logprob(policy, traj, embed, k) -
                traj_step_logprob(behavior, traj, embed, k);
  double r = std::exp(diff);
  if (!std::isfinite(r) || !(r > 0.0))
    throw Error(ErrorCode::NonFiniteState, "importance ratio is not positive finite");
  return r;
}

// (1/T) sum_k min(r_k * A, clip(r_k, 1-eta, 1+eta) * A).
inline double clipped_surrogate(std::span<const double> ratios, double advantage, double eta) {
  if (!(eta > 0.0)) throw Error(ErrorCode::RangeError, "eta must be > 0");
  if (ratios.empty()) return 0.0;
  double acc = 0.0;
  for (double r : ratios) {
    double clipped = std::clamp(r, 1.0 - eta, 1.0 + eta);
    acc += std::min(r * advantage, clipped * advantage);
  }
  return acc / static_cast<double>(ratios.size());
}

// Per-trajectory Gaussian KL(pi_theta || pi_ref) between the transition
// kernels (equal variance, shifted means), summed over points and averaged
// per step: (1/T) sum_k sum_m delta * ||v_theta - v_ref||^2 / (2 sigma^2).
inline double kl_penalty(const PolicyParams& policy, const PolicyParams& reference,
                         const Trajectory& traj, const PromptSpec& prompt) {
  if (!(traj.sigma > 0.0)) throw Error(ErrorCode::DegenerateNoise, "kl_penalty requires sigma > 0");
  std::vector<double> embed = embed_prompt(prompt);
  double delta = 1.0 / traj.steps;
  double acc = 0.0;
  for (int k = 0; k < traj.steps; k++) {
    double t = traj.time_of_step(k);
    for (int m = 0; m < traj.points; m++) {
      Vec2 x = traj.states[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)];
      Vec2 dv = velocity(policy, x, t, embed) - velocity(reference, x, t, embed);
      acc += delta * dv.norm2() / (2.0 * traj.sigma * traj.sigma);
    }
  }
  return acc / traj.steps;
}

namespace detail {

struct ObjectiveAccum {
  double surrogate = 0.0;
  double kl = 0.0;
  long clip_hits = 0;
  long ratio_count = 0;

  double objective(double beta_kl) const { return surrogate - beta_kl * kl; }
};

// Shared evaluation core for the GRPO estimate. When grad != nullptr,
// accumulates d(objective)/d(theta) (ascent direction).
inline ObjectiveAccum grpo_eval(const PolicyParams& policy, const PolicyParams& behavior,
                                const PolicyParams& reference,
                                std::span<const RolloutBatch> batches, const GrpoConfig& cfg,
                                std::vector<double>* grad) {
  if (batches.empty()) throw Error(ErrorCode::InvalidArgument, "grpo requires at least one batch");
  ObjectiveAccum acc;
  double batch_w = 1.0 / static_cast<double>(batches.size());
  for (const auto& batch : batches) {
    batch.validate();
    std::vector<double> embed = embed_prompt(batch.prompt);
    double group_w = batch_w / static_cast<double>(batch.trajectories.size());
    for (std::size_t i = 0; i < batch.trajectories.size(); i++) {
      const Trajectory& traj = batch.trajectories[i];
      double advantage = batch.advantages.values[i];
      double delta = 1.0 / traj.steps;
      double var = traj.sigma * traj.sigma * delta;
      double step_w = 1.0 / static_cast<double>(traj.steps);
      for (int k = 0; k < traj.steps; k++) {
        double t = traj.time_of_step(k);
        double lp_policy = 0.0;
        double lp_behavior = 0.0;
        // Forward both densities first; the gradient pass below needs r.
        for (int m = 0; m < traj.points; m++) {
          Vec2 x = traj.states[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)];
          Vec2 x_next = traj.states[static_cast<std::size_t>(k) + 1][static_cast<std::size_t>(m)];
          Vec2 mean_p = x - velocity(policy, x, t, embed) * delta;
          lp_policy += -std::log(kTwoPi * var) - (x_next - mean_p).norm2() / (2.0 * var);
          Vec2 mean_b = x - velocity(behavior, x, t, embed) * delta;
          lp_behavior += -std::log(kTwoPi * var) - (x_next - mean_b).norm2() / (2.0 * var);
        }
        double ratio = std::exp(lp_policy - lp_behavior);
        if (!std::isfinite(ratio))
          throw Error(ErrorCode::NonFiniteState, "importance ratio overflowed");
        acc.ratio_count++;
        if (ratio < 1.0 - cfg.eta || ratio > 1.0 + cfg.eta) acc.clip_hits++;
        double clipped = std::clamp(ratio, 1.0 - cfg.eta, 1.0 + cfg.eta);
        acc.surrogate += group_w * step_w * std::min(ratio * advantage, clipped * advantage);
        // Gradient flows only through the unclipped branch of the min.
        bool pass_through = !((advantage > 0.0 && ratio > 1.0 + cfg.eta) ||
                              (advantage < 0.0 && ratio < 1.0 - cfg.eta));
        if (grad && pass_through && advantage != 0.0) {
          double w = group_w * step_w * advantage * ratio;
          for (int m = 0; m < traj.points; m++) {
            Vec2 x = traj.states[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)];
            Vec2 x_next = traj.states[static_cast<std::size_t>(k) + 1][static_cast<std::size_t>(m)];
            std::vector<std::vector<double>> acts;
            Vec2 v = net_forward(policy, make_input(x, t, embed), &acts);
            Vec2 mean_p = x - v * delta;
            // d logp / d v = -(x_next - mean) / sigma^2
            Vec2 cot = (x_next - mean_p) * (-w / (traj.sigma * traj.sigma));
            net_backward(policy, acts, cot, *grad);
          }
        }
      }
      // KL term (always reported; contributes to the gradient when weighted).
      double traj_kl = 0.0;
      for (int k = 0; k < traj.steps; k++) {
        double t = traj.time_of_step(k);
        for (int m = 0; m < traj.points; m++) {
          Vec2 x = traj.states[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)];
          Vec2 v_ref = velocity(reference, x, t, embed);
          if (grad && cfg.beta_kl > 0.0) {
            std::vector<std::vector<double>> acts;
            Vec2 v = net_forward(policy, make_input(x, t, embed), &acts);
            traj_kl += delta * (v - v_ref).norm2() / (2.0 * traj.sigma * traj.sigma) * step_w;
            // d(-beta * kl)/d v
            Vec2 cot = (v - v_ref) * (-cfg.beta_kl * group_w * step_w * delta /
                                      (traj.sigma * traj.sigma));
            net_backward(policy, acts, cot, *grad);
          } else {
            Vec2 v = velocity(policy, x, t, embed);
            traj_kl += delta * (v - v_ref).norm2() / (2.0 * traj.sigma * traj.sigma) * step_w;
          }
        }
      }
      acc.kl += group_w * traj_kl;
    }
  }
  return acc;
}

}  // namespace detail

// The estimated GRPO objective on fixed batches: mean over batches and group
// of the clipped surrogate minus beta_kl times the per-trajectory KL.
inline double grpo_objective(const PolicyParams& policy, const PolicyParams& behavior,
                             const PolicyParams& reference, std::span<const RolloutBatch> batches,
                             const GrpoConfig& cfg) {
  return detail::grpo_eval(policy, behavior, reference, batches, cfg, nullptr)
      .objective(cfg.beta_kl);
}

// One gradient-ascent update with the configured learning rate.
inline std::pair<PolicyParams, StepStats> grpo_step(const PolicyParams& policy,
                                                    const PolicyParams& behavior,
                                                    const PolicyParams& reference,
                                                    std::span<const RolloutBatch> batches,
                                                    const GrpoConfig& cfg) {
  cfg.validate();
  std::string behavior_id = params_fingerprint(behavior);
  for (const auto& b : batches)
    if (b.behavior_snapshot_id != behavior_id)
      throw Error(ErrorCode::InvalidArgument,
                  "rollout batch was collected under a different behavior snapshot");
  std::vector<double> grad(policy.values.size(), 0.0);
  detail::ObjectiveAccum acc = detail::grpo_eval(policy, behavior, reference, batches, cfg, &grad);
  double norm2 = 0.0;
  for (double g : grad) norm2 += g * g;
  if (!std::isfinite(norm2))
    throw Error(ErrorCode::NonFiniteGradient, "GRPO gradient is non-finite");
  PolicyParams updated = policy;
  for (std::size_t i = 0; i < grad.size(); i++) updated.values[i] += cfg.learning_rate * grad[i];
  StepStats stats;
  stats.surrogate = acc.surrogate;
  stats.kl = acc.kl;
  stats.clip_fraction =
      acc.ratio_count == 0 ? 0.0
                           : static_cast<double>(acc.clip_hits) / static_cast<double>(acc.ratio_count);
  stats.grad_norm = std::sqrt(norm2);
  return {std::move(updated), stats};
}

// ---------------------------------------------------------------------------
// Config wire format

inline Json grpo_config_to_json(const GrpoConfig& cfg) {
  Json j;
  j["group_size"] = cfg.group_size;
  j["sample_steps"] = cfg.sample_steps;
  j["points_per_candidate"] = cfg.points_per_candidate;
  j["eta"] = cfg.eta;
  j["beta_kl"] = cfg.beta_kl;
  j["sigma"] = cfg.sigma;
  j["alpha"] = cfg.mix.alpha;
  j["epsilon"] = cfg.mix.epsilon;
  j["learning_rate"] = cfg.learning_rate;
  j["inner_epochs"] = cfg.inner_epochs;
  j["total_steps"] = cfg.total_steps;
  j["prompts_per_step"] = cfg.prompts_per_step;
  j["shared_initial_noise"] = cfg.shared_initial_noise;
  j["seed"] = cfg.seed;
  j["prompt_bank"] = cfg.prompt_bank;
  j["eval_pairs"] = cfg.eval_pairs;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["workers"] = cfg.workers;
  j["pretrain_steps"] = cfg.pretrain_steps;
  j["pretrain_lr"] = cfg.pretrain_lr;
  j["pretrain_batch"] = cfg.pretrain_batch;
  return j;
}

// Strict parse: unknown keys are errors, known keys fall back to defaults
// when absent, ranges are validated.
inline GrpoConfig grpo_config_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, "config must be an object");
  GrpoConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "group_size")
        cfg.group_size = value.get<int>();
      else if (key == "sample_steps")
        cfg.sample_steps = value.get<int>();
      else if (key == "points_per_candidate")
        cfg.points_per_candidate = value.get<int>();
      else if (key == "eta")
        cfg.eta = value.get<double>();
      else if (key == "beta_kl")
        cfg.beta_kl = value.get<double>();
      else if (key == "sigma")
        cfg.sigma = value.get<double>();
      else if (key == "alpha")
        cfg.mix.alpha = value.get<double>();
      else if (key == "epsilon")
        cfg.mix.epsilon = value.get<double>();
      else if (key == "learning_rate")
        cfg.learning_rate = value.get<double>();
      else if (key == "inner_epochs")
        cfg.inner_epochs = value.get<int>();
      else if (key == "total_steps")
        cfg.total_steps = value.get<int>();
      else if (key == "prompts_per_step")
        cfg.prompts_per_step = value.get<int>();
      else if (key == "shared_initial_noise")
        cfg.shared_initial_noise = value.get<bool>();
      else if (key == "seed")
        cfg.seed = value.get<std::uint64_t>();
      else if (key == "prompt_bank")
        cfg.prompt_bank = value.get<std::string>();
      else if (key == "eval_pairs")
        cfg.eval_pairs = value.get<int>();
      else if (key == "checkpoint_every")
        cfg.checkpoint_every = value.get<int>();
      else if (key == "workers")
        cfg.workers = value.get<int>();
      else if (key == "pretrain_steps")
        cfg.pretrain_steps = value.get<int>();
      else if (key == "pretrain_lr")
        cfg.pretrain_lr = value.get<double>();
      else if (key == "pretrain_batch")
        cfg.pretrain_batch = value.get<int>();
      else
        throw Error(ErrorCode::UnknownKey, "unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::SchemaError, "config key '" + key + "' has the wrong type");
    }
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Training loop

// Exclusive ownership of a run directory for the duration of a run.
class RunLock {
 public:
  explicit RunLock(const std::string& dir) : path_(dir + "/lock") {
    if (std::filesystem::exists(path_))
      throw Error(ErrorCode::LockHeld, "run directory is locked: " + path_);
    std::ofstream out(path_);
    out << "locked\n";
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

template <typename Backend>
std::vector<Trajectory> rollout_group(const PolicyParams& policy, const PromptSpec& prompt,
                                      const GrpoConfig& cfg, std::uint64_t batch_key,
                                      const Backend&) {
  std::vector<Trajectory> group(static_cast<std::size_t>(cfg.group_size));
  std::uint64_t pk = hash_combine(fnv1a(prompt.prompt_id), batch_key);
  detail::parallel_for(group.size(), cfg.workers, [&](std::size_t i) {
    std::uint64_t init_key =
        cfg.shared_initial_noise ? hash_combine(pk, 0) : hash_combine(pk, 1 + i);
    RngStream init = RngStream::derive(cfg.seed, "initial-noise", init_key);
    RngStream noise = RngStream::derive(cfg.seed, "sde-noise", hash_combine(pk, i));
    group[i] = sample_sde(policy, prompt, cfg.sample_steps, cfg.points_per_candidate, cfg.sigma,
                          init, noise);
  });
  return group;
}

// Collects one prompt's rollout batch: trajectories, tournament, advantages.
template <typename Backend>
RolloutBatch collect_batch(const PolicyParams& policy, const PromptSpec& prompt,
                           const GrpoConfig& cfg, std::uint64_t batch_key,
                           const Backend& backend) {
  RolloutBatch batch;
  batch.prompt = prompt;
  batch.trajectories = rollout_group(policy, prompt, cfg, batch_key, backend);
  std::vector<Candidate> candidates;
  candidates.reserve(batch.trajectories.size());
  for (const auto& t : batch.trajectories) candidates.push_back(t.terminal());
  batch.matrix = run_tournament(candidates, prompt, backend, cfg.workers);
  AdvantageVector a_dim = standardize(mean_dim_win_rates(batch.matrix, backend.anchors()),
                                      cfg.mix.epsilon);
  AdvantageVector a_overall = standardize(overall_win_rates(batch.matrix), cfg.mix.epsilon);
  batch.advantages = combine(a_dim, a_overall, cfg.mix);
  batch.behavior_snapshot_id = params_fingerprint(policy);
  return batch;
}

// Mean overall win rate of `policy` against the frozen reference, judged on
// deterministic ODE samples over the prompt bank. Identical candidates and
// judged ties score one half.
template <typename Backend>
double eval_win_rate_vs_ref(const PolicyParams& policy, const PolicyParams& reference,
                            const std::vector<PromptSpec>& bank, const GrpoConfig& cfg,
                            const Backend& backend) {
  double total = 0.0;
  for (int e = 0; e < cfg.eval_pairs; e++) {
    const PromptSpec& prompt = bank[static_cast<std::size_t>(e) % bank.size()];
    std::uint64_t s = hash_combine(cfg.seed, hash_combine(fnv1a("eval-pair"), e));
    Candidate mine = sample_ode(policy, prompt, cfg.sample_steps, cfg.points_per_candidate, s);
    Candidate theirs =
        sample_ode(reference, prompt, cfg.sample_steps, cfg.points_per_candidate, s);
    if (mine == theirs) {
      total += 0.5;
      continue;
    }
    PreferenceInstance instance;
    instance.instance_id = "eval#" + std::to_string(e);
    instance.prompt = PromptValue::of(prompt);
    instance.candidate_a = CandidateRef::of(std::move(mine));
    instance.candidate_b = CandidateRef::of(std::move(theirs));
    try {
      PairOutcome outcome = debiased_judge(backend, instance);
      total += outcome.winner == CandidateId::A ? 1.0 : 0.0;
    } catch (const Error& err) {
      if (err.code() != ErrorCode::Tie) throw;
      total += 0.5;
    }
  }
  return total / cfg.eval_pairs;
}

// Offline stand-in for an external alignment monitor: the oracle "alignment"
// score of fresh ODE samples, averaged over the eval prompts.
inline double eval_alignment_proxy(const PolicyParams& policy, const std::vector<PromptSpec>& bank,
                                   const GrpoConfig& cfg, const OracleParams& oracle) {
  double total = 0.0;
  for (int e = 0; e < cfg.eval_pairs; e++) {
    const PromptSpec& prompt = bank[static_cast<std::size_t>(e) % bank.size()];
    std::uint64_t s = hash_combine(cfg.seed, hash_combine(fnv1a("eval-pair"), e));
    Candidate c = sample_ode(policy, prompt, cfg.sample_steps, cfg.points_per_candidate, s);
    total += oracle_score(oracle, prompt, c, oracle.anchors.anchors.front());
  }
  return total / cfg.eval_pairs;
}

struct TrainResult {
  std::string run_dir;
  int steps_run = 0;
  double final_win_rate_vs_ref = 0.0;
  double final_alignment_proxy = 0.0;
  std::string final_checkpoint;
};

inline Json step_stats_to_json(const StepStats& s) {
  // wall_clock_s deliberately omitted: metrics logs are byte-deterministic
  // functions of (config, seed).
  Json metrics;
  metrics["win_rate_vs_ref"] = s.win_rate_vs_ref;
  metrics["surrogate"] = s.surrogate;
  metrics["kl"] = s.kl;
  metrics["clip_fraction"] = s.clip_fraction;
  metrics["grad_norm"] = s.grad_norm;
  metrics["alignment_proxy"] = s.alignment_proxy;
  Json j;
  j["step"] = s.step;
  j["metrics"] = std::move(metrics);
  return j;
}

// Full Pref-GRPO run: pretrain (optional), then per outer step roll out
// G trajectories per prompt, judge all pairs, mix advantages, update.
// Emits config.snapshot, checkpoints/, metrics.jsonl under out_dir.
template <typename Backend>
TrainResult train_grpo(const GrpoConfig& cfg, const std::string& out_dir, const Backend& backend,
                       const OracleParams& metric_oracle = OracleParams{},
                       bool log_progress = false) {
  cfg.validate();
  std::vector<PromptSpec> bank = load_prompt_bank(cfg.prompt_bank);
  if (bank.empty()) throw Error(ErrorCode::InvalidArgument, "prompt bank is empty");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir + "/checkpoints");
  RunLock lock(out_dir);
  {
    std::ofstream snap(out_dir + "/config.snapshot", std::ios::binary);
    if (!snap) throw Error(ErrorCode::IoError, "cannot write config snapshot");
    snap << grpo_config_to_json(cfg).dump(2) << "\n";
  }

  RngStream init_rng = RngStream::derive(cfg.seed, "policy-init", 0);
  PolicyParams policy = PolicyParams::init(Architecture{}, init_rng);
  if (cfg.pretrain_steps > 0) {
    RngStream pre_rng = RngStream::derive(cfg.seed, "pretrain", 0);
    policy = pretrain_cfm(std::move(policy), bank, cfg.pretrain_steps, cfg.pretrain_lr, pre_rng,
                          cfg.pretrain_batch);
  }
  save_policy(out_dir + "/checkpoints/reference.json", policy);
  PolicyParams reference = policy;

  std::ofstream metrics(out_dir + "/metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw Error(ErrorCode::IoError, "cannot write metrics log");

  TrainResult result;
  result.run_dir = out_dir;
  int step = 0;
  try {
    for (step = 0; step < cfg.total_steps; step++) {
      auto t0 = std::chrono::steady_clock::now();
      PolicyParams behavior = policy;
      std::vector<RolloutBatch> batches;
      for (int p = 0; p < cfg.prompts_per_step; p++) {
        std::size_t bank_index =
            (static_cast<std::size_t>(step) * cfg.prompts_per_step + p) % bank.size();
        std::uint64_t batch_key =
            hash_combine(static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(p));
        batches.push_back(collect_batch(behavior, bank[bank_index], cfg, batch_key, backend));
      }
      StepStats stats;
      for (int epoch = 0; epoch < cfg.inner_epochs; epoch++) {
        auto [updated, s] = grpo_step(policy, behavior, reference, batches, cfg);
        policy = std::move(updated);
        stats = s;
      }
      stats.step = step;
      stats.win_rate_vs_ref = eval_win_rate_vs_ref(policy, reference, bank, cfg, backend);
      stats.alignment_proxy = eval_alignment_proxy(policy, bank, cfg, metric_oracle);
      stats.wall_clock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      metrics << step_stats_to_json(stats).dump() << "\n";
      metrics.flush();
      if (log_progress)
        std::fprintf(stderr, "step %d  win_rate=%.3f  align=%.4f  clip=%.2f  (%.2fs)\n",
                     step, stats.win_rate_vs_ref, stats.alignment_proxy, stats.clip_fraction,
                     stats.wall_clock_s);
      if ((step + 1) % cfg.checkpoint_every == 0)
        save_policy(out_dir + "/checkpoints/step_" + std::to_string(step + 1) + ".json", policy);
      result.final_win_rate_vs_ref = stats.win_rate_vs_ref;
      result.final_alignment_proxy = stats.alignment_proxy;
    }
  } catch (...) {
    // Halt with a resumable snapshot of where we stopped.
    save_policy(out_dir + "/checkpoints/resume_step_" + std::to_string(step) + ".json", policy);
    throw;
  }
  result.steps_run = cfg.total_steps;
  result.final_checkpoint = out_dir + "/checkpoints/final.json";
  save_policy(result.final_checkpoint, policy);
  return result;
}

}  // namespace preftrain
