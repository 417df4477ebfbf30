#pragma once

#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "preftrain/candidate.hpp"
#include "preftrain/prompt.hpp"

namespace preftrain {

// Toy prompt-conditioned flow generator over 2-D point sets. The velocity
// field is a small tanh MLP with hand-coded reverse-mode gradients; sampling
// runs the field from t=1 (noise) down to t=0 (data) on a uniform grid.

inline constexpr int kMaxMixtureComponents = 4;
inline constexpr int kPromptEmbedDim = 3 * kMaxMixtureComponents + 3;
inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// Flattened (means, weights, std, flags) conditioning vector.
inline std::vector<double> embed_prompt(const PromptSpec& prompt) {
  if (static_cast<int>(prompt.mixture.size()) > kMaxMixtureComponents)
    throw Error(ErrorCode::RangeError,
                "prompt has more than " + std::to_string(kMaxMixtureComponents) +
                    " mixture components");
  std::vector<double> e(kPromptEmbedDim, 0.0);
  for (std::size_t i = 0; i < prompt.mixture.size(); i++) {
    e[3 * i + 0] = prompt.mixture[i].mean.x;
    e[3 * i + 1] = prompt.mixture[i].mean.y;
    e[3 * i + 2] = prompt.mixture[i].weight;
  }
  e[3 * kMaxMixtureComponents + 0] = prompt.component_std;
  e[3 * kMaxMixtureComponents + 1] = prompt.constraints.min_spread.value_or(0.0);
  e[3 * kMaxMixtureComponents + 2] = prompt.constraints.symmetry ? 1.0 : 0.0;
  return e;
}

struct Architecture {
  int input_dim = 2 + 1 + kPromptEmbedDim;
  std::vector<int> hidden = {32, 32};
  int output_dim = 2;

  bool operator==(const Architecture&) const = default;

  std::size_t param_count() const {
    std::size_t n = 0;
    int in = input_dim;
    for (int h : hidden) {
      n += static_cast<std::size_t>(h) * in + h;
      in = h;
    }
    n += static_cast<std::size_t>(output_dim) * in + output_dim;
    return n;
  }

  Json to_json() const {
    return Json{{"input_dim", input_dim}, {"hidden", hidden}, {"output_dim", output_dim}};
  }

  static Architecture from_json(const Json& j) {
    Architecture a;
    a.input_dim = j.at("input_dim").get<int>();
    a.hidden = j.at("hidden").get<std::vector<int>>();
    a.output_dim = j.at("output_dim").get<int>();
    if (a.input_dim < 1 || a.output_dim != 2)
      throw Error(ErrorCode::SchemaError, "bad architecture descriptor");
    for (int h : a.hidden)
      if (h < 1) throw Error(ErrorCode::SchemaError, "bad architecture descriptor");
    return a;
  }
};

struct PolicyParams {
  Architecture arch;
  std::vector<double> values;

  bool operator==(const PolicyParams&) const = default;

  void validate() const {
    if (values.size() != arch.param_count())
      throw Error(ErrorCode::LengthMismatch, "parameter vector does not match architecture");
    for (double v : values)
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteState, "non-finite policy parameter");
  }

  static PolicyParams zeros(Architecture arch) {
    PolicyParams p;
    p.values.assign(arch.param_count(), 0.0);
    p.arch = std::move(arch);
    return p;
  }

  static PolicyParams init(Architecture arch, RngStream& rng) {
    PolicyParams p = zeros(std::move(arch));
    std::size_t off = 0;
    int in = p.arch.input_dim;
    auto fill_layer = [&](int n_out, int n_in) {
      double scale = 1.0 / std::sqrt(static_cast<double>(n_in));
      for (int i = 0; i < n_out * n_in; i++) p.values[off++] = scale * rng.normal();
      off += n_out;  // biases stay zero
    };
    for (int h : p.arch.hidden) {
      fill_layer(h, in);
      in = h;
    }
    fill_layer(p.arch.output_dim, in);
    return p;
  }
};

namespace detail {

// Forward pass; optionally records layer activations for the backward pass.
inline Vec2 net_forward(const PolicyParams& p, std::span<const double> input,
                        std::vector<std::vector<double>>* activations = nullptr) {
  const Architecture& arch = p.arch;
  std::vector<double> cur(input.begin(), input.end());
  if (activations) {
    activations->clear();
    activations->push_back(cur);
  }
  std::size_t off = 0;
  int in = arch.input_dim;
  for (int h : arch.hidden) {
    std::vector<double> next(static_cast<std::size_t>(h));
    for (int i = 0; i < h; i++) {
      double acc = p.values[off + static_cast<std::size_t>(h) * in + i];  // bias
      const double* w = &p.values[off + static_cast<std::size_t>(i) * in];
      for (int j = 0; j < in; j++) acc += w[j] * cur[j];
      next[i] = std::tanh(acc);
    }
    off += static_cast<std::size_t>(h) * in + h;
    cur = std::move(next);
    if (activations) activations->push_back(cur);
    in = h;
  }
  Vec2 out;
  double* o = &out.x;
  for (int i = 0; i < arch.output_dim; i++) {
    double acc = p.values[off + static_cast<std::size_t>(arch.output_dim) * in + i];
    const double* w = &p.values[off + static_cast<std::size_t>(i) * in];
    for (int j = 0; j < in; j++) acc += w[j] * cur[j];
    o[i] = acc;
  }
  return out;
}

// Reverse pass: grad += d(cotangent . output)/d(params). Inputs are treated
// as constants (trajectory states are data, not differentiated through).
inline void net_backward(const PolicyParams& p, const std::vector<std::vector<double>>& activations,
                         Vec2 cotangent, std::vector<double>& grad) {
  const Architecture& arch = p.arch;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  int in = arch.input_dim;
  for (int h : arch.hidden) {
    offsets.push_back(off);
    off += static_cast<std::size_t>(h) * in + h;
    in = h;
  }
  offsets.push_back(off);

  // Output layer.
  const std::vector<double>& last = activations.back();
  int last_n = static_cast<int>(last.size());
  std::vector<double> delta(last.size(), 0.0);
  const double* co = &cotangent.x;
  std::size_t out_off = offsets.back();
  for (int i = 0; i < arch.output_dim; i++) {
    const double* w = &p.values[out_off + static_cast<std::size_t>(i) * last_n];
    double* gw = &grad[out_off + static_cast<std::size_t>(i) * last_n];
    for (int j = 0; j < last_n; j++) {
      gw[j] += co[i] * last[j];
      delta[j] += co[i] * w[j];
    }
    grad[out_off + static_cast<std::size_t>(arch.output_dim) * last_n + i] += co[i];
  }

  // Hidden layers, back to front. activations[l+1] = tanh(W_l a_l + b_l).
  for (int l = static_cast<int>(arch.hidden.size()) - 1; l >= 0; l--) {
    const std::vector<double>& a_in = activations[static_cast<std::size_t>(l)];
    const std::vector<double>& a_out = activations[static_cast<std::size_t>(l) + 1];
    int n_out = static_cast<int>(a_out.size());
    int n_in = static_cast<int>(a_in.size());
    std::size_t loff = offsets[static_cast<std::size_t>(l)];
    std::vector<double> next_delta(a_in.size(), 0.0);
    for (int i = 0; i < n_out; i++) {
      double d = delta[i] * (1.0 - a_out[i] * a_out[i]);  // tanh'
      const double* w = &p.values[loff + static_cast<std::size_t>(i) * n_in];
      double* gw = &grad[loff + static_cast<std::size_t>(i) * n_in];
      for (int j = 0; j < n_in; j++) {
        gw[j] += d * a_in[j];
        next_delta[j] += d * w[j];
      }
      grad[loff + static_cast<std::size_t>(n_out) * n_in + i] += d;
    }
    delta = std::move(next_delta);
  }
}

inline std::vector<double> make_input(Vec2 x, double t, std::span<const double> embed) {
  std::vector<double> input;
  input.reserve(3 + embed.size());
  input.push_back(x.x);
  input.push_back(x.y);
  input.push_back(t);
  input.insert(input.end(), embed.begin(), embed.end());
  return input;
}

}  // namespace detail

// v_theta(x, t, c). Pure; finite for finite inputs and parameters.
inline Vec2 velocity(const PolicyParams& policy, Vec2 x, double t, std::span<const double> embed) {
  return detail::net_forward(policy, detail::make_input(x, t, embed));
}

inline Vec2 velocity(const PolicyParams& policy, Vec2 x, double t, const PromptSpec& prompt) {
  return velocity(policy, x, t, embed_prompt(prompt));
}

// velocity() plus parameter-gradient accumulation: grad += d(cot . v)/d(theta).
inline Vec2 velocity_backward(const PolicyParams& policy, Vec2 x, double t,
                              std::span<const double> embed, Vec2 cotangent,
                              std::vector<double>& grad) {
  std::vector<std::vector<double>> acts;
  Vec2 out = detail::net_forward(policy, detail::make_input(x, t, embed), &acts);
  detail::net_backward(policy, acts, cotangent, grad);
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

struct Trajectory {
  std::string prompt_id;
  int steps = 0;   // T
  int points = 0;  // M
  double sigma = 0.0;
  std::vector<std::vector<Vec2>> states;  // T+1 rows of M points; row 0 = x at t=1
  std::vector<std::vector<double>> logp;  // T rows of M per-point transition log-probs

  void validate() const {
    if (static_cast<int>(states.size()) != steps + 1 || static_cast<int>(logp.size()) != steps)
      throw Error(ErrorCode::LengthMismatch, "trajectory chain length inconsistent with T");
    for (const auto& row : states) {
      if (static_cast<int>(row.size()) != points)
        throw Error(ErrorCode::LengthMismatch, "trajectory state row has wrong point count");
      for (const auto& p : row)
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
          throw Error(ErrorCode::NonFiniteState, "non-finite trajectory state");
    }
    for (const auto& row : logp)
      for (double v : row)
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteState, "non-finite stored log-prob");
  }

  Candidate terminal() const { return {states.back(), prompt_id}; }

  // Time at the start of transition k, on the uniform grid t: 1 -> 0.
  double time_of_step(int k) const { return 1.0 - static_cast<double>(k) / steps; }

  double total_logprob() const {
    double acc = 0.0;
    for (const auto& row : logp)
      for (double v : row) acc += v;
    return acc;
  }
};

// Exact Gaussian log-density of one transition: x_prev given mean
// x_t - v_theta(x_t, t, c) * delta and std sigma * sqrt(delta), per point.
inline double step_logprob(const PolicyParams& policy, Vec2 x_t, Vec2 x_prev, double t,
                           std::span<const double> embed, double sigma, double delta) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::DegenerateNoise, "step_logprob requires sigma > 0");
  if (!(delta > 0.0)) throw Error(ErrorCode::DegenerateNoise, "step_logprob requires delta > 0");
  double var = sigma * sigma * delta;
  Vec2 mean = x_t - velocity(policy, x_t, t, embed) * delta;
  double q = (x_prev - mean).norm2();
  return -std::log(kTwoPi * var) - q / (2.0 * var);
}

inline double step_logprob(const PolicyParams& policy, Vec2 x_t, Vec2 x_prev, double t,
                           const PromptSpec& prompt, double sigma, double delta) {
  return step_logprob(policy, x_t, x_prev, t, embed_prompt(prompt), sigma, delta);
}

// Deterministic Euler integration from standard-normal initial points.
inline Candidate sample_ode(const PolicyParams& policy, const PromptSpec& prompt, int steps,
                            int points, std::uint64_t seed) {
  if (steps < 1) throw Error(ErrorCode::RangeError, "sample_ode requires T >= 1");
  if (points < 1) throw Error(ErrorCode::RangeError, "sample_ode requires M >= 1");
  std::vector<double> embed = embed_prompt(prompt);
  RngStream rng = RngStream::derive(seed, "initial-noise", fnv1a(prompt.prompt_id));
  std::vector<Vec2> x(static_cast<std::size_t>(points));
  for (auto& p : x) p = rng.normal2();
  double delta = 1.0 / steps;
  for (int k = 0; k < steps; k++) {
    double t = 1.0 - static_cast<double>(k) / steps;
    for (auto& p : x) {
      p = p - velocity(policy, p, t, embed) * delta;
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw Error(ErrorCode::NonFiniteState, "ODE integration diverged");
    }
  }
  return {std::move(x), prompt.prompt_id};
}

// Euler-Maruyama with constant sigma; stores exact per-point transition
// log-probs. Initial noise comes from init_rng so a rollout group can share
// it; transition noise comes from noise_rng (one stream per rollout).
inline Trajectory sample_sde(const PolicyParams& policy, const PromptSpec& prompt, int steps,
                             int points, double sigma, RngStream init_rng, RngStream noise_rng) {
  if (steps < 1) throw Error(ErrorCode::RangeError, "sample_sde requires T >= 1");
  if (points < 1) throw Error(ErrorCode::RangeError, "sample_sde requires M >= 1");
  if (!(sigma > 0.0))
    throw Error(ErrorCode::DegenerateNoise,
                "sample_sde with sigma = 0 has undefined log-probs; use sample_ode");
  std::vector<double> embed = embed_prompt(prompt);
  Trajectory traj;
  traj.prompt_id = prompt.prompt_id;
  traj.steps = steps;
  traj.points = points;
  traj.sigma = sigma;
  std::vector<Vec2> x(static_cast<std::size_t>(points));
  for (auto& p : x) p = init_rng.normal2();
  traj.states.push_back(x);
  double delta = 1.0 / steps;
  double var = sigma * sigma * delta;
  double noise_scale = sigma * std::sqrt(delta);
  for (int k = 0; k < steps; k++) {
    double t = 1.0 - static_cast<double>(k) / steps;
    std::vector<double> row_logp(static_cast<std::size_t>(points));
    for (int m = 0; m < points; m++) {
      Vec2 mean = x[m] - velocity(policy, x[m], t, embed) * delta;
      Vec2 eps = noise_rng.normal2();
      Vec2 next = mean + eps * noise_scale;
      if (!std::isfinite(next.x) || !std::isfinite(next.y))
        throw Error(ErrorCode::NonFiniteState, "SDE integration diverged");
      row_logp[static_cast<std::size_t>(m)] =
          -std::log(kTwoPi * var) - (next - mean).norm2() / (2.0 * var);
      x[m] = next;
    }
    traj.states.push_back(x);
    traj.logp.push_back(std::move(row_logp));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Conditional flow matching pretraining

struct CfmSample {
  Vec2 x0;  // target mixture draw (t=0 end)
  Vec2 x1;  // standard normal draw (t=1 end)
  double t = 0.5;
  std::vector<double> embed;
};

// Mean squared residual || v(x_t, t, c) - (x1 - x0) ||^2 over the batch;
// accumulates d(loss)/d(theta) into *grad when given.
inline double cfm_loss(const PolicyParams& policy, std::span<const CfmSample> batch,
                       std::vector<double>* grad = nullptr) {
  if (batch.empty()) return 0.0;
  double loss = 0.0;
  double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    Vec2 xt = s.x0 * (1.0 - s.t) + s.x1 * s.t;
    Vec2 target = s.x1 - s.x0;
    Vec2 v;
    if (grad) {
      std::vector<std::vector<double>> acts;
      v = detail::net_forward(policy, detail::make_input(xt, s.t, s.embed), &acts);
      Vec2 residual = v - target;
      detail::net_backward(policy, acts, residual * (2.0 * inv_n), *grad);
    } else {
      v = velocity(policy, xt, s.t, s.embed);
    }
    loss += (v - target).norm2() * inv_n;
  }
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "CFM loss is non-finite");
  return loss;
}

inline std::vector<CfmSample> draw_cfm_batch(const std::vector<PromptSpec>& prompts, int n,
                                             RngStream& rng) {
  std::vector<CfmSample> batch;
  batch.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; i++) {
    const PromptSpec& prompt = prompts[rng.below(prompts.size())];
    CfmSample s;
    s.x0 = prompt.sample(rng);
    s.x1 = rng.normal2();
    s.t = rng.uniform();
    s.embed = embed_prompt(prompt);
    batch.push_back(std::move(s));
  }
  return batch;
}

// Plain gradient descent on the CFM regression. steps = 0 returns the input
// policy unchanged.
inline PolicyParams pretrain_cfm(PolicyParams policy, const std::vector<PromptSpec>& prompts,
                                 int steps, double lr, RngStream& rng, int batch_size = 64) {
  if (steps < 0) throw Error(ErrorCode::RangeError, "pretrain_cfm requires steps >= 0");
  if (steps == 0) return policy;
  if (prompts.empty()) throw Error(ErrorCode::InvalidArgument, "pretrain_cfm needs prompts");
  policy.validate();
  std::vector<double> grad(policy.values.size());
  for (int step = 0; step < steps; step++) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<CfmSample> batch = draw_cfm_batch(prompts, batch_size, rng);
    cfm_loss(policy, batch, &grad);
    for (std::size_t i = 0; i < policy.values.size(); i++) {
      policy.values[i] -= lr * grad[i];
      if (!std::isfinite(policy.values[i]))
        throw Error(ErrorCode::NonFiniteLoss, "CFM training diverged");
    }
  }
  return policy;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON, round-trips parameters exactly.

inline constexpr int kCheckpointVersion = 1;

inline Json policy_to_json(const PolicyParams& policy) {
  Json j;
  j["format_version"] = kCheckpointVersion;
  j["arch"] = policy.arch.to_json();
  j["params"] = policy.values;
  return j;
}

inline PolicyParams policy_from_json(const Json& j) {
  if (!j.contains("format_version") || j["format_version"].get<int>() != kCheckpointVersion)
    throw Error(ErrorCode::SchemaError, "unsupported checkpoint format version");
  PolicyParams p;
  p.arch = Architecture::from_json(j.at("arch"));
  p.values = j.at("params").get<std::vector<double>>();
  p.validate();
  return p;
}

inline void save_policy(const std::string& path, const PolicyParams& policy) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write checkpoint: " + path);
  out << policy_to_json(policy).dump(2) << "\n";
}

inline PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read checkpoint: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::SyntaxError, std::string("checkpoint: ") + e.what(), e.byte);
  }
  return policy_from_json(j);
}

// Prompt banks: one PromptSpec per line.
inline std::vector<PromptSpec> load_prompt_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read prompt bank: " + path);
  std::vector<PromptSpec> bank;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::SyntaxError,
                  path + ":" + std::to_string(line_no) + ": " + e.what(), e.byte);
    }
    bank.push_back(PromptSpec::from_json(j));
  }
  return bank;
}

inline void save_prompt_bank(const std::string& path, const std::vector<PromptSpec>& bank) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write prompt bank: " + path);
  for (const auto& p : bank) out << p.to_json().dump() << "\n";
}

}  // namespace preftrain
