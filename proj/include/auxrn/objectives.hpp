#pragma once

// Navigation objectives: imitation (teacher-forced cross entropy), advantage
// actor-critic, reward shaping and the summed-gradient joint update.

#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxrn/autograd.hpp"
#include "auxrn/graphworld.hpp"

namespace auxrn {

using ad::Matrix;
using ad::Var;

struct RolloutRecord {
  std::vector<Var> logits;  // per step, (k_t+1) x 1
  std::vector<int> actions;
  std::optional<std::vector<int>> teacher_actions;
  std::vector<double> rewards;
  std::vector<Var> values;  // V_t, 1x1
  bool teacher_forced = false;

  std::size_t length() const { return logits.size(); }
};

struct AdvantageEstimate {
  std::vector<double> returns;
  std::vector<double> advantages;  // return_t - V_t, constants
};

// return_t = reward_t + γ·return_{t+1}, with return_T = reward_T.
inline std::vector<double> discounted_returns(const std::vector<double>& rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    out[t] = acc;
  }
  return out;
}

inline AdvantageEstimate estimate_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                             double gamma) {
  if (rewards.size() != values.size()) throw std::invalid_argument("estimate_advantages: length mismatch");
  AdvantageEstimate a;
  a.returns = discounted_returns(rewards, gamma);
  a.advantages.resize(rewards.size());
  for (std::size_t t = 0; t < rewards.size(); ++t) a.advantages[t] = a.returns[t] - values[t];
  return a;
}

inline AdvantageEstimate estimate_advantages(const RolloutRecord& r, double gamma) {
  std::vector<double> v;
  v.reserve(r.values.size());
  for (const Var& x : r.values) v.push_back(x.scalar());
  return estimate_advantages(r.rewards, v, gamma);
}

// Σ_t -log p_t(a*_t).
inline Var il_loss(const RolloutRecord& r) {
  if (!r.teacher_actions || r.teacher_actions->size() != r.length())
    throw std::invalid_argument("il_loss: rollout is missing teacher actions");
  if (r.length() == 0) throw std::invalid_argument("il_loss: empty rollout");
  std::vector<Var> terms;
  terms.reserve(r.length());
  for (std::size_t t = 0; t < r.length(); ++t)
    terms.push_back(ad::pick(ad::log_softmax(r.logits[t]), (*r.teacher_actions)[t]));
  return ad::scale(ad::add_n(terms), -1.0);
}

struct RlLoss {
  Var policy;  // -Σ log p_t(a_t)·A_t
  Var value;   // Σ (return_t - V_t)^2
};

inline RlLoss rl_loss(const RolloutRecord& r, const AdvantageEstimate& adv) {
  const std::size_t n = r.length();
  if (n == 0) throw std::invalid_argument("rl_loss: empty rollout");
  if (r.actions.size() != n || r.values.size() != n || adv.advantages.size() != n || adv.returns.size() != n)
    throw std::invalid_argument("rl_loss: length mismatch between rollout and advantages");
  ad::Tape& tape = *r.logits.front().tape;
  std::vector<Var> pol, val;
  for (std::size_t t = 0; t < n; ++t) {
    Var logp = ad::pick(ad::log_softmax(r.logits[t]), r.actions[t]);
    pol.push_back(ad::scale(logp, -adv.advantages[t]));
    val.push_back(ad::square(tape.constant_scalar(adv.returns[t]) - r.values[t]));
  }
  return {ad::add_n(pol), ad::add_n(val)};
}

struct ValueHeadWeights {
  Var w;  // 1 x H
  Var b;  // 1 x 1
};

inline Var value_estimate(const ValueHeadWeights& head, Var cross_modal) {
  return ad::matmul(head.w, cross_modal) + head.b;
}

struct RewardConfig {
  double success_radius = 1.0;
  double terminal_bonus = 2.0;
};

struct Trajectory {
  std::vector<int> nodes;
  bool stopped = false;

  // Number of decisions taken: moves plus the stop, if any.
  std::size_t decisions() const { return nodes.empty() ? 0 : nodes.size() - 1 + (stopped ? 1 : 0); }
};

// One reward per decision: decrease in geodesic distance-to-goal for moves;
// the terminal decision also receives +bonus when the agent stopped within
// the success radius and -bonus otherwise.
inline std::vector<double> compute_rewards(const Trajectory& traj, const Episode& episode, const NavGraph& graph,
                                           const RewardConfig& cfg = {}) {
  if (traj.nodes.empty()) throw std::invalid_argument("compute_rewards: empty trajectory");
  std::vector<double> r;
  for (std::size_t i = 1; i < traj.nodes.size(); ++i)
    r.push_back(graph.distance(traj.nodes[i - 1], episode.goal) - graph.distance(traj.nodes[i], episode.goal));
  const bool success = traj.stopped && graph.distance(traj.nodes.back(), episode.goal) <= cfg.success_radius;
  const double terminal = success ? cfg.terminal_bonus : -cfg.terminal_bonus;
  if (traj.stopped)
    r.push_back(terminal);
  else if (!r.empty())
    r.back() += terminal;
  else
    r.push_back(terminal);
  return r;
}

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& term, const std::string& what)
      : std::runtime_error(what), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

struct LossTerm {
  std::string name;
  Var value;  // scalar
  double weight = 1.0;
};

// Backpropagates Σ weight·term into Parameter::grad (accumulating).
inline void accumulate_gradients(ad::Tape& tape, const std::vector<LossTerm>& terms) {
  std::vector<Var> parts;
  for (const auto& t : terms) {
    if (!std::isfinite(t.value.scalar()))
      throw DivergenceError(t.name, "non-finite loss term '" + t.name + "'");
    if (t.weight != 0.0) parts.push_back(ad::scale(t.value, t.weight));
  }
  if (parts.empty()) return;
  tape.backward(ad::add_n(parts));
}

struct SgdMomentum {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::map<std::string, Matrix> velocity;

  void step(ad::ParameterSet& params) {
    for (auto& [name, p] : params) {
      auto it = velocity.find(name);
      if (it == velocity.end()) it = velocity.emplace(name, Matrix::Zero(p.value.rows(), p.value.cols())).first;
      it->second = momentum * it->second + p.grad;
      p.value -= learning_rate * it->second;
    }
  }
};

inline double gradient_norm(const ad::ParameterSet& params) {
  double s = 0.0;
  for (const auto& [_, p] : params) s += p.grad.squaredNorm();
  return std::sqrt(s);
}

struct StepReport {
  std::map<std::string, double> losses;
  double grad_norm = 0.0;
};

// Gradients of all terms (the teacher-forced and student-forced passes) are
// summed on one tape, then a single optimizer update is applied. A
// non-finite term or gradient aborts before any parameter changes.
inline StepReport joint_step(ad::Tape& tape, const std::vector<LossTerm>& terms, ad::ParameterSet& params,
                             SgdMomentum& optimizer, double clip_norm = 0.0) {
  StepReport rep;
  for (const auto& t : terms) rep.losses[t.name] += t.value.scalar();
  params.zero_grad();
  accumulate_gradients(tape, terms);
  rep.grad_norm = gradient_norm(params);
  if (!std::isfinite(rep.grad_norm)) {
    for (const auto& t : terms) {
      params.zero_grad();
      accumulate_gradients(tape, {t});
      if (!std::isfinite(gradient_norm(params)))
        throw DivergenceError(t.name, "non-finite gradient from loss term '" + t.name + "'");
    }
    throw DivergenceError("total", "non-finite gradient");
  }
  if (clip_norm > 0.0 && rep.grad_norm > clip_norm)
    for (auto& [_, p] : params) p.grad *= clip_norm / rep.grad_norm;
  optimizer.step(params);
  return rep;
}

}  // namespace auxrn
