#pragma once

// Episode rollouts: one forward pass of the agent through the simulator,
// recording everything the losses, metrics and logs need.

#include <optional>
#include <stdexcept>
#include <vector>

#include "auxrn/model.hpp"

namespace auxrn {

struct StepTrace {
  int node = 0;
  double heading = 0.0;
  int candidate_count = 0;
  Var logits;
  std::vector<double> probabilities;
  int action = 0;
  int teacher_action = 0;
  Orientation teacher_orientation{};
  Var cross_modal;       // f̂_t
  Var vision_context;    // f̃^o_t
  Var vision_weights;    // Attn_o over the 36 views
  Var language_weights;  // Attn_w over the l+1 tokens
};

struct EpisodeRollout {
  const Episode* episode = nullptr;
  SelectMode mode = SelectMode::Argmax;
  LanguageEncoding language;
  std::vector<StepTrace> steps;
  Trajectory trajectory;

  std::vector<Var> cross_modal() const {
    std::vector<Var> v;
    for (const auto& s : steps) v.push_back(s.cross_modal);
    return v;
  }
  std::vector<Var> vision_history() const {
    std::vector<Var> v;
    for (const auto& s : steps) v.push_back(s.vision_context);
    return v;
  }
  std::vector<Orientation> teacher_orientations() const {
    std::vector<Orientation> v;
    for (const auto& s : steps) v.push_back(s.teacher_orientation);
    return v;
  }
  std::vector<int> actions() const {
    std::vector<int> v;
    for (const auto& s : steps) v.push_back(s.action);
    return v;
  }

  // Logits, chosen and teacher actions. Teacher actions are attached only
  // to teacher-forced rollouts.
  RolloutRecord record() const {
    RolloutRecord r;
    r.teacher_forced = mode == SelectMode::Teacher;
    std::vector<int> teacher;
    for (const auto& s : steps) {
      r.logits.push_back(s.logits);
      r.actions.push_back(s.action);
      teacher.push_back(s.teacher_action);
    }
    if (r.teacher_forced) r.teacher_actions = std::move(teacher);
    return r;
  }
};

struct RolloutOptions {
  SelectMode mode = SelectMode::Argmax;
  int max_steps = kMaxPathNodes;
  VisionQuery vision_query = VisionQuery::CrossModal;
  Rng* rng = nullptr;
  // Replays a fixed action sequence instead of selecting (gradient checks).
  const std::vector<int>* replay = nullptr;
};

inline EpisodeRollout run_episode(ad::Tape& tape, const ModelVars& m, const NavGraph& graph, const Episode& episode,
                                  const RolloutOptions& opt) {
  if (opt.max_steps < 1) throw std::invalid_argument("run_episode: max_steps must be >= 1");
  EpisodeRollout out;
  out.episode = &episode;
  out.mode = opt.mode;
  out.language = encode_instruction(tape, m.language, episode.instruction.tokens);
  out.trajectory.nodes.push_back(episode.start);

  int node = episode.start;
  double heading = episode.start_heading;
  Var prev_cross = m.init_cross_modal;
  LstmState state{m.init_hidden, m.init_cell};
  Var prev_vision = m.init_hidden;

  for (int t = 0; t < opt.max_steps; ++t) {
    StepTrace st;
    st.node = node;
    st.heading = heading;
    const Var obs = tape.constant(observe(graph, node, heading).as_matrix());
    const Var query = opt.vision_query == VisionQuery::CrossModal ? prev_cross : prev_vision;
    VisionStep vs = embed_vision_step(m.vision, obs, query, state);
    CrossModalContext cm = fuse_cross_modal(out.language, vs.context, m.fusion_attn);
    const auto cands = candidates(graph, node, heading);
    ActionScores scores = score_candidates(tape.constant(candidate_matrix(cands)), cm.context, m.policy_attn);

    st.candidate_count = static_cast<int>(cands.size());
    st.logits = scores.logits;
    const auto& pv = scores.probabilities.value();
    st.probabilities.assign(pv.data(), pv.data() + pv.size());
    st.teacher_action = teacher_action(episode, graph, node);
    st.teacher_orientation = cands[static_cast<std::size_t>(st.teacher_action)].orientation;
    if (opt.replay != nullptr) {
      if (static_cast<std::size_t>(t) >= opt.replay->size()) throw std::invalid_argument("run_episode: replay too short");
      st.action = (*opt.replay)[static_cast<std::size_t>(t)];
      if (st.action < 0 || st.action >= st.candidate_count) throw std::out_of_range("run_episode: replay action");
    } else {
      st.action = static_cast<int>(select_action(st.probabilities, opt.mode,
                                                 static_cast<std::size_t>(st.teacher_action), opt.rng));
    }
    st.cross_modal = cm.context;
    st.vision_context = vs.context;
    st.vision_weights = vs.weights;
    st.language_weights = cm.weights;
    out.steps.push_back(st);

    prev_cross = cm.context;
    prev_vision = vs.context;
    state = vs.state;

    const Candidate& chosen = cands[static_cast<std::size_t>(st.action)];
    if (chosen.is_stop) {
      out.trajectory.stopped = true;
      break;
    }
    heading = graph.heading_between(node, *chosen.target);
    node = *chosen.target;
    out.trajectory.nodes.push_back(node);
    if (opt.replay != nullptr && static_cast<std::size_t>(t + 1) == opt.replay->size()) break;
  }
  return out;
}

}  // namespace auxrn
