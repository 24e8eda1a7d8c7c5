#pragma once

// Parameter layout of the full agent and binding of parameters onto a tape.

#include <cstdint>
#include <functional>
#include <string>

#include "auxrn/auxiliary.hpp"
#include "auxrn/encoders.hpp"
#include "auxrn/graphworld.hpp"
#include "auxrn/objectives.hpp"
#include "auxrn/policy.hpp"

namespace auxrn {

struct ModelConfig {
  int hidden = 64;
  int word_dim = 32;
  VisionQuery vision_query = VisionQuery::CrossModal;
};

inline ad::ParameterSet init_parameters(const ModelConfig& c, std::uint64_t seed) {
  if (c.hidden < 1 || c.word_dim < 1) throw std::invalid_argument("init_parameters: dimensions must be positive");
  Rng rng(derive_seed(seed, 0x9A4A));
  const Eigen::Index H = c.hidden, E = c.word_dim, V = kVocabSize, D = kCandidateDim;
  ad::ParameterSet p;
  auto lstm = [&](const std::string& prefix, Eigen::Index in) {
    p.add(prefix + ".wx", uniform_init(4 * H, in, in + H, rng));
    p.add(prefix + ".wh", uniform_init(4 * H, H, in + H, rng));
    p.add(prefix + ".b", uniform_init(4 * H, 1, in + H, rng));
  };
  p.add("language.embedding", uniform_init(V, E, E, rng));
  lstm("language.forward", E);
  lstm("language.backward", E);
  p.add("language.proj.w", uniform_init(H, 2 * H, 2 * H, rng));
  p.add("language.proj.b", uniform_init(H, 1, 2 * H, rng));
  p.add("vision.attn", uniform_init(D, H, H, rng));
  lstm("vision.lstm", D);
  p.add("fusion.attn", uniform_init(H, H, H, rng));
  p.add("policy.attn", uniform_init(D, H, H, rng));
  p.add("init.cross_modal", Matrix::Zero(H, 1));
  p.add("init.hidden", Matrix::Zero(H, 1));
  p.add("init.cell", Matrix::Zero(H, 1));
  lstm("speaker.lstm", E);
  p.add("speaker.attn", uniform_init(H, H, H, rng));
  p.add("speaker.out.w", uniform_init(V, H, H, rng));
  p.add("speaker.out.b", uniform_init(V, 1, H, rng));
  p.add("progress.w", uniform_init(1, H, H, rng));
  p.add("progress.b", uniform_init(1, 1, H, rng));
  p.add("matching.w", uniform_init(1, 2 * H, 2 * H, rng));
  p.add("matching.b", uniform_init(1, 1, 2 * H, rng));
  p.add("angle.w", uniform_init(4, H, H, rng));
  p.add("angle.b", uniform_init(4, 1, H, rng));
  p.add("value.w", uniform_init(1, H, H, rng));
  p.add("value.b", uniform_init(1, 1, H, rng));
  return p;
}

// Parameter-name prefixes of the heads that never see student-forced passes.
inline bool is_speaker_head_parameter(const std::string& name) { return name.rfind("speaker.", 0) == 0; }
inline bool is_angle_head_parameter(const std::string& name) { return name.rfind("angle.", 0) == 0; }

struct ModelVars {
  LanguageEncoderWeights language;
  VisionEncoderWeights vision;
  Var fusion_attn;
  Var policy_attn;
  Var init_cross_modal;
  Var init_hidden;
  Var init_cell;
  SpeakerHeadWeights speaker;
  ProgressHeadWeights progress;
  MatchingHeadWeights matching;
  AngleHeadWeights angle;
  ValueHeadWeights value;
};

namespace detail {
inline ModelVars bind_with(const std::function<Var(const std::string&)>& get) {
  auto lstm = [&](const std::string& prefix) {
    return LstmWeights{get(prefix + ".wx"), get(prefix + ".wh"), get(prefix + ".b")};
  };
  ModelVars m;
  m.language = {get("language.embedding"), lstm("language.forward"), lstm("language.backward"),
                get("language.proj.w"), get("language.proj.b")};
  m.vision = {get("vision.attn"), lstm("vision.lstm")};
  m.fusion_attn = get("fusion.attn");
  m.policy_attn = get("policy.attn");
  m.init_cross_modal = get("init.cross_modal");
  m.init_hidden = get("init.hidden");
  m.init_cell = get("init.cell");
  m.speaker = {m.language.embedding, lstm("speaker.lstm"), get("speaker.attn"), get("speaker.out.w"),
               get("speaker.out.b")};
  m.progress = {get("progress.w"), get("progress.b")};
  m.matching = {get("matching.w"), get("matching.b")};
  m.angle = {get("angle.w"), get("angle.b")};
  m.value = {get("value.w"), get("value.b")};
  return m;
}
}  // namespace detail

// Parameters enter the tape as differentiable leaves.
inline ModelVars bind(ad::Tape& tape, ad::ParameterSet& params) {
  return detail::bind_with([&](const std::string& n) { return tape.leaf(params.at(n)); });
}

// Parameters enter the tape as constants (evaluation, generation).
inline ModelVars bind_constant(ad::Tape& tape, const ad::ParameterSet& params) {
  return detail::bind_with([&](const std::string& n) { return tape.constant(params.at(n).value); });
}

}  // namespace auxrn
