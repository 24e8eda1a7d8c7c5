#pragma once

// Self-supervised reasoning losses computed from the encoder contexts:
// trajectory retelling (speaker), progress estimation, cross-modal matching
// and angle prediction, plus their weighted sum.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxrn/autograd.hpp"
#include "auxrn/encoders.hpp"
#include "auxrn/graphworld.hpp"
#include "auxrn/rng.hpp"

namespace auxrn {

// ---------------------------------------------------------------------------
// Trajectory retelling

struct SpeakerHeadWeights {
  Var embedding;  // shared with the instruction encoder, V x E
  LstmWeights lstm;
  Var attn;   // W for Attn_s: H x H
  Var out_w;  // V x H
  Var out_b;  // V x 1
};

struct SpeakerOutput {
  Var loss;
  std::vector<Var> log_probs;          // per predicted position i = 1..l, V x 1
  std::vector<Var> attention_weights;  // Attn_s weights over the vision history
};

// Teacher-forced decoding: the decoder state after consuming w_0..w_{i-1}
// queries Attn_s over {f̃^o_0..f̃^o_T}; w_i is predicted from the attended
// context. loss = -(1/l) Σ_{i=1..l} log p(w_i | f̂^s_i).
inline SpeakerOutput speaker_forward(ad::Tape& tape, const SpeakerHeadWeights& head, const std::vector<int>& tokens,
                                     const std::vector<Var>& vision_history) {
  if (vision_history.empty()) throw std::invalid_argument("speaker_loss: empty vision history");
  if (tokens.size() < 2) throw std::invalid_argument("speaker_loss: instruction has nothing to predict");
  const Eigen::Index vocab = head.out_w.rows();
  for (int t : tokens)
    if (t < 0 || t >= vocab) throw std::out_of_range("speaker_loss: token id outside vocabulary");
  Var history = ad::hstack(vision_history);
  const Var zero = tape.constant(Matrix::Zero(head.lstm.hidden(), 1));
  LstmState s{zero, zero};
  SpeakerOutput out;
  std::vector<Var> terms;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    s = lstm_step(head.lstm, ad::row_as_column(head.embedding, tokens[i - 1]), s);
    auto att = attend(history, s.h, head.attn);
    Var lp = ad::log_softmax(ad::matmul(head.out_w, att.fused) + head.out_b);
    out.log_probs.push_back(lp);
    out.attention_weights.push_back(att.weights);
    terms.push_back(ad::pick(lp, tokens[i]));
  }
  out.loss = ad::scale(ad::add_n(terms), -1.0 / static_cast<double>(terms.size()));
  return out;
}

inline Var speaker_loss(ad::Tape& tape, const SpeakerHeadWeights& head, const Instruction& instruction,
                        const std::vector<Var>& vision_history) {
  return speaker_forward(tape, head, instruction.tokens, vision_history).loss;
}

// Greedy decode from BOS, feeding back the model's own tokens, until EOS or
// max_len generated tokens.
inline Instruction speaker_generate(ad::Tape& tape, const SpeakerHeadWeights& head,
                                    const std::vector<Var>& vision_history, int max_len) {
  if (vision_history.empty()) throw std::invalid_argument("speaker_generate: empty vision history");
  Instruction ins;
  ins.tokens.push_back(token::kBos);
  Var history = ad::hstack(vision_history);
  const Var zero = tape.constant(Matrix::Zero(head.lstm.hidden(), 1));
  LstmState s{zero, zero};
  for (int i = 0; i < max_len; ++i) {
    s = lstm_step(head.lstm, ad::row_as_column(head.embedding, ins.tokens.back()), s);
    auto att = attend(history, s.h, head.attn);
    Eigen::Index best = 0;
    (head.out_w.value() * att.fused.value() + head.out_b.value()).col(0).maxCoeff(&best);
    ins.tokens.push_back(static_cast<int>(best));
    if (best == token::kEos) break;
  }
  return ins;
}

// ---------------------------------------------------------------------------
// Progress estimation

enum class ProgressLoss { Bce, Mse };

inline ProgressLoss parse_progress_loss(const std::string& s) {
  if (s == "bce") return ProgressLoss::Bce;
  if (s == "mse") return ProgressLoss::Mse;
  throw std::invalid_argument("unknown progress loss: " + s);
}
inline const char* progress_loss_name(ProgressLoss p) { return p == ProgressLoss::Bce ? "bce" : "mse"; }

struct ProgressHeadWeights {
  Var w;  // 1 x H
  Var b;  // 1 x 1
};

struct ProgressOutput {
  Var loss;
  std::vector<double> predictions;  // σ(W_r f̂_t)
  std::vector<double> labels;       // r_t = t / T
};

// Soft-label BCE against r_t = t/T (t = 1..T), or squared error under Mse.
inline ProgressOutput progress_forward(const std::vector<Var>& cross_modal, const ProgressHeadWeights& head,
                                       ProgressLoss kind = ProgressLoss::Bce) {
  const std::size_t T = cross_modal.size();
  if (T == 0) throw std::invalid_argument("progress_loss: T must be >= 1");
  ProgressOutput out;
  std::vector<Var> terms;
  for (std::size_t t = 1; t <= T; ++t) {
    const double r = static_cast<double>(t) / static_cast<double>(T);
    Var z = ad::matmul(head.w, cross_modal[t - 1]) + head.b;
    Var sig = ad::sigmoid(z);
    out.predictions.push_back(sig.scalar());
    out.labels.push_back(r);
    if (kind == ProgressLoss::Bce)
      terms.push_back(ad::bce_with_logits(z, r));
    else
      terms.push_back(ad::square(ad::add_constant(sig, -r)));
  }
  out.loss = ad::scale(ad::add_n(terms), 1.0 / static_cast<double>(T));
  return out;
}

inline Var progress_loss(const std::vector<Var>& cross_modal, const ProgressHeadWeights& head,
                         ProgressLoss kind = ProgressLoss::Bce) {
  return progress_forward(cross_modal, head, kind).loss;
}

// ---------------------------------------------------------------------------
// Cross-modal matching

struct MatchingHeadWeights {
  Var w;  // 1 x 2H
  Var b;  // 1 x 1
};

// source[i] is the episode whose f̄^w episode i receives; label[i] = 1 when
// source[i] == i.
struct ShufflePlan {
  std::vector<std::size_t> source;
  std::vector<int> label;

  static ShufflePlan identity(std::size_t n) {
    ShufflePlan p;
    for (std::size_t i = 0; i < n; ++i) {
      p.source.push_back(i);
      p.label.push_back(1);
    }
    return p;
  }

  std::size_t shuffled_count() const {
    std::size_t n = 0;
    for (int l : label) n += l == 0 ? 1 : 0;
    return n;
  }
};

// Each episode is selected with probability p. Selected episodes pass their
// f̄^w one position along the selection (a rotation), so every selected
// episode receives a different episode's vector. A lone selected episode
// takes the vector of a uniformly drawn other episode.
inline ShufflePlan make_shuffle_plan(std::size_t batch_size, Rng& rng, double p = 0.5) {
  if (batch_size < 2) throw std::invalid_argument("matching_loss: batch size must be >= 2");
  ShufflePlan plan = ShufflePlan::identity(batch_size);
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < batch_size; ++i)
    if (rng.bernoulli(p)) chosen.push_back(i);
  if (chosen.size() == 1) {
    const std::size_t i = chosen[0];
    std::size_t other = rng.below(batch_size - 1);
    if (other >= i) ++other;
    plan.source[i] = other;
    plan.label[i] = 0;
  } else if (chosen.size() >= 2) {
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      plan.source[chosen[k]] = chosen[(k + 1) % chosen.size()];
      plan.label[chosen[k]] = 0;
    }
  }
  return plan;
}

struct MatchingOutput {
  Var loss;
  std::vector<std::vector<double>> probabilities;  // σ(W_m [f̂_t, f̄'^w]) per episode and step
};

// Mean over episodes of -(1/T) Σ_t BCE(σ(W_m [f̂_t, f̄'^w]), m).
inline MatchingOutput matching_forward(const std::vector<std::vector<Var>>& cross_modal,
                                       const std::vector<Var>& global_language, const ShufflePlan& plan,
                                       const MatchingHeadWeights& head) {
  const std::size_t B = cross_modal.size();
  if (B == 0) throw std::invalid_argument("matching_loss: empty batch");
  if (global_language.size() != B || plan.source.size() != B || plan.label.size() != B)
    throw std::invalid_argument("matching_loss: batch size mismatch");
  MatchingOutput out;
  std::vector<Var> per_episode;
  for (std::size_t e = 0; e < B; ++e) {
    if (cross_modal[e].empty()) throw std::invalid_argument("matching_loss: empty trajectory");
    const Var lang = global_language[plan.source[e]];
    const double m = plan.label[e];
    std::vector<Var> terms;
    std::vector<double> probs;
    for (const Var& f : cross_modal[e]) {
      Var z = ad::matmul(head.w, ad::concat_rows({f, lang})) + head.b;
      probs.push_back(1.0 / (1.0 + std::exp(-z.scalar())));
      terms.push_back(ad::bce_with_logits(z, m));
    }
    out.probabilities.push_back(std::move(probs));
    per_episode.push_back(ad::scale(ad::add_n(terms), 1.0 / static_cast<double>(terms.size())));
  }
  out.loss = ad::scale(ad::add_n(per_episode), 1.0 / static_cast<double>(B));
  return out;
}

inline Var matching_loss(const std::vector<std::vector<Var>>& cross_modal, const std::vector<Var>& global_language,
                         const ShufflePlan& plan, const MatchingHeadWeights& head) {
  return matching_forward(cross_modal, global_language, plan, head).loss;
}

// ---------------------------------------------------------------------------
// Angle prediction

enum class AngleNorm { L2, L1 };

struct AngleHeadWeights {
  Var w;  // 4 x H
  Var b;  // 4 x 1
};

// (1/T) Σ_t ‖e_t - W_e f̂_t‖; the stop action's target is the zero quad.
inline Var angle_loss(const std::vector<Var>& cross_modal, const std::vector<Orientation>& targets,
                      const AngleHeadWeights& head, AngleNorm norm = AngleNorm::L2) {
  if (cross_modal.empty()) throw std::invalid_argument("angle_loss: empty trajectory");
  if (targets.size() != cross_modal.size()) throw std::invalid_argument("angle_loss: missing teacher actions");
  ad::Tape& tape = *cross_modal.front().tape;
  std::vector<Var> terms;
  for (std::size_t t = 0; t < cross_modal.size(); ++t) {
    Matrix e(4, 1);
    for (int j = 0; j < 4; ++j) e(j, 0) = targets[t][static_cast<std::size_t>(j)];
    Var diff = tape.constant(e) - (ad::matmul(head.w, cross_modal[t]) + head.b);
    terms.push_back(norm == AngleNorm::L2 ? ad::l2norm(diff) : ad::l1norm(diff));
  }
  return ad::scale(ad::add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

// ---------------------------------------------------------------------------
// Weighted sum

struct AuxWeights {
  double speaker = 1.0;
  double progress = 1.0;
  double matching = 1.0;
  double angle = 1.0;

  static AuxWeights none() { return {0.0, 0.0, 0.0, 0.0}; }

  AuxWeights scaled(double s) const { return {speaker * s, progress * s, matching * s, angle * s}; }

  void validate() const {
    if (speaker < 0 || progress < 0 || matching < 0 || angle < 0)
      throw std::invalid_argument("auxiliary loss weights must be nonnegative");
  }
};

struct AuxLosses {
  double speaker = 0.0;
  double progress = 0.0;
  double matching = 0.0;
  double angle = 0.0;
};

// Student-forced passes carry no speaker or angle term.
inline double total_aux_loss(const AuxLosses& l, const AuxWeights& w, bool student_forced = false) {
  w.validate();
  double total = w.progress * l.progress + w.matching * l.matching;
  if (!student_forced) total += w.speaker * l.speaker + w.angle * l.angle;
  return total;
}

}  // namespace auxrn
