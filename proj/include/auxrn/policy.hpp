#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxrn/encoders.hpp"
#include "auxrn/rng.hpp"

namespace auxrn {

enum class SelectMode { Teacher, Sample, Argmax };

inline const char* select_mode_name(SelectMode m) {
  switch (m) {
    case SelectMode::Teacher: return "teacher";
    case SelectMode::Sample: return "sample";
    case SelectMode::Argmax: return "argmax";
  }
  return "?";
}

struct ActionScores {
  Var logits;         // (k+1) x 1
  Var probabilities;  // p_t
};

// Logit of candidate i is c_i · (W_c f̂_t); p_t is their softmax.
inline ActionScores score_candidates(Var candidate_features, Var cross_modal, Var attn_c) {
  if (candidate_features.cols() == 0) throw std::invalid_argument("score_candidates: empty candidate list");
  if (attn_c.rows() != candidate_features.rows() || attn_c.cols() != cross_modal.rows())
    throw std::invalid_argument("score_candidates: dimension mismatch");
  Var logits = ad::matmul(ad::transpose(candidate_features), ad::matmul(attn_c, cross_modal));
  if (!logits.value().allFinite()) throw std::runtime_error("score_candidates: non-finite logit");
  return {logits, ad::softmax(logits)};
}

inline std::size_t select_action(std::span<const double> probs, SelectMode mode, std::optional<std::size_t> teacher_idx,
                                 Rng* rng) {
  if (probs.empty()) throw std::invalid_argument("select_action: empty distribution");
  switch (mode) {
    case SelectMode::Teacher:
      if (!teacher_idx) throw std::invalid_argument("select_action: teacher mode requires a teacher index");
      if (*teacher_idx >= probs.size()) throw std::out_of_range("select_action: teacher index out of range");
      return *teacher_idx;
    case SelectMode::Sample:
      if (rng == nullptr) throw std::invalid_argument("select_action: sample mode requires an rng");
      return rng->discrete(probs);
    case SelectMode::Argmax: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;
      return best;
    }
  }
  throw std::logic_error("select_action: bad mode");
}

}  // namespace auxrn
