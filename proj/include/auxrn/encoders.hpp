#pragma once

// Cross-modal encoder: dot-product attention, the trajectory-long vision
// LSTM, the bidirectional instruction encoder and language/vision fusion.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxrn/autograd.hpp"
#include "auxrn/graphworld.hpp"
#include "auxrn/rng.hpp"

namespace auxrn {

using ad::Matrix;
using ad::Var;

enum class VisionQuery { CrossModal, VisionHistory };

inline const char* vision_query_name(VisionQuery q) {
  return q == VisionQuery::CrossModal ? "cross_modal" : "vision_history";
}

inline VisionQuery parse_vision_query(const std::string& s) {
  if (s == "cross_modal") return VisionQuery::CrossModal;
  if (s == "vision_history") return VisionQuery::VisionHistory;
  throw std::invalid_argument("unknown vision query: " + s);
}

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

struct AttentionResult {
  Var fused;    // d x 1
  Var weights;  // n x 1, a point on the simplex
};

// features: d x n (one column per item), query: q x 1, w: d x q.
// α = softmax(Fᵀ W q), fused = F α.
inline AttentionResult attend(Var features, Var query, Var w) {
  if (features.cols() == 0) throw std::invalid_argument("attend: empty feature sequence");
  if (query.cols() != 1) throw std::invalid_argument("attend: query must be a column vector");
  if (w.rows() != features.rows() || w.cols() != query.rows())
    throw std::invalid_argument("attend: W_Attn shape does not match feature/query dimensions");
  Var projected = ad::matmul(w, query);
  Var logits = ad::matmul(ad::transpose(features), projected);
  Var alpha = ad::softmax(logits);
  return {ad::matmul(features, alpha), alpha};
}

// Value-level convenience wrapper.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> attend(const std::vector<Eigen::VectorXd>& features,
                                                          const Eigen::VectorXd& query, const Matrix& w) {
  if (features.empty()) throw std::invalid_argument("attend: empty feature sequence");
  Matrix f(features.front().size(), static_cast<Eigen::Index>(features.size()));
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != f.rows()) throw std::invalid_argument("attend: ragged feature sequence");
    f.col(static_cast<Eigen::Index>(i)) = features[i];
  }
  ad::Tape tape;
  auto r = attend(tape.constant(f), tape.constant(query), tape.constant(w));
  return {r.fused.value().col(0), r.weights.value().col(0)};
}

struct LstmWeights {
  Var wx;  // 4H x in
  Var wh;  // 4H x H
  Var b;   // 4H x 1
  Eigen::Index hidden() const { return wh.cols(); }
};

struct LstmState {
  Var h;
  Var c;
};

// Gate order: input, forget, candidate, output.
inline LstmState lstm_step(const LstmWeights& w, Var x, const LstmState& prev) {
  const Eigen::Index hsz = w.hidden();
  if (x.rows() != w.wx.cols()) throw std::invalid_argument("lstm_step: input dimension mismatch");
  Var gates = ad::matmul(w.wx, x) + ad::matmul(w.wh, prev.h) + w.b;
  Var i = ad::sigmoid(ad::slice_rows(gates, 0, hsz));
  Var f = ad::sigmoid(ad::slice_rows(gates, hsz, hsz));
  Var g = ad::tanh(ad::slice_rows(gates, 2 * hsz, hsz));
  Var o = ad::sigmoid(ad::slice_rows(gates, 3 * hsz, hsz));
  Var c = ad::cmul(f, prev.c) + ad::cmul(i, g);
  Var h = ad::cmul(o, ad::tanh(c));
  return {h, c};
}

struct LanguageEncoderWeights {
  Var embedding;  // V x E
  LstmWeights forward;
  LstmWeights backward;
  Var proj_w;  // H x 2H
  Var proj_b;  // H x 1
};

struct LanguageEncoding {
  std::vector<Var> embeddings;  // f^w_i, E x 1
  std::vector<Var> tokens;      // f̃^w_i, H x 1
  Var features;                 // H x (l+1), columns are f̃^w_i
  Var global;                   // f̄^w, mean of the per-token features
};

// Bi-LSTM over the word embeddings; forward and backward states are
// concatenated and projected to H. Computed once per episode.
inline LanguageEncoding encode_instruction(ad::Tape& tape, const LanguageEncoderWeights& w,
                                           const std::vector<int>& token_ids) {
  if (token_ids.empty()) throw std::invalid_argument("encode_instruction: empty instruction");
  const Eigen::Index vocab = w.embedding.rows();
  const Eigen::Index hsz = w.forward.hidden();
  LanguageEncoding enc;
  for (int t : token_ids) {
    if (t < 0 || t >= vocab) throw std::out_of_range("encode_instruction: token id outside vocabulary");
    enc.embeddings.push_back(ad::row_as_column(w.embedding, t));
  }
  const std::size_t n = token_ids.size();
  const Var zero = tape.constant(Matrix::Zero(hsz, 1));
  std::vector<Var> fwd(n), bwd(n);
  LstmState s{zero, zero};
  for (std::size_t i = 0; i < n; ++i) {
    s = lstm_step(w.forward, enc.embeddings[i], s);
    fwd[i] = s.h;
  }
  s = {zero, zero};
  for (std::size_t i = n; i-- > 0;) {
    s = lstm_step(w.backward, enc.embeddings[i], s);
    bwd[i] = s.h;
  }
  for (std::size_t i = 0; i < n; ++i)
    enc.tokens.push_back(ad::matmul(w.proj_w, ad::concat_rows({fwd[i], bwd[i]})) + w.proj_b);
  enc.features = ad::hstack(enc.tokens);
  enc.global = ad::scale(ad::add_n(enc.tokens), 1.0 / static_cast<double>(n));
  return enc;
}

struct VisionEncoderWeights {
  Var attn;  // W for Attn_o: view_dim x H
  LstmWeights lstm;
};

struct VisionStep {
  Var attended;     // f̂^o_t
  Var context;      // f̃^o_t (= h_t)
  LstmState state;  // carried across the whole trajectory
  Var weights;      // Attn_o weights over the 36 views
};

// query is f̂_{t-1} (or f̃^o_{t-1}, depending on the configured vision query).
inline VisionStep embed_vision_step(const VisionEncoderWeights& w, Var observation, Var query, const LstmState& prev) {
  if (observation.cols() != kViewCount)
    throw std::invalid_argument("embed_vision_step: observation must have exactly 36 views");
  auto att = attend(observation, query, w.attn);
  LstmState next = lstm_step(w.lstm, att.fused, prev);
  return {att.fused, next.h, next, att.weights};
}

struct CrossModalContext {
  Var context;  // f̂_t
  Var weights;  // Attn_w weights over the l+1 tokens
};

inline CrossModalContext fuse_cross_modal(const LanguageEncoding& lang, Var vision_context, Var attn_w) {
  if (vision_context.rows() != lang.features.rows())
    throw std::invalid_argument("fuse_cross_modal: dimension mismatch");
  auto att = attend(lang.features, vision_context, attn_w);
  return {att.fused, att.weights};
}

}  // namespace auxrn
