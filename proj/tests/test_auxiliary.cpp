#include <gtest/gtest.h>

#include "auxrn/auxiliary.hpp"
#include "auxrn/model.hpp"
#include "oracles.hpp"

using namespace auxrn;
using ad::Matrix;
using ad::Var;

namespace {

Matrix randm(Rng& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  return m;
}

Matrix scalar(double x) { return Matrix::Constant(1, 1, x); }

// A standalone speaker head over a small vocabulary.
struct TinySpeaker {
  ad::ParameterSet ps;
  int V, E, H;
  TinySpeaker(int vocab, int e, int h, std::uint64_t seed) : V(vocab), E(e), H(h) {
    Rng rng(seed);
    ps.add("emb", randm(rng, V, E, 0.5));
    ps.add("wx", randm(rng, 4 * H, E, 0.4));
    ps.add("wh", randm(rng, 4 * H, H, 0.4));
    ps.add("b", randm(rng, 4 * H, 1, 0.1));
    ps.add("attn", randm(rng, H, H, 0.5));
    ps.add("out_w", randm(rng, V, H, 0.5));
    ps.add("out_b", randm(rng, V, 1, 0.1));
  }
  SpeakerHeadWeights bind(ad::Tape& t) {
    auto g = [&](const char* n) { return t.leaf(ps.at(n)); };
    return {g("emb"), {g("wx"), g("wh"), g("b")}, g("attn"), g("out_w"), g("out_b")};
  }
};

std::vector<Var> history(ad::Tape& t, const std::vector<Matrix>& h) {
  std::vector<Var> out;
  for (const auto& m : h) out.push_back(t.constant(m));
  return out;
}

Eigen::VectorXd sig(const Eigen::VectorXd& x) { return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }); }

// Plain-Eigen re-implementation of the teacher-forced decoder.
double speaker_oracle(const ad::ParameterSet& ps, int H, const std::vector<int>& toks, const std::vector<Matrix>& hist) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(H), c = Eigen::VectorXd::Zero(H);
  const Matrix& emb = ps.at("emb").value;
  double total = 0;
  for (std::size_t i = 1; i < toks.size(); ++i) {
    Eigen::VectorXd x = emb.row(toks[i - 1]).transpose();
    Eigen::VectorXd g = ps.at("wx").value * x + ps.at("wh").value * h + ps.at("b").value.col(0);
    Eigen::VectorXd ig = sig(g.segment(0, H)), fg = sig(g.segment(H, H)), og = sig(g.segment(3 * H, H));
    Eigen::VectorXd cg = g.segment(2 * H, H).array().tanh();
    c = fg.cwiseProduct(c) + ig.cwiseProduct(cg);
    h = og.cwiseProduct(Eigen::VectorXd(c.array().tanh()));
    std::vector<double> logits;
    const Eigen::VectorXd q = ps.at("attn").value * h;
    for (const auto& f : hist) logits.push_back(f.col(0).dot(q));
    const auto a = oracle::softmax(logits);
    Eigen::VectorXd ctx = Eigen::VectorXd::Zero(H);
    for (std::size_t k = 0; k < hist.size(); ++k) ctx += a[k] * hist[k].col(0);
    Eigen::VectorXd z = ps.at("out_w").value * ctx + ps.at("out_b").value.col(0);
    std::vector<double> zz(z.data(), z.data() + z.size());
    total += -std::log(oracle::softmax(zz)[static_cast<std::size_t>(toks[i])]);
  }
  return total / static_cast<double>(toks.size() - 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Speaker

TEST(Speaker, UniformOverTwoWordsIsLn2) {
  TinySpeaker s(2, 3, 4, 1);
  s.ps.at("out_w").value.setZero();
  s.ps.at("out_b").value.setZero();
  Rng rng(2);
  ad::Tape t;
  auto loss = speaker_loss(t, s.bind(t), Instruction{{0, 1, 1, 0, 1}}, history(t, {randm(rng, 4, 1), randm(rng, 4, 1)}));
  EXPECT_NEAR(loss.scalar(), std::log(2.0), 1e-12);
}

TEST(Speaker, PerfectPredictorIsZero) {
  TinySpeaker s(2, 3, 4, 1);
  s.ps.at("out_w").value.setZero();
  s.ps.at("out_b").value << -1000, 0;
  Rng rng(2);
  ad::Tape t;
  auto loss = speaker_loss(t, s.bind(t), Instruction{{0, 1, 1, 1}}, history(t, {randm(rng, 4, 1)}));
  EXPECT_NEAR(loss.scalar(), 0.0, 1e-12);
}

TEST(Speaker, ThreeTokensMatchHandRolledDecoder) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TinySpeaker s(7, 3, 5, seed);
    Rng rng(seed + 10);
    std::vector<Matrix> hist{randm(rng, 5, 1), randm(rng, 5, 1), randm(rng, 5, 1)};
    const std::vector<int> toks{0, 4, 2, 1};  // BOS + 3 predicted tokens
    ad::Tape t;
    auto loss = speaker_loss(t, s.bind(t), Instruction{toks}, history(t, hist));
    EXPECT_NEAR(loss.scalar(), speaker_oracle(s.ps, 5, toks, hist), 1e-8);
  }
}

TEST(Speaker, Errors) {
  TinySpeaker s(4, 3, 4, 1);
  ad::Tape t;
  auto head = s.bind(t);
  EXPECT_THROW(speaker_loss(t, head, Instruction{{0, 1}}, {}), std::invalid_argument);
  EXPECT_THROW(speaker_loss(t, head, Instruction{{}}, history(t, {Matrix::Ones(4, 1)})), std::invalid_argument);
  EXPECT_THROW(speaker_loss(t, head, Instruction{{0, 9}}, history(t, {Matrix::Ones(4, 1)})), std::out_of_range);
}

TEST(Speaker, OverfittingOneEpisodeDecreasesMonotonically) {
  TinySpeaker s(12, 6, 8, 3);
  Rng rng(4);
  std::vector<Matrix> hist{randm(rng, 8, 1), randm(rng, 8, 1), randm(rng, 8, 1), randm(rng, 8, 1)};
  const Instruction ins{{0, 5, 9, 3, 7, 1}};
  SgdMomentum opt;
  opt.learning_rate = 0.05;
  opt.momentum = 0.0;
  double prev = std::numeric_limits<double>::infinity(), first = 0;
  for (int it = 0; it < 200; ++it) {
    ad::Tape t;
    Var loss = speaker_loss(t, s.bind(t), ins, history(t, hist));
    if (it == 0) first = loss.scalar();
    ASSERT_LE(loss.scalar(), prev) << "iteration " << it;
    prev = loss.scalar();
    joint_step(t, {{"speaker", loss, 1.0}}, s.ps, opt);
  }
  EXPECT_LT(prev, 0.5 * first);
}

TEST(Speaker, GenerationIsGreedyAndBounded) {
  TinySpeaker s(9, 4, 6, 5);
  Rng rng(6);
  for (int k = 0; k < 100; ++k) {
    std::vector<Matrix> hist;
    for (int i = 0; i < 1 + k % 5; ++i) hist.push_back(randm(rng, 6, 1));
    ad::Tape t;
    auto head = s.bind(t);
    const int max_len = 1 + k % 12;
    auto a = speaker_generate(t, head, history(t, hist), max_len);
    auto b = speaker_generate(t, head, history(t, hist), max_len);
    EXPECT_EQ(a.tokens, b.tokens);
    ASSERT_GE(a.tokens.size(), 2u);
    EXPECT_LE(a.tokens.size(), static_cast<std::size_t>(max_len) + 1);
    EXPECT_EQ(a.tokens[0], token::kBos);
    for (int id : a.tokens) EXPECT_TRUE(id >= 0 && id < 9);
    if (a.tokens.size() < static_cast<std::size_t>(max_len) + 1) {
      EXPECT_EQ(a.tokens.back(), token::kEos);
    }
  }
}

TEST(Speaker, MaxLenOneEmitsOneToken) {
  TinySpeaker s(9, 4, 6, 5);
  ad::Tape t;
  auto ins = speaker_generate(t, s.bind(t), history(t, {Matrix::Ones(6, 1)}), 1);
  EXPECT_EQ(ins.tokens.size(), 2u);
  EXPECT_EQ(ins.tokens[0], token::kBos);
}

// ---------------------------------------------------------------------------
// Progress

namespace {
ProgressHeadWeights unit_progress(ad::Tape& t) { return {t.constant(scalar(1.0)), t.constant(scalar(0.0))}; }
}  // namespace

TEST(Progress, CalibratedPredictionsHitEntropyBound) {
  for (int T = 1; T <= 6; ++T) {
    ad::Tape t;
    std::vector<Var> f;
    double entropy = 0;
    for (int s = 1; s <= T; ++s) {
      const double r = double(s) / T;
      f.push_back(t.constant(scalar(s == T ? 50.0 : std::log(r / (1 - r)))));
      if (s < T) entropy += -(r * std::log(r) + (1 - r) * std::log(1 - r));
    }
    auto out = progress_forward(f, unit_progress(t));
    EXPECT_NEAR(out.loss.scalar(), entropy / T, 1e-12);
    for (int s = 0; s < T; ++s) EXPECT_NEAR(out.labels[static_cast<std::size_t>(s)], double(s + 1) / T, 1e-15);
  }
}

TEST(Progress, SingleStepPerfectIsZero) {
  ad::Tape t;
  auto out = progress_forward({t.constant(scalar(60.0))}, unit_progress(t));
  EXPECT_EQ(out.labels, std::vector<double>{1.0});
  EXPECT_NEAR(out.loss.scalar(), 0.0, 1e-20);
}

TEST(Progress, RandomSequenceMatchesOracle) {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    ad::Tape t;
    const Matrix w = randm(rng, 1, 6), b = randm(rng, 1, 1);
    std::vector<Var> f;
    double bce = 0, mse = 0;
    for (int s = 1; s <= 4; ++s) {
      const Matrix x = randm(rng, 6, 1);
      f.push_back(t.constant(x));
      const double p = oracle::sigmoid((w * x)(0, 0) + b(0, 0));
      bce += oracle::bce(p, s / 4.0);
      mse += (s / 4.0 - p) * (s / 4.0 - p);
    }
    ProgressHeadWeights head{t.constant(w), t.constant(b)};
    EXPECT_NEAR(progress_loss(f, head, ProgressLoss::Bce).scalar(), bce / 4, 1e-8);
    EXPECT_NEAR(progress_loss(f, head, ProgressLoss::Mse).scalar(), mse / 4, 1e-8);
  }
}

TEST(Progress, EmptySequenceThrows) {
  ad::Tape t;
  EXPECT_THROW(progress_loss({}, unit_progress(t)), std::invalid_argument);
  EXPECT_EQ(parse_progress_loss("mse"), ProgressLoss::Mse);
  EXPECT_THROW(parse_progress_loss("l1"), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Matching

TEST(Matching, ConstantHalfIsLn2) {
  Rng rng(1);
  ad::Tape t;
  std::vector<std::vector<Var>> f{{t.constant(randm(rng, 3, 1)), t.constant(randm(rng, 3, 1))},
                                  {t.constant(randm(rng, 3, 1))}};
  std::vector<Var> g{t.constant(randm(rng, 3, 1)), t.constant(randm(rng, 3, 1))};
  MatchingHeadWeights head{t.constant(Matrix::Zero(1, 6)), t.constant(scalar(0))};
  Rng srng(5);
  EXPECT_NEAR(matching_loss(f, g, make_shuffle_plan(2, srng), head).scalar(), std::log(2.0), 1e-12);
}

TEST(Matching, PerfectClassifierIsZero) {
  ad::Tape t;
  Matrix a(2, 1), b(2, 1);
  a << 1, 0;
  b << 0, 1;
  std::vector<std::vector<Var>> f{{t.constant(a)}, {t.constant(b)}};
  std::vector<Var> g{t.constant(a), t.constant(b)};
  MatchingHeadWeights head{t.constant(Matrix::Zero(1, 4)), t.constant(scalar(100.0))};
  EXPECT_NEAR(matching_loss(f, g, ShufflePlan::identity(2), head).scalar(), 0.0, 1e-40);
  ShufflePlan swapped{{1, 0}, {0, 0}};
  MatchingHeadWeights neg{t.constant(Matrix::Zero(1, 4)), t.constant(scalar(-100.0))};
  EXPECT_NEAR(matching_loss(f, g, swapped, neg).scalar(), 0.0, 1e-40);
}

TEST(Matching, RandomBatchMatchesOracle) {
  Rng rng(12);
  ad::Tape t;
  const Matrix w = randm(rng, 1, 8), b = randm(rng, 1, 1);
  std::vector<std::vector<Matrix>> fm;
  std::vector<Matrix> gm;
  std::vector<std::vector<Var>> f;
  std::vector<Var> g;
  for (int e = 0; e < 4; ++e) {
    fm.emplace_back();
    f.emplace_back();
    for (int s = 0; s < 1 + e; ++s) {
      fm.back().push_back(randm(rng, 4, 1));
      f.back().push_back(t.constant(fm.back().back()));
    }
    gm.push_back(randm(rng, 4, 1));
    g.push_back(t.constant(gm.back()));
  }
  ShufflePlan plan{{2, 1, 0, 3}, {0, 1, 0, 1}};
  double want = 0;
  for (std::size_t e = 0; e < 4; ++e) {
    double ep = 0;
    for (const auto& x : fm[e]) {
      Matrix cat(8, 1);
      cat << x, gm[plan.source[e]];
      ep += oracle::bce(oracle::sigmoid((w * cat)(0, 0) + b(0, 0)), plan.label[e]);
    }
    want += ep / static_cast<double>(fm[e].size());
  }
  EXPECT_NEAR(matching_loss(f, g, plan, {t.constant(w), t.constant(b)}).scalar(), want / 4, 1e-8);
}

TEST(Matching, IdentityPlanLabelsAllMatch) {
  const auto p = ShufflePlan::identity(6);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(p.source[i], i);
    EXPECT_EQ(p.label[i], 1);
  }
  EXPECT_EQ(p.shuffled_count(), 0u);
}

TEST(Matching, ShufflePlanInvariants) {
  Rng rng(31);
  for (int k = 0; k < 2000; ++k) {
    const std::size_t B = 2 + static_cast<std::size_t>(k % 9);
    const auto p = make_shuffle_plan(B, rng);
    std::vector<int> hits(B, 0);
    for (std::size_t i = 0; i < B; ++i) {
      ASSERT_LT(p.source[i], B);
      EXPECT_EQ(p.label[i] == 1, p.source[i] == i);
      ++hits[p.source[i]];
    }
    // selection of two or more is a rotation, so sources form a permutation
    if (p.shuffled_count() != 1) {
      for (int h : hits) EXPECT_EQ(h, 1);
    }
  }
  EXPECT_THROW(make_shuffle_plan(1, rng), std::invalid_argument);
}

TEST(Matching, ShuffleRateIsOneHalf) {
  Rng rng(2024);
  std::size_t shuffled = 0, total = 0;
  for (int k = 0; k < 10000; ++k) {
    const auto p = make_shuffle_plan(8, rng);
    shuffled += p.shuffled_count();
    total += 8;
  }
  EXPECT_NEAR(double(shuffled) / double(total), 0.5, 0.02);
}

// ---------------------------------------------------------------------------
// Angle

TEST(Angle, ZeroPredictionAgainstForwardQuad) {
  ad::Tape t;
  AngleHeadWeights head{t.constant(Matrix::Zero(4, 3)), t.constant(Matrix::Zero(4, 1))};
  EXPECT_NEAR(angle_loss({t.constant(Matrix::Ones(3, 1))}, {Orientation{0, 1, 0, 1}}, head).scalar(), std::sqrt(2.0),
              1e-15);
}

TEST(Angle, ExactPredictionIsZero) {
  ad::Tape t;
  const Orientation e = orientation_quad(0.7, -0.3);
  Matrix b(4, 1);
  b << e[0], e[1], e[2], e[3];
  AngleHeadWeights head{t.constant(Matrix::Zero(4, 2)), t.constant(b)};
  EXPECT_NEAR(angle_loss({t.constant(Matrix::Ones(2, 1)), t.constant(Matrix::Ones(2, 1))}, {e, e}, head).scalar(), 0.0,
              1e-15);
}

TEST(Angle, RandomThreeStepsMatchNormOracle) {
  Rng rng(5);
  for (int k = 0; k < 20; ++k) {
    ad::Tape t;
    const Matrix w = randm(rng, 4, 5), b = randm(rng, 4, 1);
    std::vector<Var> f;
    std::vector<Orientation> e;
    double l2 = 0, l1 = 0;
    for (int s = 0; s < 3; ++s) {
      const Matrix x = randm(rng, 5, 1);
      f.push_back(t.constant(x));
      e.push_back(s == 2 ? Orientation{0, 0, 0, 0} : orientation_quad(rng.uniform(-3, 3), rng.uniform(-1, 1)));
      const Matrix y = w * x + b;
      double sq = 0, ab = 0;
      for (int j = 0; j < 4; ++j) {
        const double d = e.back()[static_cast<std::size_t>(j)] - y(j, 0);
        sq += d * d;
        ab += std::abs(d);
      }
      l2 += std::sqrt(sq);
      l1 += ab;
    }
    AngleHeadWeights head{t.constant(w), t.constant(b)};
    EXPECT_NEAR(angle_loss(f, e, head).scalar(), l2 / 3, 1e-8);
    EXPECT_NEAR(angle_loss(f, e, head, AngleNorm::L1).scalar(), l1 / 3, 1e-8);
  }
}

TEST(Angle, MissingTargetsThrow) {
  ad::Tape t;
  AngleHeadWeights head{t.constant(Matrix::Zero(4, 2)), t.constant(Matrix::Zero(4, 1))};
  EXPECT_THROW(angle_loss({t.constant(Matrix::Ones(2, 1))}, {}, head), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Weighted sum

TEST(TotalAux, Arithmetic) {
  const AuxLosses l{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(total_aux_loss(l, AuxWeights::none()), 0.0);
  EXPECT_NEAR(total_aux_loss(l, AuxWeights{}), 1.0, 1e-15);
  EXPECT_NEAR(total_aux_loss(l, AuxWeights{}.scaled(0.5)), 0.5, 1e-15);
  EXPECT_NEAR(total_aux_loss(l, AuxWeights{}, true), 0.5, 1e-15);
  EXPECT_THROW(total_aux_loss(l, AuxWeights{1, -1, 1, 1}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Head gradients against finite differences at hidden size 8

TEST(AuxGradients, HeadsMatchFiniteDifferences) {
  auto ps = init_parameters({8, 6, VisionQuery::CrossModal}, 41);
  Rng data(3);
  std::vector<Matrix> fh, vh, gl;
  for (int i = 0; i < 4; ++i) {
    fh.push_back(randm(data, 8, 1));
    vh.push_back(randm(data, 8, 1));
  }
  gl.push_back(randm(data, 8, 1));
  gl.push_back(randm(data, 8, 1));
  const std::vector<Orientation> quads{orientation_quad(0.3, 0), orientation_quad(-1.2, 0.1), orientation_quad(2, 0),
                                       Orientation{0, 0, 0, 0}};
  auto consts = [](ad::Tape& t, const std::vector<Matrix>& v) {
    std::vector<Var> out;
    for (const auto& m : v) out.push_back(t.constant(m));
    return out;
  };
  const std::vector<std::pair<std::string, std::function<Var(ad::Tape&)>>> losses{
      {"speaker",
       [&](ad::Tape& t) {
         auto m = bind(t, ps);
         return speaker_loss(t, m.speaker, Instruction{{0, 12, 5, 30, 1}}, consts(t, vh));
       }},
      {"progress", [&](ad::Tape& t) { return progress_loss(consts(t, fh), bind(t, ps).progress); }},
      {"progress_mse", [&](ad::Tape& t) { return progress_loss(consts(t, fh), bind(t, ps).progress, ProgressLoss::Mse); }},
      {"matching",
       [&](ad::Tape& t) {
         auto f = consts(t, fh);
         return matching_loss({{f[0], f[1]}, {f[2], f[3]}}, consts(t, gl), ShufflePlan{{1, 0}, {0, 0}},
                              bind(t, ps).matching);
       }},
      {"angle", [&](ad::Tape& t) { return angle_loss(consts(t, fh), quads, bind(t, ps).angle); }},
  };
  for (const auto& [name, f] : losses) {
    Rng rng(7);
    const auto r = oracle::check_gradients(ps, f, rng, 6, 1e-5, [&](const std::string& n) {
      const std::string head = name.substr(0, name.find('_'));
      return n.rfind(head + ".", 0) == 0 || (head == "speaker" && n == "language.embedding");
    });
    EXPECT_GT(r.checked, 0u) << name;
    EXPECT_LT(r.worst_rel, 1e-3) << name << " " << r.worst_param;
  }
}
