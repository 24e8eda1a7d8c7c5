#include <gtest/gtest.h>

#include "auxrn/training.hpp"
#include "oracles.hpp"

using namespace auxrn;

namespace {

TrainConfig small_config(int iterations = 20) {
  TrainConfig c;
  c.seed = 3;
  c.n_worlds = 6;
  c.episodes_per_world = 20;
  c.hidden = 12;
  c.word_dim = 8;
  c.batch_size = 4;
  c.iterations = iterations;
  c.eval_every = 5;
  c.probe_every = 5;
  return c;
}

std::string log_text(const StageResult& r) {
  std::string s;
  for (const auto& row : r.log) s += train_log_to_json(row).dump() + "\n";
  for (const auto& row : r.evals) s += eval_log_to_json(row).dump() + "\n";
  return s;
}

bool same_params(const ad::ParameterSet& a, const ad::ParameterSet& b) {
  for (const auto& [n, p] : a)
    if (p.value != b.at(n).value) return false;
  return true;
}

// One shared pretrained checkpoint for the augmentation tests.
const Checkpoint& trained() {
  static const Checkpoint ck = [] {
    const auto cfg = small_config(10);
    return pretrain(cfg, dataset_for(cfg)).last;
  }();
  return ck;
}

}  // namespace

TEST(Pretrain, ZeroIterationsEvaluatesOnce) {
  const auto cfg = small_config(0);
  const auto ds = dataset_for(cfg);
  const auto res = pretrain(cfg, ds);
  EXPECT_EQ(res.evals.size(), 1u);
  EXPECT_TRUE(res.log.empty());
  EXPECT_EQ(res.selected.iteration, 0);
  EXPECT_TRUE(same_params(res.selected.params, initial_checkpoint(cfg).params));
}

TEST(Pretrain, FiftyIterationsAreBitIdentical) {
  const auto cfg = small_config(50);
  const auto ds = dataset_for(cfg);
  const auto a = pretrain(cfg, ds);
  const auto b = pretrain(cfg, ds);
  EXPECT_EQ(log_text(a), log_text(b));
  EXPECT_EQ(serialize_checkpoint(a.last), serialize_checkpoint(b.last));
  EXPECT_EQ(serialize_checkpoint(a.selected), serialize_checkpoint(b.selected));
  EXPECT_EQ(a.log.size(), 50u);
  EXPECT_EQ(a.evals.size(), 11u);  // start + every 5
  EXPECT_EQ(a.last.iteration, 50);
  for (const auto& row : a.log) {
    const auto& l = row.losses;
    for (double v : {l.il, l.rl, l.value, l.speaker, l.progress, l.matching, l.angle, l.progress_sf, l.matching_sf})
      EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(l.il, 0.0);
  }
}

TEST(Pretrain, SelectedCheckpointCarriesBestValUnseenSpl) {
  const auto cfg = small_config(30);
  const auto ds = dataset_for(cfg);
  const auto res = pretrain(cfg, ds);
  double best = -1;
  int best_iter = -1;
  for (const auto& e : res.evals)
    if (e.val_unseen.spl > best) {
      best = e.val_unseen.spl;
      best_iter = e.iteration;
    }
  ASSERT_TRUE(res.selected.val_spl.has_value());
  EXPECT_EQ(*res.selected.val_spl, best);
  EXPECT_EQ(res.selected.iteration, best_iter);
  const auto check = evaluate_policy(res.selected.params, cfg, episode_refs(ds, Split::ValUnseen));
  EXPECT_EQ(check.summary.spl, best);
}

TEST(Pretrain, ResumingFromCheckpointMatchesOneLongRun) {
  auto cfg = small_config(20);
  const auto ds = dataset_for(cfg);
  const auto whole = pretrain(cfg, ds);
  cfg.iterations = 10;
  const auto first = pretrain(cfg, ds);
  const auto resumed = pretrain(cfg, ds, parse_checkpoint(serialize_checkpoint(first.last)));
  EXPECT_EQ(resumed.last.iteration, 20);
  EXPECT_TRUE(same_params(resumed.last.params, whole.last.params));
}

TEST(TrainIteration, StudentPassNeverTouchesSpeakerOrAngle) {
  const auto cfg = small_config();
  const auto ds = dataset_for(cfg);
  auto refs = episode_refs(ds, Split::TrainSeen);
  refs.resize(4);
  Checkpoint ck = initial_checkpoint(cfg);
  Rng policy(1), shuffle(2);

  IterationLosses L;
  ck.params.zero_grad();
  {
    ad::Tape t;
    const ModelVars m = bind(t, ck.params);
    const auto terms = student_forced_terms(t, m, cfg, refs, AuxWeights{}, policy, shuffle, L);
    for (const auto& term : terms) EXPECT_TRUE(term.name != "speaker" && term.name != "angle") << term.name;
    accumulate_gradients(t, terms);
  }
  for (const auto& [n, p] : ck.params) {
    if (is_speaker_head_parameter(n) || is_angle_head_parameter(n)) {
      EXPECT_EQ(p.grad.norm(), 0.0) << n;
    }
  }
  EXPECT_GT(ck.params.at("progress.w").grad.norm(), 0.0);
  EXPECT_GT(ck.params.at("matching.w").grad.norm(), 0.0);

  ck.params.zero_grad();
  {
    ad::Tape t;
    const ModelVars m = bind(t, ck.params);
    accumulate_gradients(t, teacher_forced_terms(t, m, cfg, refs, AuxWeights{}, shuffle, L));
  }
  EXPECT_GT(ck.params.at("speaker.out.w").grad.norm(), 0.0);
  EXPECT_GT(ck.params.at("angle.w").grad.norm(), 0.0);
}

TEST(TrainIteration, ValueLossOnlyTrainsValueHead) {
  const auto cfg = small_config();
  const auto ds = dataset_for(cfg);
  auto refs = episode_refs(ds, Split::TrainSeen);
  refs.resize(4);
  Checkpoint ck = initial_checkpoint(cfg);
  Rng policy(5), shuffle(6);
  IterationLosses L;
  ck.params.zero_grad();
  ad::Tape t;
  const ModelVars m = bind(t, ck.params);
  auto terms = student_forced_terms(t, m, cfg, refs, AuxWeights::none(), policy, shuffle, L);
  std::erase_if(terms, [](const LossTerm& x) { return x.name != "value"; });
  ASSERT_EQ(terms.size(), 1u);
  accumulate_gradients(t, terms);
  for (const auto& [n, p] : ck.params) {
    if (n.rfind("value.", 0) != 0) {
      EXPECT_EQ(p.grad.norm(), 0.0) << n;
    }
  }
  EXPECT_GT(ck.params.at("value.w").grad.norm(), 0.0);
}

TEST(Augment, ZeroSamplesIsEmpty) {
  const auto cfg = small_config();
  EXPECT_TRUE(augment_backtranslate(trained(), cfg, dataset_for(cfg), AugmentSource::TrainWorlds, 0, 1).empty());
}

TEST(Augment, UntrainedSpeakerThrows) {
  const auto cfg = small_config();
  EXPECT_THROW(augment_backtranslate(initial_checkpoint(cfg), cfg, dataset_for(cfg), AugmentSource::TrainWorlds, 5, 1),
               std::runtime_error);
  auto no_speaker = small_config(5);
  no_speaker.aux.speaker = 0;
  const auto res = pretrain(no_speaker, dataset_for(no_speaker));
  EXPECT_FALSE(res.last.speaker_trained);
  EXPECT_THROW(augment_backtranslate(res.last, no_speaker, dataset_for(no_speaker), AugmentSource::TrainWorlds, 5, 1),
               std::runtime_error);
}

TEST(Augment, EpisodesAreValidShortestPathsWithBoundedInstructions) {
  const auto cfg = small_config();
  const auto ds = dataset_for(cfg);
  for (auto src : {AugmentSource::TrainWorlds, AugmentSource::UnseenWorlds}) {
    const auto worlds = augment_worlds(ds, src);
    const auto aug = augment_backtranslate(trained(), cfg, ds, src, 100, 9);
    ASSERT_EQ(aug.size(), 100u);
    std::set<std::string> ids;
    for (const auto& e : aug) {
      ids.insert(e.episode_id);
      EXPECT_EQ(e.split, Split::Augmented);
      EXPECT_NE(std::find(worlds.begin(), worlds.end(), e.world_seed), worlds.end());
      const auto& tok = e.instruction.tokens;
      ASSERT_GE(tok.size(), 2u);
      EXPECT_LE(tok.size(), static_cast<std::size_t>(kMaxInstructionTokens));
      EXPECT_EQ(tok.front(), token::kBos);
      EXPECT_EQ(tok.back(), token::kEos);
      for (int id : tok) EXPECT_TRUE(id >= 0 && id < kVocabSize);
      const auto& g = ds.world(e.world_seed);
      const auto fw = oracle::floyd_warshall(g);
      const auto& p = e.teacher_path;
      ASSERT_GE(p.size(), 2u);
      EXPECT_LE(p.size(), static_cast<std::size_t>(kMaxPathNodes));
      EXPECT_EQ(p.front(), e.start);
      EXPECT_EQ(p.back(), e.goal);
      double len = 0;
      for (std::size_t i = 1; i < p.size(); ++i) {
        const auto& nb = g.neighbours(p[i - 1]);
        ASSERT_NE(std::find(nb.begin(), nb.end(), p[i]), nb.end());
        len += oracle::edge(g, p[i - 1], p[i]);
      }
      EXPECT_NEAR(len, fw[e.start][e.goal], 1e-9);
    }
    EXPECT_EQ(ids.size(), aug.size());
    EXPECT_EQ(aug.front().episode_id, src == AugmentSource::TrainWorlds ? "aug-train-00000" : "aug-unseen-00000");
  }
}

TEST(Augment, Deterministic) {
  const auto cfg = small_config();
  const auto ds = dataset_for(cfg);
  const auto a = augment_backtranslate(trained(), cfg, ds, AugmentSource::TrainWorlds, 20, 4);
  const auto b = augment_backtranslate(trained(), cfg, ds, AugmentSource::TrainWorlds, 20, 4);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(io::episode_to_json(a[i]).dump(), io::episode_to_json(b[i]).dump());
}

TEST(FinetuneAugmented, AlternatesLabeledAndAugmentedBatches) {
  const auto cfg = small_config();
  const auto ds = dataset_for(cfg);
  const auto aug = augment_backtranslate(trained(), cfg, ds, AugmentSource::TrainWorlds, 30, 2);
  const auto res = finetune_augmented(trained(), cfg, ds, aug, 6);
  ASSERT_EQ(res.log.size(), 6u);
  for (std::size_t i = 0; i < res.log.size(); ++i)
    for (const auto& id : res.log[i].episodes) EXPECT_EQ(id.rfind("aug-", 0) == 0, i % 2 == 1) << id;
  EXPECT_EQ(res.selected.stage, "augment");
}

TEST(PreExplore, ZeroIterationsLeavesCheckpointUnchanged) {
  const auto cfg = small_config();
  const auto ds = dataset_for(cfg);
  const auto aug = augment_backtranslate(trained(), cfg, ds, AugmentSource::UnseenWorlds, 10, 3);
  const auto res = pre_explore(trained(), cfg, ds, aug, 0);
  EXPECT_TRUE(same_params(res.selected.params, trained().params));
  EXPECT_EQ(res.selected.iteration, trained().iteration);
  EXPECT_EQ(res.selected.rng_states, trained().rng_states);
  EXPECT_TRUE(res.log.empty());
}

TEST(PreExplore, TrainsOnlyOnUnseenWorldEpisodes) {
  const auto cfg = small_config();
  const auto ds = dataset_for(cfg);
  const auto aug = augment_backtranslate(trained(), cfg, ds, AugmentSource::UnseenWorlds, 20, 3);
  const auto res = pre_explore(trained(), cfg, ds, aug, 8);
  ASSERT_EQ(res.log.size(), 8u);
  for (const auto& row : res.log)
    for (const auto& id : row.episodes) EXPECT_EQ(id.rfind("aug-unseen-", 0), 0u) << id;
  EXPECT_EQ(res.selected.iteration, trained().iteration + 8);
  EXPECT_EQ(serialize_checkpoint(res.selected), serialize_checkpoint(res.last));
}

TEST(PreExplore, RejectsEmptyOrSeenWorldData) {
  const auto cfg = small_config();
  const auto ds = dataset_for(cfg);
  EXPECT_THROW(pre_explore(trained(), cfg, ds, {}, 5), std::invalid_argument);
  const auto seen = augment_backtranslate(trained(), cfg, ds, AugmentSource::TrainWorlds, 5, 3);
  EXPECT_THROW(pre_explore(trained(), cfg, ds, seen, 5), std::invalid_argument);
}

TEST(Ablation, TableShapeDeterminismAndInvariants) {
  const auto cfg = small_config(6);
  const auto ds = dataset_for(cfg);
  const auto rows = run_ablation(cfg, ds);
  ASSERT_EQ(rows.size(), 8u);
  const std::vector<std::string> names{"baseline",         "baseline+L_speaker", "baseline+L_progress",
                                       "baseline+L_matching", "baseline+L_angle", "baseline+L_total",
                                       "step-wise+MSE",    "step-wise+BCE"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].name, names[i]);
    for (const auto& s : {rows[i].val_seen, rows[i].val_unseen}) {
      EXPECT_LE(s.spl, s.success);
      EXPECT_GE(s.oracle_success, s.success);
      EXPECT_GT(s.episodes, 0u);
    }
  }
  EXPECT_TRUE(std::isnan(rows[0].progress_error_seen));
  EXPECT_FALSE(std::isnan(rows[6].progress_error_unseen));
  // BCE row is the +L_progress configuration
  EXPECT_EQ(rows[7].val_unseen.spl, rows[2].val_unseen.spl);
  const auto csv = ablation_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 16);
  EXPECT_EQ(csv, ablation_csv(run_ablation(cfg, ds)));
  EXPECT_NE(ablation_table_text(rows).find("baseline+L_total"), std::string::npos);
}

TEST(RandomPolicy, MatchesDirectSimulation) {
  const auto cfg = small_config();
  const auto ds = dataset_for(cfg);
  const auto refs = episode_refs(ds, Split::ValSeen);
  const auto a = random_policy_metrics(cfg, refs, 500, 7);
  const auto b = random_policy_metrics(cfg, refs, 500, 7);
  EXPECT_EQ(a.success, b.success);
  EXPECT_EQ(a.episodes, 500u);
  EXPECT_LE(a.spl, a.success);
  // independent re-simulation with the same draws
  Rng rng(7);
  double sr = 0;
  for (int i = 0; i < 500; ++i) {
    const auto& ref = refs[static_cast<std::size_t>(i) % refs.size()];
    const auto fw = oracle::floyd_warshall(*ref.graph);
    int node = ref.episode->start;
    for (int t = 0; t < cfg.max_steps; ++t) {
      const auto& nb = ref.graph->neighbours(node);
      const std::size_t k = rng.below(nb.size() + 1);
      if (k == nb.size()) break;
      node = nb[k];
    }
    sr += fw[node][ref.episode->goal] <= cfg.success_radius;
  }
  EXPECT_NEAR(a.success, sr / 500, 1e-12);
}
