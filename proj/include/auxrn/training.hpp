#pragma once

// Training recipe: pretraining on labeled episodes, speaker back-translation
// augmentation, pre-exploration of unseen worlds, and the ablation harness.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxrn/agent.hpp"
#include "auxrn/config.hpp"
#include "auxrn/io.hpp"
#include "auxrn/metrics.hpp"

namespace auxrn {

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  std::uint64_t config_hash = 0;
  int iteration = 0;
  std::string stage = "init";
  std::optional<double> val_spl;  // val-unseen SPL recorded when this checkpoint was selected
  bool speaker_trained = false;
  ad::ParameterSet params;
  SgdMomentum optimizer;
  std::map<std::string, std::string> rng_states;

  TrainConfig config() const {
    TrainConfig c;
    c.apply_text(config_text);
    return c;
  }
};

inline Checkpoint initial_checkpoint(const TrainConfig& cfg) {
  cfg.validate();
  Checkpoint ck;
  ck.config_text = cfg.to_text();
  ck.config_hash = cfg.hash();
  ck.params = init_parameters(cfg.model(), cfg.seed);
  ck.optimizer.learning_rate = cfg.learning_rate;
  ck.optimizer.momentum = cfg.momentum;
  const std::pair<const char*, std::uint64_t> streams[] = {{"batch", 1}, {"policy", 2}, {"shuffle", 3}};
  for (const auto& [name, tag] : streams) ck.rng_states[name] = Rng(derive_seed(cfg.seed, 0x57AE, tag)).state();
  return ck;
}

namespace detail {
inline io::ordered_json matrix_to_json(const Matrix& m) {
  io::ordered_json data = io::ordered_json::array();
  for (Eigen::Index i = 0; i < m.size(); ++i) data.push_back(m.data()[i]);
  return io::ordered_json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}
inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& d = j.at("data");
  if (static_cast<Eigen::Index>(d.size()) != m.size()) throw std::invalid_argument("checkpoint: array size mismatch");
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d[static_cast<std::size_t>(i)].get<double>();
  return m;
}
}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  io::ordered_json j;
  j["format"] = "auxrn-checkpoint";
  j["version"] = kCheckpointVersion;
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(ck.config_hash));
  j["config_hash"] = hash;
  j["config"] = ck.config_text;
  j["iteration"] = ck.iteration;
  j["stage"] = ck.stage;
  j["val_spl"] = ck.val_spl ? io::ordered_json(*ck.val_spl) : io::ordered_json(nullptr);
  j["speaker_trained"] = ck.speaker_trained;
  io::ordered_json params = io::ordered_json::object();
  for (const auto& [name, p] : ck.params) params[name] = detail::matrix_to_json(p.value);
  j["params"] = std::move(params);
  io::ordered_json vel = io::ordered_json::object();
  for (const auto& [name, v] : ck.optimizer.velocity) vel[name] = detail::matrix_to_json(v);
  j["optimizer"] = io::ordered_json{{"learning_rate", ck.optimizer.learning_rate},
                                    {"momentum", ck.optimizer.momentum},
                                    {"velocity", std::move(vel)}};
  io::ordered_json rng = io::ordered_json::object();
  for (const auto& [k, s] : ck.rng_states) rng[k] = s;
  j["rng"] = std::move(rng);
  return j.dump(1) + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("format").get<std::string>() != "auxrn-checkpoint") throw std::invalid_argument("not a checkpoint file");
  if (j.at("version").get<int>() != kCheckpointVersion) throw std::invalid_argument("unsupported checkpoint version");
  Checkpoint ck;
  ck.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  ck.config_text = j.at("config").get<std::string>();
  if (ck.config().hash() != ck.config_hash) throw std::invalid_argument("checkpoint: config does not match its hash");
  ck.iteration = j.at("iteration").get<int>();
  ck.stage = j.at("stage").get<std::string>();
  if (!j.at("val_spl").is_null()) ck.val_spl = j.at("val_spl").get<double>();
  ck.speaker_trained = j.at("speaker_trained").get<bool>();
  for (const auto& [name, m] : j.at("params").items()) ck.params.add(name, detail::matrix_from_json(m));
  const auto& opt = j.at("optimizer");
  ck.optimizer.learning_rate = opt.at("learning_rate").get<double>();
  ck.optimizer.momentum = opt.at("momentum").get<double>();
  for (const auto& [name, m] : opt.at("velocity").items()) ck.optimizer.velocity[name] = detail::matrix_from_json(m);
  for (const auto& [k, s] : j.at("rng").items()) ck.rng_states[k] = s.get<std::string>();
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::write_text(path, serialize_checkpoint(ck));
}
inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(io::read_text(path)); }

// ---------------------------------------------------------------------------
// Episodes bound to their worlds

struct EpisodeRef {
  const Episode* episode = nullptr;
  const NavGraph* graph = nullptr;
};

inline std::vector<EpisodeRef> episode_refs(const Dataset& ds, Split split) {
  std::vector<EpisodeRef> out;
  for (const auto& e : ds.episodes)
    if (e.split == split) out.push_back({&e, &ds.world(e.world_seed)});
  return out;
}

inline std::vector<EpisodeRef> episode_refs(const Dataset& ds, const std::vector<Episode>& episodes) {
  std::vector<EpisodeRef> out;
  for (const auto& e : episodes) out.push_back({&e, &ds.world(e.world_seed)});
  return out;
}

inline Dataset dataset_for(const TrainConfig& cfg) {
  return make_dataset(cfg.world_seeds(), cfg.episodes_per_world, cfg.fractions(), cfg.world_params());
}

// ---------------------------------------------------------------------------
// Evaluation

struct StepLog {
  std::string episode_id;
  int t = 0;
  int node = 0;
  int candidate_count = 0;
  std::vector<double> probabilities;
  int action = 0;
  std::string mode;
};

inline io::ordered_json step_log_to_json(const StepLog& s) {
  return io::ordered_json{{"episode_id", s.episode_id}, {"t", s.t}, {"node", s.node},
                          {"candidate_count", s.candidate_count}, {"p_t", s.probabilities}, {"a_t", s.action},
                          {"mode", s.mode}};
}

struct EvalResult {
  std::vector<EpisodeMetrics> per_episode;
  MetricSummary summary;
  std::vector<StepLog> steps;
};

inline EvalResult evaluate_policy(const ad::ParameterSet& params, const TrainConfig& cfg,
                                  const std::vector<EpisodeRef>& episodes, bool keep_step_log = false) {
  EvalResult res;
  for (const auto& ref : episodes) {
    ad::Tape tape;
    const ModelVars m = bind_constant(tape, params);
    RolloutOptions opt;
    opt.mode = SelectMode::Argmax;
    opt.max_steps = cfg.max_steps;
    opt.vision_query = cfg.vision_query;
    const auto ro = run_episode(tape, m, *ref.graph, *ref.episode, opt);
    res.per_episode.push_back(evaluate(ro.trajectory.nodes, *ref.episode, *ref.graph, cfg.success_radius));
    if (keep_step_log)
      for (std::size_t t = 0; t < ro.steps.size(); ++t) {
        const auto& s = ro.steps[t];
        res.steps.push_back({ref.episode->episode_id, static_cast<int>(t), s.node, s.candidate_count, s.probabilities,
                             s.action, select_mode_name(opt.mode)});
      }
  }
  res.summary = aggregate(res.per_episode);
  return res;
}

// Uniform choice among the k+1 candidates at every step.
inline MetricSummary random_policy_metrics(const TrainConfig& cfg, const std::vector<EpisodeRef>& episodes,
                                           int rollouts, std::uint64_t seed) {
  if (episodes.empty()) throw std::invalid_argument("random_policy_metrics: no episodes");
  Rng rng(seed);
  std::vector<EpisodeMetrics> all;
  for (int i = 0; i < rollouts; ++i) {
    const auto& ref = episodes[static_cast<std::size_t>(i) % episodes.size()];
    std::vector<int> traj{ref.episode->start};
    int node = ref.episode->start;
    for (int t = 0; t < cfg.max_steps; ++t) {
      const auto& nb = ref.graph->neighbours(node);
      const std::size_t a = rng.below(nb.size() + 1);
      if (a == nb.size()) break;
      node = nb[a];
      traj.push_back(node);
    }
    all.push_back(evaluate(traj, *ref.episode, *ref.graph, cfg.success_radius));
  }
  return aggregate(all);
}

// Mean |σ(W_r f̂_t) - t/T| over teacher-forced rollouts.
inline double progress_error(const ad::ParameterSet& params, const TrainConfig& cfg,
                             const std::vector<EpisodeRef>& episodes) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& ref : episodes) {
    ad::Tape tape;
    const ModelVars m = bind_constant(tape, params);
    RolloutOptions opt;
    opt.mode = SelectMode::Teacher;
    opt.max_steps = std::max(cfg.max_steps, static_cast<int>(ref.episode->teacher_path.size()));
    opt.vision_query = cfg.vision_query;
    const auto ro = run_episode(tape, m, *ref.graph, *ref.episode, opt);
    const auto out = progress_forward(ro.cross_modal(), m.progress, cfg.progress_loss);
    for (std::size_t t = 0; t < out.predictions.size(); ++t) {
      total += std::abs(out.predictions[t] - out.labels[t]);
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// One joint iteration

struct IterationLosses {
  double il = 0, rl = 0, value = 0;
  double speaker = 0, progress = 0, matching = 0, angle = 0;
  double progress_sf = 0, matching_sf = 0;
  double batch_sr = 0;
};

namespace detail {
// Mean of v over norm (batch size by default), logged and appended as a term.
inline void push_mean_term(std::vector<LossTerm>& terms, const char* name, const std::vector<Var>& v, double weight,
                           double& log, double norm) {
  if (v.empty()) return;
  Var x = ad::scale(ad::add_n(v), 1.0 / norm);
  log = x.scalar();
  terms.push_back({name, x, weight});
}

inline Var batch_matching(const std::vector<EpisodeRollout>& ros, const ShufflePlan& plan,
                          const MatchingHeadWeights& head) {
  std::vector<std::vector<Var>> fh;
  std::vector<Var> gl;
  for (const auto& ro : ros) {
    fh.push_back(ro.cross_modal());
    gl.push_back(ro.language.global);
  }
  return matching_loss(fh, gl, plan, head);
}
}  // namespace detail

// Teacher-forced pass: IL plus all weighted auxiliary losses.
inline std::vector<LossTerm> teacher_forced_terms(ad::Tape& tape, const ModelVars& m, const TrainConfig& cfg,
                                                  const std::vector<EpisodeRef>& batch, const AuxWeights& w,
                                                  Rng& shuffle_rng, IterationLosses& L) {
  const double B = static_cast<double>(batch.size());
  std::vector<LossTerm> terms;
  std::vector<EpisodeRollout> tf;
  std::vector<Var> il_terms, sp_terms, pr_terms, an_terms;
  for (const auto& ref : batch) {
    RolloutOptions opt;
    opt.mode = SelectMode::Teacher;
    opt.max_steps = std::max(cfg.max_steps, static_cast<int>(ref.episode->teacher_path.size()));
    opt.vision_query = cfg.vision_query;
    tf.push_back(run_episode(tape, m, *ref.graph, *ref.episode, opt));
    const auto& ro = tf.back();
    il_terms.push_back(il_loss(ro.record()));
    if (w.speaker > 0) sp_terms.push_back(speaker_loss(tape, m.speaker, ref.episode->instruction, ro.vision_history()));
    if (w.progress > 0) pr_terms.push_back(progress_loss(ro.cross_modal(), m.progress, cfg.progress_loss));
    if (w.angle > 0) an_terms.push_back(angle_loss(ro.cross_modal(), ro.teacher_orientations(), m.angle, cfg.angle_norm));
  }
  detail::push_mean_term(terms, "il", il_terms, 1.0, L.il, B);
  detail::push_mean_term(terms, "speaker", sp_terms, w.speaker, L.speaker, B);
  detail::push_mean_term(terms, "progress", pr_terms, w.progress, L.progress, B);
  detail::push_mean_term(terms, "angle", an_terms, w.angle, L.angle, B);
  const ShufflePlan plan = make_shuffle_plan(batch.size(), shuffle_rng);
  if (w.matching > 0) {
    Var x = detail::batch_matching(tf, plan, m.matching);
    L.matching = x.scalar();
    terms.push_back({"matching", x, w.matching});
  }
  return terms;
}

// Student-forced pass under the same instructions: A2C + value, progress and
// matching. Speaker and angle never appear here.
inline std::vector<LossTerm> student_forced_terms(ad::Tape& tape, const ModelVars& m, const TrainConfig& cfg,
                                                  const std::vector<EpisodeRef>& batch, const AuxWeights& w,
                                                  Rng& policy_rng, Rng& shuffle_rng, IterationLosses& L) {
  const double B = static_cast<double>(batch.size());
  std::vector<LossTerm> terms;
  std::vector<EpisodeRollout> sf;
  std::vector<Var> pol, val, pr;
  double successes = 0, decisions = 0;
  for (const auto& ref : batch) {
    RolloutOptions opt;
    opt.mode = SelectMode::Sample;
    opt.max_steps = cfg.max_steps;
    opt.vision_query = cfg.vision_query;
    opt.rng = &policy_rng;
    sf.push_back(run_episode(tape, m, *ref.graph, *ref.episode, opt));
    const auto& ro = sf.back();
    RolloutRecord rec = ro.record();
    rec.rewards = compute_rewards(ro.trajectory, *ref.episode, *ref.graph, {cfg.success_radius, 2.0});
    for (const auto& s : ro.steps) rec.values.push_back(value_estimate(m.value, ad::stop_gradient(s.cross_modal)));
    const auto adv = estimate_advantages(rec, cfg.gamma);
    const auto rl = rl_loss(rec, adv);
    decisions += static_cast<double>(rec.length());
    pol.push_back(rl.policy);
    val.push_back(rl.value);
    if (w.progress > 0) pr.push_back(progress_loss(ro.cross_modal(), m.progress, cfg.progress_loss));
    successes += ro.trajectory.stopped && ref.graph->distance(ro.trajectory.nodes.back(), ref.episode->goal) <=
                                             cfg.success_radius;
  }
  L.batch_sr = successes / B;
  // A2C terms are averaged over all student decisions in the batch.
  detail::push_mean_term(terms, "rl", pol, 1.0, L.rl, decisions);
  detail::push_mean_term(terms, "value", val, cfg.value_weight, L.value, decisions);
  detail::push_mean_term(terms, "progress_sf", pr, w.progress, L.progress_sf, B);
  const ShufflePlan plan = make_shuffle_plan(batch.size(), shuffle_rng);
  if (w.matching > 0) {
    Var x = detail::batch_matching(sf, plan, m.matching);
    L.matching_sf = x.scalar();
    terms.push_back({"matching_sf", x, w.matching});
  }
  return terms;
}

// Both passes on one tape, gradients summed into a single update.
inline IterationLosses train_iteration(Checkpoint& ck, const TrainConfig& cfg, const std::vector<EpisodeRef>& batch,
                                       const AuxWeights& w, Rng& policy_rng, Rng& shuffle_rng) {
  w.validate();
  ad::Tape tape;
  const ModelVars m = bind(tape, ck.params);
  IterationLosses L;
  std::vector<LossTerm> terms = teacher_forced_terms(tape, m, cfg, batch, w, shuffle_rng, L);
  if (cfg.use_rl) {
    auto sf = student_forced_terms(tape, m, cfg, batch, w, policy_rng, shuffle_rng, L);
    terms.insert(terms.end(), sf.begin(), sf.end());
  }

  joint_step(tape, terms, ck.params, ck.optimizer, cfg.clip_norm);
  ++ck.iteration;
  if (w.speaker > 0) ck.speaker_trained = true;
  return L;
}

// ---------------------------------------------------------------------------
// Stages

struct TrainLogRow {
  int iteration = 0;
  std::string stage;
  IterationLosses losses;
  double probe_sr = 0.0;
  std::vector<std::string> episodes;
};

inline io::ordered_json train_log_to_json(const TrainLogRow& r) {
  const auto& l = r.losses;
  io::ordered_json ids = io::ordered_json::array();
  for (const auto& e : r.episodes) ids.push_back(e);
  return io::ordered_json{{"iter", r.iteration},         {"stage", r.stage},       {"L_IL", l.il},
                          {"L_RL", l.rl},                {"value_loss", l.value},  {"L_speaker", l.speaker},
                          {"L_progress", l.progress},    {"L_matching", l.matching}, {"L_angle", l.angle},
                          {"L_progress_sf", l.progress_sf}, {"L_matching_sf", l.matching_sf},
                          {"batch_sr", l.batch_sr},      {"probe_sr", r.probe_sr}, {"episodes", std::move(ids)}};
}

struct EvalLogRow {
  int iteration = 0;
  std::string stage;
  MetricSummary val_seen;
  MetricSummary val_unseen;
};

inline io::ordered_json eval_log_to_json(const EvalLogRow& r) {
  auto s = [](const MetricSummary& m) {
    return io::ordered_json{{"NE", m.ne}, {"OR", m.oracle_success}, {"SR", m.success}, {"SPL", m.spl}, {"TL", m.tl}};
  };
  return io::ordered_json{{"iter", r.iteration}, {"stage", r.stage}, {"val-seen", s(r.val_seen)},
                          {"val-unseen", s(r.val_unseen)}};
}

struct StageSpec {
  std::string name;
  int iterations = 0;
  std::vector<EpisodeRef> labeled;    // trained with cfg.aux
  std::vector<EpisodeRef> augmented;  // trained with cfg.aux scaled by augment_aux_scale
  bool select_best = true;            // else the last checkpoint is returned
};

struct StageResult {
  Checkpoint selected;
  Checkpoint last;
  std::vector<TrainLogRow> log;
  std::vector<EvalLogRow> evals;
};

// Runs a stage. With both pools non-empty, batches alternate labeled /
// augmented 1:1. Evaluation runs at the start, every eval_every iterations
// and at the end; the best val-unseen SPL checkpoint is selected when asked.
inline StageResult run_stage(Checkpoint ck, const TrainConfig& cfg, const StageSpec& spec,
                             const std::vector<EpisodeRef>& val_seen, const std::vector<EpisodeRef>& val_unseen) {
  if (spec.iterations < 0) throw std::invalid_argument("run_stage: negative iteration count");
  if (spec.iterations > 0 && spec.labeled.empty() && spec.augmented.empty())
    throw std::invalid_argument("run_stage: no training episodes");
  Rng batch_rng, policy_rng, shuffle_rng;
  batch_rng.set_state(ck.rng_states.at("batch"));
  policy_rng.set_state(ck.rng_states.at("policy"));
  shuffle_rng.set_state(ck.rng_states.at("shuffle"));
  ck.stage = spec.name;

  StageResult res;
  const auto& probe_pool = spec.labeled.empty() ? spec.augmented : spec.labeled;
  std::vector<EpisodeRef> probe(probe_pool.begin(),
                                probe_pool.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(16, probe_pool.size())));
  double probe_sr = 0.0;

  auto save_rngs = [&](Checkpoint& c) {
    c.rng_states["batch"] = batch_rng.state();
    c.rng_states["policy"] = policy_rng.state();
    c.rng_states["shuffle"] = shuffle_rng.state();
  };
  std::optional<double> best;
  auto do_eval = [&](int i) {
    EvalLogRow row{ck.iteration, spec.name, {}, {}};
    if (!val_seen.empty()) row.val_seen = evaluate_policy(ck.params, cfg, val_seen).summary;
    if (!val_unseen.empty()) row.val_unseen = evaluate_policy(ck.params, cfg, val_unseen).summary;
    res.evals.push_back(row);
    const double spl = row.val_unseen.spl;
    if (!spec.select_best) return;
    if (!best || spl > *best) {
      best = spl;
      res.selected = ck;
      res.selected.val_spl = spl;
      save_rngs(res.selected);
    }
    (void)i;
  };

  do_eval(0);
  for (int i = 1; i <= spec.iterations; ++i) {
    const bool use_aug =
        spec.labeled.empty() || (!spec.augmented.empty() && i % 2 == 0);
    const auto& pool = use_aug ? spec.augmented : spec.labeled;
    const AuxWeights w = use_aug ? cfg.aux.scaled(cfg.augment_aux_scale) : cfg.aux;
    std::vector<EpisodeRef> batch;
    TrainLogRow row;
    for (int b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(pool[batch_rng.below(pool.size())]);
      row.episodes.push_back(batch.back().episode->episode_id);
    }
    try {
      row.losses = train_iteration(ck, cfg, batch, w, policy_rng, shuffle_rng);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.term(), std::string(e.what()) + " at iteration " + std::to_string(ck.iteration + 1));
    }
    if ((i - 1) % cfg.probe_every == 0) probe_sr = evaluate_policy(ck.params, cfg, probe).summary.success;
    row.iteration = ck.iteration;
    row.stage = spec.name;
    row.probe_sr = probe_sr;
    res.log.push_back(std::move(row));
    if (i % cfg.eval_every == 0 || i == spec.iterations) do_eval(i);
  }
  save_rngs(ck);
  if (!spec.select_best) {
    ck.val_spl = res.evals.back().val_unseen.spl;
    res.selected = ck;
  }
  res.last = std::move(ck);
  return res;
}

inline StageResult pretrain(const TrainConfig& cfg, const Dataset& ds, std::optional<Checkpoint> start = std::nullopt) {
  StageSpec spec;
  spec.name = "pretrain";
  spec.iterations = cfg.iterations;
  spec.labeled = episode_refs(ds, Split::TrainSeen);
  return run_stage(start ? std::move(*start) : initial_checkpoint(cfg), cfg, spec, episode_refs(ds, Split::ValSeen),
                   episode_refs(ds, Split::ValUnseen));
}

enum class AugmentSource { TrainWorlds, UnseenWorlds };

inline std::vector<std::uint64_t> augment_worlds(const Dataset& ds, AugmentSource src) {
  if (src == AugmentSource::TrainWorlds) return ds.assignment.seen;
  auto w = ds.assignment.val_unseen;
  w.insert(w.end(), ds.assignment.test_unseen.begin(), ds.assignment.test_unseen.end());
  return w;
}

// Labels random shortest paths in the chosen worlds with the speaker. The
// vision history for a path is computed by driving the encoder along it with
// an empty ([BOS, EOS]) instruction.
inline std::vector<Episode> augment_backtranslate(const Checkpoint& ck, const TrainConfig& cfg, const Dataset& ds,
                                                  AugmentSource src, int samples, std::uint64_t seed) {
  if (samples < 0) throw std::invalid_argument("augment: negative sample count");
  if (!ck.speaker_trained || !ck.params.contains("speaker.out.w"))
    throw std::runtime_error("augment: checkpoint has no trained speaker head");
  std::vector<Episode> out;
  if (samples == 0) return out;
  const auto worlds = augment_worlds(ds, src);
  if (worlds.empty()) throw std::invalid_argument("augment: no source worlds");
  const char* tag = src == AugmentSource::TrainWorlds ? "train" : "unseen";
  for (int j = 0; j < samples; ++j) {
    const std::uint64_t ws = worlds[static_cast<std::size_t>(j) % worlds.size()];
    const NavGraph& g = ds.world(ws);
    Rng rng(derive_seed(seed, ws, static_cast<std::uint64_t>(j)));
    Episode e = sample_episode(g, rng);
    e.instruction.tokens = {token::kBos, token::kEos};
    ad::Tape tape;
    const ModelVars m = bind_constant(tape, ck.params);
    RolloutOptions opt;
    opt.mode = SelectMode::Teacher;
    opt.max_steps = kMaxPathNodes;
    opt.vision_query = cfg.vision_query;
    const auto ro = run_episode(tape, m, g, e, opt);
    Instruction ins = speaker_generate(tape, m.speaker, ro.vision_history(), kMaxInstructionTokens - 2);
    if (ins.tokens.back() != token::kEos) ins.tokens.push_back(token::kEos);
    e.instruction = std::move(ins);
    char id[48];
    std::snprintf(id, sizeof id, "aug-%s-%05d", tag, j);
    e.episode_id = id;
    e.split = Split::Augmented;
    out.push_back(std::move(e));
  }
  return out;
}

// Stage 2: labeled and train-world augmented batches alternate.
inline StageResult finetune_augmented(Checkpoint ck, const TrainConfig& cfg, const Dataset& ds,
                                      const std::vector<Episode>& augmented, int iterations) {
  StageSpec spec;
  spec.name = "augment";
  spec.iterations = iterations;
  spec.labeled = episode_refs(ds, Split::TrainSeen);
  spec.augmented = episode_refs(ds, augmented);
  return run_stage(std::move(ck), cfg, spec, episode_refs(ds, Split::ValSeen), episode_refs(ds, Split::ValUnseen));
}

// Stage 3: continue on unseen-world augmented episodes only; the last
// checkpoint is kept.
inline StageResult pre_explore(Checkpoint ck, const TrainConfig& cfg, const Dataset& ds,
                               const std::vector<Episode>& unseen_augmented, int iterations) {
  if (unseen_augmented.empty()) throw std::invalid_argument("pre_explore: empty augmented set");
  const auto unseen = augment_worlds(ds, AugmentSource::UnseenWorlds);
  for (const auto& e : unseen_augmented)
    if (std::find(unseen.begin(), unseen.end(), e.world_seed) == unseen.end())
      throw std::invalid_argument("pre_explore: augmented episode " + e.episode_id + " is not from an unseen world");
  StageSpec spec;
  spec.name = "pre-explore";
  spec.iterations = iterations;
  spec.augmented = episode_refs(ds, unseen_augmented);
  spec.select_best = false;
  return run_stage(std::move(ck), cfg, spec, episode_refs(ds, Split::ValSeen), episode_refs(ds, Split::ValUnseen));
}

// ---------------------------------------------------------------------------
// Ablation harness

struct AblationRow {
  std::string name;
  MetricSummary val_seen;
  MetricSummary val_unseen;
  double progress_error_seen = std::numeric_limits<double>::quiet_NaN();
  double progress_error_unseen = std::numeric_limits<double>::quiet_NaN();
};

struct AblationVariant {
  std::string name;
  AuxWeights weights;
  ProgressLoss progress_loss = ProgressLoss::Bce;
  bool report_progress_error = false;
};

// Baseline, each single auxiliary loss, all four, and the progress-loss
// MSE/BCE pair.
inline std::vector<AblationVariant> ablation_variants() {
  return {
      {"baseline", AuxWeights::none(), ProgressLoss::Bce, false},
      {"baseline+L_speaker", {1, 0, 0, 0}, ProgressLoss::Bce, false},
      {"baseline+L_progress", {0, 1, 0, 0}, ProgressLoss::Bce, true},
      {"baseline+L_matching", {0, 0, 1, 0}, ProgressLoss::Bce, false},
      {"baseline+L_angle", {0, 0, 0, 1}, ProgressLoss::Bce, false},
      {"baseline+L_total", {1, 1, 1, 1}, ProgressLoss::Bce, true},
      {"step-wise+MSE", {0, 1, 0, 0}, ProgressLoss::Mse, true},
      {"step-wise+BCE", {0, 1, 0, 0}, ProgressLoss::Bce, true},
  };
}

struct AblationRun {
  AblationRow row;
  Checkpoint checkpoint;
};

inline AblationRun run_ablation_variant(const TrainConfig& base, const Dataset& ds, const AblationVariant& v) {
  TrainConfig cfg = base;
  cfg.aux = v.weights;
  cfg.progress_loss = v.progress_loss;
  auto res = pretrain(cfg, ds);
  AblationRun run;
  run.row.name = v.name;
  const auto vs = episode_refs(ds, Split::ValSeen);
  const auto vu = episode_refs(ds, Split::ValUnseen);
  run.row.val_seen = evaluate_policy(res.selected.params, cfg, vs).summary;
  run.row.val_unseen = evaluate_policy(res.selected.params, cfg, vu).summary;
  if (v.report_progress_error) {
    run.row.progress_error_seen = progress_error(res.selected.params, cfg, vs);
    run.row.progress_error_unseen = progress_error(res.selected.params, cfg, vu);
  }
  run.checkpoint = std::move(res.selected);
  return run;
}

inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& ds) {
  std::vector<AblationRow> rows;
  std::map<std::string, AblationRow> cache;
  for (const auto& v : ablation_variants()) {
    // step-wise+BCE is the same configuration as baseline+L_progress.
    const std::string key = std::to_string(v.weights.speaker) + std::to_string(v.weights.progress) +
                            std::to_string(v.weights.matching) + std::to_string(v.weights.angle) +
                            progress_loss_name(v.progress_loss);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, run_ablation_variant(base, ds, v).row).first;
    AblationRow r = it->second;
    r.name = v.name;
    if (!v.report_progress_error) r.progress_error_seen = r.progress_error_unseen = std::numeric_limits<double>::quiet_NaN();
    rows.push_back(r);
  }
  return rows;
}

inline std::string ablation_table_text(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-22s | %7s %7s %7s %7s %7s | %7s %7s %7s %7s %7s\n", "model", "NE", "OR", "SR",
                "SPL", "Error", "NE", "OR", "SR", "SPL", "Error");
  out += std::string(24, ' ') + "val-seen" + std::string(34, ' ') + "val-unseen\n";
  out += buf;
  for (const auto& r : rows) {
    auto err = [](double e) { return std::isnan(e) ? std::string("      -") : io::fmt(e, "%7.3f"); };
    std::snprintf(buf, sizeof buf, "%-22s | %7.3f %7.3f %7.3f %7.3f %s | %7.3f %7.3f %7.3f %7.3f %s\n",
                  r.name.c_str(), r.val_seen.ne, r.val_seen.oracle_success, r.val_seen.success, r.val_seen.spl,
                  err(r.progress_error_seen).c_str(), r.val_unseen.ne, r.val_unseen.oracle_success,
                  r.val_unseen.success, r.val_unseen.spl, err(r.progress_error_unseen).c_str());
    out += buf;
  }
  return out;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "model,split,NE,OR,SR,SPL,progress_error\n";
  for (const auto& r : rows) {
    for (const auto& [split, m, e] : {std::tuple{"val-seen", r.val_seen, r.progress_error_seen},
                                      std::tuple{"val-unseen", r.val_unseen, r.progress_error_unseen}}) {
      out += r.name + "," + split + "," + io::fmt(m.ne, "%.17g") + "," + io::fmt(m.oracle_success, "%.17g") + "," +
             io::fmt(m.success, "%.17g") + "," + io::fmt(m.spl, "%.17g") + "," +
             (std::isnan(e) ? std::string() : io::fmt(e, "%.17g")) + "\n";
    }
  }
  return out;
}

}  // namespace auxrn
