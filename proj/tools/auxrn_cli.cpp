// auxrn_cli: dataset generation, training stages, evaluation, ablation and
// plot-data emission.
//
// exit codes: 0 ok, 1 usage error, 2 runtime failure

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "auxrn/training.hpp"

namespace fs = std::filesystem;
using namespace auxrn;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string split;
  std::optional<int> iterations;
  std::string out_dir;
  std::string run_dir;
  std::string aux_weights;
  std::string progress_loss;
  std::string vision_query;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "key=value config file");
  app->add_option("--seed", f.seed, "master seed (overrides config)");
}
void add_training(CLI::App* app, Flags& f) {
  app->add_option("--iterations", f.iterations, "iteration budget (overrides config)");
  app->add_option("--aux-weights", f.aux_weights, "speaker,progress,matching,angle");
  app->add_option("--progress-loss", f.progress_loss, "bce or mse")->check(CLI::IsMember({"bce", "mse"}));
  app->add_option("--vision-query", f.vision_query, "cross_modal or vision_history")
      ->check(CLI::IsMember({"cross_modal", "vision_history"}));
}

// Config: defaults, then the checkpoint's own config (if any), then the
// --config file, then individual flags.
TrainConfig build_config(const Flags& f, const Checkpoint* ck, int* iterations_override = nullptr) {
  TrainConfig c;
  try {
    if (ck != nullptr) c.apply_text(ck->config_text);
    if (!f.config.empty()) c.apply_file(f.config);
    if (f.seed) c.seed = *f.seed;
    if (!f.aux_weights.empty()) c.aux = parse_aux_weights(f.aux_weights);
    if (!f.progress_loss.empty()) c.progress_loss = parse_progress_loss(f.progress_loss);
    if (!f.vision_query.empty()) c.vision_query = parse_vision_query(f.vision_query);
    if (f.iterations) {
      if (*f.iterations < 0) throw std::invalid_argument("--iterations must be >= 0");
      if (iterations_override != nullptr) *iterations_override = *f.iterations;
      else c.iterations = *f.iterations;
    }
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

fs::path need_dir(const std::string& d, const char* flag) {
  if (d.empty()) throw UsageError(std::string(flag) + " is required");
  return d;
}

Checkpoint need_checkpoint(const Flags& f) {
  if (f.checkpoint.empty()) throw UsageError("--checkpoint is required");
  return load_checkpoint(f.checkpoint);
}

void write_stage(const fs::path& dir, const StageResult& r, const std::string& prefix) {
  save_checkpoint(dir / "checkpoint.json", r.selected);
  save_checkpoint(dir / "last.json", r.last);
  io::write_text(dir / (prefix + "train_log.jsonl"), io::to_jsonl(r.log, train_log_to_json));
  io::write_text(dir / (prefix + "eval_log.jsonl"), io::to_jsonl(r.evals, eval_log_to_json));
}

int cmd_gen_data(const Flags& f) {
  const TrainConfig cfg = build_config(f, nullptr);
  const fs::path dir = need_dir(f.out_dir, "--out-dir");
  const Dataset ds = dataset_for(cfg);
  io::write_dataset(dir, ds);
  io::write_text(dir / "config.txt", cfg.to_text());
  std::cout << "worlds " << ds.worlds.size() << ", episodes " << ds.episodes.size() << " -> " << dir.string() << "\n";
  return 0;
}

int cmd_pretrain(const Flags& f) {
  const TrainConfig cfg = build_config(f, nullptr);
  const fs::path dir = need_dir(f.out_dir, "--out-dir");
  const Dataset ds = dataset_for(cfg);
  io::write_text(dir / "config.txt", cfg.to_text());
  const auto r = pretrain(cfg, ds);
  write_stage(dir, r, "");
  std::cout << summary_header() << "\n";
  std::cout << summary_row("val-seen", r.evals.back().val_seen) << "\n";
  std::cout << summary_row("val-unseen", r.evals.back().val_unseen) << "\n";
  std::cout << "selected checkpoint: iteration " << r.selected.iteration << ", val-unseen SPL "
            << io::fmt(*r.selected.val_spl, "%.4f") << "\n";
  return 0;
}

AugmentSource parse_source(const std::string& s) {
  if (s.empty() || s == "train-worlds" || s == "train-seen") return AugmentSource::TrainWorlds;
  if (s == "unseen-worlds" || s == "val-unseen" || s == "test-unseen") return AugmentSource::UnseenWorlds;
  throw UsageError("--split for augment must be train-worlds or unseen-worlds");
}

int cmd_augment(const Flags& f) {
  Checkpoint ck = need_checkpoint(f);
  int iterations = -1;
  const TrainConfig cfg = build_config(f, &ck, &iterations);
  if (iterations < 0) iterations = cfg.augment_iterations;
  const AugmentSource src = parse_source(f.split);
  const fs::path dir = need_dir(f.out_dir, "--out-dir");
  const Dataset ds = dataset_for(cfg);
  const auto aug = augment_backtranslate(ck, cfg, ds, src, cfg.augment_samples, derive_seed(cfg.seed, 0xA06));
  io::write_text(dir / "augmented.jsonl", io::to_jsonl(aug, io::episode_to_json));
  std::cout << "augmented episodes: " << aug.size() << "\n";
  if (iterations > 0) {
    if (src != AugmentSource::TrainWorlds) throw UsageError("stage-2 finetuning uses train-worlds augmentation");
    const auto r = finetune_augmented(std::move(ck), cfg, ds, aug, iterations);
    write_stage(dir, r, "");
    std::cout << summary_header() << "\n" << summary_row("val-unseen", r.evals.back().val_unseen) << "\n";
  }
  return 0;
}

int cmd_pre_explore(const Flags& f) {
  Checkpoint ck = need_checkpoint(f);
  int iterations = -1;
  const TrainConfig cfg = build_config(f, &ck, &iterations);
  if (iterations < 0) iterations = cfg.pre_explore_iterations;
  const fs::path dir = need_dir(f.out_dir, "--out-dir");
  const Dataset ds = dataset_for(cfg);
  const auto aug = augment_backtranslate(ck, cfg, ds, AugmentSource::UnseenWorlds, cfg.augment_samples,
                                         derive_seed(cfg.seed, 0xE3B));
  io::write_text(dir / "augmented_unseen.jsonl", io::to_jsonl(aug, io::episode_to_json));
  const auto r = pre_explore(std::move(ck), cfg, ds, aug, iterations);
  write_stage(dir, r, "");
  std::cout << summary_header() << "\n" << summary_row("val-unseen", r.evals.back().val_unseen) << "\n";
  return 0;
}

int cmd_eval(const Flags& f) {
  const Checkpoint ck = need_checkpoint(f);
  const TrainConfig cfg = build_config(f, &ck);
  if (f.split.empty()) throw UsageError("--split is required");
  Split split;
  try {
    split = parse_split(f.split);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Dataset ds = dataset_for(cfg);
  const auto refs = episode_refs(ds, split);
  const auto res = evaluate_policy(ck.params, cfg, refs, !f.out_dir.empty());
  std::cout << summary_header() << "\n" << summary_row(f.split, res.summary) << "\n";
  if (!f.out_dir.empty()) {
    const fs::path dir = f.out_dir;
    io::write_text(dir / ("eval_" + f.split + ".jsonl"), io::to_jsonl(res.per_episode, io::metrics_to_json));
    io::write_text(dir / ("rollout_" + f.split + ".jsonl"), io::to_jsonl(res.steps, step_log_to_json));
  }
  return 0;
}

int cmd_ablate(const Flags& f) {
  const TrainConfig cfg = build_config(f, nullptr);
  const fs::path dir = need_dir(f.out_dir, "--out-dir");
  const Dataset ds = dataset_for(cfg);
  const auto rows = run_ablation(cfg, ds);
  const std::string table = ablation_table_text(rows);
  io::write_text(dir / "ablation.txt", table);
  io::write_text(dir / "ablation.csv", ablation_csv(rows));
  std::cout << table;
  return 0;
}

std::vector<double> values_of(Var v) {
  const auto& m = v.value();
  return {m.data(), m.data() + m.size()};
}

// Attention heatmaps and progress/matching curves from teacher-forced
// rollouts of a checkpoint, plus the training curve of the run.
int cmd_emit_plots(const Flags& f) {
  const fs::path run = need_dir(f.run_dir, "--run-dir");
  Flags g = f;
  if (g.checkpoint.empty()) g.checkpoint = (run / "checkpoint.json").string();
  const Checkpoint ck = need_checkpoint(g);
  const TrainConfig cfg = build_config(f, &ck);
  Split split = Split::ValUnseen;
  try {
    if (!f.split.empty()) split = parse_split(f.split);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Dataset ds = dataset_for(cfg);
  const auto refs = episode_refs(ds, split);
  if (refs.empty()) throw std::runtime_error("emit-plots: split has no episodes");
  const fs::path out = run / "plots";

  std::string lang = "episode_id,t,token_index,token_id,weight\n";
  std::string vis = "episode_id,t,view,weight\n";
  std::string curves = "episode_id,t,progress_pred,progress_label,matching_score\n";
  const std::size_t n = std::min<std::size_t>(refs.size(), 8);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ref = refs[i];
    ad::Tape tape;
    const ModelVars m = bind_constant(tape, ck.params);
    RolloutOptions opt;
    opt.mode = SelectMode::Teacher;
    opt.max_steps = std::max(cfg.max_steps, static_cast<int>(ref.episode->teacher_path.size()));
    opt.vision_query = cfg.vision_query;
    const auto ro = run_episode(tape, m, *ref.graph, *ref.episode, opt);
    const auto prog = progress_forward(ro.cross_modal(), m.progress, cfg.progress_loss);
    const auto match = matching_forward({ro.cross_modal()}, {ro.language.global}, ShufflePlan::identity(1), m.matching);
    const auto& id = ref.episode->episode_id;
    const auto& toks = ref.episode->instruction.tokens;
    for (std::size_t t = 0; t < ro.steps.size(); ++t) {
      const auto lw = values_of(ro.steps[t].language_weights);
      for (std::size_t k = 0; k < lw.size(); ++k)
        lang += id + "," + std::to_string(t) + "," + std::to_string(k) + "," +
                std::to_string(k < toks.size() ? toks[k] : -1) + "," + io::fmt(lw[k], "%.17g") + "\n";
      const auto vw = values_of(ro.steps[t].vision_weights);
      for (std::size_t k = 0; k < vw.size(); ++k)
        vis += id + "," + std::to_string(t) + "," + std::to_string(k) + "," + io::fmt(vw[k], "%.17g") + "\n";
      curves += id + "," + std::to_string(t) + "," + io::fmt(prog.predictions[t], "%.17g") + "," +
                io::fmt(prog.labels[t], "%.17g") + "," + io::fmt(match.probabilities[0][t], "%.17g") + "\n";
    }
  }
  io::write_text(out / "attention_language.csv", lang);
  io::write_text(out / "attention_vision.csv", vis);
  io::write_text(out / "progress_matching.csv", curves);

  const fs::path log = run / "train_log.jsonl";
  if (fs::exists(log)) {
    std::string tc = "iter,stage,L_IL,L_RL,value_loss,L_speaker,L_progress,L_matching,L_angle,probe_sr\n";
    for (const auto& j : io::parse_jsonl(io::read_text(log))) {
      tc += std::to_string(j.at("iter").get<int>()) + "," + j.at("stage").get<std::string>();
      for (const char* k : {"L_IL", "L_RL", "value_loss", "L_speaker", "L_progress", "L_matching", "L_angle", "probe_sr"})
        tc += "," + io::fmt(j.at(k).get<double>(), "%.17g");
      tc += "\n";
    }
    io::write_text(out / "training_curve.csv", tc);
  }
  std::cout << "plot data -> " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auxrn: navigation agent with auxiliary reasoning tasks"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "generate worlds and episodes");
  add_common(gen, f);
  gen->add_option("--out-dir", f.out_dir, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "stage 1: train on labeled episodes");
  add_common(pre, f);
  add_training(pre, f);
  pre->add_option("--out-dir", f.out_dir, "run directory")->required();

  auto* aug = app.add_subcommand("augment", "label sampled paths with the speaker; optional stage-2 finetune");
  add_common(aug, f);
  add_training(aug, f);
  aug->add_option("--checkpoint", f.checkpoint, "checkpoint with a trained speaker")->required();
  aug->add_option("--split", f.split, "train-worlds (default) or unseen-worlds");
  aug->add_option("--out-dir", f.out_dir, "output directory")->required();

  auto* exp = app.add_subcommand("pre-explore", "stage 3: finetune on unseen-world augmented episodes");
  add_common(exp, f);
  add_training(exp, f);
  exp->add_option("--checkpoint", f.checkpoint, "starting checkpoint")->required();
  exp->add_option("--out-dir", f.out_dir, "run directory")->required();

  auto* ev = app.add_subcommand("eval", "greedy evaluation on a split");
  add_common(ev, f);
  ev->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  ev->add_option("--split", f.split, "train-seen, val-seen, val-unseen or test-unseen")->required();
  ev->add_option("--out-dir", f.out_dir, "write per-episode metrics and the rollout log here");

  auto* abl = app.add_subcommand("ablate", "auxiliary-loss ablation table");
  add_common(abl, f);
  add_training(abl, f);
  abl->add_option("--out-dir", f.out_dir, "output directory")->required();

  auto* plots = app.add_subcommand("emit-plots", "attention heatmaps, progress/matching and training curves as CSV");
  add_common(plots, f);
  plots->add_option("--run-dir", f.run_dir, "run directory (reads checkpoint.json, train_log.jsonl)")->required();
  plots->add_option("--checkpoint", f.checkpoint, "checkpoint (default: <run-dir>/checkpoint.json)");
  plots->add_option("--split", f.split, "episodes to trace (default val-unseen)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f);
    if (pre->parsed()) return cmd_pretrain(f);
    if (aug->parsed()) return cmd_augment(f);
    if (exp->parsed()) return cmd_pre_explore(f);
    if (ev->parsed()) return cmd_eval(f);
    if (abl->parsed()) return cmd_ablate(f);
    if (plots->parsed()) return cmd_emit_plots(f);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
