#include "hetsed/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "hetsed/rng.hpp"

namespace fs = std::filesystem;

namespace hetsed {

namespace {

constexpr std::uint64_t kInitStream = 10;
constexpr std::uint64_t kTrainStream = 11;
constexpr std::uint64_t kScratchInitStream = 20;
constexpr std::uint64_t kScratchTrainStream = 21;
constexpr std::uint64_t kFinalTrainStream = 31;
constexpr std::uint64_t kMemberSeedStream = 50;

void say(std::ostream* progress, const std::string& line) {
  if (progress) *progress << line << '\n';
}

std::vector<const ClipRecord*> pointers_of(const std::vector<ClipRecord>& clips) {
  std::vector<const ClipRecord*> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(&c);
  return out;
}

// Validation metrics of one checkpoint, honoring the stage's dataset
// exclusions: an excluded dataset's metric stays 0.
MetricReport stage_validation(const ToyModel& model, const Corpus& corpus,
                              const StageConfig& cfg) {
  std::vector<const ClipRecord*> strong, maestro;
  if (!cfg.train_maestro_only) {
    for (const auto& c : corpus.valid_synth) strong.push_back(&c);
    for (const auto& c : corpus.valid_real) strong.push_back(&c);
  }
  if (!cfg.train_desed_only)
    for (const auto& c : corpus.valid_maestro) maestro.push_back(&c);
  return evaluate_metrics(model, corpus, strong, maestro);
}

std::map<std::string, EventList> strong_refs_for(const Corpus& corpus,
                                                 const std::vector<const ClipRecord*>& clips) {
  std::map<std::string, EventList> refs;
  for (const ClipRecord* clip : clips) {
    const auto it = corpus.strong_refs.find(clip->clip_id);
    if (it == corpus.strong_refs.end())
      throw DataError("no reference events for clip " + clip->clip_id);
    refs.emplace(it->first, it->second);
  }
  return refs;
}

double ensemble_strong_psds1(const std::vector<const ToyModel*>& models,
                             const Corpus& corpus,
                             const std::vector<const ClipRecord*>& clips) {
  std::vector<Posteriorgram> posts;
  posts.reserve(clips.size());
  for (const ClipRecord* clip : clips)
    posts.push_back(median_filter(
        ensemble_posteriorgram(models, *clip, corpus.config.clip_duration),
        kDefaultMedianWindow));
  return psds1(posts, strong_refs_for(corpus, clips), PsdsParams{}, threshold_detector);
}

double ensemble_maestro_mpauc(const std::vector<const ToyModel*>& models,
                              const Corpus& corpus,
                              const std::vector<const ClipRecord*>& clips) {
  std::vector<Posteriorgram> posts;
  posts.reserve(clips.size());
  std::map<std::string, std::vector<SegmentRef>> refs;
  for (const ClipRecord* clip : clips) {
    posts.push_back(median_filter(
        ensemble_posteriorgram(models, *clip, corpus.config.clip_duration),
        kDefaultMedianWindow));
    const auto it = corpus.segment_refs.find(clip->clip_id);
    if (it == corpus.segment_refs.end())
      throw DataError("no segment references for clip " + clip->clip_id);
    refs.emplace(it->first, it->second);
  }
  return mpauc(posts, refs, corpus.vocab.native_indices(Subset::kMaestroStrong),
               MpaucParams{});
}

struct SummaryRow {
  std::string label;
  double psds1 = 0.0;
  double mpauc = 0.0;
};

}  // namespace

PseudoStore build_pseudo_store(const std::vector<const ToyModel*>& models,
                               const Corpus& corpus, const PseudoPolicy& policy) {
  if (models.empty()) throw DataError("pseudo-label fusion needs at least one member");
  PseudoStore store;
  store.num_classes = corpus.vocab.num_classes();
  store.num_frames = models.front()->config().t_out();
  store.frame_hop = corpus.config.clip_duration / store.num_frames;
  store.policy = policy;
  for (const ToyModel* m : models) store.provenance.push_back(m->param_hash());

  Workspace ws;
  for (int s = 0; s < kNumSubsets; ++s) {
    for (const auto& clip : corpus.train[s]) {
      const ClipRecord norm = Augmenter::passthrough(clip);
      std::vector<std::vector<double>> logits;
      logits.reserve(models.size());
      for (const ToyModel* m : models)
        logits.push_back(m->forward(norm.features, norm.subset, ws).strong_logits);
      store.targets[clip.clip_id] = fuse_logits(logits, policy.hard);
    }
  }
  return store;
}

PipelineConfig default_pipeline_config() {
  PipelineConfig p;
  p.model.num_classes = p.corpus.desed_classes + p.corpus.maestro_classes;
  for (int i = 0; i < kNumStages; ++i)
    p.stages[i] = default_stage_config(static_cast<StageId>(i));
  const AlignMethod cycle[3] = {AlignMethod::kLinear, AlignMethod::kAvgPool,
                                AlignMethod::kNearestExact};
  for (int k = 0; k < 3; ++k)
    p.members.push_back({Rng::derive_seed(p.seed, kMemberSeedStream + k), cycle[k % 3]});
  return p;
}

PipelineConfig pipeline_config_from(const ConfigFile& cfg) {
  PipelineConfig p;
  p.corpus = corpus_config_from(cfg);
  p.seed = cfg.get_u64("pipeline", "seed", p.seed);
  p.iterations = cfg.get_int("pipeline", "iterations", p.iterations);
  p.tune_sebb = cfg.get_bool("pipeline", "tune_sebb", p.tune_sebb);
  p.out_dir = cfg.get_string("pipeline", "out_dir", p.out_dir);
  if (p.iterations < 1 || p.iterations > 2)
    throw ConfigError("pipeline.iterations must be 1 or 2");

  p.model = model_config_from(cfg, p.corpus.desed_classes + p.corpus.maestro_classes);
  // The feature geometry belongs to the data.
  p.model.feature_bins = p.corpus.feature_bins;
  p.model.input_frames = p.corpus.input_frames;

  for (int i = 0; i < kNumStages; ++i) {
    const auto id = static_cast<StageId>(i);
    StageConfig base = default_stage_config(id);
    base.augment = augment_config_from(cfg);
    p.stages[i] = stage_config_from(cfg, stage_name(id), base);
    p.stages[i].stage = id;
    p.stages[i].separate_rnn = p.model.separate_rnn;
  }

  const int n = cfg.get_int("ensemble", "members", 3);
  if (n < 1) throw ConfigError("ensemble.members must be positive");
  std::vector<AlignMethod> aligns = {AlignMethod::kLinear, AlignMethod::kAvgPool,
                                     AlignMethod::kNearestExact};
  if (cfg.has("ensemble", "aligns")) {
    aligns.clear();
    for (const auto& name : cfg.get_list("ensemble", "aligns"))
      aligns.push_back(align_method_from_name(name));
    if (aligns.empty()) throw ConfigError("ensemble.aligns must not be empty");
  }
  std::vector<std::uint64_t> seeds;
  if (cfg.has("ensemble", "seeds")) {
    for (const auto& item : cfg.get_list("ensemble", "seeds")) {
      try {
        seeds.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw ConfigError("ensemble.seeds has an invalid entry '" + item + "'");
      }
    }
    if (static_cast<int>(seeds.size()) != n)
      throw ConfigError("ensemble.seeds must list one seed per member");
  } else {
    for (int k = 0; k < n; ++k)
      seeds.push_back(Rng::derive_seed(p.seed, kMemberSeedStream + k));
  }
  p.members.clear();
  for (int k = 0; k < n; ++k)
    p.members.push_back({seeds[k], aligns[k % aligns.size()]});
  return p;
}

const std::vector<std::string>& ablation_flags() {
  static const std::vector<std::string> flags = {
      "-DESED",           "-MAESTRO",        "-SSL-MAESTRO",
      "-MAPPING",         "+SSL-CLASS-MASK", "-SSL-CLASS-MASK",
      "+SEPARATE-RNN",    "+HARD-PSEUDO",    "+PSEUDO-ALL-CLASSES",
      "+PSEUDO-LOSS",
  };
  return flags;
}

void apply_ablation_flag(PipelineConfig& config, const std::string& flag) {
  auto each_stage = [&](auto&& mutate) {
    for (auto& s : config.stages) mutate(s);
  };
  if (flag == "-DESED") {
    each_stage([](StageConfig& s) { s.train_maestro_only = true; });
  } else if (flag == "-MAESTRO") {
    each_stage([](StageConfig& s) { s.train_desed_only = true; });
  } else if (flag == "-SSL-MAESTRO") {
    each_stage([](StageConfig& s) { s.ssl_on_maestro = false; });
  } else if (flag == "-MAPPING") {
    each_stage([](StageConfig& s) { s.use_class_mapping = false; });
  } else if (flag == "+SSL-CLASS-MASK") {
    each_stage([](StageConfig& s) { s.ssl_class_mask = true; });
  } else if (flag == "-SSL-CLASS-MASK") {
    each_stage([](StageConfig& s) { s.ssl_class_mask = false; });
  } else if (flag == "+SEPARATE-RNN") {
    config.model.separate_rnn = true;
    each_stage([](StageConfig& s) { s.separate_rnn = true; });
  } else if (flag == "+HARD-PSEUDO") {
    config.stages[static_cast<int>(StageId::kI2S1)].hard_pseudo = true;
    config.stages[static_cast<int>(StageId::kI2S2)].hard_pseudo = true;
  } else if (flag == "+PSEUDO-ALL-CLASSES") {
    config.stages[static_cast<int>(StageId::kI2S1)].pseudo_all_classes = true;
    config.stages[static_cast<int>(StageId::kI2S2)].pseudo_all_classes = true;
  } else if (flag == "+PSEUDO-LOSS") {
    config.stages[static_cast<int>(StageId::kI2S2)].use_pseudo_loss = true;
  } else {
    throw ConfigError("unknown ablation flag: " + flag);
  }
}

Posteriorgram ensemble_posteriorgram(const std::vector<const ToyModel*>& models,
                                     const ClipRecord& clip, double clip_duration) {
  if (models.empty()) throw DataError("ensemble fusion needs at least one member");
  const ClipRecord norm = Augmenter::passthrough(clip);

  Workspace ws;
  int out_frames = -1;
  int num_classes = -1;
  std::vector<std::vector<double>> logits;
  logits.reserve(models.size());
  for (const ToyModel* m : models) {
    ModelOutput out = m->forward(norm.features, norm.subset, ws);
    if (out_frames < 0) {
      out_frames = out.num_frames;
      num_classes = out.num_classes;
    } else if (out.num_frames != out_frames || out.num_classes != num_classes) {
      throw DataError("ensemble members disagree on the output grid");
    }
    logits.push_back(std::move(out.strong_logits));
  }
  const std::vector<double> fused = fuse_logits(logits, false);

  Posteriorgram post;
  post.clip_id = clip.clip_id;
  post.num_classes = num_classes;
  post.num_frames = clip.num_input_frames;
  post.frame_hop = clip_duration / clip.num_input_frames;
  post.scores.assign(static_cast<std::size_t>(num_classes) * post.num_frames, 0.0);
  const auto taps = alignment_taps(out_frames, post.num_frames, AlignMethod::kLinear);
  for (int c = 0; c < num_classes; ++c) {
    const std::size_t row = static_cast<std::size_t>(c) * out_frames;
    for (int t = 0; t < post.num_frames; ++t) {
      double v = 0.0;
      for (const auto& [idx, w] : taps[t]) v += w * fused[row + idx];
      post.at(c, t) = v;
    }
  }
  return post;
}

PipelineResult run_pipeline(const PipelineConfig& config, const Corpus& corpus,
                            std::ostream* progress) {
  if (config.iterations < 1 || config.iterations > 2)
    throw ConfigError("iterations must be 1 or 2");
  if (config.members.empty()) throw ConfigError("the ensemble needs at least one member");
  if (config.model.num_classes != corpus.vocab.num_classes())
    throw ConfigError("model classes do not match the corpus vocabulary");
  if (config.model.feature_bins != corpus.config.feature_bins ||
      config.model.input_frames != corpus.config.input_frames)
    throw ConfigError("model feature geometry does not match the corpus");
  if (config.model.t_out() != corpus.config.label_frames)
    throw ConfigError("corpus label frames do not match the model output grid");
  config.model.validate();
  for (const auto& s : config.stages)
    if (s.separate_rnn != config.model.separate_rnn)
      throw ConfigError("stage separate_rnn flags do not match the model");

  fs::create_directories(config.out_dir);
  const fs::path out(config.out_dir);
  std::ofstream log(out / "train_log.jsonl");
  if (!log) throw DataError("cannot write the training log in " + config.out_dir);

  auto stage_cfg = [&](StageId id) {
    StageConfig c = config.stages[static_cast<int>(id)];
    c.stage = id;
    return c;
  };

  std::vector<StageArtifacts> artifacts;
  auto record_stage = [&](StageId id, const StageResult& res, const StageConfig& cfg,
                          const std::string& ckpt) {
    res.best_model.save_checkpoint((out / ckpt).string());
    StageArtifacts a;
    a.stage = id;
    a.best = res.best;
    a.validation = stage_validation(res.best_model, corpus, cfg);
    a.checkpoint_hash = res.best_model.param_hash();
    artifacts.push_back(a);
  };

  // ---- Iteration 1, stage 1: CRNN from scratch, embedder frozen.
  say(progress, "training i1s1");
  ModelConfig first_init = config.model;
  first_init.init_seed = Rng::derive_seed(config.seed, kInitStream);
  const StageConfig s1_cfg = stage_cfg(StageId::kI1S1);
  const StageResult s1 = train_stage(ToyModel(first_init), s1_cfg, corpus, nullptr,
                                     Rng::derive_seed(config.seed, kTrainStream), &log);
  record_stage(StageId::kI1S1, s1, s1_cfg, "i1s1.ckpt");

  // ---- Iteration 1, stage 2: one fine-tuning run per ensemble member.
  const StageConfig s2_cfg = stage_cfg(StageId::kI1S2);
  std::vector<ToyModel> member_models;
  std::vector<MemberResult> member_results;
  for (std::size_t k = 0; k < config.members.size(); ++k) {
    const EnsembleMember& m = config.members[k];
    say(progress, "training i1s2 member " + std::to_string(k) + " (align " +
                      align_method_name(m.align) + ")");
    ModelConfig mc = config.model;
    mc.align = m.align;
    ToyModel init(mc);
    init.set_flat_values(s1.best_model.flat_values());
    const StageResult r = train_stage(init, s2_cfg, corpus, nullptr, m.seed, &log);
    r.best_model.save_checkpoint((out / ("i1s2_m" + std::to_string(k) + ".ckpt")).string());

    MemberResult mr;
    mr.seed = m.seed;
    mr.align = m.align;
    mr.best = r.best;
    mr.test_psds1 =
        evaluate_metrics(r.best_model, corpus, pointers_of(corpus.test_synth), {}).psds1;
    mr.checkpoint_hash = r.best_model.param_hash();
    member_results.push_back(mr);
    member_models.push_back(r.best_model);
  }

  std::size_t best_k = 0;
  for (std::size_t k = 1; k < member_results.size(); ++k)
    if (member_results[k].best.score > member_results[best_k].best.score) best_k = k;
  member_models[best_k].save_checkpoint((out / "i1s2.ckpt").string());
  {
    StageArtifacts a;
    a.stage = StageId::kI1S2;
    a.best = member_results[best_k].best;
    a.validation = stage_validation(member_models[best_k], corpus, s2_cfg);
    a.checkpoint_hash = member_results[best_k].checkpoint_hash;
    artifacts.push_back(a);
  }

  // ---- Ensemble fusion, evaluated on the synthetic test split.
  say(progress, "evaluating the stage-2 ensemble");
  std::vector<const ToyModel*> member_ptrs;
  for (const auto& m : member_models) member_ptrs.push_back(&m);
  const double ens_psds1 =
      ensemble_strong_psds1(member_ptrs, corpus, pointers_of(corpus.test_synth));
  const double ens_mpauc =
      ensemble_maestro_mpauc(member_ptrs, corpus, pointers_of(corpus.test_maestro));
  double best_member_psds1 = 0.0;
  for (const auto& mr : member_results)
    best_member_psds1 = std::max(best_member_psds1, mr.test_psds1);

  std::vector<std::uint64_t> provenance;
  ToyModel final_model = member_models[best_k];

  if (config.iterations >= 2) {
    // ---- Pseudo-label store from the iteration-1 ensemble.
    say(progress, "writing the pseudo-label store");
    const StageConfig s3_cfg = stage_cfg(StageId::kI2S1);
    PseudoPolicy policy;
    policy.hard = s3_cfg.hard_pseudo;
    policy.all_classes = s3_cfg.pseudo_all_classes;
    const PseudoStore store = build_pseudo_store(member_ptrs, corpus, policy);
    write_pseudo_store(store, (out / "pseudo").string(), corpus.vocab);
    provenance = store.provenance;

    // ---- Iteration 2, stage 1: fresh CRNN distilled from the ensemble.
    say(progress, "training i2s1");
    ModelConfig scratch = config.model;
    scratch.init_seed = Rng::derive_seed(config.seed, kScratchInitStream);
    const StageResult s3 =
        train_stage(ToyModel(scratch), s3_cfg, corpus, &store,
                    Rng::derive_seed(config.seed, kScratchTrainStream), &log);
    record_stage(StageId::kI2S1, s3, s3_cfg, "i2s1.ckpt");

    // ---- Iteration 2, stage 2.
    say(progress, "training i2s2");
    const StageConfig s4_cfg = stage_cfg(StageId::kI2S2);
    const StageResult s4 =
        train_stage(s3.best_model, s4_cfg, corpus,
                    s4_cfg.use_pseudo_loss ? &store : nullptr,
                    Rng::derive_seed(config.seed, kFinalTrainStream), &log);
    record_stage(StageId::kI2S2, s4, s4_cfg, "i2s2.ckpt");
    final_model = s4.best_model;
  }

  // ---- Optional boundary-postprocessing tuning on validation.
  double sebb_test_psds1 = -1.0;
  if (config.tune_sebb) {
    say(progress, "tuning boundary postprocessing");
    const auto strong_valid = [&] {
      std::vector<const ClipRecord*> v = pointers_of(corpus.valid_synth);
      for (const auto& c : corpus.valid_real) v.push_back(&c);
      return v;
    }();
    std::vector<Posteriorgram> valid_posts;
    for (const ClipRecord* clip : strong_valid)
      valid_posts.push_back(
          model_posteriorgram(final_model, *clip, corpus.config.clip_duration));
    const auto params = tune_sebb(valid_posts, strong_refs_for(corpus, strong_valid),
                                  corpus.vocab.num_classes(), PsdsParams{});
    std::ofstream sebb_out(out / "sebb.cfg");
    if (!sebb_out) throw DataError("cannot write sebb.cfg in " + config.out_dir);
    sebb_out << serialize_sebb_params(params, corpus.vocab);

    const auto strong_test = [&] {
      std::vector<const ClipRecord*> v = pointers_of(corpus.test_synth);
      for (const auto& c : corpus.test_real) v.push_back(&c);
      return v;
    }();
    std::vector<Posteriorgram> test_posts;
    for (const ClipRecord* clip : strong_test)
      test_posts.push_back(
          model_posteriorgram(final_model, *clip, corpus.config.clip_duration));
    const Detector detector = [&params](const Posteriorgram& post, double threshold) {
      EventList events = sebb_detect(post, params);
      EventList kept;
      kept.clip_id = events.clip_id;
      for (const auto& e : events.events)
        if (e.confidence >= threshold) kept.events.push_back(e);
      return kept;
    };
    sebb_test_psds1 =
        psds1(test_posts, strong_refs_for(corpus, strong_test), PsdsParams{}, detector);
  }

  // ---- Summary and the metrics CSV derived from it.
  std::vector<SummaryRow> rows;
  for (const auto& a : artifacts)
    rows.push_back({stage_name(a.stage), a.validation.psds1, a.validation.mpauc});
  rows.push_back({"ensemble", ens_psds1, ens_mpauc});

  {
    std::ofstream summary(out / "summary.cfg");
    if (!summary) throw DataError("cannot write summary.cfg in " + config.out_dir);
    summary << "[pipeline]\n";
    summary << "seed = " << config.seed << '\n';
    summary << "iterations = " << config.iterations << '\n';
    summary << "members = " << config.members.size() << '\n';
    summary << "tune_sebb = " << (config.tune_sebb ? "true" : "false") << '\n';
    for (const auto& a : artifacts) {
      summary << "\n[stage." << stage_name(a.stage) << "]\n";
      summary << "epoch = " << a.best.epoch << '\n';
      summary << "psds1_synth = " << format_double(a.best.psds1_synth) << '\n';
      summary << "psds1_real = " << format_double(a.best.psds1_real) << '\n';
      summary << "mpauc = " << format_double(a.best.mpauc) << '\n';
      summary << "score = " << format_double(a.best.score) << '\n';
      summary << "checkpoint_hash = " << a.checkpoint_hash << '\n';
    }
    for (std::size_t k = 0; k < member_results.size(); ++k) {
      const auto& mr = member_results[k];
      summary << "\n[member." << k << "]\n";
      summary << "seed = " << mr.seed << '\n';
      summary << "align = " << align_method_name(mr.align) << '\n';
      summary << "score = " << format_double(mr.best.score) << '\n';
      summary << "test_psds1 = " << format_double(mr.test_psds1) << '\n';
      summary << "checkpoint_hash = " << mr.checkpoint_hash << '\n';
    }
    summary << "\n[ensemble]\n";
    summary << "test_psds1 = " << format_double(ens_psds1) << '\n';
    summary << "test_mpauc = " << format_double(ens_mpauc) << '\n';
    summary << "best_member_test_psds1 = " << format_double(best_member_psds1) << '\n';
    std::string prov;
    for (std::size_t i = 0; i < provenance.size(); ++i) {
      if (i) prov += ',';
      prov += std::to_string(provenance[i]);
    }
    summary << "provenance = " << prov << '\n';
    if (config.tune_sebb) {
      summary << "\n[sebb]\n";
      summary << "test_psds1 = " << format_double(sebb_test_psds1) << '\n';
    }
    summary << "\n[metrics]\n";
    std::string labels;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i) labels += ", ";
      labels += rows[i].label;
    }
    summary << "rows = " << labels << '\n';
    for (const auto& r : rows) {
      summary << "\n[metrics." << r.label << "]\n";
      summary << "psds1 = " << format_double(r.psds1) << '\n';
      summary << "mpauc = " << format_double(r.mpauc) << '\n';
    }
  }

  const ConfigFile summary = ConfigFile::parse_file((out / "summary.cfg").string());
  std::ofstream csv(out / "metrics.csv");
  if (!csv) throw DataError("cannot write metrics.csv in " + config.out_dir);
  csv << render_summary_csv(summary);
  csv.close();

  say(progress, "wrote " + (out / "metrics.csv").string());

  PipelineResult result(std::move(final_model));
  result.stages = std::move(artifacts);
  result.members = std::move(member_results);
  result.ensemble_test_psds1 = ens_psds1;
  result.ensemble_test_mpauc = ens_mpauc;
  result.best_member_test_psds1 = best_member_psds1;
  result.pseudo_provenance = std::move(provenance);
  return result;
}

std::string render_summary_csv(const ConfigFile& summary) {
  std::vector<MetricRow> rows;
  for (const auto& label : summary.get_list("metrics", "rows")) {
    const std::string sec = "metrics." + label;
    rows.push_back({label, make_report(summary.get_double(sec, "psds1", 0.0),
                                       summary.get_double(sec, "mpauc", 0.0))});
  }
  return render_metrics_csv(rows);
}

}  // namespace hetsed
