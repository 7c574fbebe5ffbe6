#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "hetsed/augment.hpp"
#include "hetsed/config.hpp"
#include "hetsed/core.hpp"
#include "hetsed/eval.hpp"
#include "hetsed/ingest.hpp"
#include "hetsed/model.hpp"
#include "hetsed/pipeline.hpp"
#include "hetsed/postproc.hpp"
#include "hetsed/pseudo.hpp"
#include "hetsed/train.hpp"

namespace fs = std::filesystem;

namespace {

using namespace hetsed;

// Default output root: $HETSED_OUT_ROOT when set, else runs/.
std::string out_root() {
  const char* env = std::getenv("HETSED_OUT_ROOT");
  return (env != nullptr && *env != '\0') ? std::string(env) : std::string("runs");
}

std::string default_out(const std::string& leaf) { return out_root() + "/" + leaf; }

const char* bool_word(bool b) { return b ? "true" : "false"; }

// ---------------------------------------------------------------------------
// Resolved-configuration logging. Every run prints its configuration in the
// same format the --config files use, so a run can be replayed from its log.
// ---------------------------------------------------------------------------

void describe_corpus_config(std::ostream& os, const CorpusConfig& cc) {
  os << "[corpus]\n";
  for (int s = 0; s < kNumSubsets; ++s)
    os << subset_name(static_cast<Subset>(s)) << " = " << cc.train_clips[s] << '\n';
  os << "valid_clips = " << cc.valid_clips_per_split << '\n'
     << "test_clips = " << cc.test_clips_per_split << '\n'
     << "clip_duration = " << format_double(cc.clip_duration) << '\n'
     << "feature_bins = " << cc.feature_bins << '\n'
     << "input_frames = " << cc.input_frames << '\n'
     << "label_frames = " << cc.label_frames << '\n'
     << "desed_classes = " << cc.desed_classes << '\n'
     << "maestro_classes = " << cc.maestro_classes << '\n'
     << "event_rate = " << format_double(cc.event_rate) << '\n'
     << "noise_level = " << format_double(cc.noise_level) << '\n'
     << "seed = " << cc.seed << '\n';
}

void describe_model_config(std::ostream& os, const ModelConfig& m) {
  os << "[model]\n"
     << "feature_bins = " << m.feature_bins << '\n'
     << "input_frames = " << m.input_frames << '\n'
     << "cnn_ch1 = " << m.cnn_ch1 << '\n'
     << "cnn_ch2 = " << m.cnn_ch2 << '\n'
     << "embed_dim = " << m.embed_dim << '\n'
     << "embed_kernel = " << m.embed_kernel << '\n'
     << "embed_stride = " << m.embed_stride << '\n'
     << "hidden = " << m.hidden << '\n'
     << "align = " << align_method_name(m.align) << '\n'
     << "separate_rnn = " << bool_word(m.separate_rnn) << '\n'
     << "init_seed = " << m.init_seed << '\n'
     << "embedder_seed = " << m.embedder_seed << '\n';
}

void describe_augment_config(std::ostream& os, const AugmentConfig& a) {
  os << "[augment]\n"
     << "dir_p = " << format_double(a.dir.p) << '\n'
     << "wavmix_p = " << format_double(a.wavmix.p) << '\n'
     << "wavmix_alpha = " << format_double(a.wavmix.alpha) << '\n'
     << "freq_mixstyle_p = " << format_double(a.freq_mixstyle.p) << '\n'
     << "freq_mixstyle_alpha = " << format_double(a.freq_mixstyle.alpha) << '\n'
     << "mixup_p = " << format_double(a.mixup.p) << '\n'
     << "mixup_alpha = " << format_double(a.mixup.alpha) << '\n'
     << "filter_p = " << format_double(a.filter_augment.p) << '\n'
     << "freq_warp_p = " << format_double(a.freq_warp.p) << '\n'
     << "time_mask_lo = " << format_double(a.time_mask_lo) << '\n'
     << "time_mask_hi = " << format_double(a.time_mask_hi) << '\n'
     << "dir_db_limit = " << format_double(a.dir_db_limit) << '\n'
     << "filter_min_bands = " << a.filter_min_bands << '\n'
     << "filter_max_bands = " << a.filter_max_bands << '\n'
     << "filter_db = " << format_double(a.filter_db) << '\n'
     << "freq_warp_lo = " << format_double(a.freq_warp_lo) << '\n'
     << "freq_warp_hi = " << format_double(a.freq_warp_hi) << '\n';
}

void describe_stage_config(std::ostream& os, const StageConfig& sc) {
  os << '[' << stage_name(sc.stage) << "]\n"
     << "lr_cnn = " << format_double(sc.lr_cnn) << '\n'
     << "lr_rnn = " << format_double(sc.lr_rnn) << '\n'
     << "lr_tf = " << format_double(sc.lr_tf) << '\n'
     << "lr_dec = " << format_double(sc.lr_dec) << '\n'
     << "weight_decay = " << format_double(sc.weight_decay) << '\n'
     << "w_strong = " << format_double(sc.w_strong) << '\n'
     << "w_weak = " << format_double(sc.w_weak) << '\n'
     << "w_mt = " << format_double(sc.w_mt) << '\n'
     << "w_ict = " << format_double(sc.w_ict) << '\n'
     << "w_pseudo = " << format_double(sc.w_pseudo) << '\n'
     << "mt_tau = " << format_double(sc.mt_tau) << '\n'
     << "ict_alpha = " << format_double(sc.ict_alpha) << '\n'
     << "epochs = " << sc.epochs << '\n'
     << "steps_per_epoch = " << sc.steps_per_epoch << '\n';
  os << "batch = ";
  for (int i = 0; i < kNumSubsets; ++i)
    os << (i ? ", " : "") << sc.batch.counts[i];
  os << '\n'
     << "embedder_frozen = " << bool_word(sc.embedder_frozen) << '\n'
     << "use_pseudo_loss = " << bool_word(sc.use_pseudo_loss) << '\n'
     << "ssl_on_maestro = " << bool_word(sc.ssl_on_maestro) << '\n'
     << "ssl_class_mask = " << bool_word(sc.ssl_class_mask) << '\n'
     << "separate_rnn = " << bool_word(sc.separate_rnn) << '\n'
     << "hard_pseudo = " << bool_word(sc.hard_pseudo) << '\n'
     << "pseudo_all_classes = " << bool_word(sc.pseudo_all_classes) << '\n'
     << "train_desed_only = " << bool_word(sc.train_desed_only) << '\n'
     << "train_maestro_only = " << bool_word(sc.train_maestro_only) << '\n'
     << "use_class_mapping = " << bool_word(sc.use_class_mapping) << '\n';
}

void describe_pipeline_config(std::ostream& os, const PipelineConfig& pc) {
  describe_corpus_config(os, pc.corpus);
  os << '\n';
  describe_model_config(os, pc.model);
  os << '\n';
  describe_augment_config(os, pc.stages[0].augment);
  os << '\n';
  for (const auto& sc : pc.stages) {
    describe_stage_config(os, sc);
    os << '\n';
  }
  os << "[ensemble]\n"
     << "members = " << pc.members.size() << '\n';
  os << "seeds = ";
  for (std::size_t i = 0; i < pc.members.size(); ++i)
    os << (i ? ", " : "") << pc.members[i].seed;
  os << "\naligns = ";
  for (std::size_t i = 0; i < pc.members.size(); ++i)
    os << (i ? ", " : "") << align_method_name(pc.members[i].align);
  os << "\n\n[pipeline]\n"
     << "seed = " << pc.seed << '\n'
     << "iterations = " << pc.iterations << '\n'
     << "tune_sebb = " << bool_word(pc.tune_sebb) << '\n'
     << "out_dir = " << pc.out_dir << '\n';
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

void check_model_matches(const ToyModel& model, const Corpus& corpus) {
  const ModelConfig& m = model.config();
  if (m.num_classes != corpus.vocab.num_classes())
    throw ConfigError("model classes do not match the corpus vocabulary");
  if (m.feature_bins != corpus.config.feature_bins ||
      m.input_frames != corpus.config.input_frames)
    throw ConfigError("model feature geometry does not match the corpus");
}

std::vector<const ClipRecord*> pooled_strong(const Corpus& corpus, bool test_split) {
  std::vector<const ClipRecord*> clips;
  for (const auto& c : (test_split ? corpus.test_synth : corpus.valid_synth))
    clips.push_back(&c);
  for (const auto& c : (test_split ? corpus.test_real : corpus.valid_real))
    clips.push_back(&c);
  return clips;
}

std::vector<const ClipRecord*> maestro_split(const Corpus& corpus, bool test_split) {
  std::vector<const ClipRecord*> clips;
  for (const auto& c : (test_split ? corpus.test_maestro : corpus.valid_maestro))
    clips.push_back(&c);
  return clips;
}

std::map<std::string, EventList> strong_refs_of(const Corpus& corpus,
                                                const std::vector<const ClipRecord*>& clips) {
  std::map<std::string, EventList> refs;
  for (const ClipRecord* clip : clips) {
    auto it = corpus.strong_refs.find(clip->clip_id);
    if (it == corpus.strong_refs.end())
      throw DataError("no reference events for clip " + clip->clip_id);
    refs.emplace(clip->clip_id, it->second);
  }
  return refs;
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// synth-data
// ---------------------------------------------------------------------------

struct SynthOpts {
  std::string config;
  std::string out = default_out("corpus");
  std::uint64_t seed = 0;
  bool have_seed = false;
};

void run_synth_data(const SynthOpts& o) {
  CorpusConfig cc;
  if (!o.config.empty()) cc = corpus_config_from(ConfigFile::parse_file(o.config));
  if (o.have_seed) cc.seed = o.seed;

  std::cout << "# resolved configuration\n";
  describe_corpus_config(std::cout, cc);

  const Corpus corpus = generate_synthetic_corpus(cc);
  write_corpus(corpus, o.out);
  std::cout << "\nwrote " << corpus.train[0].size() + corpus.train[1].size() +
                   corpus.train[2].size() + corpus.train[3].size() + corpus.train[4].size()
            << " train clips to " << o.out << '\n'
            << "corpus hash = " << hash_directory(o.out) << '\n';
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string config;
  std::string stage = "i1s1";
  std::string data;
  std::string out = default_out("train");
  std::string init;
  std::string pseudo;
  std::uint64_t seed = 1;
};

void run_train(const TrainOpts& o) {
  const Corpus corpus = load_corpus(o.data);
  ConfigFile cfg;
  if (!o.config.empty()) cfg = ConfigFile::parse_file(o.config);
  const StageId stage = stage_from_name(o.stage);

  ModelConfig mc = model_config_from(cfg, corpus.vocab.num_classes());
  mc.feature_bins = corpus.config.feature_bins;
  mc.input_frames = corpus.config.input_frames;

  StageConfig base = default_stage_config(stage);
  base.augment = augment_config_from(cfg);
  StageConfig sc = stage_config_from(cfg, stage_name(stage), base);
  sc.stage = stage;
  sc.separate_rnn = mc.separate_rnn;

  const bool second_stage = stage == StageId::kI1S2 || stage == StageId::kI2S2;
  if (second_stage && o.init.empty())
    throw ConfigError(std::string("stage ") + stage_name(stage) +
                      " fine-tunes an earlier checkpoint; pass --init");

  std::optional<ToyModel> model;
  if (!o.init.empty()) {
    model.emplace(ToyModel::load_checkpoint(o.init));
    check_model_matches(*model, corpus);
    sc.separate_rnn = model->config().separate_rnn;
  } else {
    model.emplace(mc);
  }

  PseudoStore store;
  bool have_store = false;
  if (!o.pseudo.empty()) {
    store = load_pseudo_store(o.pseudo, corpus.vocab);
    have_store = true;
  }

  std::cout << "# resolved configuration\n";
  describe_stage_config(std::cout, sc);
  std::cout << "\n[run]\nseed = " << o.seed << "\ninit_hash = " << model->param_hash()
            << "\n\n";

  fs::create_directories(o.out);
  std::ofstream log(fs::path(o.out) / "train_log.jsonl", std::ios::binary);
  if (!log) throw DataError("cannot write the training log in " + o.out);

  const StageResult result =
      train_stage(*model, sc, corpus, have_store ? &store : nullptr, o.seed, &log);
  result.best_model.save_checkpoint((fs::path(o.out) / "best.ckpt").string());

  std::cout << "best epoch = " << result.best.epoch << '\n'
            << "selection score = " << format_double(result.best.score) << '\n'
            << "wrote " << o.out << "/best.ckpt\n";
}

// ---------------------------------------------------------------------------
// pseudo-label
// ---------------------------------------------------------------------------

struct PseudoOpts {
  std::string data;
  std::string out = default_out("pseudo");
  std::vector<std::string> models;
  bool hard = false;
  bool all_classes = false;
};

void run_pseudo_label(const PseudoOpts& o) {
  const Corpus corpus = load_corpus(o.data);
  std::vector<ToyModel> models;
  for (const auto& path : o.models) models.push_back(ToyModel::load_checkpoint(path));
  std::vector<const ToyModel*> ptrs;
  for (const auto& m : models) {
    check_model_matches(m, corpus);
    ptrs.push_back(&m);
  }

  const PseudoPolicy policy{o.hard, o.all_classes};
  std::cout << "# resolved configuration\n[pseudo]\nmembers = " << ptrs.size()
            << "\nhard = " << bool_word(policy.hard)
            << "\nall_classes = " << bool_word(policy.all_classes) << "\n\n";

  const PseudoStore store = build_pseudo_store(ptrs, corpus, policy);
  write_pseudo_store(store, o.out, corpus.vocab);
  std::cout << "wrote " << store.targets.size() << " target grids to " << o.out << '\n';
}

// ---------------------------------------------------------------------------
// postproc-tune
// ---------------------------------------------------------------------------

struct PostprocOpts {
  std::string data;
  std::string model;
  std::string out = default_out("sebb_params.tsv");
};

void run_postproc_tune(const PostprocOpts& o) {
  const Corpus corpus = load_corpus(o.data);
  const ToyModel model = ToyModel::load_checkpoint(o.model);
  check_model_matches(model, corpus);

  const auto clips = pooled_strong(corpus, /*test_split=*/false);
  std::vector<Posteriorgram> posts;
  for (const ClipRecord* clip : clips)
    posts.push_back(model_posteriorgram(model, *clip, corpus.config.clip_duration));

  std::cout << "# resolved configuration\n[postproc]\nvalidation_clips = " << clips.size()
            << "\nmodel_hash = " << model.param_hash() << "\n\n";

  const auto params = tune_sebb(posts, strong_refs_of(corpus, clips),
                                corpus.vocab.num_classes(), PsdsParams{});
  const std::string text = serialize_sebb_params(params, corpus.vocab);
  write_text_file(o.out, text);
  std::cout << text << "wrote " << o.out << '\n';
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string data;
  std::string model;
  std::string sebb;
  std::string out;
  std::string split = "test";
};

void run_evaluate(const EvalOpts& o) {
  if (o.split != "test" && o.split != "valid")
    throw ConfigError("split must be test or valid");
  const bool test_split = o.split == "test";

  const Corpus corpus = load_corpus(o.data);
  const ToyModel model = ToyModel::load_checkpoint(o.model);
  check_model_matches(model, corpus);

  const auto strong = pooled_strong(corpus, test_split);
  const auto maestro = maestro_split(corpus, test_split);

  std::cout << "# resolved configuration\n[evaluate]\nsplit = " << o.split
            << "\nstrong_clips = " << strong.size() << "\nmaestro_clips = " << maestro.size()
            << "\nmodel_hash = " << model.param_hash()
            << "\npostproc = " << (o.sebb.empty() ? "median" : o.sebb) << "\n\n";

  MetricReport report = evaluate_metrics(model, corpus, strong, maestro);
  if (!o.sebb.empty()) {
    std::ifstream in(o.sebb);
    if (!in) throw DataError("cannot read " + o.sebb);
    const auto params = parse_sebb_params(in, corpus.vocab);
    std::vector<Posteriorgram> posts;
    for (const ClipRecord* clip : strong)
      posts.push_back(model_posteriorgram(model, *clip, corpus.config.clip_duration));
    const Detector detector = [&params](const Posteriorgram& post, double threshold) {
      EventList events = sebb_detect(post, params);
      EventList kept;
      kept.clip_id = events.clip_id;
      for (const auto& e : events.events)
        if (e.confidence >= threshold) kept.events.push_back(e);
      return kept;
    };
    report = make_report(
        psds1(posts, strong_refs_of(corpus, strong), PsdsParams{}, detector), report.mpauc);
  }

  const std::string csv = render_metrics_csv({{o.split, report}});
  std::cout << csv;
  if (!o.out.empty()) {
    write_text_file(o.out, csv);
    std::cout << "wrote " << o.out << '\n';
  }
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

struct PipelineOpts {
  std::string config;
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  bool have_seed = false;
};

void run_pipeline_cmd(const PipelineOpts& o) {
  ConfigFile cfg;
  if (!o.config.empty()) cfg = ConfigFile::parse_file(o.config);
  if (o.have_seed) cfg.set("pipeline", "seed", std::to_string(o.seed));
  if (!o.out.empty())
    cfg.set("pipeline", "out_dir", o.out);
  else if (!cfg.has("pipeline", "out_dir"))
    cfg.set("pipeline", "out_dir", default_out("pipeline"));

  PipelineConfig pc = pipeline_config_from(cfg);

  std::optional<Corpus> corpus;
  if (!o.data.empty()) {
    corpus.emplace(load_corpus(o.data));
    pc.corpus = corpus->config;
    pc.model.feature_bins = corpus->config.feature_bins;
    pc.model.input_frames = corpus->config.input_frames;
    pc.model.num_classes = corpus->vocab.num_classes();
  } else {
    corpus.emplace(generate_synthetic_corpus(pc.corpus));
  }

  std::cout << "# resolved configuration\n";
  describe_pipeline_config(std::cout, pc);
  std::cout << '\n';

  const PipelineResult result = run_pipeline(pc, *corpus, &std::cout);

  std::cout << "final validation rank score = "
            << format_double(result.stages.back().validation.rank_score) << '\n'
            << "ensemble test psds1 = " << format_double(result.ensemble_test_psds1)
            << " (best member " << format_double(result.best_member_test_psds1) << ")\n"
            << "artifacts in " << pc.out_dir << '\n';
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateOpts {
  std::string config;
  std::string out = default_out("ablate");
  std::vector<std::string> flags;
  int jobs = 1;
  std::uint64_t seed = 0;
  bool have_seed = false;
};

// -DESED -> no-desed, +HARD-PSEUDO -> hard-pseudo.
std::string arm_dir_name(const std::string& flag) {
  std::string name = flag[0] == '-' ? "no-" : "";
  for (std::size_t i = 1; i < flag.size(); ++i)
    name += static_cast<char>(std::tolower(static_cast<unsigned char>(flag[i])));
  return name;
}

struct ArmOutcome {
  std::string name;
  std::string flag;
  bool desed_only = false;    // mpAUC has no meaning
  bool maestro_only = false;  // PSDS1 has no meaning
  MetricReport validation;
};

std::string ablation_csv(const std::vector<ArmOutcome>& rows) {
  std::string out = "label,mpauc,psds1,rank_score\n";
  for (const auto& r : rows) {
    out += r.name + ',';
    out += (r.desed_only ? "-" : format_double(r.validation.mpauc)) + ",";
    out += (r.maestro_only ? "-" : format_double(r.validation.psds1)) + ",";
    out += (r.desed_only || r.maestro_only ? "-" : format_double(r.validation.rank_score));
    out += '\n';
  }
  return out;
}

std::string ablation_markdown(const std::vector<ArmOutcome>& rows) {
  std::string out = "| Arm | Flag | mpAUC | PSDS1 | Rank Score |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += "| " + r.name + " | " + (r.flag.empty() ? "" : "`" + r.flag + "`") + " | ";
    out += (r.desed_only ? "-" : format_double(r.validation.mpauc)) + " | ";
    out += (r.maestro_only ? "-" : format_double(r.validation.psds1)) + " | ";
    out += (r.desed_only || r.maestro_only ? "-" : format_double(r.validation.rank_score));
    out += " |\n";
  }
  return out;
}

void run_ablate(const AblateOpts& o) {
  ConfigFile cfg;
  if (!o.config.empty()) cfg = ConfigFile::parse_file(o.config);
  if (o.have_seed) cfg.set("pipeline", "seed", std::to_string(o.seed));

  // Arm list: baseline plus one arm per flag. Explicit --flag selections run
  // exactly those arms ("baseline" is accepted as a flag spelling).
  std::vector<std::pair<std::string, std::string>> arms;  // dir name, flag
  if (o.flags.empty()) {
    arms.emplace_back("baseline", "");
    for (const auto& f : ablation_flags()) arms.emplace_back(arm_dir_name(f), f);
  } else {
    for (const auto& f : o.flags) {
      if (f == "baseline") {
        arms.emplace_back("baseline", "");
        continue;
      }
      const auto& known = ablation_flags();
      if (std::find(known.begin(), known.end(), f) == known.end())
        throw ConfigError("unknown ablation flag: " + f);
      arms.emplace_back(arm_dir_name(f), f);
    }
  }

  const PipelineConfig base = pipeline_config_from(cfg);
  const Corpus corpus = generate_synthetic_corpus(base.corpus);

  const int jobs = std::max(1, std::min(o.jobs, static_cast<int>(arms.size())));
  std::cout << "# resolved configuration\n[ablate]\nseed = " << base.seed
            << "\njobs = " << jobs << "\nout = " << o.out << "\narms = ";
  for (std::size_t i = 0; i < arms.size(); ++i)
    std::cout << (i ? ", " : "") << arms[i].first;
  std::cout << "\n\n";

  std::vector<ArmOutcome> outcomes(arms.size());
  std::vector<std::exception_ptr> errors(arms.size());
  std::atomic<std::size_t> next{0};

  // The corpus is shared read-only across arms; every arm trains into its
  // own directory, so the workers never touch common state.
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= arms.size()) return;
      try {
        PipelineConfig pc = pipeline_config_from(cfg);
        if (!arms[i].second.empty()) apply_ablation_flag(pc, arms[i].second);
        pc.out_dir = o.out + "/" + arms[i].first;
        const PipelineResult r = run_pipeline(pc, corpus, nullptr);
        ArmOutcome& arm = outcomes[i];
        arm.name = arms[i].first;
        arm.flag = arms[i].second;
        const StageConfig& last = pc.stages[kNumStages - 1];
        arm.desed_only = last.train_desed_only;
        arm.maestro_only = last.train_maestro_only;
        arm.validation = r.stages.back().validation;
      } catch (...) {
        errors[i] = std::current_exception();
        return;
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  const std::string csv = ablation_csv(outcomes);
  write_text_file(fs::path(o.out) / "ablation.csv", csv);
  write_text_file(fs::path(o.out) / "ablation.md", ablation_markdown(outcomes));
  std::cout << csv << "wrote " << o.out << "/ablation.csv and ablation.md\n";
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOpts {
  std::string run;
};

void run_report(const ReportOpts& o) {
  const fs::path run(o.run);
  const ConfigFile summary = ConfigFile::parse_file((run / "summary.cfg").string());
  const std::string csv = render_summary_csv(summary);
  write_text_file(run / "metrics.csv", csv);
  std::cout << csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sound event detection on heterogeneous data: synthetic corpus, "
               "two-iteration training, ensembling, evaluation and reports",
               "hetsed"};
  app.require_subcommand(1);

  auto synth = std::make_shared<SynthOpts>();
  {
    CLI::App* sub = app.add_subcommand("synth-data", "Generate the synthetic corpus");
    sub->add_option("--config", synth->config, "experiment configuration file");
    sub->add_option("--out", synth->out, "corpus directory")->capture_default_str();
    auto* seed = sub->add_option("--seed", synth->seed, "corpus seed override");
    sub->callback([synth, seed]() {
      synth->have_seed = seed->count() > 0;
      run_synth_data(*synth);
    });
  }

  auto train = std::make_shared<TrainOpts>();
  {
    CLI::App* sub = app.add_subcommand("train", "Train one stage on a stored corpus");
    sub->add_option("--config", train->config, "experiment configuration file");
    sub->add_option("--stage", train->stage, "i1s1, i1s2, i2s1 or i2s2")
        ->capture_default_str();
    sub->add_option("--data", train->data, "corpus directory")->required();
    sub->add_option("--out", train->out, "run directory")->capture_default_str();
    sub->add_option("--init", train->init, "checkpoint to fine-tune (stage 2)");
    sub->add_option("--pseudo", train->pseudo, "pseudo-label store directory");
    sub->add_option("--seed", train->seed, "training seed")->capture_default_str();
    sub->callback([train]() { run_train(*train); });
  }

  auto pseudo = std::make_shared<PseudoOpts>();
  {
    CLI::App* sub =
        app.add_subcommand("pseudo-label", "Fuse member checkpoints into soft targets");
    sub->add_option("--data", pseudo->data, "corpus directory")->required();
    sub->add_option("--models", pseudo->models, "member checkpoints")->required();
    sub->add_option("--out", pseudo->out, "store directory")->capture_default_str();
    sub->add_flag("--hard", pseudo->hard, "threshold fused targets at 0.5");
    sub->add_flag("--all-classes", pseudo->all_classes,
                  "widen the pseudo loss mask to the union");
    sub->callback([pseudo]() { run_pseudo_label(*pseudo); });
  }

  auto postproc = std::make_shared<PostprocOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "postproc-tune", "Tune boundary postprocessing on the validation split");
    sub->add_option("--data", postproc->data, "corpus directory")->required();
    sub->add_option("--model", postproc->model, "checkpoint to tune for")->required();
    sub->add_option("--out", postproc->out, "parameter file")->capture_default_str();
    sub->callback([postproc]() { run_postproc_tune(*postproc); });
  }

  auto eval = std::make_shared<EvalOpts>();
  {
    CLI::App* sub = app.add_subcommand("evaluate", "Score a checkpoint on a split");
    sub->add_option("--data", eval->data, "corpus directory")->required();
    sub->add_option("--model", eval->model, "checkpoint")->required();
    sub->add_option("--sebb", eval->sebb, "boundary parameter file (default: median filter)");
    sub->add_option("--split", eval->split, "test or valid")->capture_default_str();
    sub->add_option("--out", eval->out, "metrics CSV path");
    sub->callback([eval]() { run_evaluate(*eval); });
  }

  auto pipe = std::make_shared<PipelineOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "pipeline", "Run the full two-iteration schedule with ensembling");
    sub->add_option("--config", pipe->config, "experiment configuration file");
    sub->add_option("--data", pipe->data, "pre-generated corpus (default: generate)");
    sub->add_option("--out", pipe->out, "run directory");
    auto* seed = sub->add_option("--seed", pipe->seed, "pipeline seed override");
    sub->callback([pipe, seed]() {
      pipe->have_seed = seed->count() > 0;
      run_pipeline_cmd(*pipe);
    });
  }

  auto ablate = std::make_shared<AblateOpts>();
  {
    CLI::App* sub =
        app.add_subcommand("ablate", "Run single-flag experiment arms and compare");
    sub->add_option("--config", ablate->config, "experiment configuration file");
    sub->add_option("--flag", ablate->flags,
                    "arm to run, e.g. --flag=-MAESTRO (default: baseline plus all)");
    sub->add_option("--out", ablate->out, "output root")->capture_default_str();
    sub->add_option("--jobs", ablate->jobs, "worker threads")->capture_default_str();
    auto* seed = sub->add_option("--seed", ablate->seed, "pipeline seed override");
    sub->callback([ablate, seed]() {
      ablate->have_seed = seed->count() > 0;
      run_ablate(*ablate);
    });
  }

  auto report = std::make_shared<ReportOpts>();
  {
    CLI::App* sub =
        app.add_subcommand("report", "Regenerate the metrics CSV of a finished run");
    sub->add_option("--run", report->run, "run directory with summary.cfg")->required();
    sub->callback([report]() { run_report(*report); });
  }

  // Ablation flag spellings start with '-' or '+'; fold the value into the
  // option token so the parser does not read it as a new option.
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--flag" && i + 1 < argc) {
      args.push_back(a + "=" + argv[++i]);
    } else {
      args.push_back(std::move(a));
    }
  }
  std::reverse(args.begin(), args.end());

  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const hetsed::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const hetsed::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const hetsed::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
