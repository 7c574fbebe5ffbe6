#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hetsed/pipeline.hpp"

using namespace hetsed;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("hetsed_pipeline_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

CorpusConfig pipeline_corpus_config() {
  CorpusConfig cc;
  cc.train_clips = {4, 3, 3, 6, 6};
  cc.valid_clips_per_split = 3;
  cc.test_clips_per_split = 3;
  cc.feature_bins = 16;
  cc.input_frames = 48;
  cc.label_frames = 12;
  cc.seed = 5;
  return cc;
}

const Corpus& pipeline_corpus() {
  static const Corpus corpus = generate_synthetic_corpus(pipeline_corpus_config());
  return corpus;
}

PipelineConfig quick_pipeline_config(const fs::path& out_dir) {
  PipelineConfig p = default_pipeline_config();
  p.corpus = pipeline_corpus_config();
  p.model.feature_bins = 16;
  p.model.input_frames = 48;
  p.model.cnn_ch1 = 4;
  p.model.cnn_ch2 = 8;
  p.model.embed_dim = 8;
  p.model.hidden = 12;
  for (auto& s : p.stages) {
    s.epochs = 1;
    s.steps_per_epoch = 1;
    s.batch.counts = {2, 2, 2, 3, 3};
  }
  p.members = {{101, AlignMethod::kLinear}, {202, AlignMethod::kAvgPool}};
  p.out_dir = out_dir.string();
  p.seed = 3;
  return p;
}

}  // namespace

TEST_CASE("default pipeline configuration is a full two-iteration run") {
  const PipelineConfig p = default_pipeline_config();
  CHECK(p.iterations == 2);
  CHECK(p.members.size() == 3);
  CHECK(p.model.num_classes == p.corpus.desed_classes + p.corpus.maestro_classes);
  for (int i = 0; i < kNumStages; ++i)
    CHECK(p.stages[i].stage == static_cast<StageId>(i));
  // Members vary both seed and alignment.
  CHECK(p.members[0].align != p.members[1].align);
  CHECK(p.members[0].seed != p.members[1].seed);
}

TEST_CASE("pipeline configuration parses from the experiment file") {
  const auto cfg = ConfigFile::parse_text(
      "[corpus]\n"
      "feature_bins = 24\n"
      "input_frames = 64\n"
      "label_frames = 16\n"
      "[pipeline]\n"
      "seed = 9\n"
      "iterations = 1\n"
      "tune_sebb = true\n"
      "out_dir = runs/exp1\n"
      "[ensemble]\n"
      "members = 2\n"
      "aligns = avg_pool, nearest_exact\n"
      "seeds = 7, 8\n"
      "[i1s1]\n"
      "epochs = 3\n");
  const PipelineConfig p = pipeline_config_from(cfg);
  CHECK(p.seed == 9);
  CHECK(p.iterations == 1);
  CHECK(p.tune_sebb);
  CHECK(p.out_dir == "runs/exp1");
  CHECK(p.model.feature_bins == 24);   // geometry follows the corpus
  CHECK(p.model.input_frames == 64);
  CHECK(p.members.size() == 2);
  CHECK(p.members[0].seed == 7);
  CHECK(p.members[0].align == AlignMethod::kAvgPool);
  CHECK(p.members[1].align == AlignMethod::kNearestExact);
  CHECK(p.stages[0].epochs == 3);
  CHECK(p.stages[1].epochs == 20);  // untouched default

  CHECK_THROWS_AS(
      pipeline_config_from(ConfigFile::parse_text("[pipeline]\niterations = 3\n")),
      ConfigError);
  CHECK_THROWS_AS(pipeline_config_from(ConfigFile::parse_text(
                      "[ensemble]\nmembers = 2\nseeds = 1, 2, 3\n")),
                  ConfigError);
  CHECK_THROWS_AS(
      pipeline_config_from(ConfigFile::parse_text("[ensemble]\nmembers = 0\n")),
      ConfigError);
}

TEST_CASE("every ablation flag maps onto its configuration switch") {
  CHECK(ablation_flags().size() == 10);
  auto fresh = [] { return default_pipeline_config(); };

  PipelineConfig p = fresh();
  apply_ablation_flag(p, "-DESED");
  for (const auto& s : p.stages) CHECK(s.train_maestro_only);

  p = fresh();
  apply_ablation_flag(p, "-MAESTRO");
  for (const auto& s : p.stages) CHECK(s.train_desed_only);

  p = fresh();
  apply_ablation_flag(p, "-SSL-MAESTRO");
  for (const auto& s : p.stages) CHECK_FALSE(s.ssl_on_maestro);

  p = fresh();
  apply_ablation_flag(p, "-MAPPING");
  for (const auto& s : p.stages) CHECK_FALSE(s.use_class_mapping);

  p = fresh();
  apply_ablation_flag(p, "+SSL-CLASS-MASK");
  for (const auto& s : p.stages) CHECK(s.ssl_class_mask);

  p = fresh();
  apply_ablation_flag(p, "-SSL-CLASS-MASK");
  for (const auto& s : p.stages) CHECK_FALSE(s.ssl_class_mask);

  p = fresh();
  apply_ablation_flag(p, "+SEPARATE-RNN");
  CHECK(p.model.separate_rnn);
  for (const auto& s : p.stages) CHECK(s.separate_rnn);

  p = fresh();
  apply_ablation_flag(p, "+HARD-PSEUDO");
  CHECK(p.stages[static_cast<int>(StageId::kI2S1)].hard_pseudo);
  CHECK_FALSE(p.stages[static_cast<int>(StageId::kI1S1)].hard_pseudo);

  p = fresh();
  apply_ablation_flag(p, "+PSEUDO-ALL-CLASSES");
  CHECK(p.stages[static_cast<int>(StageId::kI2S1)].pseudo_all_classes);

  p = fresh();
  apply_ablation_flag(p, "+PSEUDO-LOSS");
  CHECK(p.stages[static_cast<int>(StageId::kI2S2)].use_pseudo_loss);
  CHECK(p.stages[static_cast<int>(StageId::kI2S1)].use_pseudo_loss);  // already default

  p = fresh();
  CHECK_THROWS_AS(apply_ablation_flag(p, "+UNKNOWN"), ConfigError);
}

TEST_CASE("a single-member ensemble reproduces that member's posteriorgram") {
  const auto& corpus = pipeline_corpus();
  ModelConfig mc;
  mc.feature_bins = 16;
  mc.input_frames = 48;
  mc.num_classes = 8;
  mc.cnn_ch1 = 4;
  mc.cnn_ch2 = 8;
  mc.embed_dim = 8;
  mc.hidden = 12;
  const ToyModel model(mc);
  const ClipRecord& clip = corpus.test_synth[0];

  const Posteriorgram single =
      ensemble_posteriorgram({&model}, clip, corpus.config.clip_duration);
  const Posteriorgram direct =
      model_posteriorgram(model, clip, corpus.config.clip_duration);
  REQUIRE(single.scores.size() == direct.scores.size());
  for (std::size_t i = 0; i < single.scores.size(); ++i)
    CHECK(std::abs(single.scores[i] - direct.scores[i]) <= 1e-15);

  // Members with different output geometry cannot fuse.
  ModelConfig other = mc;
  other.num_classes = 7;
  const ToyModel odd(other);
  CHECK_THROWS_AS(
      ensemble_posteriorgram({&model, &odd}, clip, corpus.config.clip_duration),
      DataError);
  CHECK_THROWS_AS(ensemble_posteriorgram({}, clip, corpus.config.clip_duration),
                  DataError);
}

TEST_CASE("the full pipeline produces every artifact and is reproducible") {
  const auto& corpus = pipeline_corpus();
  TempDir dir_a, dir_b;

  const PipelineConfig cfg_a = quick_pipeline_config(dir_a.path / "run");
  const PipelineResult res = run_pipeline(cfg_a, corpus);

  REQUIRE(res.stages.size() == 4);
  CHECK(res.stages[0].stage == StageId::kI1S1);
  CHECK(res.stages[1].stage == StageId::kI1S2);
  CHECK(res.stages[2].stage == StageId::kI2S1);
  CHECK(res.stages[3].stage == StageId::kI2S2);
  for (const auto& a : res.stages) {
    CHECK(a.best.score == a.best.psds1_synth + a.best.psds1_real + a.best.mpauc);
    CHECK(a.validation.rank_score == a.validation.psds1 + a.validation.mpauc);
  }

  const fs::path out = dir_a.path / "run";
  for (const char* name : {"i1s1.ckpt", "i1s2.ckpt", "i1s2_m0.ckpt", "i1s2_m1.ckpt",
                           "i2s1.ckpt", "i2s2.ckpt", "summary.cfg", "metrics.csv",
                           "train_log.jsonl"})
    CHECK(fs::exists(out / name));

  // The pseudo store holds every training clip and names its makers.
  const PseudoStore store = load_pseudo_store((out / "pseudo").string(), corpus.vocab);
  std::size_t total = 0;
  for (const auto& subset : corpus.train) total += subset.size();
  CHECK(store.targets.size() == total);
  REQUIRE(res.pseudo_provenance.size() == 2);
  CHECK(store.provenance == res.pseudo_provenance);
  REQUIRE(res.members.size() == 2);
  CHECK(res.pseudo_provenance[0] == res.members[0].checkpoint_hash);
  CHECK(res.pseudo_provenance[1] == res.members[1].checkpoint_hash);

  // The stored CSV is exactly what the summary renders to.
  const ConfigFile summary = ConfigFile::parse_file((out / "summary.cfg").string());
  CHECK(slurp(out / "metrics.csv") == render_summary_csv(summary));
  const std::string csv = slurp(out / "metrics.csv");
  CHECK(csv.rfind("label,mpauc,psds1,rank_score", 0) == 0);
  CHECK(csv.find("i2s2") != std::string::npos);
  CHECK(csv.find("ensemble") != std::string::npos);

  // An identical run in another directory writes identical artifacts.
  PipelineConfig cfg_b = cfg_a;
  cfg_b.out_dir = (dir_b.path / "run").string();
  const PipelineResult rerun = run_pipeline(cfg_b, corpus);
  CHECK(rerun.final_model.param_hash() == res.final_model.param_hash());
  CHECK(slurp(dir_b.path / "run" / "summary.cfg") == slurp(out / "summary.cfg"));
  CHECK(slurp(dir_b.path / "run" / "train_log.jsonl") == slurp(out / "train_log.jsonl"));
}

TEST_CASE("a single-iteration pipeline stops after the first ensemble") {
  const auto& corpus = pipeline_corpus();
  TempDir dir;
  PipelineConfig cfg = quick_pipeline_config(dir.path / "run");
  cfg.iterations = 1;

  const PipelineResult res = run_pipeline(cfg, corpus);
  CHECK(res.stages.size() == 2);
  CHECK(res.pseudo_provenance.empty());
  const fs::path out = dir.path / "run";
  CHECK_FALSE(fs::exists(out / "pseudo"));
  CHECK_FALSE(fs::exists(out / "i2s1.ckpt"));
  CHECK(fs::exists(out / "i1s2.ckpt"));

  // The kept model is the best member by selection score.
  std::size_t best = 0;
  for (std::size_t k = 1; k < res.members.size(); ++k)
    if (res.members[k].best.score > res.members[best].best.score) best = k;
  CHECK(res.final_model.param_hash() == res.members[best].checkpoint_hash);

  const std::string csv = slurp(out / "metrics.csv");
  CHECK(csv.find("i1s1") != std::string::npos);
  CHECK(csv.find("i2s1") == std::string::npos);
}

TEST_CASE("boundary postprocessing can be tuned at the end of the run") {
  const auto& corpus = pipeline_corpus();
  TempDir dir;
  PipelineConfig cfg = quick_pipeline_config(dir.path / "run");
  cfg.iterations = 1;
  cfg.tune_sebb = true;

  run_pipeline(cfg, corpus);
  const fs::path out = dir.path / "run";
  CHECK(fs::exists(out / "sebb.cfg"));
  const ConfigFile summary = ConfigFile::parse_file((out / "summary.cfg").string());
  CHECK(summary.has("sebb", "test_psds1"));
  const double sebb_psds1 = summary.get_double("sebb", "test_psds1", -1.0);
  CHECK(sebb_psds1 >= 0.0);
  CHECK(sebb_psds1 <= 1.0);

  // The stored parameters parse back against the corpus vocabulary.
  std::ifstream in(out / "sebb.cfg");
  const auto params = parse_sebb_params(in, corpus.vocab);
  CHECK(params.size() == static_cast<std::size_t>(corpus.vocab.num_classes()));
}

TEST_CASE("pipeline rejects inconsistent geometry") {
  const auto& corpus = pipeline_corpus();
  TempDir dir;
  PipelineConfig cfg = quick_pipeline_config(dir.path / "run");

  PipelineConfig wrong_classes = cfg;
  wrong_classes.model.num_classes = 7;
  CHECK_THROWS_AS(run_pipeline(wrong_classes, corpus), ConfigError);

  PipelineConfig wrong_frames = cfg;
  wrong_frames.model.input_frames = 64;
  CHECK_THROWS_AS(run_pipeline(wrong_frames, corpus), ConfigError);

  PipelineConfig no_members = cfg;
  no_members.members.clear();
  CHECK_THROWS_AS(run_pipeline(no_members, corpus), ConfigError);
}
