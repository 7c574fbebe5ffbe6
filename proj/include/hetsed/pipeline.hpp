#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "hetsed/postproc.hpp"
#include "hetsed/train.hpp"

namespace hetsed {

// One stage-2 ensemble member: the same stage-1 checkpoint fine-tuned with a
// different seed and embedder alignment method.
struct EnsembleMember {
  std::uint64_t seed = 0;
  AlignMethod align = AlignMethod::kLinear;
};

// The whole two-iteration run: I1.S1 -> I1.S2 ensemble -> pseudo-label store
// -> I2.S1 (from scratch, with the pseudo loss) -> I2.S2. A single-iteration
// run stops after the first ensemble and writes no pseudo store.
struct PipelineConfig {
  CorpusConfig corpus;
  ModelConfig model;
  std::array<StageConfig, kNumStages> stages;
  std::vector<EnsembleMember> members;
  int iterations = 2;
  bool tune_sebb = false;  // tune boundary postprocessing on validation
  std::string out_dir = "runs/pipeline";
  std::uint64_t seed = 1;
};

PipelineConfig default_pipeline_config();

// Reads [corpus], [model], [augment], one section per stage (i1s1..i2s2),
// [ensemble] (members, aligns, seeds) and [pipeline] (seed, iterations,
// tune_sebb, out_dir). Missing keys keep the defaults above.
PipelineConfig pipeline_config_from(const ConfigFile& cfg);

// Single-flag experiment arms. Each spelling toggles one behaviour across the
// stages it concerns; unknown flags raise ConfigError.
const std::vector<std::string>& ablation_flags();
void apply_ablation_flag(PipelineConfig& config, const std::string& flag);

struct StageArtifacts {
  StageId stage = StageId::kI1S1;
  SelectionRecord best;     // validation selection of the kept checkpoint
  MetricReport validation;  // pooled-strong PSDS1 + mpAUC of that checkpoint
  std::uint64_t checkpoint_hash = 0;
};

struct MemberResult {
  std::uint64_t seed = 0;
  AlignMethod align = AlignMethod::kLinear;
  SelectionRecord best;
  double test_psds1 = 0.0;  // synthetic test split
  std::uint64_t checkpoint_hash = 0;
};

struct PipelineResult {
  explicit PipelineResult(ToyModel m) : final_model(std::move(m)) {}

  ToyModel final_model;
  std::vector<StageArtifacts> stages;  // in pipeline order
  std::vector<MemberResult> members;
  double ensemble_test_psds1 = 0.0;
  double ensemble_test_mpauc = 0.0;
  double best_member_test_psds1 = 0.0;
  std::vector<std::uint64_t> pseudo_provenance;  // member hashes, two-iteration runs
};

// Logistic of the member-mean strong logits, upsampled to the input frame
// grid exactly like a single model's posteriorgram.
Posteriorgram ensemble_posteriorgram(const std::vector<const ToyModel*>& models,
                                     const ClipRecord& clip, double clip_duration);

// Fused soft targets for every training clip, on the model output grid;
// provenance is the member parameter hashes in order.
PseudoStore build_pseudo_store(const std::vector<const ToyModel*>& models,
                               const Corpus& corpus, const PseudoPolicy& policy);

// Runs the configured pipeline on the corpus. Writes per-stage checkpoints,
// the training log, the pseudo store, summary.cfg and metrics.csv under
// config.out_dir. progress (when given) receives one line per major step.
PipelineResult run_pipeline(const PipelineConfig& config, const Corpus& corpus,
                            std::ostream* progress = nullptr);

// Renders the metrics CSV from a run's summary file; byte-identical to the
// metrics.csv the run wrote.
std::string render_summary_csv(const ConfigFile& summary);

}  // namespace hetsed
