#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hetsed/augment.hpp"
#include "hetsed/config.hpp"
#include "hetsed/core.hpp"
#include "hetsed/eval.hpp"
#include "hetsed/ingest.hpp"
#include "hetsed/model.hpp"
#include "hetsed/pseudo.hpp"

namespace hetsed {

// ---------------------------------------------------------------------------
// Stage configuration
// ---------------------------------------------------------------------------

// One training stage of the two-iteration schedule. Defaults follow the
// winning configuration: stage-1 learning rates 1e-3/1e-3 with weight decay
// 1e-2, stage-2 rates 1e-4/1e-3/1e-4 with layer decay 0.5 and weight decay
// 1e-3, second-iteration variants 5e-4/5e-4 and 1e-5/1e-4/1e-4.
struct StageConfig {
  StageId stage = StageId::kI1S1;

  double lr_cnn = 1e-3;
  double lr_rnn = 1e-3;
  double lr_tf = 0.0;    // embedder branch; unused while frozen
  double lr_dec = 1.0;   // layer-wise decay, lr_tf * lr_dec^depth
  double weight_decay = 1e-2;

  double w_strong = 1.0;
  double w_weak = 0.5;
  double w_mt = 40.0;
  double w_ict = 10.0;
  double w_pseudo = 1.0;  // only active together with use_pseudo_loss

  double mt_tau = 0.999;     // teacher EMA decay per step
  double ict_alpha = 0.2;    // Beta parameter for the interpolation draw

  int epochs = 20;
  int steps_per_epoch = 4;
  BatchComposition batch;
  AugmentConfig augment;

  bool embedder_frozen = true;    // stage 1 trains the CRNN only
  bool use_pseudo_loss = false;   // gates w_pseudo
  bool ssl_on_maestro = true;     // MT/ICT include MAESTRO clips
  bool ssl_class_mask = false;    // MT/ICT restricted to each clip's loss mask
  bool separate_rnn = false;      // must match the model
  bool hard_pseudo = false;       // fused targets thresholded at 0.5
  bool pseudo_all_classes = false;  // pseudo mask widened to the union
  bool train_desed_only = false;    // drop the MAESTRO subset
  bool train_maestro_only = false;  // drop the DESED subsets
  bool use_class_mapping = true;    // cross-dataset label mapping

  // Effective batch composition after the dataset-exclusion flags.
  BatchComposition effective_batch() const;
};

StageConfig default_stage_config(StageId stage);

// Applies overrides from the named section on top of the given defaults.
// Recognized keys mirror the field names; `batch` is a five-value list.
StageConfig stage_config_from(const ConfigFile& cfg, const std::string& section,
                              StageConfig base);

// ---------------------------------------------------------------------------
// Losses. Values are per-clip means; the gradient helpers accumulate
// d(loss)/d(logit) scaled by grad_scale so several weighted terms can share
// one backward pass.
// ---------------------------------------------------------------------------

// Masked binary cross-entropy between posteriors and targets, averaged over
// unmasked class rows and all their frames; posteriors are clamped at 1e-7
// before the logs. An empty mask yields 0. With d_logits given, accumulates
// grad_scale * (p - t) / count, the gradient through the logistic.
double bce_masked(const std::vector<double>& post, const std::vector<double>& targets,
                  const std::vector<char>& mask, int num_classes, int num_frames,
                  std::vector<double>* d_logits = nullptr, double grad_scale = 1.0);

// Mean squared error between student and teacher over strong and weak
// posteriors jointly. class_mask (optional) restricts the class rows.
// Gradients flow into the student only.
double mt_consistency(const ModelOutput& student, const ModelOutput& teacher,
                      const std::vector<char>* class_mask,
                      std::vector<double>* d_strong_logits = nullptr,
                      std::vector<double>* d_weak_logits = nullptr,
                      double grad_scale = 1.0);

// Interpolation consistency: the student runs on the lambda-mix of the two
// clips' features and is matched to the lambda-mix of the teacher posteriors,
// MSE over strong posteriors. ws holds the mixed forward pass so the caller
// can backpropagate d_strong_logits (accumulated, scaled by grad_scale).
double ict_loss(const ToyModel& student, const ModelOutput& teacher_a,
                const ModelOutput& teacher_b, const ClipRecord& a, const ClipRecord& b,
                double lambda, const std::vector<char>* class_mask, Workspace& ws,
                std::vector<double>* d_strong_logits = nullptr, double grad_scale = 1.0);

// ---------------------------------------------------------------------------
// Mean teacher
// ---------------------------------------------------------------------------

class Teacher {
 public:
  Teacher(const ToyModel& student, double tau);

  // theta <- tau * theta + (1 - tau) * student, element-wise.
  void update(const ToyModel& student);

  const ToyModel& model() const { return model_; }
  double tau() const { return tau_; }

 private:
  ToyModel model_;
  double tau_;
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// Decoupled-weight-decay Adam, beta = (0.9, 0.999), eps = 1e-8. Learning
// rates per parameter group: cnn -> lr_cnn, recurrent/heads -> lr_rnn,
// embedder -> lr_tf * lr_dec^depth (depth counted from the branch output).
// A frozen embedder is skipped entirely, decay included.
class AdamW {
 public:
  AdamW(const ToyModel& model, const StageConfig& config);

  // Consumes the accumulated gradients. Non-finite gradients abort with a
  // diagnostic naming the parameter.
  void step(ToyModel& model);

 private:
  struct Slot {
    std::vector<double> m, v;
    double lr = 0.0;
    bool skip = false;
  };
  std::vector<Slot> slots_;
  double weight_decay_;
  long long t_ = 0;
};

// ---------------------------------------------------------------------------
// Validation and selection
// ---------------------------------------------------------------------------

// Runs the model over a clip and returns frame scores upsampled to the input
// frame grid (linear interpolation), where the detection-oriented metrics
// and boundary postprocessing have enough temporal resolution.
Posteriorgram model_posteriorgram(const ToyModel& model, const ClipRecord& clip,
                                  double clip_duration);

struct SelectionRecord {
  int epoch = 0;
  double psds1_synth = 0.0;
  double psds1_real = 0.0;
  double mpauc = 0.0;
  double score = 0.0;  // exactly the sum of the three
};

// Median-filtered posteriorgrams scored per validation split; excluded
// datasets (train_desed_only / train_maestro_only) contribute 0.
SelectionRecord evaluate_selection(const ToyModel& model, const Corpus& corpus,
                                   const StageConfig& config, int epoch);

// Rank score of a model on a clip set: PSDS1 over the pooled strong clips
// plus mpAUC over the MAESTRO clips.
MetricReport evaluate_metrics(const ToyModel& model, const Corpus& corpus,
                              const std::vector<const ClipRecord*>& strong_clips,
                              const std::vector<const ClipRecord*>& maestro_clips);

// ---------------------------------------------------------------------------
// Stage training
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_strong = 0.0;
  double loss_weak = 0.0;
  double loss_pseudo = 0.0;
  double loss_mt = 0.0;
  double loss_ict = 0.0;
  SelectionRecord selection;
};

struct StageResult {
  explicit StageResult(ToyModel m) : best_model(std::move(m)) {}

  ToyModel best_model;
  SelectionRecord best;
  std::vector<EpochRecord> history;
};

// Trains one stage from the given initialization. The initial model is
// evaluated as epoch 0, so the returned best is never worse than the start.
// pseudo may be null; it is required when use_pseudo_loss is set. log (when
// given) receives one JSON line per epoch. Divergence aborts with epoch and
// step context.
StageResult train_stage(const ToyModel& init, const StageConfig& config,
                        const Corpus& corpus, const PseudoStore* pseudo,
                        std::uint64_t seed, std::ostream* log = nullptr);

}  // namespace hetsed
