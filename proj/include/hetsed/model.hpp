#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hetsed/config.hpp"
#include "hetsed/core.hpp"
#include "hetsed/rng.hpp"
#include "hetsed/tensor.hpp"

namespace hetsed {

// ---------------------------------------------------------------------------
// Sequence-length alignment between the two branch outputs
// ---------------------------------------------------------------------------

enum class AlignMethod { kLinear, kNearestExact, kAvgPool };

const char* align_method_name(AlignMethod m);
AlignMethod align_method_from_name(const std::string& name);

// Resamples a D x L_in sequence to D x L_out.
//   linear:        endpoint-aligned 1-D linear interpolation
//   nearest-exact: output i reads input floor((i + 0.5) * L_in / L_out)
//   avg-pool:      output i averages input [floor(i*L_in/L_out),
//                  ceil((i+1)*L_in/L_out))
// All three are linear operators in the input.
std::vector<double> align_sequence(const std::vector<double>& seq, int dim, int len_in,
                                   int len_out, AlignMethod method);

// The alignment expressed as per-output-index (input index, weight) taps;
// shared by forward, backward and the posteriorgram upsampler.
std::vector<std::vector<std::pair<int, double>>> alignment_taps(int len_in, int len_out,
                                                                AlignMethod method);

// ---------------------------------------------------------------------------
// Toy two-branch model
// ---------------------------------------------------------------------------

struct ModelConfig {
  int feature_bins = 32;   // F, divisible by 4
  int input_frames = 100;  // T_in, divisible by 4
  int num_classes = 8;     // C, union vocabulary size

  int cnn_ch1 = 8;
  int cnn_ch2 = 16;        // D_c
  int embed_dim = 16;      // D_e
  int embed_kernel = 10;
  int embed_stride = 3;
  int hidden = 32;         // H per direction

  AlignMethod align = AlignMethod::kLinear;
  bool separate_rnn = false;  // extra per-dataset BiGRU layer

  std::uint64_t init_seed = 1;
  std::uint64_t embedder_seed = 1234;  // the frozen branch; independent of init_seed

  int t_cnn() const { return input_frames / 4; }
  int t_emb() const { return (input_frames - embed_kernel) / embed_stride + 1; }
  int t_out() const { return t_cnn(); }
  int concat_dim() const { return cnn_ch2 + embed_dim; }

  void validate() const;
};

ModelConfig model_config_from(const ConfigFile& cfg, int num_classes);
std::uint64_t model_config_hash(const ModelConfig& c);

// Parameter-group ids for the optimizer's learning-rate assignment.
inline constexpr int kGroupCnn = 0;
inline constexpr int kGroupRnnHeads = 1;
inline constexpr int kGroupEmbedder = 2;

struct Param {
  std::string name;
  int group = 0;
  int depth = 0;  // embedder layers: distance from the branch output
  Tensor value;
  Tensor grad;
};

struct ModelOutput {
  std::vector<double> strong_logits;  // C x T_out
  std::vector<double> weak_logits;    // C
  std::vector<double> strong_post;    // sigmoid of the logits
  std::vector<double> weak_post;
  int num_classes = 0;
  int num_frames = 0;
};

// Per-forward activation storage; reused across calls to avoid allocation and
// to let the finite-difference driver cache branch prefixes that a perturbed
// parameter cannot influence.
struct Workspace {
  bool reuse_cnn = false;       // keep cnn branch activations from last call
  bool reuse_embedder = false;  // keep frozen-branch activations

  Subset subset = Subset::kDesedUnlabeled;

  std::vector<double> features_snapshot;  // F x T_in input, kept for backward

  // cnn branch
  std::vector<double> conv1_act, pool1, conv2_act, pool2, cnn_seq;
  // embedder branch
  std::vector<double> e1_act, e2_act, e3_act, emb_aligned;
  std::vector<double> concat;  // (D_c + D_e) x T_out

  // one gated recurrent pass (per direction)
  struct GruTrace {
    std::vector<double> z, r, n, unh, h;  // H x T each
  };
  GruTrace fwd, bwd;
  std::vector<double> rnn_out;  // 2H x T_out
  GruTrace sep_fwd, sep_bwd;    // separate per-dataset layer, when enabled
  std::vector<double> sep_out;
  int sep_dataset = -1;         // 0 = desed, 1 = maestro, -1 = unused

  std::vector<double> strong_logits, att_logits, att_weights, strong_post;
  std::vector<double> weak_logits, weak_post;
};

class ToyModel {
 public:
  explicit ToyModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  void zero_grad();

  // features: F x T_in (normalized). subset picks the per-dataset recurrent
  // layer when the ablation is enabled.
  ModelOutput forward(const std::vector<double>& features, Subset subset,
                      Workspace& ws) const;

  // Accumulates parameter gradients for the forward pass recorded in ws.
  // d_strong_logits: C x T_out, d_weak_logits: C — gradients w.r.t. logits.
  void backward(const Workspace& ws, const std::vector<double>& d_strong_logits,
                const std::vector<double>& d_weak_logits);

  // Flattened parameter values in declaration order (EMA, hashing, tests).
  std::vector<double> flat_values() const;
  void set_flat_values(const std::vector<double>& flat);
  std::uint64_t param_hash(int group = -1) const;  // -1: all groups

  void save_checkpoint(const std::string& path) const;
  static ToyModel load_checkpoint(const std::string& path);

 private:
  int add_param(const std::string& name, std::vector<int> shape, int group, int depth,
                double init_scale, Rng& rng);
  struct GruParams {
    int wz, uz, bz, wr, ur, br, wn, un, bn;
  };
  GruParams add_gru(const std::string& prefix, int input_dim, int group, Rng& rng);

  void gru_forward(const GruParams& p, const std::vector<double>& x, int dim, int frames,
                   bool reversed, Workspace::GruTrace& trace) const;
  void gru_backward(const GruParams& p, const std::vector<double>& x, int dim, int frames,
                    bool reversed, const Workspace::GruTrace& trace,
                    const std::vector<double>& d_h, std::vector<double>& d_x);

  ModelConfig config_;
  std::vector<Param> params_;

  int conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  int e1_w_, e1_b_, e2_w_, e2_b_, e3_w_, e3_b_;
  GruParams gru_fwd_, gru_bwd_;
  GruParams sep_fwd_[2], sep_bwd_[2];  // [0]=desed, [1]=maestro
  int strong_w_, strong_b_, att_w_, att_b_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient verification
// ---------------------------------------------------------------------------

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_index = -1;
  long long checked = 0;
};

// Central differences with step h against `analytic` (one flat gradient per
// parameter, matching params[i].grad layout). `loss_value(p)` must evaluate
// the loss at the current parameter values; p is the index of the parameter
// being perturbed so the callback can reuse cached activations of untouched
// branches. Relative error uses max(|ga|, |gfd|, floor) as denominator.
GradientCheckResult finite_difference_check(
    std::vector<Param>& params, const std::function<double(int)>& loss_value,
    const std::vector<std::vector<double>>& analytic, double step, double floor);

}  // namespace hetsed
