#pragma once

#include <array>
#include <vector>

#include "hetsed/config.hpp"
#include "hetsed/core.hpp"
#include "hetsed/rng.hpp"

namespace hetsed {

// Which stages an augmentation runs in, indexed by StageId.
using StageSet = std::array<bool, kNumStages>;

inline constexpr StageSet kStagesAll = {true, true, true, true};
inline constexpr StageSet kStagesS2Only = {false, true, false, true};
// Everything except the pseudo-label stage of iteration 2.
inline constexpr StageSet kStagesNotI2S1 = {true, true, false, true};

struct AugmentConfig {
  struct Method {
    double p = 0.0;
    double alpha = 0.0;   // Beta parameter where the method mixes pairs
    StageSet stages{};
  };

  Method dir{0.5, 0.0, kStagesS2Only};
  Method wavmix{0.5, 0.2, kStagesAll};
  Method freq_mixstyle{0.5, 0.3, kStagesNotI2S1};
  Method mixup{0.5, 0.2, kStagesAll};
  Method filter_augment{0.8, 0.0, kStagesNotI2S1};
  Method freq_warp{0.5, 0.0, kStagesS2Only};

  // Time masking has no probability; the ratio interval is the knob.
  double time_mask_lo = 0.05;
  double time_mask_hi = 0.3;
  StageSet time_mask_stages = kStagesS2Only;

  double dir_db_limit = 10.0;
  int filter_min_bands = 3;
  int filter_max_bands = 6;
  double filter_db = 6.0;
  double freq_warp_lo = 0.9;
  double freq_warp_hi = 1.1;
};

AugmentConfig augment_config_from(const ConfigFile& cfg);

// ---------------------------------------------------------------------------
// Deterministic cores. Each takes all random quantities as arguments; the
// Augmenter draws them. All preserve the feature-grid shape.
// ---------------------------------------------------------------------------

// log1p feature normalization: the boundary between the raw domain
// (DIR, wavmix) and the spectrogram domain (everything else).
void normalize_features(ClipRecord& clip);

// Convex combination of two clips. Features and every label grid present mix
// with the same lambda; the per-grid loss mask becomes the union of both
// masks restricted to classes with mixed target > 0, plus both clips'
// native class sets.
ClipRecord mixup(const ClipRecord& a, const ClipRecord& b, double lambda,
                 const ClassVocabulary& vocab);

// Same combination in the raw feature domain, strongly labeled clips only;
// anything else passes through unchanged.
ClipRecord wavmix(const ClipRecord& a, const ClipRecord& b, double lambda,
                  const ClassVocabulary& vocab);

// Mixes per-frequency-bin statistics: output keeps a's normalized content but
// receives the lambda-blend of both clips' per-bin mean and std over time.
std::vector<double> freq_mixstyle(const std::vector<double>& a_features,
                                  const std::vector<double>& b_features, int bins,
                                  int frames, double lambda);

// Piecewise-linear per-bin dB gain curve: `boundaries` are the interior band
// edges (ascending, inside (0, bins)), `gains_db` one gain per band. The curve
// holds each band's gain at its center and interpolates linearly between
// adjacent centers.
std::vector<double> filter_gain_curve(int bins, const std::vector<int>& boundaries,
                                      const std::vector<double>& gains_db);

// Multiplies every column by the per-bin linear gains.
void apply_gain_curve(std::vector<double>& features, int bins, int frames,
                      const std::vector<double>& gains);

// Zeroes the span starting at start_frac (fraction of the clip) of length
// ratio in both the features and the strong-label grid, each on its own frame
// grid via round(fraction * frames). DESED strong clips only.
ClipRecord time_mask(const ClipRecord& clip, double start_frac, double ratio);

// Resamples the frequency axis to round(w*bins) bins by linear interpolation,
// then center-crops (w>1) or edge-pads (w<1) back to `bins`.
std::vector<double> freq_warp(const std::vector<double>& features, int bins, int frames,
                              double w);

// Smoothed, clamped random-walk device response in dB, one value per bin.
std::vector<double> random_dir_curve_db(int bins, double db_limit, Rng& rng);

// ---------------------------------------------------------------------------
// Batch application in the fixed pipeline order: DIR, wavmix, normalization,
// Freq-MixStyle, mixup, time masking, FilterAugment, frequency warping.
// Pairing methods flip one coin per batch and pair clips by a shuffled
// permutation (mixup/wavmix within groups of the same label kind); per-clip
// methods flip one coin per clip.
// ---------------------------------------------------------------------------
class Augmenter {
 public:
  Augmenter(const AugmentConfig& config, StageId stage, const ClassVocabulary* vocab,
            std::uint64_t seed);

  std::vector<ClipRecord> apply(const std::vector<const ClipRecord*>& batch);

  // Normalization without augmentation (evaluation path).
  static ClipRecord passthrough(const ClipRecord& clip);

 private:
  bool on(const AugmentConfig::Method& m) const {
    return m.stages[static_cast<int>(stage_)] && m.p > 0.0;
  }

  AugmentConfig config_;
  StageId stage_;
  const ClassVocabulary* vocab_;
  Rng rng_;
};

}  // namespace hetsed
