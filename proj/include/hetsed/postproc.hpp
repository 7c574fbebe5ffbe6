#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hetsed/core.hpp"
#include "hetsed/eval.hpp"

namespace hetsed {

// Class-wise sliding median with edge replication. Window must be odd;
// window 1 is the identity.
Posteriorgram median_filter(const Posteriorgram& post, int window);

inline constexpr int kDefaultMedianWindow = 7;

// ---------------------------------------------------------------------------
// Sound-event bounding boxes
// ---------------------------------------------------------------------------

struct SebbParams {
  double step_filter_length = 0.5;    // seconds
  double merge_threshold_rel = 2.0;   // ratio against the gap score
  double merge_threshold_abs = 0.25;  // absolute gap score
};

// Boundary detection for one class row:
//   1. step response delta(t) = mean(scores[t, t+L/2)) - mean(scores[t-L/2, t))
//      with L = round(step_filter_length / frame_hop), zero-padded edges and a
//      fixed denominator of L/2 frames;
//   2. candidate onsets at strict local maxima of delta, offsets at strict
//      local minima; plateaus take their leftmost frame, and both neighbours
//      must exist, so runs touching the clip edges never qualify;
//   3. alternating onset/offset change points bound candidate segments; a
//      clip whose first change point is an offset opens at frame 0, and a
//      trailing open segment closes at the clip end; segment confidence is
//      the mean score inside;
//   4. adjacent segments merge when the gap's mean score g satisfies
//      g >= merge_threshold_abs or min(conf_left, conf_right) <=
//      merge_threshold_rel * g; merging repeats leftward while confidences
//      drop; a merged segment's confidence is the mean score over its full
//      span.
// Events come out time-sorted and non-overlapping per class, confidence-
// ranked for downstream thresholding. L < 2 after rounding is an error.
std::vector<Event> sebb_detect_class(const Posteriorgram& post, int class_index,
                                     const SebbParams& params);

// All classes with one shared parameter set, or per-class parameters
// (indexed by union class, size must match).
EventList sebb_detect(const Posteriorgram& post, const SebbParams& params);
EventList sebb_detect(const Posteriorgram& post, const std::vector<SebbParams>& per_class);

// ---------------------------------------------------------------------------
// Parameter tuning
// ---------------------------------------------------------------------------

struct SebbGrid {
  int size = 8;
  double step_lo = 0.38, step_hi = 0.66;
  double rel_lo = 1.5, rel_hi = 3.25;
  double abs_lo = 0.15, abs_hi = 0.325;

  std::vector<double> step_values() const;
  std::vector<double> rel_values() const;
  std::vector<double> abs_values() const;
};

// Exhaustive per-class search over the grid, maximizing the single-class
// detection score on the given validation clips. Ties break toward the
// lexicographically smallest (step, rel, abs). Classes without reference
// events receive the smallest grid point.
std::vector<SebbParams> tune_sebb(const std::vector<Posteriorgram>& posts,
                                  const std::map<std::string, EventList>& references,
                                  int num_classes, const PsdsParams& psds_params,
                                  const SebbGrid& grid = {});

// TSV persistence: class \t step_filter_length \t merge_threshold_rel \t
// merge_threshold_abs, one row per union class.
std::string serialize_sebb_params(const std::vector<SebbParams>& per_class,
                                  const ClassVocabulary& vocab);
std::vector<SebbParams> parse_sebb_params(std::istream& in, const ClassVocabulary& vocab);

}  // namespace hetsed
