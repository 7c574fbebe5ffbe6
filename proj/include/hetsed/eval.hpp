#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "hetsed/core.hpp"
#include "hetsed/ingest.hpp"

namespace hetsed {

// ---------------------------------------------------------------------------
// Threshold-sweep detection score (PSDS1)
// ---------------------------------------------------------------------------

struct PsdsParams {
  double dtc = 0.7;       // detection-tolerance criterion
  double gtc = 0.7;       // ground-truth intersection criterion
  double alpha_st = 1.0;  // across-class variability penalty
  double alpha_ct = 0.0;  // cross-trigger weight; only 0 is supported
  double e_max = 100.0;   // eFPR axis limit, per hour
  int n_thresholds = 50;
};

// Converts one clip's scores into detections at a given operating threshold.
using Detector = std::function<EventList(const Posteriorgram&, double threshold)>;

// Maximal runs of frames with score >= threshold become one event per run.
EventList threshold_detector(const Posteriorgram& post, double threshold);

// Sweeps n_thresholds equally spaced operating points (k + 0.5) / n. At each:
// a detection is valid when >= dtc of its span intersects same-class ground
// truth; a reference is hit when >= gtc of its span is covered by valid
// detections; invalid detections count toward the class false-positive rate
// per hour of scored audio. Per class, TPR as a function of eFPR takes the
// best operating point at or below that rate. The score is the area under
// mean_c TPR - alpha_st * std_c TPR over [0, e_max], divided by e_max and
// clamped to [0, 1]. Classes with no reference events are not scored.
// `restrict_to_class` (union index) limits scoring to one class, which is
// what the boundary-parameter tuner optimizes per class.
double psds1(const std::vector<Posteriorgram>& posts,
             const std::map<std::string, EventList>& references,
             const PsdsParams& params, const Detector& detector,
             int restrict_to_class = -1);

// ---------------------------------------------------------------------------
// Segment-based mean partial AUC (mpAUC)
// ---------------------------------------------------------------------------

struct MpaucParams {
  double segment_length = 1.0;  // seconds
  double max_fpr = 0.1;
  double binarize_at = 0.5;     // soft reference threshold
};

// Pools scores into fixed-length segments (mean over frames, assigned by
// frame start time), binarizes the soft references, and computes the partial
// ROC area on [0, max_fpr] per class, standardized so chance = 0.5 and
// perfect = 1.0. Classes without both positive and negative segments are
// skipped (reported via `skipped` when non-null); macro-mean over the rest.
// `class_indices` selects the union-vocabulary rows to score.
double mpauc(const std::vector<Posteriorgram>& posts,
             const std::map<std::string, std::vector<SegmentRef>>& references,
             const std::vector<int>& class_indices, const MpaucParams& params,
             std::vector<int>* skipped = nullptr);

// Standardized partial AUC of one binary scoring problem; exposed for tests.
double partial_auc(const std::vector<double>& scores, const std::vector<char>& labels,
                   double max_fpr);

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

struct MetricReport {
  double psds1 = 0.0;
  double mpauc = 0.0;
  double rank_score = 0.0;  // always the exact sum of the other two
};

double rank_score(double mpauc_value, double psds1_value);
MetricReport make_report(double psds1_value, double mpauc_value);

struct MetricRow {
  std::string label;  // e.g. "i1s2 seed=1 align=linear"
  MetricReport report;
};

// CSV with columns label, mpauc, psds1, rank_score; shortest round-trip
// float formatting.
std::string render_metrics_csv(const std::vector<MetricRow>& rows);
// The same table as markdown.
std::string render_metrics_markdown(const std::vector<MetricRow>& rows);

}  // namespace hetsed
