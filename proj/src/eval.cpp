#include "hetsed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace hetsed {

EventList threshold_detector(const Posteriorgram& post, double threshold) {
  EventList out;
  out.clip_id = post.clip_id;
  for (int c = 0; c < post.num_classes; ++c) {
    int run_start = -1;
    for (int t = 0; t <= post.num_frames; ++t) {
      const bool on = t < post.num_frames && post.at(c, t) >= threshold;
      if (on && run_start < 0) run_start = t;
      if (!on && run_start >= 0) {
        Event e;
        e.onset = run_start * post.frame_hop;
        e.offset = t * post.frame_hop;
        e.class_index = c;
        e.confidence = threshold;
        out.events.push_back(e);
        run_start = -1;
      }
    }
  }
  return out;
}

namespace {

using Interval = std::pair<double, double>;

// Sorted, pairwise-disjoint union of the given intervals.
std::vector<Interval> merge_intervals(std::vector<Interval> iv) {
  std::sort(iv.begin(), iv.end());
  std::vector<Interval> out;
  for (const auto& [a, b] : iv) {
    if (!out.empty() && a <= out.back().second) {
      out.back().second = std::max(out.back().second, b);
    } else {
      out.emplace_back(a, b);
    }
  }
  return out;
}

double overlap_with_union(double on, double off, const std::vector<Interval>& merged) {
  double covered = 0.0;
  for (const auto& [a, b] : merged) {
    covered += std::max(0.0, std::min(off, b) - std::max(on, a));
  }
  return covered;
}

}  // namespace

double psds1(const std::vector<Posteriorgram>& posts,
             const std::map<std::string, EventList>& references,
             const PsdsParams& params, const Detector& detector,
             int restrict_to_class) {
  if (params.alpha_ct != 0.0) {
    throw ConfigError("cross-trigger scoring is not supported (alpha_ct must be 0)");
  }
  if (params.n_thresholds < 1 || params.e_max <= 0.0) {
    throw ConfigError("invalid detection-score parameters");
  }

  // Scored classes: those with at least one reference event. Detections are
  // validated against the merged ground truth, but every raw reference event
  // is scored for coverage individually, so overlapping references each count.
  std::map<int, int> ref_counts;
  struct ClassGt {
    std::vector<Interval> raw;
    std::vector<Interval> merged;
  };
  std::map<std::string, std::map<int, ClassGt>> gt;
  for (const auto& [clip_id, list] : references) {
    std::map<int, ClassGt> by_class;
    for (const auto& e : list.events) {
      if (restrict_to_class >= 0 && e.class_index != restrict_to_class) continue;
      by_class[e.class_index].raw.emplace_back(e.onset, e.offset);
      ref_counts[e.class_index] += 1;
    }
    for (auto& [c, iv] : by_class) iv.merged = merge_intervals(iv.raw);
    gt.emplace(clip_id, std::move(by_class));
  }
  if (ref_counts.empty()) throw DataError("no reference events to score");

  double total_seconds = 0.0;
  for (const auto& p : posts) total_seconds += p.num_frames * p.frame_hop;
  const double hours = total_seconds / 3600.0;
  if (hours <= 0.0) throw DataError("no audio to score");

  std::vector<int> classes;
  for (const auto& [c, n] : ref_counts) classes.push_back(c);
  const int nc = static_cast<int>(classes.size());
  auto class_slot = [&](int c) {
    const auto it = std::lower_bound(classes.begin(), classes.end(), c);
    return it != classes.end() && *it == c ? static_cast<int>(it - classes.begin()) : -1;
  };

  // Operating points per class: (eFPR, TPR) at each threshold.
  std::vector<std::vector<Interval>> ops(nc);
  static const std::map<int, ClassGt> kNoGt;
  for (int k = 0; k < params.n_thresholds; ++k) {
    const double thr = (k + 0.5) / params.n_thresholds;
    std::vector<int> false_counts(nc, 0), hit_counts(nc, 0);
    for (const auto& post : posts) {
      const auto gt_it = gt.find(post.clip_id);
      const auto& clip_gt = gt_it == gt.end() ? kNoGt : gt_it->second;
      const EventList dets = detector(post, thr);
      std::map<int, std::vector<Interval>> valid;
      for (const auto& d : dets.events) {
        const int slot = class_slot(d.class_index);
        if (slot < 0) continue;
        const auto cg = clip_gt.find(d.class_index);
        const double covered =
            cg == clip_gt.end() ? 0.0
                                : overlap_with_union(d.onset, d.offset, cg->second.merged);
        if (covered >= params.dtc * (d.offset - d.onset)) {
          valid[d.class_index].emplace_back(d.onset, d.offset);
        } else {
          false_counts[slot] += 1;
        }
      }
      for (const auto& [c, class_gt] : clip_gt) {
        const int slot = class_slot(c);
        const auto v = valid.find(c);
        if (v == valid.end()) continue;
        const auto merged_valid = merge_intervals(v->second);
        for (const auto& [a, b] : class_gt.raw) {
          if (overlap_with_union(a, b, merged_valid) >= params.gtc * (b - a)) {
            hit_counts[slot] += 1;
          }
        }
      }
    }
    for (int ci = 0; ci < nc; ++ci) {
      ops[ci].emplace_back(false_counts[ci] / hours,
                           static_cast<double>(hit_counts[ci]) / ref_counts[classes[ci]]);
    }
  }

  // Per class: best TPR at or below each rate, as a non-decreasing staircase.
  std::vector<std::vector<Interval>> stairs(nc);
  for (int ci = 0; ci < nc; ++ci) {
    auto pts = ops[ci];
    std::sort(pts.begin(), pts.end());
    double best = 0.0;
    for (const auto& [e, tpr] : pts) {
      best = std::max(best, tpr);
      if (!stairs[ci].empty() && stairs[ci].back().first == e) {
        stairs[ci].back().second = best;
      } else {
        stairs[ci].emplace_back(e, best);
      }
    }
  }
  auto tpr_at = [&](int ci, double e) {
    const auto& st = stairs[ci];
    double value = 0.0;
    for (const auto& [rate, tpr] : st) {
      if (rate <= e) value = tpr;
      else break;
    }
    return value;
  };

  std::set<double> breakpoint_set = {0.0, params.e_max};
  for (int ci = 0; ci < nc; ++ci) {
    for (const auto& [e, tpr] : stairs[ci]) {
      if (e < params.e_max) breakpoint_set.insert(e);
    }
  }
  const std::vector<double> breakpoints(breakpoint_set.begin(), breakpoint_set.end());

  double area = 0.0;
  std::vector<double> tprs(nc);
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i) {
    const double e = breakpoints[i];
    double mean = 0.0;
    for (int ci = 0; ci < nc; ++ci) {
      tprs[ci] = tpr_at(ci, e);
      mean += tprs[ci];
    }
    mean /= nc;
    double var = 0.0;
    for (int ci = 0; ci < nc; ++ci) var += (tprs[ci] - mean) * (tprs[ci] - mean);
    const double sd = std::sqrt(var / nc);
    area += (mean - params.alpha_st * sd) * (breakpoints[i + 1] - e);
  }
  return std::clamp(area / params.e_max, 0.0, 1.0);
}

double partial_auc(const std::vector<double>& scores, const std::vector<char>& labels,
                   double max_fpr) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw DataError("scores and labels must be non-empty and aligned");
  }
  if (max_fpr <= 0.0 || max_fpr > 1.0) throw ConfigError("max_fpr must be in (0, 1]");
  long long pos = 0, neg = 0;
  for (char l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) {
    throw DataError("partial AUC needs both positive and negative examples");
  }

  std::vector<int> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[a] > scores[b];
  });

  // Walk the ROC polyline; tied scores move diagonally in one step.
  double area = 0.0;
  double fpr0 = 0.0, tpr0 = 0.0;
  long long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1;
      ++j;
    }
    const double fpr1 = static_cast<double>(fp) / neg;
    const double tpr1 = static_cast<double>(tp) / pos;
    if (fpr1 <= max_fpr) {
      area += (fpr1 - fpr0) * 0.5 * (tpr0 + tpr1);
    } else if (fpr0 < max_fpr) {
      const double t_cross = tpr0 + (tpr1 - tpr0) * (max_fpr - fpr0) / (fpr1 - fpr0);
      area += (max_fpr - fpr0) * 0.5 * (tpr0 + t_cross);
      fpr0 = max_fpr;
      tpr0 = t_cross;
      break;
    }
    fpr0 = fpr1;
    tpr0 = tpr1;
    i = j;
  }

  // Standardize: chance (the diagonal) maps to 0.5, perfect to 1.
  const double a_min = 0.5 * max_fpr * max_fpr;
  const double a_max = max_fpr;
  const double standardized = 0.5 * (1.0 + (area - a_min) / (a_max - a_min));
  return std::max(0.0, standardized);
}

double mpauc(const std::vector<Posteriorgram>& posts,
             const std::map<std::string, std::vector<SegmentRef>>& references,
             const std::vector<int>& class_indices, const MpaucParams& params,
             std::vector<int>* skipped) {
  if (params.segment_length <= 0.0) throw ConfigError("segment length must be positive");
  if (class_indices.empty()) throw ConfigError("no classes selected for segment scoring");

  // Per class, pooled segment scores and binary labels over all clips.
  std::map<int, std::vector<double>> seg_scores;
  std::map<int, std::vector<char>> seg_labels;
  for (const auto& post : posts) {
    if (post.num_frames < 1) throw DataError("empty posteriorgram: " + post.clip_id);
    const int n_segs =
        static_cast<int>(std::floor((post.num_frames - 1) * post.frame_hop /
                                    params.segment_length)) +
        1;
    std::vector<int> frames_in(n_segs, 0);
    std::vector<int> seg_of(post.num_frames);
    for (int t = 0; t < post.num_frames; ++t) {
      const int s = std::min(
          n_segs - 1,
          static_cast<int>(std::floor(t * post.frame_hop / params.segment_length)));
      seg_of[t] = s;
      frames_in[s] += 1;
    }
    const auto ref_it = references.find(post.clip_id);
    static const std::vector<SegmentRef> kNoRefs;
    const auto& refs = ref_it == references.end() ? kNoRefs : ref_it->second;
    for (int c : class_indices) {
      if (c < 0 || c >= post.num_classes) throw DataError("class index out of range");
      std::vector<double> mean(n_segs, 0.0);
      for (int t = 0; t < post.num_frames; ++t) mean[seg_of[t]] += post.at(c, t);
      for (int s = 0; s < n_segs; ++s) mean[s] /= frames_in[s];
      std::vector<char> label(n_segs, 0);
      for (const auto& r : refs) {
        if (r.class_index != c || r.confidence < params.binarize_at) continue;
        for (int s = 0; s < n_segs; ++s) {
          const double lo = s * params.segment_length;
          const double hi = lo + params.segment_length;
          if (std::min(hi, r.offset) - std::max(lo, r.onset) > 1e-12) label[s] = 1;
        }
      }
      auto& sc = seg_scores[c];
      auto& lb = seg_labels[c];
      sc.insert(sc.end(), mean.begin(), mean.end());
      lb.insert(lb.end(), label.begin(), label.end());
    }
  }

  double sum = 0.0;
  int used = 0;
  for (int c : class_indices) {
    const auto& lb = seg_labels[c];
    const bool has_pos = std::find(lb.begin(), lb.end(), char(1)) != lb.end();
    const bool has_neg = std::find(lb.begin(), lb.end(), char(0)) != lb.end();
    if (!has_pos || !has_neg) {
      if (skipped) skipped->push_back(c);
      continue;
    }
    sum += partial_auc(seg_scores[c], lb, params.max_fpr);
    ++used;
  }
  if (used == 0) throw DataError("every class lacked positive or negative segments");
  return sum / used;
}

double rank_score(double mpauc_value, double psds1_value) {
  return mpauc_value + psds1_value;
}

MetricReport make_report(double psds1_value, double mpauc_value) {
  MetricReport r;
  r.psds1 = psds1_value;
  r.mpauc = mpauc_value;
  r.rank_score = rank_score(mpauc_value, psds1_value);
  return r;
}

std::string render_metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "label,mpauc,psds1,rank_score\n";
  for (const auto& row : rows) {
    out += row.label + ',' + format_double(row.report.mpauc) + ',' +
           format_double(row.report.psds1) + ',' + format_double(row.report.rank_score) +
           '\n';
  }
  return out;
}

std::string render_metrics_markdown(const std::vector<MetricRow>& rows) {
  std::string out = "| Model | mpAUC | PSDS1 | Rank Score |\n|---|---|---|---|\n";
  for (const auto& row : rows) {
    out += "| " + row.label + " | " + format_double(row.report.mpauc) + " | " +
           format_double(row.report.psds1) + " | " +
           format_double(row.report.rank_score) + " |\n";
  }
  return out;
}

}  // namespace hetsed
