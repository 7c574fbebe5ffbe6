#include "hetsed/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>

namespace hetsed {

Posteriorgram median_filter(const Posteriorgram& post, int window) {
  if (window < 1 || window % 2 == 0) {
    throw ConfigError("median filter window must be odd and positive");
  }
  Posteriorgram out = post;
  if (window == 1) return out;
  const int half = window / 2;
  std::vector<double> buf(window);
  for (int c = 0; c < post.num_classes; ++c) {
    for (int t = 0; t < post.num_frames; ++t) {
      for (int k = -half; k <= half; ++k) {
        const int tt = std::clamp(t + k, 0, post.num_frames - 1);
        buf[k + half] = post.at(c, tt);
      }
      std::nth_element(buf.begin(), buf.begin() + half, buf.end());
      out.at(c, t) = buf[half];
    }
  }
  return out;
}

namespace {

struct Segment {
  int begin = 0;  // frames, half-open
  int end = 0;
  double confidence = 0.0;
};

double mean_score(const Posteriorgram& post, int c, int begin, int end) {
  double acc = 0.0;
  for (int t = begin; t < end; ++t) acc += post.at(c, t);
  return acc / (end - begin);
}

}  // namespace

std::vector<Event> sebb_detect_class(const Posteriorgram& post, int class_index,
                                     const SebbParams& params) {
  const int T = post.num_frames;
  const double hop = post.frame_hop;
  if (hop <= 0.0) throw DataError("posteriorgram lacks a frame hop");
  const int L = static_cast<int>(std::lround(params.step_filter_length / hop));
  if (L < 2) throw ConfigError("step filter shorter than two frames");
  const int half = L / 2;

  // Step response; scores outside the clip count as zero but the denominator
  // stays at `half` frames.
  std::vector<double> delta(T, 0.0);
  for (int t = 0; t < T; ++t) {
    double ahead = 0.0, behind = 0.0;
    for (int k = 0; k < half; ++k) {
      if (t + k < T) ahead += post.at(class_index, t + k);
      if (t - 1 - k >= 0) behind += post.at(class_index, t - 1 - k);
    }
    delta[t] = (ahead - behind) / half;
  }

  // Change points from strict extrema over runs of equal values. Both
  // neighbouring runs must exist and be strictly smaller (maximum) or larger
  // (minimum), so runs touching the clip edges never qualify; otherwise the
  // flat tail after the last event would read as a spurious onset.
  std::vector<std::pair<int, bool>> changes;  // (frame, is_onset)
  int run_start = 0;
  while (run_start < T) {
    int run_end = run_start + 1;
    while (run_end < T && delta[run_end] == delta[run_start]) ++run_end;
    if (run_start > 0 && run_end < T) {
      const double v = delta[run_start];
      if (delta[run_start - 1] < v && delta[run_end] < v) {
        changes.emplace_back(run_start, true);
      } else if (delta[run_start - 1] > v && delta[run_end] > v) {
        changes.emplace_back(run_start, false);
      }
    }
    run_start = run_end;
  }

  // Alternating scan. A clip that starts mid-event has an offset as its first
  // change point, so the segment opens at frame 0; symmetrically a trailing
  // open segment closes at the clip end.
  std::vector<Segment> segments;
  int open = -1;
  if (!changes.empty() && !changes.front().second) open = 0;
  for (const auto& [frame, is_onset] : changes) {
    if (is_onset && open < 0) {
      open = frame;
    } else if (!is_onset && open >= 0 && frame > open) {
      segments.push_back({open, frame, mean_score(post, class_index, open, frame)});
      open = -1;
    }
  }
  if (open >= 0 && open < T) {
    segments.push_back({open, T, mean_score(post, class_index, open, T)});
  }

  // Merge across weak gaps; re-test leftward because merging can lower the
  // confidence. Touching segments (no gap) always join.
  std::vector<Segment> merged;
  for (const auto& seg : segments) {
    Segment cur = seg;
    while (!merged.empty()) {
      const Segment& left = merged.back();
      const double g =
          left.end == cur.begin ? 1.0 : mean_score(post, class_index, left.end, cur.begin);
      const bool join = g >= params.merge_threshold_abs ||
                        std::min(left.confidence, cur.confidence) <=
                            params.merge_threshold_rel * g;
      if (!join) break;
      cur.begin = left.begin;
      cur.confidence = mean_score(post, class_index, cur.begin, cur.end);
      merged.pop_back();
    }
    merged.push_back(cur);
  }

  std::vector<Event> events;
  for (const auto& seg : merged) {
    Event e;
    e.onset = seg.begin * hop;
    e.offset = seg.end * hop;
    e.class_index = class_index;
    e.confidence = seg.confidence;
    events.push_back(e);
  }
  return events;
}

EventList sebb_detect(const Posteriorgram& post, const SebbParams& params) {
  EventList out;
  out.clip_id = post.clip_id;
  for (int c = 0; c < post.num_classes; ++c) {
    const auto events = sebb_detect_class(post, c, params);
    out.events.insert(out.events.end(), events.begin(), events.end());
  }
  return out;
}

EventList sebb_detect(const Posteriorgram& post, const std::vector<SebbParams>& per_class) {
  if (static_cast<int>(per_class.size()) != post.num_classes) {
    throw ConfigError("per-class parameter table does not match the class count");
  }
  EventList out;
  out.clip_id = post.clip_id;
  for (int c = 0; c < post.num_classes; ++c) {
    const auto events = sebb_detect_class(post, c, per_class[c]);
    out.events.insert(out.events.end(), events.begin(), events.end());
  }
  return out;
}

namespace {

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = lo + i * (hi - lo) / (n - 1);
  return out;
}

}  // namespace

std::vector<double> SebbGrid::step_values() const { return linspace(step_lo, step_hi, size); }
std::vector<double> SebbGrid::rel_values() const { return linspace(rel_lo, rel_hi, size); }
std::vector<double> SebbGrid::abs_values() const { return linspace(abs_lo, abs_hi, size); }

std::vector<SebbParams> tune_sebb(const std::vector<Posteriorgram>& posts,
                                  const std::map<std::string, EventList>& references,
                                  int num_classes, const PsdsParams& psds_params,
                                  const SebbGrid& grid) {
  if (posts.empty()) throw DataError("no validation clips for boundary tuning");
  const auto steps = grid.step_values();
  const auto rels = grid.rel_values();
  const auto abss = grid.abs_values();
  const SebbParams smallest{steps.front(), rels.front(), abss.front()};

  std::vector<char> has_refs(num_classes, 0);
  for (const auto& [clip, list] : references) {
    (void)clip;
    for (const auto& e : list.events) {
      if (e.class_index >= 0 && e.class_index < num_classes) has_refs[e.class_index] = 1;
    }
  }

  std::vector<SebbParams> best(num_classes, smallest);
  for (int c = 0; c < num_classes; ++c) {
    if (!has_refs[c]) continue;
    double best_score = -1.0;
    for (double step : steps) {
      for (double rel : rels) {
        for (double abs_thr : abss) {
          const SebbParams candidate{step, rel, abs_thr};
          // One detection pass per clip; the score sweep only filters by
          // confidence.
          std::map<std::string, std::vector<Event>> detected;
          for (const auto& post : posts) {
            detected.emplace(post.clip_id, sebb_detect_class(post, c, candidate));
          }
          const Detector detector = [&detected](const Posteriorgram& post,
                                                double threshold) {
            EventList out;
            out.clip_id = post.clip_id;
            for (const auto& e : detected.at(post.clip_id)) {
              if (e.confidence >= threshold) out.events.push_back(e);
            }
            return out;
          };
          const double score = psds1(posts, references, psds_params, detector, c);
          if (score > best_score) {
            best_score = score;
            best[c] = candidate;
          }
        }
      }
    }
  }
  return best;
}

std::string serialize_sebb_params(const std::vector<SebbParams>& per_class,
                                  const ClassVocabulary& vocab) {
  if (static_cast<int>(per_class.size()) != vocab.num_classes()) {
    throw ConfigError("parameter table does not match the vocabulary");
  }
  std::string out = "event_label\tstep_filter_length\tmerge_threshold_rel\tmerge_threshold_abs\n";
  for (int c = 0; c < vocab.num_classes(); ++c) {
    out += vocab.name_of(c) + '\t' + format_double(per_class[c].step_filter_length) +
           '\t' + format_double(per_class[c].merge_threshold_rel) + '\t' +
           format_double(per_class[c].merge_threshold_abs) + '\n';
  }
  return out;
}

std::vector<SebbParams> parse_sebb_params(std::istream& in, const ClassVocabulary& vocab) {
  std::vector<SebbParams> out(vocab.num_classes());
  std::vector<char> seen(vocab.num_classes(), 0);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 || line.empty()) continue;  // header
    std::istringstream row(line);
    std::string name, step, rel, abs_thr;
    if (!std::getline(row, name, '\t') || !std::getline(row, step, '\t') ||
        !std::getline(row, rel, '\t') || !std::getline(row, abs_thr)) {
      throw DataError("line " + std::to_string(lineno) + ": malformed parameter row");
    }
    const int c = vocab.index_of(name);
    out[c].step_filter_length = std::stod(step);
    out[c].merge_threshold_rel = std::stod(rel);
    out[c].merge_threshold_abs = std::stod(abs_thr);
    seen[c] = 1;
  }
  for (int c = 0; c < vocab.num_classes(); ++c) {
    if (!seen[c]) throw DataError("missing parameters for class " + vocab.name_of(c));
  }
  return out;
}

}  // namespace hetsed
