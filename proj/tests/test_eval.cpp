#include "hetsed/eval.hpp"

#include <cmath>

#include "doctest.h"
#include "hetsed/rng.hpp"
#include "oracle_psds.hpp"

using namespace hetsed;

namespace {

Posteriorgram make_post(const std::string& clip_id, int num_classes, int num_frames,
                        double frame_hop) {
  Posteriorgram p;
  p.clip_id = clip_id;
  p.num_classes = num_classes;
  p.num_frames = num_frames;
  p.frame_hop = frame_hop;
  p.scores.assign(static_cast<std::size_t>(num_classes) * num_frames, 0.0);
  return p;
}

Event make_event(double onset, double offset, int c, double conf = 1.0) {
  Event e;
  e.onset = onset;
  e.offset = offset;
  e.class_index = c;
  e.confidence = conf;
  return e;
}

// Random scenario where scores loosely follow the references so the sweep
// produces a mix of hits, misses and false alarms.
struct Scenario {
  std::vector<Posteriorgram> posts;
  std::map<std::string, EventList> refs;
};

Scenario random_scenario(Rng& rng) {
  Scenario s;
  const int num_classes = 1 + static_cast<int>(rng.uniform_index(3));
  const int num_clips = 2 + static_cast<int>(rng.uniform_index(2));
  const int frames = 20;
  const double hop = 0.25;
  for (int i = 0; i < num_clips; ++i) {
    auto post = make_post("clip" + std::to_string(i), num_classes, frames, hop);
    EventList refs;
    refs.clip_id = post.clip_id;
    for (int c = 0; c < num_classes; ++c) {
      const int n_events = static_cast<int>(rng.uniform_index(3));
      for (int e = 0; e < n_events; ++e) {
        const int on = static_cast<int>(rng.uniform_index(frames - 4));
        const int len = 2 + static_cast<int>(rng.uniform_index(6));
        const int off = std::min(frames, on + len);
        refs.events.push_back(make_event(on * hop, off * hop, c));
        const double level = rng.uniform(0.4, 1.0);
        for (int t = on; t < off; ++t) {
          post.at(c, t) = std::max(post.at(c, t), level + rng.uniform(-0.1, 0.1));
        }
      }
      for (int t = 0; t < frames; ++t) {
        if (rng.bernoulli(0.1)) post.at(c, t) = rng.uniform(0.0, 1.0);
      }
      for (int t = 0; t < frames; ++t) {
        post.at(c, t) = std::clamp(post.at(c, t), 0.0, 1.0);
      }
    }
    if (!refs.events.empty()) s.refs.emplace(refs.clip_id, refs);
    s.posts.push_back(std::move(post));
  }
  return s;
}

}  // namespace

TEST_CASE("threshold detector finds maximal runs") {
  auto post = make_post("a", 2, 4, 0.5);
  post.at(0, 1) = 0.8;
  post.at(0, 2) = 0.9;
  post.at(1, 3) = 0.6;
  const EventList dets = threshold_detector(post, 0.5);
  REQUIRE(dets.events.size() == 2);
  CHECK(dets.events[0].onset == 0.5);
  CHECK(dets.events[0].offset == 1.5);
  CHECK(dets.events[0].class_index == 0);
  CHECK(dets.events[1].onset == 1.5);
  CHECK(dets.events[1].offset == 2.0);
  CHECK(dets.events[1].class_index == 1);
}

TEST_CASE("perfect detections score 1 and empty detections 0") {
  std::vector<Posteriorgram> posts;
  std::map<std::string, EventList> refs;
  Rng rng(3);
  for (int i = 0; i < 3; ++i) {
    auto post = make_post("c" + std::to_string(i), 2, 20, 0.5);
    EventList list;
    list.clip_id = post.clip_id;
    for (int c = 0; c < 2; ++c) {
      const int on = 2 + static_cast<int>(rng.uniform_index(8));
      const int off = on + 4;
      list.events.push_back(make_event(on * 0.5, off * 0.5, c));
      for (int t = on; t < off; ++t) post.at(c, t) = 1.0;
    }
    refs.emplace(list.clip_id, list);
    posts.push_back(std::move(post));
  }
  const PsdsParams params;
  CHECK(psds1(posts, refs, params, threshold_detector) == 1.0);

  for (auto& post : posts) std::fill(post.scores.begin(), post.scores.end(), 0.0);
  CHECK(psds1(posts, refs, params, threshold_detector) == 0.0);

  const std::map<std::string, EventList> no_refs;
  CHECK_THROWS_AS(psds1(posts, no_refs, params, threshold_detector), DataError);
}

TEST_CASE("single false alarm carves out exactly its rate interval") {
  // 100 clips x 10 s; one valid detection per threshold plus one false alarm
  // visible at low thresholds only.
  std::vector<Posteriorgram> posts;
  std::map<std::string, EventList> refs;
  for (int i = 0; i < 100; ++i) {
    posts.push_back(make_post("c" + std::to_string(i), 1, 40, 0.25));
  }
  for (int t = 4; t < 8; ++t) posts[0].at(0, t) = 0.5;   // the reference
  for (int t = 20; t < 22; ++t) posts[0].at(0, t) = 0.8;  // the false alarm
  EventList list;
  list.clip_id = "c0";
  list.events.push_back(make_event(1.0, 2.0, 0));
  refs.emplace("c0", list);

  const PsdsParams params;
  const double hours = 100 * 40 * 0.25 / 3600.0;
  const double rate = 1.0 / hours;  // 3.6 per hour
  const double expected = (params.e_max - rate) / params.e_max;
  const double got = psds1(posts, refs, params, threshold_detector);
  CHECK(std::abs(got - expected) <= 1e-12);
  CHECK(std::abs(oracle::oracle_psds1(posts, refs, params, threshold_detector) - got) <=
        1e-9);
}

TEST_CASE("threshold-sweep score matches the brute-force oracle") {
  Rng rng(2024);
  int nontrivial = 0;
  for (int trial = 0; trial < 60; ++trial) {
    Scenario s = random_scenario(rng);
    if (s.refs.empty()) continue;
    PsdsParams params;
    params.n_thresholds = 20;
    if (trial % 3 == 1) params.dtc = params.gtc = 0.5;
    if (trial % 4 == 2) params.alpha_st = 0.0;
    params.e_max = 50.0 + 200.0 * rng.uniform();
    const double fast = psds1(s.posts, s.refs, params, threshold_detector);
    const double slow = oracle::oracle_psds1(s.posts, s.refs, params, threshold_detector);
    CHECK(std::abs(fast - slow) <= 1e-9);
    if (fast > 0.0 && fast < 1.0) ++nontrivial;
  }
  CHECK(nontrivial >= 20);  // the comparison must exercise interior values
}

TEST_CASE("duplicating a reference as a detection never lowers the score") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    Scenario s = random_scenario(rng);
    if (s.refs.empty()) continue;
    PsdsParams params;
    params.n_thresholds = 15;
    const double base = psds1(s.posts, s.refs, params, threshold_detector);
    const auto& refs = s.refs;
    const Detector boosted = [&refs](const Posteriorgram& post, double thr) {
      EventList out = threshold_detector(post, thr);
      const auto it = refs.find(post.clip_id);
      if (it != refs.end()) {
        for (const auto& e : it->second.events) out.events.push_back(e);
      }
      return out;
    };
    const double with_copy = psds1(s.posts, s.refs, params, boosted);
    CHECK(with_copy >= base);
  }
}

TEST_CASE("partial AUC hand-built ROC values") {
  // (0,0) -> (0,.5) -> (.5,.5) -> (.5,1) -> (1,1): area on [0,0.1] is 0.05.
  CHECK(std::abs(partial_auc({0.9, 0.8, 0.4, 0.2}, {1, 0, 1, 0}, 0.1) - 14.0 / 19.0) <=
        1e-12);
  // Tie at 0.5 walks the diagonal: area 0.055.
  CHECK(std::abs(partial_auc({0.9, 0.5, 0.5, 0.1}, {1, 1, 0, 0}, 0.1) - 29.0 / 38.0) <=
        1e-12);
}

TEST_CASE("partial AUC extremes and invariances") {
  std::vector<double> scores;
  std::vector<char> labels;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    const bool pos = i % 2 == 0;
    scores.push_back(pos ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4));
    labels.push_back(pos ? 1 : 0);
  }
  CHECK(partial_auc(scores, labels, 0.1) == 1.0);

  std::vector<double> flipped;
  for (double v : scores) flipped.push_back(1.0 - v);
  CHECK(std::abs(partial_auc(flipped, labels, 0.1) - 9.0 / 19.0) <= 1e-9);

  // Strictly monotone transforms leave the ranking, hence the value, intact.
  std::vector<double> warped;
  for (double v : scores) warped.push_back(std::exp(3.0 * v) - 0.5);
  CHECK(partial_auc(warped, labels, 0.1) == partial_auc(scores, labels, 0.1));

  CHECK_THROWS_AS(partial_auc({0.5, 0.6}, {1, 1}, 0.1), DataError);
}

TEST_CASE("partial AUC sits near one half for random scores") {
  Rng rng(9);
  std::vector<double> scores(10000);
  std::vector<char> labels(10000);
  for (int i = 0; i < 10000; ++i) {
    scores[i] = rng.uniform();
    labels[i] = i % 2 == 0;
  }
  const double v = partial_auc(scores, labels, 0.1);
  CHECK(v > 0.45);
  CHECK(v < 0.55);
}

TEST_CASE("segment scoring pools frames and binarizes soft references") {
  auto post = make_post("m0", 2, 20, 0.5);  // 10 s -> 10 segments
  // Class 1 active in seconds [0,3); class 0 has no references anywhere.
  for (int t = 0; t < 6; ++t) post.at(1, t) = 0.9;
  for (int t = 6; t < 20; ++t) post.at(1, t) = 0.1;
  std::map<std::string, std::vector<SegmentRef>> refs;
  for (int s = 0; s < 3; ++s) {
    SegmentRef r;
    r.onset = s;
    r.offset = s + 1;
    r.class_index = 1;
    r.confidence = 0.8;
    refs["m0"].push_back(r);
  }
  // A sub-threshold reference elsewhere must stay negative.
  SegmentRef weak;
  weak.onset = 5;
  weak.offset = 6;
  weak.class_index = 1;
  weak.confidence = 0.4;
  refs["m0"].push_back(weak);

  std::vector<int> skipped;
  const double v = mpauc({post}, refs, {0, 1}, MpaucParams{}, &skipped);
  CHECK(v == 1.0);  // class 1 separates perfectly; class 0 is skipped
  REQUIRE(skipped.size() == 1);
  CHECK(skipped[0] == 0);

  CHECK_THROWS_AS(mpauc({post}, refs, {0}, MpaucParams{}, nullptr), DataError);
}

TEST_CASE("rank score is the exact sum") {
  CHECK(rank_score(0.0, 0.0) == 0.0);
  CHECK(std::abs(rank_score(0.750, 0.548) - 1.298) <= 1e-12);
  CHECK(std::abs(rank_score(0.735, 0.569) - 1.303) <= 0.001 + 1e-12);
  const MetricReport r = make_report(0.31, 0.57);
  CHECK(r.rank_score == r.mpauc + r.psds1);
}

TEST_CASE("metric tables render both formats") {
  std::vector<MetricRow> rows;
  rows.push_back({"i1s2 seed=1", make_report(0.5, 0.25)});
  const std::string csv = render_metrics_csv(rows);
  CHECK(csv == "label,mpauc,psds1,rank_score\ni1s2 seed=1,0.25,0.5,0.75\n");
  const std::string md = render_metrics_markdown(rows);
  CHECK(md.find("| Model | mpAUC | PSDS1 | Rank Score |") == 0);
  CHECK(md.find("| i1s2 seed=1 | 0.25 | 0.5 | 0.75 |") != std::string::npos);
}
