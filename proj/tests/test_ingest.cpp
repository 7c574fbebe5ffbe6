#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "hetsed/ingest.hpp"

using namespace hetsed;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("hetsed_ing_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

ClassVocabulary tiny_vocab() {
  return ClassVocabulary({"Speech", "Dishes"}, {"people_talking", "cutlery"});
}

}  // namespace

TEST_CASE("strong annotation tsv round trip") {
  const auto v = tiny_vocab();
  std::vector<EventList> lists(2);
  lists[0].clip_id = "a";
  lists[0].events = {{0.25, 1.5, 0, 1.0}, {3.0, 9.999999999, 1, 1.0}};
  lists[1].clip_id = "b";
  lists[1].events = {{0.1, 0.2, 1, 1.0}};
  const auto text = serialize_events_tsv(lists, v);
  std::istringstream in(text);
  const auto back = parse_events_tsv(in, v);
  REQUIRE(back.size() == 2);
  CHECK(back[0].clip_id == "a");
  REQUIRE(back[0].events.size() == 2);
  CHECK(back[0].events[0].onset == 0.25);
  CHECK(back[0].events[1].offset == 9.999999999);
  CHECK(back[0].events[1].class_index == 1);
  CHECK(back[1].events[0].class_index == 1);
}

TEST_CASE("strong annotation parse errors carry line numbers") {
  const auto v = tiny_vocab();
  auto expect_error = [&](const std::string& text, const char* fragment) {
    std::istringstream in(text);
    CHECK_THROWS_WITH_AS((void)parse_events_tsv(in, v), doctest::Contains(fragment), DataError);
  };
  expect_error("", "missing header");
  expect_error("h\na\t1\t2\n", "line 2");
  expect_error("h\na\t1\tx\tSpeech\n", "non-numeric offset");
  expect_error("h\na\t2\t1\tSpeech\n", "onset >= offset");
  expect_error("h\na\t1\t2\tGhost\n", "Ghost");
}

TEST_CASE("soft segment tsv round trip and confidence range") {
  const auto v = tiny_vocab();
  std::vector<SegmentList> lists(1);
  lists[0].clip_id = "m";
  lists[0].segments = {{0.0, 1.0, 2, 0.375}, {1.0, 2.0, 3, 1.0}};
  const auto text = serialize_soft_segments_tsv(lists, v);
  std::istringstream in(text);
  const auto back = parse_soft_segments_tsv(in, v);
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].segments.size() == 2);
  CHECK(back[0].segments[0].confidence == 0.375);
  CHECK(back[0].segments[0].class_index == 2);

  std::istringstream bad("h\nm\t0\t1\tcutlery\t1.5\n");
  CHECK_THROWS_WITH_AS((void)parse_soft_segments_tsv(bad, v),
                       doctest::Contains("confidence outside"), DataError);
}

TEST_CASE("weak annotation tsv round trip") {
  const auto v = tiny_vocab();
  std::vector<WeakList> lists = {{"w1", {0, 1}}, {"w2", {1}}, {"w3", {}}};
  const auto text = serialize_weak_tsv(lists, v);
  std::istringstream in(text);
  const auto back = parse_weak_tsv(in, v);
  REQUIRE(back.size() == 3);
  CHECK(back[0].classes == std::vector<int>{0, 1});
  CHECK(back[1].classes == std::vector<int>{1});
  CHECK(back[2].classes.empty());
}

TEST_CASE("posteriorgram tsv round trip is bit-exact") {
  const auto v = tiny_vocab();
  Posteriorgram post;
  post.clip_id = "p";
  post.num_classes = v.num_classes();
  post.num_frames = 7;
  post.frame_hop = 0.4;
  post.scores.resize(static_cast<std::size_t>(post.num_classes) * post.num_frames);
  Rng rng(7);
  for (auto& s : post.scores) s = rng.uniform();

  std::ostringstream out;
  write_posteriorgram_tsv(out, post, v);
  std::istringstream in(out.str());
  const auto back = read_posteriorgram_tsv(in, v, "p", 0.4);
  CHECK(back.num_frames == 7);
  CHECK(back.scores == post.scores);

  std::istringstream wrong_header("frame\tDishes\tSpeech\tpeople_talking\tcutlery\n");
  CHECK_THROWS_AS((void)read_posteriorgram_tsv(wrong_header, v, "p", 0.4), DataError);
  std::istringstream bad_range(
      "frame\tSpeech\tDishes\tpeople_talking\tcutlery\n0\t1.2\t0\t0\t0\n");
  CHECK_THROWS_AS((void)read_posteriorgram_tsv(bad_range, v, "p", 0.4), DataError);
}

TEST_CASE("score directory round trip") {
  const auto v = tiny_vocab();
  TempDir dir;
  std::vector<Posteriorgram> posts(3);
  Rng rng(11);
  for (int i = 0; i < 3; ++i) {
    posts[i].clip_id = "clip" + std::to_string(i);
    posts[i].num_classes = v.num_classes();
    posts[i].num_frames = 5;
    posts[i].frame_hop = 0.1 * (i + 1);
    posts[i].scores.resize(static_cast<std::size_t>(v.num_classes()) * 5);
    for (auto& s : posts[i].scores) s = rng.uniform();
  }
  write_score_dir(dir.path.string(), posts, v);
  const auto back = read_score_dir(dir.path.string(), v);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[i].clip_id == posts[i].clip_id);
    CHECK(back[i].frame_hop == posts[i].frame_hop);
    CHECK(back[i].scores == posts[i].scores);
  }
}

TEST_CASE("feature grid binary round trip") {
  TempDir dir;
  const auto path = (dir.path / "x.feat").string();
  std::vector<double> data(6 * 4);
  Rng rng(3);
  for (auto& x : data) x = rng.normal();
  write_feature_grid(path, 6, 4, data);
  int bins = 0, frames = 0;
  std::vector<double> back;
  read_feature_grid(path, bins, frames, back);
  CHECK(bins == 6);
  CHECK(frames == 4);
  CHECK(back == data);

  const auto bogus = (dir.path / "bogus.feat").string();
  std::ofstream(bogus, std::ios::binary) << "NOPE....";
  CHECK_THROWS_AS(read_feature_grid(bogus, bins, frames, back), DataError);
}

TEST_CASE("event rasterization follows the half-overlap rule") {
  EventList list;
  list.clip_id = "r";
  // hop = 0.4 s over 25 frames. Event [0.55, 1.0): frame 1 = [0.4,0.8) gets
  // 0.25 s < 0.2?  No: overlap 0.8-0.55 = 0.25 >= 0.2 -> active.  Frame 2 =
  // [0.8,1.2) overlap 0.2 >= 0.2 -> active.  Frame 0 overlap 0 -> off.
  list.events.push_back({0.55, 1.0, 0, 1.0});
  const std::vector<char> mask = {1, 1};
  auto grid = rasterize_events(list, 2, 25, 0.4, mask);
  CHECK(grid.at(0, 0) == 0.0);
  CHECK(grid.at(0, 1) == 1.0);
  CHECK(grid.at(0, 2) == 1.0);
  CHECK(grid.at(0, 3) == 0.0);
  CHECK(grid.loss_mask == mask);

  // Two events of the same class merge by union measure: each covers 0.1 s of
  // frame 0, disjoint -> 0.2 s total, exactly half the frame -> active.
  EventList pair;
  pair.clip_id = "u";
  pair.events.push_back({0.0, 0.1, 1, 1.0});
  pair.events.push_back({0.25, 0.35, 1, 1.0});
  grid = rasterize_events(pair, 2, 1, 0.4, mask);
  CHECK(grid.at(1, 0) == 1.0);
  CHECK(grid.at(0, 0) == 0.0);

  // Overlapping spans are not double counted.
  EventList overlap;
  overlap.clip_id = "o";
  overlap.events.push_back({0.0, 0.15, 1, 1.0});
  overlap.events.push_back({0.05, 0.15, 1, 1.0});
  grid = rasterize_events(overlap, 2, 1, 0.4, mask);
  CHECK(grid.at(1, 0) == 0.0);
}

TEST_CASE("soft segments rasterize by overlap-weighted averaging") {
  // 1 s segments onto 0.4 s frames: frame 2 = [0.8, 1.2) straddles the
  // segment boundary, weights 0.2/0.2 -> mean of the two confidences.
  std::vector<SegmentRef> segs = {{0.0, 1.0, 0, 0.8}, {1.0, 2.0, 0, 0.2}};
  const std::vector<char> mask = {1};
  const auto grid = rasterize_segments(segs, 1, 5, 0.4, mask);
  CHECK(grid.at(0, 0) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(grid.at(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(grid.at(0, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(grid.at(0, 3) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(grid.at(0, 4) == doctest::Approx(0.2).epsilon(1e-12));
}

namespace {

CorpusConfig small_corpus_config() {
  CorpusConfig cc;
  cc.train_clips = {4, 3, 3, 4, 4};
  cc.valid_clips_per_split = 2;
  cc.test_clips_per_split = 2;
  cc.seed = 42;
  return cc;
}

}  // namespace

TEST_CASE("synthetic corpus generation is deterministic and well-formed") {
  const auto cc = small_corpus_config();
  const auto corpus = generate_synthetic_corpus(cc);
  const auto again = generate_synthetic_corpus(cc);

  CHECK(corpus.vocab.num_classes() == 8);
  CHECK(corpus.mapping.maestro_to_desed().size() == 2);
  CHECK(corpus.mapping.desed_to_maestro().size() == 2);
  for (int s = 0; s < kNumSubsets; ++s) {
    CHECK(static_cast<int>(corpus.train[s].size()) == cc.train_clips[s]);
    for (std::size_t i = 0; i < corpus.train[s].size(); ++i) {
      const auto& clip = corpus.train[s][i];
      CHECK(clip.num_feature_bins == cc.feature_bins);
      CHECK(clip.num_input_frames == cc.input_frames);
      CHECK(clip.features == again.train[s][i].features);
      CHECK(corpus.strong_refs.count(clip.clip_id) == 1);
    }
  }
  CHECK(corpus.valid_synth.size() == 2);
  CHECK(corpus.test_maestro.size() == 2);

  // Label styles per subset.
  for (const auto& clip : corpus.subset(Subset::kMaestroStrong)) {
    CHECK(clip.strong_labels.has_value());
    CHECK(!clip.weak_labels.has_value());
  }
  for (const auto& clip : corpus.subset(Subset::kDesedWeak)) {
    CHECK(!clip.strong_labels.has_value());
    CHECK(clip.weak_labels.has_value());
  }
  for (const auto& clip : corpus.subset(Subset::kDesedUnlabeled)) {
    CHECK(!clip.strong_labels.has_value());
    CHECK(!clip.weak_labels.has_value());
  }

  // A changed seed changes the data.
  auto other_cfg = cc;
  other_cfg.seed = 43;
  const auto other = generate_synthetic_corpus(other_cfg);
  CHECK(other.train[0][0].features != corpus.train[0][0].features);
}

TEST_CASE("generated labels agree with the ground-truth events") {
  const auto cc = small_corpus_config();
  const auto corpus = generate_synthetic_corpus(cc);

  // Weak labels are exactly the classes present in the truth events.
  for (const auto& clip : corpus.subset(Subset::kDesedWeak)) {
    std::set<int> present;
    for (const auto& e : corpus.strong_refs.at(clip.clip_id).events) {
      present.insert(e.class_index);
    }
    for (int c = 0; c < corpus.vocab.num_classes(); ++c) {
      CHECK(clip.weak_labels->targets[c] == (present.count(c) ? 1.0 : 0.0));
    }
  }

  // Native labels only: desed rows masked for maestro clips and vice versa.
  for (const auto& clip : corpus.subset(Subset::kMaestroStrong)) {
    for (int c = 0; c < corpus.vocab.num_desed(); ++c) {
      CHECK(clip.strong_labels->loss_mask[c] == 0);
    }
  }

  // MAESTRO soft segment confidences equal the event coverage per 1 s bin.
  for (const auto& clip : corpus.subset(Subset::kMaestroStrong)) {
    const auto& truth = corpus.strong_refs.at(clip.clip_id);
    for (const auto& seg : corpus.segment_refs.at(clip.clip_id)) {
      // Recompute union coverage of seg's class within [onset, offset).
      std::vector<std::pair<double, double>> spans;
      for (const auto& e : truth.events) {
        if (e.class_index != seg.class_index) continue;
        const double a = std::max(e.onset, seg.onset);
        const double b = std::min(e.offset, seg.offset);
        if (a < b) spans.emplace_back(a, b);
      }
      std::sort(spans.begin(), spans.end());
      double covered = 0.0, end = -1.0;
      for (const auto& [a, b] : spans) {
        covered += std::max(0.0, b - std::max(a, end));
        end = std::max(end, b);
      }
      CHECK(seg.confidence ==
            doctest::Approx(covered / (seg.offset - seg.onset)).epsilon(1e-12));
      CHECK(seg.confidence > 0.0);
    }
  }

  // Strong grids match re-rasterized truth.
  for (const auto& clip : corpus.subset(Subset::kDesedSynthStrong)) {
    const auto grid =
        rasterize_events(corpus.strong_refs.at(clip.clip_id), corpus.vocab.num_classes(),
                         cc.label_frames, cc.label_hop(), clip.strong_labels->loss_mask);
    CHECK(grid.targets == clip.strong_labels->targets);
  }
}

TEST_CASE("corpus rejects degenerate configurations") {
  CorpusConfig cc = small_corpus_config();
  cc.train_clips = {0, 0, 0, 0, 0};
  CHECK_THROWS_AS(generate_synthetic_corpus(cc), ConfigError);
  cc = small_corpus_config();
  cc.desed_classes = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(cc), ConfigError);
  cc = small_corpus_config();
  cc.event_rate = -1.0;
  CHECK_THROWS_AS(generate_synthetic_corpus(cc), ConfigError);
  cc = small_corpus_config();
  cc.feature_bins = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(cc), ConfigError);
}

TEST_CASE("corpus write/load round trip") {
  const auto cc = small_corpus_config();
  const auto corpus = generate_synthetic_corpus(cc);
  TempDir dir;
  const auto root = (dir.path / "corpus").string();
  write_corpus(corpus, root);

  // Writing the same corpus twice produces identical bytes.
  const auto root2 = (dir.path / "corpus2").string();
  write_corpus(corpus, root2);
  CHECK(hash_directory(root) == hash_directory(root2));

  const auto back = load_corpus(root);
  CHECK(back.vocab.num_classes() == corpus.vocab.num_classes());
  for (int c = 0; c < corpus.vocab.num_classes(); ++c) {
    CHECK(back.vocab.name_of(c) == corpus.vocab.name_of(c));
  }
  CHECK(back.mapping.maestro_to_desed().size() == 2);
  CHECK(back.config.seed == cc.seed);
  CHECK(back.config.label_frames == cc.label_frames);

  for (int s = 0; s < kNumSubsets; ++s) {
    REQUIRE(back.train[s].size() == corpus.train[s].size());
    for (std::size_t i = 0; i < corpus.train[s].size(); ++i) {
      const auto& a = corpus.train[s][i];
      const auto& b = back.train[s][i];
      CHECK(a.clip_id == b.clip_id);
      CHECK(a.subset == b.subset);
      CHECK(a.features == b.features);  // bit-exact via binary features
      CHECK(a.strong_labels.has_value() == b.strong_labels.has_value());
      if (a.strong_labels) {
        CHECK(a.strong_labels->targets == b.strong_labels->targets);
        CHECK(a.strong_labels->loss_mask == b.strong_labels->loss_mask);
      }
      CHECK(a.weak_labels.has_value() == b.weak_labels.has_value());
      if (a.weak_labels) CHECK(a.weak_labels->targets == b.weak_labels->targets);
    }
  }
  REQUIRE(back.valid_real.size() == corpus.valid_real.size());
  CHECK(back.valid_real[0].features == corpus.valid_real[0].features);
  CHECK(back.strong_refs.size() == corpus.strong_refs.size());
  for (const auto& [id, ref] : corpus.strong_refs) {
    const auto& loaded = back.strong_refs.at(id);
    REQUIRE(loaded.events.size() == ref.events.size());
    for (std::size_t i = 0; i < ref.events.size(); ++i) {
      CHECK(loaded.events[i].onset == ref.events[i].onset);
      CHECK(loaded.events[i].offset == ref.events[i].offset);
      CHECK(loaded.events[i].class_index == ref.events[i].class_index);
    }
  }
}

TEST_CASE("epoch sampler honors composition and samples without replacement") {
  const auto cc = small_corpus_config();
  const auto corpus = generate_synthetic_corpus(cc);
  EpochSampler sampler(&corpus.train, 9);
  BatchComposition comp;
  comp.counts = {2, 1, 1, 2, 2};
  CHECK(comp.total() == 8);

  std::array<std::multiset<std::string>, kNumSubsets> seen;
  for (int b = 0; b < 2; ++b) {  // 2 batches -> 4 maestro draws from pool of 4
    const auto batch = sampler.sample_batch(comp);
    REQUIRE(batch.size() == 8);
    int i = 0;
    for (int s = 0; s < kNumSubsets; ++s) {
      for (int k = 0; k < comp.counts[s]; ++k, ++i) {
        CHECK(batch[i]->subset == static_cast<Subset>(s));
        seen[s].insert(batch[i]->clip_id);
      }
    }
  }
  // 4 maestro draws over a pool of 4: all distinct (without replacement).
  CHECK(seen[0].size() == 4);
  CHECK(std::set<std::string>(seen[0].begin(), seen[0].end()).size() == 4);

  // Determinism given the seed.
  EpochSampler s1(&corpus.train, 123), s2(&corpus.train, 123);
  for (int b = 0; b < 3; ++b) {
    const auto b1 = s1.sample_batch(comp);
    const auto b2 = s2.sample_batch(comp);
    for (std::size_t i = 0; i < b1.size(); ++i) CHECK(b1[i]->clip_id == b2[i]->clip_id);
  }

  // Requesting clips from an empty subset is an error.
  std::array<std::vector<ClipRecord>, kNumSubsets> empty_pools;
  EpochSampler empty_sampler(&empty_pools, 1);
  CHECK_THROWS_AS(empty_sampler.sample_batch(comp), DataError);

  CHECK(BatchComposition::stage1_default().total() == 72);
  CHECK(BatchComposition::stage2_default().total() == 280);
}
