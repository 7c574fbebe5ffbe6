#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hetsed/config.hpp"
#include "hetsed/core.hpp"
#include "hetsed/rng.hpp"

namespace hetsed {

// Shortest decimal representation that parses back to the same double;
// shared by every text writer so outputs are stable and lossless.
std::string format_double(double x);

// ---------------------------------------------------------------------------
// Annotation interchange formats (DCASE-style TSV)
// ---------------------------------------------------------------------------

// Strong annotations: filename \t onset \t offset \t event_label, one header
// row. Events grouped by filename in first-appearance order.
std::vector<EventList> parse_events_tsv(std::istream& in, const ClassVocabulary& vocab);
std::string serialize_events_tsv(const std::vector<EventList>& lists,
                                 const ClassVocabulary& vocab);

// Soft 1 s segment annotations: filename \t onset \t offset \t event_label \t confidence.
struct SegmentRef {
  double onset = 0.0;
  double offset = 0.0;
  int class_index = 0;
  double confidence = 0.0;
};
struct SegmentList {
  std::string clip_id;
  std::vector<SegmentRef> segments;
};
std::vector<SegmentList> parse_soft_segments_tsv(std::istream& in,
                                                 const ClassVocabulary& vocab);
std::string serialize_soft_segments_tsv(const std::vector<SegmentList>& lists,
                                        const ClassVocabulary& vocab);

// Weak annotations: filename \t comma-separated event labels.
struct WeakList {
  std::string clip_id;
  std::vector<int> classes;
};
std::vector<WeakList> parse_weak_tsv(std::istream& in, const ClassVocabulary& vocab);
std::string serialize_weak_tsv(const std::vector<WeakList>& lists,
                               const ClassVocabulary& vocab);

// ---------------------------------------------------------------------------
// Posteriorgram score files: one TSV per clip (frame index column + one
// column per union class, header row of class names) plus an index file.
// ---------------------------------------------------------------------------

void write_posteriorgram_tsv(std::ostream& out, const Posteriorgram& post,
                             const ClassVocabulary& vocab);
Posteriorgram read_posteriorgram_tsv(std::istream& in, const ClassVocabulary& vocab,
                                     const std::string& clip_id, double frame_hop);

void write_score_dir(const std::string& dir, const std::vector<Posteriorgram>& posts,
                     const ClassVocabulary& vocab);
std::vector<Posteriorgram> read_score_dir(const std::string& dir,
                                          const ClassVocabulary& vocab);

// Binary feature grids (magic + dims + row-major doubles); bit-exact round trip.
void write_feature_grid(const std::string& path, int bins, int frames,
                        const std::vector<double>& data);
void read_feature_grid(const std::string& path, int& bins, int& frames,
                       std::vector<double>& data);

// FNV-1a over file bytes in sorted relative-path order; the corpus hash.
std::uint64_t hash_directory(const std::string& dir);
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

// ---------------------------------------------------------------------------
// Label rasterization
// ---------------------------------------------------------------------------

// 50%-overlap rule: frame f is active iff the class's events (union measure)
// overlap [f*hop, (f+1)*hop) by at least half the frame.
FrameLabelGrid rasterize_events(const EventList& events, int num_classes, int num_frames,
                                double frame_hop, const std::vector<char>& loss_mask);

// Soft segments to frames by overlap-weighted averaging of segment confidences.
FrameLabelGrid rasterize_segments(const std::vector<SegmentRef>& segments, int num_classes,
                                  int num_frames, double frame_hop,
                                  const std::vector<char>& loss_mask);

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct CorpusConfig {
  // Train clip counts, ordered as the five subsets.
  std::array<int, kNumSubsets> train_clips = {24, 20, 20, 30, 30};
  int valid_clips_per_split = 10;  // each of synth / real / maestro
  int test_clips_per_split = 12;

  double clip_duration = 10.0;  // seconds
  int feature_bins = 32;        // F
  int input_frames = 100;       // T_in
  int label_frames = 25;        // frame grid of training targets (model output)
  int desed_classes = 4;
  int maestro_classes = 4;
  double event_rate = 2.0;   // expected events per clip
  double noise_level = 0.08;
  std::uint64_t seed = 1;

  double input_hop() const { return clip_duration / input_frames; }
  double label_hop() const { return clip_duration / label_frames; }
};

CorpusConfig corpus_config_from(const ConfigFile& cfg);
void corpus_config_to(const CorpusConfig& cc, ConfigFile& cfg);

struct Corpus {
  Corpus(ClassVocabulary v, ClassMapping m, CorpusConfig c)
      : vocab(std::move(v)), mapping(std::move(m)), config(c) {}

  ClassVocabulary vocab;
  ClassMapping mapping;
  CorpusConfig config;

  std::array<std::vector<ClipRecord>, kNumSubsets> train;
  std::vector<ClipRecord> valid_synth, valid_real, valid_maestro;
  std::vector<ClipRecord> test_synth, test_real, test_maestro;

  // Exact ground-truth events for every generated clip (union indices).
  std::map<std::string, EventList> strong_refs;
  // MAESTRO soft 1 s segment references (eval splits and train).
  std::map<std::string, std::vector<SegmentRef>> segment_refs;

  const std::vector<ClipRecord>& subset(Subset s) const {
    return train[static_cast<int>(s)];
  }
  std::vector<ClipRecord>& subset(Subset s) { return train[static_cast<int>(s)]; }
};

// Builds the default desk-scale vocabulary for the given class counts: two
// cross-dataset concept pairs (speech-like and dishes-like) linked in both
// directions, remaining classes dataset-private.
ClassVocabulary default_vocabulary(int desed_classes, int maestro_classes);
ClassMapping default_mapping(const ClassVocabulary& vocab);

// Deterministic given config.seed: each class has a frequency-localized
// spectral prototype; events are placed at random onsets over background
// noise; linked concept pairs share prototypes across the datasets.
Corpus generate_synthetic_corpus(const CorpusConfig& config);

void write_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

struct BatchComposition {
  std::array<int, kNumSubsets> counts = {0, 0, 0, 0, 0};

  static BatchComposition stage1_default() { return {{12, 10, 10, 20, 20}}; }
  static BatchComposition stage2_default() { return {{56, 40, 40, 72, 72}}; }

  int total() const;
};

// Within an epoch each subset is sampled without replacement; exhausted
// subsets are reshuffled. Single-owner state.
class EpochSampler {
 public:
  EpochSampler(const std::array<std::vector<ClipRecord>, kNumSubsets>* subsets,
               std::uint64_t seed);

  std::vector<const ClipRecord*> sample_batch(const BatchComposition& composition);

 private:
  const std::array<std::vector<ClipRecord>, kNumSubsets>* subsets_;
  std::array<std::vector<int>, kNumSubsets> order_;
  std::array<std::size_t, kNumSubsets> cursor_;
  Rng rng_;
};

}  // namespace hetsed
