#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hetsed/ingest.hpp"

namespace hetsed {

namespace {

namespace fs = std::filesystem;

// Real-dataset class names seed the defaults; synthetic extras fill larger
// vocabularies.
const char* kDesedNames[] = {"Speech", "Dishes", "Alarm_bell_ringing", "Blender",
                             "Running_water", "Vacuum_cleaner", "Frying", "Dog"};
const char* kMaestroNames[] = {"people_talking", "cutlery_and_dishes", "birds_singing",
                               "footsteps", "car", "wind_blowing", "metro_approaching",
                               "children_voices"};

std::vector<std::string> make_names(const char* const* base, int base_count, int want,
                                    const std::string& extra_prefix) {
  std::vector<std::string> out;
  for (int i = 0; i < want; ++i) {
    if (i < base_count) {
      out.push_back(base[i]);
    } else {
      out.push_back(extra_prefix + std::to_string(i));
    }
  }
  return out;
}

struct Prototype {
  double center_bin = 0.0;
  double width = 1.0;
};

// One spectral prototype per acoustic concept; linked class pairs share the
// concept so the same sound appears in both datasets.
std::vector<Prototype> concept_prototypes(const ClassVocabulary& vocab,
                                          const ClassMapping& mapping, int feature_bins,
                                          std::vector<int>& concept_of_class) {
  const int C = vocab.num_classes();
  concept_of_class.assign(C, -1);
  int n_concepts = 0;
  for (int d = 0; d < vocab.num_desed(); ++d) concept_of_class[d] = n_concepts++;
  for (int m = vocab.num_desed(); m < C; ++m) {
    int linked = -1;
    for (const auto& l : mapping.maestro_to_desed()) {
      if (l.source == m) linked = l.target;
    }
    concept_of_class[m] = linked >= 0 ? concept_of_class[linked] : n_concepts++;
  }
  std::vector<Prototype> protos(n_concepts);
  for (int k = 0; k < n_concepts; ++k) {
    const double frac = n_concepts > 1 ? static_cast<double>(k) / (n_concepts - 1) : 0.5;
    protos[k].center_bin = feature_bins * (0.15 + 0.70 * frac);
    protos[k].width = std::max(0.8, feature_bins / 20.0);
  }
  return protos;
}

struct ClipSpec {
  Subset label_style;     // which label fields to attach
  double noise_scale;     // relative to config.noise_level
  double amp_lo, amp_hi;
};

ClipSpec spec_for(Subset s) {
  switch (s) {
    case Subset::kMaestroStrong: return {s, 1.0, 0.7, 1.4};
    case Subset::kDesedRealStrong: return {s, 1.3, 0.6, 1.5};
    case Subset::kDesedSynthStrong: return {s, 0.8, 0.7, 1.4};
    case Subset::kDesedWeak: return {s, 1.0, 0.7, 1.4};
    case Subset::kDesedUnlabeled: return {s, 1.0, 0.7, 1.4};
  }
  return {s, 1.0, 0.7, 1.4};
}

// Soft 1 s confidences are the event-coverage fraction of each segment.
std::vector<SegmentRef> soften_to_segments(const EventList& events, double duration,
                                           const ClassVocabulary& vocab) {
  std::vector<SegmentRef> out;
  const int n_segments = static_cast<int>(std::ceil(duration - 1e-9));
  for (int c = vocab.num_desed(); c < vocab.num_classes(); ++c) {
    for (int s = 0; s < n_segments; ++s) {
      const double lo = s;
      const double hi = std::min(duration, lo + 1.0);
      std::vector<std::pair<double, double>> spans;
      for (const auto& e : events.events) {
        if (e.class_index != c) continue;
        const double a = std::max(e.onset, lo);
        const double b = std::min(e.offset, hi);
        if (a < b) spans.emplace_back(a, b);
      }
      if (spans.empty()) continue;
      std::sort(spans.begin(), spans.end());
      double covered = 0.0, cur_a = spans[0].first, cur_b = spans[0].second;
      for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].first > cur_b) {
          covered += cur_b - cur_a;
          cur_a = spans[i].first;
          cur_b = spans[i].second;
        } else {
          cur_b = std::max(cur_b, spans[i].second);
        }
      }
      covered += cur_b - cur_a;
      const double conf = covered / (hi - lo);
      if (conf > 0.0) out.push_back({lo, hi, c, conf});
    }
  }
  return out;
}

struct GeneratedClip {
  ClipRecord record;
  EventList truth;
  std::vector<SegmentRef> segments;  // maestro style only
};

GeneratedClip generate_clip(const CorpusConfig& cfg, const ClassVocabulary& vocab,
                            const std::vector<int>& concept_of_class,
                            const std::vector<Prototype>& protos, Subset subset,
                            const std::string& clip_id, std::uint64_t stream_seed) {
  Rng rng(stream_seed);
  const ClipSpec spec = spec_for(subset);
  const int F = cfg.feature_bins;
  const int T = cfg.input_frames;
  const double hop = cfg.input_hop();

  GeneratedClip out;
  out.record.clip_id = clip_id;
  out.record.subset = subset;
  out.record.num_feature_bins = F;
  out.record.num_input_frames = T;
  out.record.features.resize(static_cast<std::size_t>(F) * T);
  for (auto& v : out.record.features) {
    v = cfg.noise_level * spec.noise_scale * std::abs(rng.normal());
  }

  out.truth.clip_id = clip_id;
  const auto native = vocab.native_indices(subset);
  const int n_events = rng.poisson(cfg.event_rate);
  for (int k = 0; k < n_events; ++k) {
    Event ev;
    ev.class_index = native[rng.uniform_index(native.size())];
    const double dur = rng.uniform(0.8, 3.0);
    ev.onset = rng.uniform(0.0, cfg.clip_duration - dur);
    ev.offset = ev.onset + dur;
    ev.confidence = 1.0;
    const double amp = rng.uniform(spec.amp_lo, spec.amp_hi);
    const auto& proto = protos[concept_of_class[ev.class_index]];
    const double ramp = 0.15 * dur;
    for (int t = 0; t < T; ++t) {
      const double mid = (t + 0.5) * hop;
      if (mid < ev.onset || mid >= ev.offset) continue;
      double env = 1.0;
      if (mid < ev.onset + ramp) env = (mid - ev.onset) / ramp;
      if (mid > ev.offset - ramp) env = std::min(env, (ev.offset - mid) / ramp);
      for (int f = 0; f < F; ++f) {
        const double d = (f - proto.center_bin) / proto.width;
        out.record.feature(f, t) += amp * env * std::exp(-0.5 * d * d);
      }
    }
    out.truth.events.push_back(ev);
  }
  std::sort(out.truth.events.begin(), out.truth.events.end(),
            [](const Event& a, const Event& b) {
              return a.onset != b.onset ? a.onset < b.onset : a.class_index < b.class_index;
            });

  const auto native_mask = build_loss_mask(subset, vocab, ClassMapping(), false);
  const int Tl = cfg.label_frames;
  switch (subset) {
    case Subset::kMaestroStrong: {
      out.segments = soften_to_segments(out.truth, cfg.clip_duration, vocab);
      out.record.strong_labels =
          rasterize_segments(out.segments, vocab.num_classes(), Tl, cfg.label_hop(), native_mask);
      break;
    }
    case Subset::kDesedRealStrong:
    case Subset::kDesedSynthStrong: {
      out.record.strong_labels =
          rasterize_events(out.truth, vocab.num_classes(), Tl, cfg.label_hop(), native_mask);
      break;
    }
    case Subset::kDesedWeak: {
      WeakLabelVector weak;
      weak.targets.assign(vocab.num_classes(), 0.0);
      weak.loss_mask = native_mask;
      for (const auto& e : out.truth.events) weak.targets[e.class_index] = 1.0;
      out.record.weak_labels = std::move(weak);
      break;
    }
    case Subset::kDesedUnlabeled:
      break;
  }
  return out;
}

// Eval splits reuse the subset generators with their own seed streams.
constexpr int kStreamValidSynth = 5;
constexpr int kStreamValidReal = 6;
constexpr int kStreamValidMaestro = 7;
constexpr int kStreamTestSynth = 8;
constexpr int kStreamTestReal = 9;
constexpr int kStreamTestMaestro = 10;

std::uint64_t clip_stream(std::uint64_t seed, int stream, int index) {
  return Rng::derive_seed(seed, (static_cast<std::uint64_t>(stream) << 32) |
                                    static_cast<std::uint64_t>(index));
}

}  // namespace

ClassVocabulary default_vocabulary(int desed_classes, int maestro_classes) {
  if (desed_classes < 2 || maestro_classes < 2) {
    throw ConfigError("default vocabulary needs at least 2 classes per dataset");
  }
  return ClassVocabulary(
      make_names(kDesedNames, 8, desed_classes, "Desed_extra_"),
      make_names(kMaestroNames, 8, maestro_classes, "maestro_extra_"));
}

ClassMapping default_mapping(const ClassVocabulary& vocab) {
  // The two concept pairs, linked in both directions.
  ClassMapping mapping;
  mapping.add_maestro_to_desed(vocab, "people_talking", "Speech");
  mapping.add_maestro_to_desed(vocab, "cutlery_and_dishes", "Dishes");
  mapping.add_desed_to_maestro(vocab, "Speech", "people_talking");
  mapping.add_desed_to_maestro(vocab, "Dishes", "cutlery_and_dishes");
  return mapping;
}

CorpusConfig corpus_config_from(const ConfigFile& cfg) {
  CorpusConfig cc;
  for (int s = 0; s < kNumSubsets; ++s) {
    cc.train_clips[s] =
        cfg.get_int("corpus", subset_name(static_cast<Subset>(s)), cc.train_clips[s]);
  }
  cc.valid_clips_per_split = cfg.get_int("corpus", "valid_clips", cc.valid_clips_per_split);
  cc.test_clips_per_split = cfg.get_int("corpus", "test_clips", cc.test_clips_per_split);
  cc.clip_duration = cfg.get_double("corpus", "clip_duration", cc.clip_duration);
  cc.feature_bins = cfg.get_int("corpus", "feature_bins", cc.feature_bins);
  cc.input_frames = cfg.get_int("corpus", "input_frames", cc.input_frames);
  cc.label_frames = cfg.get_int("corpus", "label_frames", cc.label_frames);
  cc.desed_classes = cfg.get_int("corpus", "desed_classes", cc.desed_classes);
  cc.maestro_classes = cfg.get_int("corpus", "maestro_classes", cc.maestro_classes);
  cc.event_rate = cfg.get_double("corpus", "event_rate", cc.event_rate);
  cc.noise_level = cfg.get_double("corpus", "noise_level", cc.noise_level);
  cc.seed = cfg.get_u64("corpus", "seed", cc.seed);
  return cc;
}

void corpus_config_to(const CorpusConfig& cc, ConfigFile& cfg) {
  auto put_int = [&](const std::string& k, long long v) {
    cfg.set("corpus", k, std::to_string(v));
  };
  for (int s = 0; s < kNumSubsets; ++s) {
    put_int(subset_name(static_cast<Subset>(s)), cc.train_clips[s]);
  }
  put_int("valid_clips", cc.valid_clips_per_split);
  put_int("test_clips", cc.test_clips_per_split);
  std::ostringstream dur;
  dur << cc.clip_duration;
  cfg.set("corpus", "clip_duration", dur.str());
  put_int("feature_bins", cc.feature_bins);
  put_int("input_frames", cc.input_frames);
  put_int("label_frames", cc.label_frames);
  put_int("desed_classes", cc.desed_classes);
  put_int("maestro_classes", cc.maestro_classes);
  std::ostringstream er, nl;
  er << cc.event_rate;
  nl << cc.noise_level;
  cfg.set("corpus", "event_rate", er.str());
  cfg.set("corpus", "noise_level", nl.str());
  put_int("seed", static_cast<long long>(cc.seed));
}

Corpus generate_synthetic_corpus(const CorpusConfig& config) {
  int total = 0;
  for (int n : config.train_clips) {
    if (n < 0) throw ConfigError("negative clip count");
    total += n;
  }
  if (total == 0) throw ConfigError("corpus has zero training clips");
  if (config.desed_classes < 2 || config.maestro_classes < 2) {
    throw ConfigError("corpus needs at least 2 classes per dataset");
  }
  if (config.event_rate < 0.0) throw ConfigError("negative event rate");
  if (config.feature_bins <= 0 || config.input_frames <= 0 || config.label_frames <= 0) {
    throw ConfigError("corpus geometry must be positive");
  }

  ClassVocabulary vocab = default_vocabulary(config.desed_classes, config.maestro_classes);
  ClassMapping mapping = default_mapping(vocab);
  std::vector<int> concept_of_class;
  const auto protos = concept_prototypes(vocab, mapping, config.feature_bins, concept_of_class);

  Corpus corpus(std::move(vocab), std::move(mapping), config);

  auto emit = [&](Subset style, int stream, int index, const std::string& clip_id,
                  std::vector<ClipRecord>& into) {
    GeneratedClip g = generate_clip(config, corpus.vocab, concept_of_class, protos, style,
                                    clip_id, clip_stream(config.seed, stream, index));
    corpus.strong_refs[clip_id] = g.truth;
    if (style == Subset::kMaestroStrong) corpus.segment_refs[clip_id] = g.segments;
    into.push_back(std::move(g.record));
  };

  char idbuf[96];
  for (int s = 0; s < kNumSubsets; ++s) {
    const auto subset = static_cast<Subset>(s);
    for (int i = 0; i < config.train_clips[s]; ++i) {
      std::snprintf(idbuf, sizeof(idbuf), "%s_%04d", subset_name(subset), i);
      emit(subset, s, i, idbuf, corpus.train[s]);
    }
  }
  struct EvalSplit {
    const char* prefix;
    Subset style;
    int stream;
    int count;
    std::vector<ClipRecord>* into;
  };
  const EvalSplit splits[] = {
      {"valid_synth", Subset::kDesedSynthStrong, kStreamValidSynth, config.valid_clips_per_split,
       &corpus.valid_synth},
      {"valid_real", Subset::kDesedRealStrong, kStreamValidReal, config.valid_clips_per_split,
       &corpus.valid_real},
      {"valid_maestro", Subset::kMaestroStrong, kStreamValidMaestro, config.valid_clips_per_split,
       &corpus.valid_maestro},
      {"test_synth", Subset::kDesedSynthStrong, kStreamTestSynth, config.test_clips_per_split,
       &corpus.test_synth},
      {"test_real", Subset::kDesedRealStrong, kStreamTestReal, config.test_clips_per_split,
       &corpus.test_real},
      {"test_maestro", Subset::kMaestroStrong, kStreamTestMaestro, config.test_clips_per_split,
       &corpus.test_maestro},
  };
  for (const auto& split : splits) {
    for (int i = 0; i < split.count; ++i) {
      std::snprintf(idbuf, sizeof(idbuf), "%s_%04d", split.prefix, i);
      emit(split.style, split.stream, i, idbuf, *split.into);
    }
  }
  return corpus;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string vocab_cfg_text(const ClassVocabulary& vocab, const ClassMapping& mapping) {
  std::string out = "[vocab]\ndesed = ";
  for (std::size_t i = 0; i < vocab.desed_classes().size(); ++i) {
    if (i) out += ", ";
    out += vocab.desed_classes()[i];
  }
  out += "\nmaestro = ";
  for (std::size_t i = 0; i < vocab.maestro_classes().size(); ++i) {
    if (i) out += ", ";
    out += vocab.maestro_classes()[i];
  }
  out += "\n\n[mapping.maestro_to_desed]\n";
  for (const auto& l : mapping.maestro_to_desed()) {
    out += vocab.name_of(l.source) + " -> " + vocab.name_of(l.target) + "\n";
  }
  out += "\n[mapping.desed_to_maestro]\n";
  for (const auto& l : mapping.desed_to_maestro()) {
    out += vocab.name_of(l.source) + " -> " + vocab.name_of(l.target) + "\n";
  }
  return out;
}

std::string corpus_cfg_text(const CorpusConfig& cc) {
  ConfigFile cfg;
  corpus_config_to(cc, cfg);
  std::string out = "[corpus]\n";
  // ConfigFile stores keys sorted; emit them in that stable order.
  for (const auto& key :
       {"clip_duration", "desed_classes", "desed_real_strong", "desed_synth_strong",
        "desed_unlabeled", "desed_weak", "event_rate", "feature_bins", "input_frames",
        "label_frames", "maestro_classes", "maestro_strong", "noise_level", "seed",
        "test_clips", "valid_clips"}) {
    out += std::string(key) + " = " + cfg.get_string("corpus", key) + "\n";
  }
  return out;
}

struct SplitFiles {
  const char* split_name;
  const std::vector<ClipRecord>* clips;
};

std::vector<SplitFiles> all_splits(const Corpus& corpus) {
  std::vector<SplitFiles> out;
  for (int s = 0; s < kNumSubsets; ++s) {
    out.push_back({subset_name(static_cast<Subset>(s)), &corpus.train[s]});
  }
  out.push_back({"valid_synth", &corpus.valid_synth});
  out.push_back({"valid_real", &corpus.valid_real});
  out.push_back({"valid_maestro", &corpus.valid_maestro});
  out.push_back({"test_synth", &corpus.test_synth});
  out.push_back({"test_real", &corpus.test_real});
  out.push_back({"test_maestro", &corpus.test_maestro});
  return out;
}

std::vector<EventList> refs_for(const Corpus& corpus, const std::vector<ClipRecord>& clips) {
  std::vector<EventList> out;
  for (const auto& c : clips) out.push_back(corpus.strong_refs.at(c.clip_id));
  return out;
}

std::vector<SegmentList> segments_for(const Corpus& corpus,
                                      const std::vector<ClipRecord>& clips) {
  std::vector<SegmentList> out;
  for (const auto& c : clips) out.push_back({c.clip_id, corpus.segment_refs.at(c.clip_id)});
  return out;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "features");
  fs::create_directories(fs::path(dir) / "annotations");
  write_text(fs::path(dir) / "vocab.cfg", vocab_cfg_text(corpus.vocab, corpus.mapping));
  write_text(fs::path(dir) / "corpus.cfg", corpus_cfg_text(corpus.config));

  std::string index = "clip_id\tpath\tsplit\n";
  for (const auto& split : all_splits(corpus)) {
    for (const auto& clip : *split.clips) {
      const std::string rel = "features/" + clip.clip_id + ".feat";
      write_feature_grid((fs::path(dir) / rel).string(), clip.num_feature_bins,
                         clip.num_input_frames, clip.features);
      index += clip.clip_id + '\t' + rel + '\t' + split.split_name + '\n';
    }
  }
  write_text(fs::path(dir) / "features_index.tsv", index);

  const auto ann = fs::path(dir) / "annotations";
  write_text(ann / "desed_synth_strong.tsv",
             serialize_events_tsv(refs_for(corpus, corpus.subset(Subset::kDesedSynthStrong)),
                                  corpus.vocab));
  write_text(ann / "desed_real_strong.tsv",
             serialize_events_tsv(refs_for(corpus, corpus.subset(Subset::kDesedRealStrong)),
                                  corpus.vocab));
  write_text(ann / "maestro_strong.tsv",
             serialize_soft_segments_tsv(
                 segments_for(corpus, corpus.subset(Subset::kMaestroStrong)), corpus.vocab));
  {
    std::vector<WeakList> weak;
    for (const auto& clip : corpus.subset(Subset::kDesedWeak)) {
      WeakList w;
      w.clip_id = clip.clip_id;
      for (int c = 0; c < corpus.vocab.num_classes(); ++c) {
        if (clip.weak_labels && clip.weak_labels->targets[c] > 0.0) w.classes.push_back(c);
      }
      weak.push_back(std::move(w));
    }
    write_text(ann / "desed_weak.tsv", serialize_weak_tsv(weak, corpus.vocab));
  }
  {
    std::string unlabeled = "filename\n";
    for (const auto& clip : corpus.subset(Subset::kDesedUnlabeled)) {
      unlabeled += clip.clip_id + '\n';
    }
    write_text(ann / "desed_unlabeled.tsv", unlabeled);
  }
  write_text(ann / "valid_synth_ref.tsv",
             serialize_events_tsv(refs_for(corpus, corpus.valid_synth), corpus.vocab));
  write_text(ann / "valid_real_ref.tsv",
             serialize_events_tsv(refs_for(corpus, corpus.valid_real), corpus.vocab));
  write_text(ann / "valid_maestro_ref.tsv",
             serialize_soft_segments_tsv(segments_for(corpus, corpus.valid_maestro),
                                         corpus.vocab));
  write_text(ann / "test_synth_ref.tsv",
             serialize_events_tsv(refs_for(corpus, corpus.test_synth), corpus.vocab));
  write_text(ann / "test_real_ref.tsv",
             serialize_events_tsv(refs_for(corpus, corpus.test_real), corpus.vocab));
  write_text(ann / "test_maestro_ref.tsv",
             serialize_soft_segments_tsv(segments_for(corpus, corpus.test_maestro),
                                         corpus.vocab));
  {
    std::vector<EventList> all_refs;
    for (const auto& [id, ref] : corpus.strong_refs) {
      (void)id;
      all_refs.push_back(ref);
    }
    write_text(ann / "ground_truth.tsv", serialize_events_tsv(all_refs, corpus.vocab));
  }
}

Corpus load_corpus(const std::string& dir) {
  ConfigFile vocab_cfg = ConfigFile::parse_file((fs::path(dir) / "vocab.cfg").string());
  ConfigFile corpus_cfg = ConfigFile::parse_file((fs::path(dir) / "corpus.cfg").string());
  ClassVocabulary vocab = load_vocabulary(vocab_cfg);
  ClassMapping mapping = load_mapping(vocab_cfg, vocab);
  CorpusConfig cc = corpus_config_from(corpus_cfg);
  Corpus corpus(std::move(vocab), std::move(mapping), cc);

  const auto ann = fs::path(dir) / "annotations";
  auto read_events = [&](const char* file) {
    std::ifstream in(ann / file);
    if (!in) throw DataError(std::string("missing annotation file: ") + file);
    return parse_events_tsv(in, corpus.vocab);
  };
  auto read_segments = [&](const char* file) {
    std::ifstream in(ann / file);
    if (!in) throw DataError(std::string("missing annotation file: ") + file);
    return parse_soft_segments_tsv(in, corpus.vocab);
  };

  for (const auto& list : read_events("ground_truth.tsv")) {
    list.validate(cc.clip_duration);
    corpus.strong_refs[list.clip_id] = list;
  }
  std::map<std::string, std::vector<SegmentRef>> segs;
  for (const auto& list : read_segments("maestro_strong.tsv")) segs[list.clip_id] = list.segments;
  for (const auto& list : read_segments("valid_maestro_ref.tsv")) segs[list.clip_id] = list.segments;
  for (const auto& list : read_segments("test_maestro_ref.tsv")) segs[list.clip_id] = list.segments;
  corpus.segment_refs = std::move(segs);

  std::map<std::string, std::vector<int>> weak_map;
  {
    std::ifstream in(ann / "desed_weak.tsv");
    if (!in) throw DataError("missing annotation file: desed_weak.tsv");
    for (const auto& w : parse_weak_tsv(in, corpus.vocab)) weak_map[w.clip_id] = w.classes;
  }

  std::ifstream index(fs::path(dir) / "features_index.tsv");
  if (!index) throw DataError("missing features_index.tsv in " + dir);
  std::string line;
  std::getline(index, line);  // header
  while (std::getline(index, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string clip_id, rel, split;
    std::getline(row, clip_id, '\t');
    std::getline(row, rel, '\t');
    std::getline(row, split, '\t');

    ClipRecord clip;
    clip.clip_id = clip_id;
    read_feature_grid((fs::path(dir) / rel).string(), clip.num_feature_bins,
                      clip.num_input_frames, clip.features);

    Subset style;
    std::vector<ClipRecord>* into = nullptr;
    if (split == "valid_synth") {
      style = Subset::kDesedSynthStrong;
      into = &corpus.valid_synth;
    } else if (split == "valid_real") {
      style = Subset::kDesedRealStrong;
      into = &corpus.valid_real;
    } else if (split == "valid_maestro") {
      style = Subset::kMaestroStrong;
      into = &corpus.valid_maestro;
    } else if (split == "test_synth") {
      style = Subset::kDesedSynthStrong;
      into = &corpus.test_synth;
    } else if (split == "test_real") {
      style = Subset::kDesedRealStrong;
      into = &corpus.test_real;
    } else if (split == "test_maestro") {
      style = Subset::kMaestroStrong;
      into = &corpus.test_maestro;
    } else {
      style = subset_from_name(split);
      into = &corpus.train[static_cast<int>(style)];
    }
    clip.subset = style;

    // Clips without any event are absent from the annotation files; give them
    // empty references so every clip id resolves.
    {
      auto [it, inserted] = corpus.strong_refs.try_emplace(clip_id);
      if (inserted) it->second.clip_id = clip_id;
    }
    if (style == Subset::kMaestroStrong) corpus.segment_refs.try_emplace(clip_id);

    const auto native_mask = build_loss_mask(style, corpus.vocab, ClassMapping(), false);
    if (style == Subset::kMaestroStrong) {
      clip.strong_labels =
          rasterize_segments(corpus.segment_refs.at(clip_id), corpus.vocab.num_classes(),
                             cc.label_frames, cc.label_hop(), native_mask);
    } else if (style == Subset::kDesedRealStrong || style == Subset::kDesedSynthStrong) {
      clip.strong_labels =
          rasterize_events(corpus.strong_refs.at(clip_id), corpus.vocab.num_classes(),
                           cc.label_frames, cc.label_hop(), native_mask);
    } else if (style == Subset::kDesedWeak) {
      WeakLabelVector weak;
      weak.targets.assign(corpus.vocab.num_classes(), 0.0);
      weak.loss_mask = native_mask;
      auto it = weak_map.find(clip_id);
      if (it == weak_map.end()) throw DataError("no weak labels for clip " + clip_id);
      for (int c : it->second) weak.targets[c] = 1.0;
      clip.weak_labels = std::move(weak);
    }
    into->push_back(std::move(clip));
  }
  return corpus;
}

}  // namespace hetsed
