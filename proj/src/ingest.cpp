#include "hetsed/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace hetsed {

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  // Trim to the shortest representation that still round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[40];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, x);
    if (std::strtod(shorter, nullptr) == x) return shorter;
  }
  return buf;
}

namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    std::size_t tab = line.find('\t', pos);
    if (tab == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
}

double parse_seconds(const std::string& field, int lineno, const char* what) {
  char* end = nullptr;
  const double x = std::strtod(field.c_str(), &end);
  if (end == field.c_str() || *end != '\0' || !std::isfinite(x)) {
    throw DataError("line " + std::to_string(lineno) + ": non-numeric " + what + ": " + field);
  }
  return x;
}

std::string read_line_strip_cr(std::istream& in, bool& ok) {
  std::string line;
  ok = static_cast<bool>(std::getline(in, line));
  if (ok && !line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_directory(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      files.push_back(fs::relative(entry.path(), dir).generic_string());
    }
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& rel : files) {
    h = fnv1a(rel.data(), rel.size(), h);
    std::ifstream in(fs::path(dir) / rel, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    h = fnv1a(bytes.data(), bytes.size(), h);
  }
  return h;
}

std::vector<EventList> parse_events_tsv(std::istream& in, const ClassVocabulary& vocab) {
  std::vector<EventList> lists;
  std::map<std::string, std::size_t> index;
  bool ok = false;
  std::string line = read_line_strip_cr(in, ok);  // header
  if (!ok) throw DataError("strong annotation file is empty (missing header)");
  int lineno = 1;
  for (;;) {
    line = read_line_strip_cr(in, ok);
    if (!ok) break;
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw DataError("line " + std::to_string(lineno) + ": expected 4 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    Event ev;
    ev.onset = parse_seconds(fields[1], lineno, "onset");
    ev.offset = parse_seconds(fields[2], lineno, "offset");
    if (ev.onset >= ev.offset) {
      throw DataError("line " + std::to_string(lineno) + ": onset >= offset");
    }
    ev.class_index = vocab.index_of(fields[3]);
    ev.confidence = 1.0;
    auto [it, inserted] = index.try_emplace(fields[0], lists.size());
    if (inserted) lists.push_back(EventList{fields[0], {}});
    lists[it->second].events.push_back(ev);
  }
  return lists;
}

std::string serialize_events_tsv(const std::vector<EventList>& lists,
                                 const ClassVocabulary& vocab) {
  std::string out = "filename\tonset\toffset\tevent_label\n";
  for (const auto& list : lists) {
    for (const auto& e : list.events) {
      out += list.clip_id + '\t' + format_double(e.onset) + '\t' + format_double(e.offset) +
             '\t' + vocab.name_of(e.class_index) + '\n';
    }
  }
  return out;
}

std::vector<SegmentList> parse_soft_segments_tsv(std::istream& in,
                                                 const ClassVocabulary& vocab) {
  std::vector<SegmentList> lists;
  std::map<std::string, std::size_t> index;
  bool ok = false;
  std::string line = read_line_strip_cr(in, ok);
  if (!ok) throw DataError("soft segment file is empty (missing header)");
  int lineno = 1;
  for (;;) {
    line = read_line_strip_cr(in, ok);
    if (!ok) break;
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
      throw DataError("line " + std::to_string(lineno) + ": expected 5 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    SegmentRef seg;
    seg.onset = parse_seconds(fields[1], lineno, "onset");
    seg.offset = parse_seconds(fields[2], lineno, "offset");
    if (seg.onset >= seg.offset) {
      throw DataError("line " + std::to_string(lineno) + ": onset >= offset");
    }
    seg.class_index = vocab.index_of(fields[3]);
    seg.confidence = parse_seconds(fields[4], lineno, "confidence");
    if (seg.confidence < 0.0 || seg.confidence > 1.0) {
      throw DataError("line " + std::to_string(lineno) + ": confidence outside [0,1]");
    }
    auto [it, inserted] = index.try_emplace(fields[0], lists.size());
    if (inserted) lists.push_back(SegmentList{fields[0], {}});
    lists[it->second].segments.push_back(seg);
  }
  return lists;
}

std::string serialize_soft_segments_tsv(const std::vector<SegmentList>& lists,
                                        const ClassVocabulary& vocab) {
  std::string out = "filename\tonset\toffset\tevent_label\tconfidence\n";
  for (const auto& list : lists) {
    for (const auto& s : list.segments) {
      out += list.clip_id + '\t' + format_double(s.onset) + '\t' + format_double(s.offset) +
             '\t' + vocab.name_of(s.class_index) + '\t' + format_double(s.confidence) + '\n';
    }
  }
  return out;
}

std::vector<WeakList> parse_weak_tsv(std::istream& in, const ClassVocabulary& vocab) {
  std::vector<WeakList> lists;
  bool ok = false;
  std::string line = read_line_strip_cr(in, ok);
  if (!ok) throw DataError("weak annotation file is empty (missing header)");
  int lineno = 1;
  for (;;) {
    line = read_line_strip_cr(in, ok);
    if (!ok) break;
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 2) {
      throw DataError("line " + std::to_string(lineno) + ": expected 2 tab-separated fields");
    }
    WeakList w;
    w.clip_id = fields[0];
    std::stringstream labels(fields[1]);
    std::string label;
    while (std::getline(labels, label, ',')) {
      label = trim(label);
      if (!label.empty()) w.classes.push_back(vocab.index_of(label));
    }
    lists.push_back(std::move(w));
  }
  return lists;
}

std::string serialize_weak_tsv(const std::vector<WeakList>& lists,
                               const ClassVocabulary& vocab) {
  std::string out = "filename\tevent_labels\n";
  for (const auto& w : lists) {
    out += w.clip_id + '\t';
    for (std::size_t i = 0; i < w.classes.size(); ++i) {
      if (i) out += ',';
      out += vocab.name_of(w.classes[i]);
    }
    out += '\n';
  }
  return out;
}

void write_posteriorgram_tsv(std::ostream& out, const Posteriorgram& post,
                             const ClassVocabulary& vocab) {
  out << "frame";
  for (int c = 0; c < vocab.num_classes(); ++c) out << '\t' << vocab.name_of(c);
  out << '\n';
  for (int t = 0; t < post.num_frames; ++t) {
    out << t;
    for (int c = 0; c < post.num_classes; ++c) out << '\t' << format_double(post.at(c, t));
    out << '\n';
  }
}

Posteriorgram read_posteriorgram_tsv(std::istream& in, const ClassVocabulary& vocab,
                                     const std::string& clip_id, double frame_hop) {
  bool ok = false;
  std::string header = read_line_strip_cr(in, ok);
  if (!ok) throw DataError("posteriorgram file is empty: " + clip_id);
  const auto cols = split_tabs(header);
  if (static_cast<int>(cols.size()) != vocab.num_classes() + 1) {
    throw DataError("posteriorgram header does not match vocabulary: " + clip_id);
  }
  for (int c = 0; c < vocab.num_classes(); ++c) {
    if (cols[c + 1] != vocab.name_of(c)) {
      throw DataError("posteriorgram column " + cols[c + 1] + " out of order in " + clip_id);
    }
  }
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  for (;;) {
    std::string line = read_line_strip_cr(in, ok);
    if (!ok) break;
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (static_cast<int>(fields.size()) != vocab.num_classes() + 1) {
      throw DataError("line " + std::to_string(lineno) + ": wrong column count in " + clip_id);
    }
    std::vector<double> row(vocab.num_classes());
    for (int c = 0; c < vocab.num_classes(); ++c) {
      row[c] = parse_seconds(fields[c + 1], lineno, "score");
      if (row[c] < 0.0 || row[c] > 1.0) {
        throw DataError("line " + std::to_string(lineno) + ": score outside [0,1] in " + clip_id);
      }
    }
    rows.push_back(std::move(row));
  }
  Posteriorgram post;
  post.clip_id = clip_id;
  post.num_classes = vocab.num_classes();
  post.num_frames = static_cast<int>(rows.size());
  post.frame_hop = frame_hop;
  post.scores.resize(static_cast<std::size_t>(post.num_classes) * post.num_frames);
  for (int t = 0; t < post.num_frames; ++t) {
    for (int c = 0; c < post.num_classes; ++c) post.at(c, t) = rows[t][c];
  }
  return post;
}

void write_score_dir(const std::string& dir, const std::vector<Posteriorgram>& posts,
                     const ClassVocabulary& vocab) {
  fs::create_directories(dir);
  std::ofstream index(fs::path(dir) / "index.tsv");
  index << "clip_id\tpath\tframe_hop\n";
  for (const auto& post : posts) {
    const std::string file = post.clip_id + ".tsv";
    std::ofstream out(fs::path(dir) / file);
    write_posteriorgram_tsv(out, post, vocab);
    index << post.clip_id << '\t' << file << '\t' << format_double(post.frame_hop) << '\n';
  }
}

std::vector<Posteriorgram> read_score_dir(const std::string& dir,
                                          const ClassVocabulary& vocab) {
  std::ifstream index(fs::path(dir) / "index.tsv");
  if (!index) throw DataError("score directory has no index.tsv: " + dir);
  bool ok = false;
  read_line_strip_cr(index, ok);  // header
  std::vector<Posteriorgram> posts;
  int lineno = 1;
  for (;;) {
    std::string line = read_line_strip_cr(index, ok);
    if (!ok) break;
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw DataError("index.tsv line " + std::to_string(lineno) + ": expected 3 fields");
    }
    std::ifstream in(fs::path(dir) / fields[1]);
    if (!in) throw DataError("missing score file: " + fields[1]);
    posts.push_back(read_posteriorgram_tsv(in, vocab, fields[0],
                                           parse_seconds(fields[2], lineno, "frame_hop")));
  }
  return posts;
}

namespace {
constexpr char kFeatureMagic[4] = {'H', 'S', 'F', 'T'};
}

void write_feature_grid(const std::string& path, int bins, int frames,
                        const std::vector<double>& data) {
  if (static_cast<std::size_t>(bins) * frames != data.size()) {
    throw DataError("feature grid size mismatch writing " + path);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file: " + path);
  out.write(kFeatureMagic, 4);
  const std::int32_t dims[2] = {bins, frames};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
}

void read_feature_grid(const std::string& path, int& bins, int& frames,
                       std::vector<double>& data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw DataError("not a feature file: " + path);
  }
  std::int32_t dims[2];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || dims[0] <= 0 || dims[1] <= 0) throw DataError("bad feature dims in " + path);
  bins = dims[0];
  frames = dims[1];
  data.resize(static_cast<std::size_t>(bins) * frames);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw DataError("truncated feature file: " + path);
}

FrameLabelGrid rasterize_events(const EventList& events, int num_classes, int num_frames,
                                double frame_hop, const std::vector<char>& loss_mask) {
  FrameLabelGrid grid = FrameLabelGrid::zeros(num_classes, num_frames);
  grid.loss_mask = loss_mask;
  for (int t = 0; t < num_frames; ++t) {
    const double lo = t * frame_hop;
    const double hi = lo + frame_hop;
    for (int c = 0; c < num_classes; ++c) {
      // Union overlap of this class's events with the frame.
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
      // Small slack so exact half-overlap boundaries are not lost to rounding.
      if (covered >= 0.5 * frame_hop - 1e-9) grid.at(c, t) = 1.0;
    }
  }
  return grid;
}

FrameLabelGrid rasterize_segments(const std::vector<SegmentRef>& segments, int num_classes,
                                  int num_frames, double frame_hop,
                                  const std::vector<char>& loss_mask) {
  FrameLabelGrid grid = FrameLabelGrid::zeros(num_classes, num_frames);
  grid.loss_mask = loss_mask;
  for (int c = 0; c < num_classes; ++c) {
    for (int t = 0; t < num_frames; ++t) {
      const double lo = t * frame_hop;
      const double hi = lo + frame_hop;
      double weight = 0.0, acc = 0.0;
      for (const auto& s : segments) {
        if (s.class_index != c) continue;
        const double w = std::max(0.0, std::min(s.offset, hi) - std::max(s.onset, lo));
        weight += w;
        acc += w * s.confidence;
      }
      if (weight > 0.0) grid.at(c, t) = acc / weight;
    }
  }
  return grid;
}

int BatchComposition::total() const {
  int n = 0;
  for (int c : counts) n += c;
  return n;
}

EpochSampler::EpochSampler(const std::array<std::vector<ClipRecord>, kNumSubsets>* subsets,
                           std::uint64_t seed)
    : subsets_(subsets), rng_(seed) {
  for (int s = 0; s < kNumSubsets; ++s) {
    order_[s].resize((*subsets_)[s].size());
    for (std::size_t i = 0; i < order_[s].size(); ++i) order_[s][i] = static_cast<int>(i);
    rng_.shuffle(order_[s]);
    cursor_[s] = 0;
  }
}

std::vector<const ClipRecord*> EpochSampler::sample_batch(const BatchComposition& composition) {
  std::vector<const ClipRecord*> batch;
  batch.reserve(composition.total());
  for (int s = 0; s < kNumSubsets; ++s) {
    const auto& pool = (*subsets_)[s];
    const int want = composition.counts[s];
    if (want < 0) throw ConfigError("negative batch count");
    if (want > 0 && pool.empty()) {
      throw DataError(std::string("batch requests clips from empty subset ") +
                      subset_name(static_cast<Subset>(s)));
    }
    for (int k = 0; k < want; ++k) {
      if (cursor_[s] >= order_[s].size()) {
        rng_.shuffle(order_[s]);
        cursor_[s] = 0;
      }
      batch.push_back(&pool[order_[s][cursor_[s]++]]);
    }
  }
  return batch;
}

}  // namespace hetsed
