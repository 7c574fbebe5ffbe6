#include "hetsed/core.hpp"

#include <algorithm>
#include <unordered_set>

namespace hetsed {

const char* subset_name(Subset s) {
  switch (s) {
    case Subset::kMaestroStrong: return "maestro_strong";
    case Subset::kDesedRealStrong: return "desed_real_strong";
    case Subset::kDesedSynthStrong: return "desed_synth_strong";
    case Subset::kDesedWeak: return "desed_weak";
    case Subset::kDesedUnlabeled: return "desed_unlabeled";
  }
  return "?";
}

Subset subset_from_name(const std::string& name) {
  for (int i = 0; i < kNumSubsets; ++i) {
    const auto s = static_cast<Subset>(i);
    if (name == subset_name(s)) return s;
  }
  throw DataError("unknown subset name: " + name);
}

const char* stage_name(StageId s) {
  switch (s) {
    case StageId::kI1S1: return "i1s1";
    case StageId::kI1S2: return "i1s2";
    case StageId::kI2S1: return "i2s1";
    case StageId::kI2S2: return "i2s2";
  }
  return "?";
}

StageId stage_from_name(const std::string& name) {
  for (int i = 0; i < kNumStages; ++i) {
    const auto s = static_cast<StageId>(i);
    if (name == stage_name(s)) return s;
  }
  throw ConfigError("unknown stage name: " + name);
}

ClassVocabulary::ClassVocabulary(std::vector<std::string> desed_classes,
                                 std::vector<std::string> maestro_classes)
    : desed_(std::move(desed_classes)), maestro_(std::move(maestro_classes)) {
  if (desed_.empty() || maestro_.empty()) {
    throw ConfigError("vocabulary requires non-empty DESED and MAESTRO class lists");
  }
  std::unordered_set<std::string> seen;
  for (const auto& n : desed_) {
    if (!seen.insert(n).second) throw ConfigError("duplicate class name: " + n);
  }
  for (const auto& n : maestro_) {
    if (!seen.insert(n).second) throw ConfigError("duplicate class name: " + n);
  }
}

int ClassVocabulary::index_of(const std::string& name) const {
  for (int i = 0; i < num_desed(); ++i) {
    if (desed_[i] == name) return i;
  }
  for (int i = 0; i < num_maestro(); ++i) {
    if (maestro_[i] == name) return num_desed() + i;
  }
  throw DataError("unknown class: " + name);
}

bool ClassVocabulary::contains(const std::string& name) const {
  return std::find(desed_.begin(), desed_.end(), name) != desed_.end() ||
         std::find(maestro_.begin(), maestro_.end(), name) != maestro_.end();
}

const std::string& ClassVocabulary::name_of(int union_index) const {
  if (union_index < 0 || union_index >= num_classes()) {
    throw DataError("class index out of range: " + std::to_string(union_index));
  }
  if (union_index < num_desed()) return desed_[union_index];
  return maestro_[union_index - num_desed()];
}

std::vector<int> ClassVocabulary::native_indices(Subset origin) const {
  std::vector<int> out;
  if (origin == Subset::kMaestroStrong) {
    for (int i = 0; i < num_maestro(); ++i) out.push_back(num_desed() + i);
  } else {
    for (int i = 0; i < num_desed(); ++i) out.push_back(i);
  }
  return out;
}

void ClassMapping::add_maestro_to_desed(const ClassVocabulary& vocab,
                                        const std::string& maestro_class,
                                        const std::string& desed_class) {
  const int src = vocab.index_of(maestro_class);
  const int dst = vocab.index_of(desed_class);
  if (!vocab.is_maestro_index(src)) {
    throw ConfigError("mapping source is not a MAESTRO class: " + maestro_class);
  }
  if (!vocab.is_desed_index(dst)) {
    throw ConfigError("mapping target is not a DESED class: " + desed_class);
  }
  for (const auto& l : maestro_to_desed_) {
    if (l.source == src) {
      throw ConfigError("MAESTRO class mapped twice: " + maestro_class);
    }
  }
  maestro_to_desed_.push_back({src, dst});
}

void ClassMapping::add_desed_to_maestro(const ClassVocabulary& vocab,
                                        const std::string& desed_class,
                                        const std::string& maestro_class) {
  const int src = vocab.index_of(desed_class);
  const int dst = vocab.index_of(maestro_class);
  if (!vocab.is_desed_index(src)) {
    throw ConfigError("mapping source is not a DESED class: " + desed_class);
  }
  if (!vocab.is_maestro_index(dst)) {
    throw ConfigError("mapping target is not a MAESTRO class: " + maestro_class);
  }
  for (const auto& l : desed_to_maestro_) {
    if (l.source == src) {
      throw ConfigError("DESED class mapped twice: " + desed_class);
    }
  }
  desed_to_maestro_.push_back({src, dst});
}

void EventList::validate(double clip_duration) const {
  for (const auto& e : events) {
    if (!(e.onset >= 0.0 && e.onset < e.offset && e.offset <= clip_duration)) {
      throw DataError("event outside [0, duration] or onset >= offset in clip " + clip_id);
    }
    if (e.confidence < 0.0 || e.confidence > 1.0) {
      throw DataError("event confidence outside [0,1] in clip " + clip_id);
    }
  }
}

FrameLabelGrid FrameLabelGrid::zeros(int num_classes, int num_frames) {
  FrameLabelGrid g;
  g.num_classes = num_classes;
  g.num_frames = num_frames;
  g.targets.assign(static_cast<std::size_t>(num_classes) * num_frames, 0.0);
  g.loss_mask.assign(num_classes, 0);
  return g;
}

namespace {

const std::vector<ClassMapping::Link>& links_for_origin(const ClassMapping& mapping,
                                                        Subset origin) {
  return origin == Subset::kMaestroStrong ? mapping.maestro_to_desed()
                                          : mapping.desed_to_maestro();
}

}  // namespace

FrameLabelGrid map_labels(const FrameLabelGrid& labels, const ClassMapping& mapping,
                          Subset origin, const ClassVocabulary& vocab) {
  if (labels.num_classes != vocab.num_classes()) {
    throw ConfigError("label grid is not indexed by the union vocabulary");
  }
  FrameLabelGrid out = labels;
  const bool from_maestro = origin == Subset::kMaestroStrong;
  for (const auto& link : links_for_origin(mapping, origin)) {
    for (int t = 0; t < labels.num_frames; ++t) {
      const double src = labels.at(link.source, t);
      // MAESTRO -> DESED copies the confidence; DESED -> MAESTRO sets 1
      // wherever the source class is active (target > 0).
      const double mapped = from_maestro ? src : (src > 0.0 ? 1.0 : 0.0);
      out.at(link.target, t) = std::max(out.at(link.target, t), mapped);
    }
    out.loss_mask[link.target] = 1;
  }
  return out;
}

WeakLabelVector map_labels(const WeakLabelVector& labels, const ClassMapping& mapping,
                           Subset origin, const ClassVocabulary& vocab) {
  if (static_cast<int>(labels.targets.size()) != vocab.num_classes()) {
    throw ConfigError("weak label vector is not indexed by the union vocabulary");
  }
  WeakLabelVector out = labels;
  const bool from_maestro = origin == Subset::kMaestroStrong;
  for (const auto& link : links_for_origin(mapping, origin)) {
    const double src = labels.targets[link.source];
    const double mapped = from_maestro ? src : (src > 0.0 ? 1.0 : 0.0);
    out.targets[link.target] = std::max(out.targets[link.target], mapped);
    out.loss_mask[link.target] = 1;
  }
  return out;
}

std::vector<char> build_loss_mask(Subset origin, const ClassVocabulary& vocab,
                                  const ClassMapping& mapping, bool use_mapping) {
  std::vector<char> mask(vocab.num_classes(), 0);
  for (int idx : vocab.native_indices(origin)) mask[idx] = 1;
  if (use_mapping) {
    for (const auto& link : links_for_origin(mapping, origin)) {
      mask[link.target] = 1;
    }
  }
  return mask;
}

}  // namespace hetsed
