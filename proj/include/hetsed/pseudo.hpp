#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hetsed/core.hpp"

namespace hetsed {

struct PseudoPolicy {
  bool hard = false;         // threshold fused targets at 0.5
  bool all_classes = false;  // widen the pseudo loss mask to the union
};

// Arithmetic mean of the member logit matrices, then the logistic; the hard
// policy maps values >= 0.5 to 1 and the rest to 0. All members must share
// one geometry. This is logistic(mean(logits)), which differs from
// mean(logistic(logits)).
std::vector<double> fuse_logits(const std::vector<const std::vector<double>*>& members,
                                bool hard);
std::vector<double> fuse_logits(const std::vector<std::vector<double>>& members,
                                bool hard);

// Ensemble soft targets for every training clip, on the model output grid.
struct PseudoStore {
  int num_classes = 0;
  int num_frames = 0;      // model output frames per clip
  double frame_hop = 0.0;  // seconds per output frame
  PseudoPolicy policy;
  std::vector<std::uint64_t> provenance;  // parameter hashes of the members
  std::map<std::string, std::vector<double>> targets;  // clip_id -> C x T

  // Throws DataError naming the clip when absent.
  const std::vector<double>& targets_for(const std::string& clip_id) const;
};

// Directory layout: the posteriorgram score-dir format for the targets plus
// manifest.cfg (geometry, policy flags, provenance hashes). Round trips
// bit-exactly.
void write_pseudo_store(const PseudoStore& store, const std::string& dir,
                        const ClassVocabulary& vocab);
PseudoStore load_pseudo_store(const std::string& dir, const ClassVocabulary& vocab);

// Copies the store's targets for clip.clip_id into clip.pseudo_labels. The
// loss mask is the clip's native plus mapped classes, or the full union when
// the store's all_classes flag is set.
ClipRecord attach_pseudo_targets(const ClipRecord& clip, const PseudoStore& store,
                                 const ClassVocabulary& vocab,
                                 const ClassMapping& mapping);

}  // namespace hetsed
