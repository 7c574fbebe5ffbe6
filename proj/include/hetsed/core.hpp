#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hetsed {

// Error categories; the CLI maps them onto exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Subset {
  kMaestroStrong,
  kDesedRealStrong,
  kDesedSynthStrong,
  kDesedWeak,
  kDesedUnlabeled,
};

inline constexpr int kNumSubsets = 5;

const char* subset_name(Subset s);
Subset subset_from_name(const std::string& name);

// The four training stages of the two-iteration schedule.
enum class StageId { kI1S1, kI1S2, kI2S1, kI2S2 };

inline constexpr int kNumStages = 4;

const char* stage_name(StageId s);
StageId stage_from_name(const std::string& name);

inline bool is_desed_subset(Subset s) { return s != Subset::kMaestroStrong; }
inline bool is_strong_subset(Subset s) {
  return s == Subset::kMaestroStrong || s == Subset::kDesedRealStrong ||
         s == Subset::kDesedSynthStrong;
}

// Union class space of the two datasets: DESED block first, then MAESTRO.
// The union index of a class is stable for a given vocabulary.
class ClassVocabulary {
 public:
  ClassVocabulary(std::vector<std::string> desed_classes,
                  std::vector<std::string> maestro_classes);

  int num_desed() const { return static_cast<int>(desed_.size()); }
  int num_maestro() const { return static_cast<int>(maestro_.size()); }
  int num_classes() const { return num_desed() + num_maestro(); }

  const std::vector<std::string>& desed_classes() const { return desed_; }
  const std::vector<std::string>& maestro_classes() const { return maestro_; }

  // Union index; throws DataError for unknown names.
  int index_of(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::string& name_of(int union_index) const;

  bool is_desed_index(int union_index) const { return union_index < num_desed(); }
  bool is_maestro_index(int union_index) const {
    return union_index >= num_desed() && union_index < num_classes();
  }

  // Native class indices of a subset's dataset.
  std::vector<int> native_indices(Subset origin) const;

 private:
  std::vector<std::string> desed_;
  std::vector<std::string> maestro_;
};

// Cross-dataset concept links. Many-to-one at most: several MAESTRO classes
// may map onto one DESED class, and vice versa.
class ClassMapping {
 public:
  struct Link {
    int source;  // union index
    int target;  // union index
  };

  ClassMapping() = default;

  // Both directions validate that referenced classes exist and that each
  // SOURCE appears at most once per direction.
  void add_maestro_to_desed(const ClassVocabulary& vocab,
                            const std::string& maestro_class,
                            const std::string& desed_class);
  void add_desed_to_maestro(const ClassVocabulary& vocab,
                            const std::string& desed_class,
                            const std::string& maestro_class);

  const std::vector<Link>& maestro_to_desed() const { return maestro_to_desed_; }
  const std::vector<Link>& desed_to_maestro() const { return desed_to_maestro_; }

  bool empty() const {
    return maestro_to_desed_.empty() && desed_to_maestro_.empty();
  }

 private:
  std::vector<Link> maestro_to_desed_;
  std::vector<Link> desed_to_maestro_;
};

// One detected or annotated event. Class is a union-vocabulary index.
struct Event {
  double onset = 0.0;
  double offset = 0.0;
  int class_index = 0;
  double confidence = 1.0;
};

struct EventList {
  std::string clip_id;
  std::vector<Event> events;

  // Validates 0 <= onset < offset <= duration and confidence in [0,1].
  void validate(double clip_duration) const;
};

// Frame-level scores, C x T in [0,1]; the currency between model,
// postprocessing and metrics.
struct Posteriorgram {
  std::string clip_id;
  int num_classes = 0;
  int num_frames = 0;
  double frame_hop = 0.0;  // seconds per frame
  std::vector<double> scores;  // row-major C x T

  double& at(int c, int t) { return scores[static_cast<std::size_t>(c) * num_frames + t]; }
  double at(int c, int t) const { return scores[static_cast<std::size_t>(c) * num_frames + t]; }
};

// Per-frame training targets with the per-class loss mask. Masked-out classes
// never contribute to any loss; targets may be soft.
struct FrameLabelGrid {
  int num_classes = 0;
  int num_frames = 0;
  std::vector<double> targets;    // row-major C x T, values in [0,1]
  std::vector<char> loss_mask;    // length C

  static FrameLabelGrid zeros(int num_classes, int num_frames);

  double& at(int c, int t) { return targets[static_cast<std::size_t>(c) * num_frames + t]; }
  double at(int c, int t) const { return targets[static_cast<std::size_t>(c) * num_frames + t]; }
};

// Clip-level targets with the per-class loss mask.
struct WeakLabelVector {
  std::vector<double> targets;  // length C, values in [0,1]
  std::vector<char> loss_mask;  // length C
};

// One 10 s training example.
struct ClipRecord {
  std::string clip_id;
  Subset subset = Subset::kDesedUnlabeled;
  int num_feature_bins = 0;   // F
  int num_input_frames = 0;   // T_in
  std::vector<double> features;  // row-major F x T_in

  std::optional<FrameLabelGrid> strong_labels;
  std::optional<WeakLabelVector> weak_labels;
  // Ensemble pseudo targets on the model output frame grid, plus their mask.
  std::optional<FrameLabelGrid> pseudo_labels;

  double& feature(int f, int t) {
    return features[static_cast<std::size_t>(f) * num_input_frames + t];
  }
  double feature(int f, int t) const {
    return features[static_cast<std::size_t>(f) * num_input_frames + t];
  }
};

// Cross-dataset label mapping. MAESTRO-origin clips copy confidence values
// onto linked DESED rows; DESED-origin clips set linked MAESTRO rows to 1
// wherever the DESED class is active. Mapped rows join the loss mask; rows of
// the origin dataset's own classes are never modified. With several sources
// linked to one target the element-wise maximum is taken, which keeps the
// operation order-independent and idempotent.
FrameLabelGrid map_labels(const FrameLabelGrid& labels, const ClassMapping& mapping,
                          Subset origin, const ClassVocabulary& vocab);
WeakLabelVector map_labels(const WeakLabelVector& labels, const ClassMapping& mapping,
                           Subset origin, const ClassVocabulary& vocab);

// Loss mask for a subset: dataset-native classes plus the mapping-target
// classes of that origin. With use_mapping=false, native classes only.
std::vector<char> build_loss_mask(Subset origin, const ClassVocabulary& vocab,
                                  const ClassMapping& mapping, bool use_mapping);

}  // namespace hetsed
