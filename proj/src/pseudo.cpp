#include "hetsed/pseudo.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hetsed/config.hpp"
#include "hetsed/ingest.hpp"

namespace hetsed {

namespace fs = std::filesystem;

std::vector<double> fuse_logits(const std::vector<const std::vector<double>*>& members,
                                bool hard) {
  if (members.empty()) throw DataError("pseudo-label fusion needs at least one member");
  const std::size_t n = members.front()->size();
  for (const auto* m : members) {
    if (m->size() != n) throw DataError("ensemble members disagree on output geometry");
  }
  std::vector<double> fused(n, 0.0);
  for (const auto* m : members) {
    for (std::size_t i = 0; i < n; ++i) fused[i] += (*m)[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = fused[i] / members.size();
    const double p =
        mean >= 0.0 ? 1.0 / (1.0 + std::exp(-mean))
                    : std::exp(mean) / (1.0 + std::exp(mean));
    fused[i] = hard ? (p >= 0.5 ? 1.0 : 0.0) : p;
  }
  return fused;
}

std::vector<double> fuse_logits(const std::vector<std::vector<double>>& members,
                                bool hard) {
  std::vector<const std::vector<double>*> ptrs;
  ptrs.reserve(members.size());
  for (const auto& m : members) ptrs.push_back(&m);
  return fuse_logits(ptrs, hard);
}

const std::vector<double>& PseudoStore::targets_for(const std::string& clip_id) const {
  const auto it = targets.find(clip_id);
  if (it == targets.end()) {
    throw DataError("no pseudo targets stored for clip " + clip_id);
  }
  return it->second;
}

void write_pseudo_store(const PseudoStore& store, const std::string& dir,
                        const ClassVocabulary& vocab) {
  if (store.num_classes != vocab.num_classes()) {
    throw ConfigError("pseudo store class count does not match the vocabulary");
  }
  std::vector<Posteriorgram> posts;
  for (const auto& [clip_id, values] : store.targets) {
    Posteriorgram p;
    p.clip_id = clip_id;
    p.num_classes = store.num_classes;
    p.num_frames = store.num_frames;
    p.frame_hop = store.frame_hop;
    p.scores = values;
    posts.push_back(std::move(p));
  }
  write_score_dir(dir, posts, vocab);

  std::ofstream manifest(fs::path(dir) / "manifest.cfg");
  if (!manifest) throw DataError("cannot write pseudo store manifest in " + dir);
  manifest << "[pseudo]\n";
  manifest << "num_classes = " << store.num_classes << '\n';
  manifest << "num_frames = " << store.num_frames << '\n';
  manifest << "frame_hop = " << format_double(store.frame_hop) << '\n';
  manifest << "hard = " << (store.policy.hard ? "true" : "false") << '\n';
  manifest << "all_classes = " << (store.policy.all_classes ? "true" : "false") << '\n';
  manifest << "num_clips = " << store.targets.size() << '\n';
  std::string prov;
  for (std::size_t i = 0; i < store.provenance.size(); ++i) {
    if (i) prov += ',';
    prov += std::to_string(store.provenance[i]);
  }
  manifest << "provenance = " << prov << '\n';
}

PseudoStore load_pseudo_store(const std::string& dir, const ClassVocabulary& vocab) {
  const ConfigFile manifest =
      ConfigFile::parse_file((fs::path(dir) / "manifest.cfg").string());
  PseudoStore store;
  store.num_classes = manifest.get_int("pseudo", "num_classes", -1);
  store.num_frames = manifest.get_int("pseudo", "num_frames", -1);
  store.frame_hop = manifest.get_double("pseudo", "frame_hop", 0.0);
  store.policy.hard = manifest.get_bool("pseudo", "hard", false);
  store.policy.all_classes = manifest.get_bool("pseudo", "all_classes", false);
  if (store.num_classes != vocab.num_classes() || store.num_frames < 1) {
    throw DataError("pseudo store manifest geometry is invalid: " + dir);
  }
  const std::string prov = manifest.get_string("pseudo", "provenance", "");
  std::stringstream prov_in(prov);
  std::string token;
  while (std::getline(prov_in, token, ',')) {
    if (!token.empty()) store.provenance.push_back(std::stoull(token));
  }

  for (auto& post : read_score_dir(dir, vocab)) {
    if (post.num_classes != store.num_classes || post.num_frames != store.num_frames) {
      throw DataError("pseudo targets with unexpected geometry for clip " + post.clip_id);
    }
    store.targets.emplace(post.clip_id, std::move(post.scores));
  }
  const int expected = manifest.get_int("pseudo", "num_clips", -1);
  if (expected >= 0 && static_cast<int>(store.targets.size()) != expected) {
    throw DataError("pseudo store is missing clips: " + dir);
  }
  return store;
}

ClipRecord attach_pseudo_targets(const ClipRecord& clip, const PseudoStore& store,
                                 const ClassVocabulary& vocab,
                                 const ClassMapping& mapping) {
  const auto& values = store.targets_for(clip.clip_id);
  ClipRecord out = clip;
  FrameLabelGrid grid;
  grid.num_classes = store.num_classes;
  grid.num_frames = store.num_frames;
  grid.targets = values;
  if (store.policy.all_classes) {
    grid.loss_mask.assign(store.num_classes, 1);
  } else {
    grid.loss_mask = build_loss_mask(clip.subset, vocab, mapping, true);
  }
  out.pseudo_labels = std::move(grid);
  return out;
}

}  // namespace hetsed
