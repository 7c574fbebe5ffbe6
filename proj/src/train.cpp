#include "hetsed/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <utility>

#include "hetsed/postproc.hpp"
#include "hetsed/rng.hpp"

namespace hetsed {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kBceEps = 1e-7;

int mask_count(const std::vector<char>& mask) {
  int n = 0;
  for (char m : mask)
    if (m) ++n;
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage configuration
// ---------------------------------------------------------------------------

BatchComposition StageConfig::effective_batch() const {
  BatchComposition out = batch;
  if (train_desed_only) out.counts[static_cast<int>(Subset::kMaestroStrong)] = 0;
  if (train_maestro_only) {
    out.counts[static_cast<int>(Subset::kDesedRealStrong)] = 0;
    out.counts[static_cast<int>(Subset::kDesedSynthStrong)] = 0;
    out.counts[static_cast<int>(Subset::kDesedWeak)] = 0;
    out.counts[static_cast<int>(Subset::kDesedUnlabeled)] = 0;
  }
  return out;
}

StageConfig default_stage_config(StageId stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case StageId::kI1S1:
      c.batch = BatchComposition::stage1_default();
      break;
    case StageId::kI1S2:
      c.lr_cnn = 1e-4;
      c.lr_rnn = 1e-3;
      c.lr_tf = 1e-4;
      c.lr_dec = 0.5;
      c.weight_decay = 1e-3;
      c.batch = BatchComposition::stage2_default();
      c.embedder_frozen = false;
      c.ssl_class_mask = true;
      break;
    case StageId::kI2S1:
      c.lr_cnn = 5e-4;
      c.lr_rnn = 5e-4;
      c.batch = BatchComposition::stage1_default();
      c.use_pseudo_loss = true;
      break;
    case StageId::kI2S2:
      c.lr_cnn = 1e-5;
      c.lr_rnn = 1e-4;
      c.lr_tf = 1e-4;
      c.lr_dec = 0.5;
      c.weight_decay = 1e-3;
      c.batch = BatchComposition::stage2_default();
      c.embedder_frozen = false;
      c.ssl_class_mask = true;
      break;
  }
  return c;
}

StageConfig stage_config_from(const ConfigFile& cfg, const std::string& section,
                              StageConfig base) {
  StageConfig c = base;
  if (cfg.has(section, "stage")) c.stage = stage_from_name(cfg.get_string(section, "stage"));

  c.lr_cnn = cfg.get_double(section, "lr_cnn", c.lr_cnn);
  c.lr_rnn = cfg.get_double(section, "lr_rnn", c.lr_rnn);
  c.lr_tf = cfg.get_double(section, "lr_tf", c.lr_tf);
  c.lr_dec = cfg.get_double(section, "lr_dec", c.lr_dec);
  c.weight_decay = cfg.get_double(section, "weight_decay", c.weight_decay);

  c.w_strong = cfg.get_double(section, "w_strong", c.w_strong);
  c.w_weak = cfg.get_double(section, "w_weak", c.w_weak);
  c.w_mt = cfg.get_double(section, "w_mt", c.w_mt);
  c.w_ict = cfg.get_double(section, "w_ict", c.w_ict);
  c.w_pseudo = cfg.get_double(section, "w_pseudo", c.w_pseudo);

  c.mt_tau = cfg.get_double(section, "mt_tau", c.mt_tau);
  c.ict_alpha = cfg.get_double(section, "ict_alpha", c.ict_alpha);

  c.epochs = cfg.get_int(section, "epochs", c.epochs);
  c.steps_per_epoch = cfg.get_int(section, "steps_per_epoch", c.steps_per_epoch);

  if (cfg.has(section, "batch")) {
    const auto items = cfg.get_list(section, "batch");
    if (static_cast<int>(items.size()) != kNumSubsets)
      throw ConfigError(section + ".batch needs " + std::to_string(kNumSubsets) +
                        " clip counts");
    for (int i = 0; i < kNumSubsets; ++i) {
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(items[i], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != items[i].size() || v < 0)
        throw ConfigError(section + ".batch has an invalid count '" + items[i] + "'");
      c.batch.counts[i] = v;
    }
  }

  c.embedder_frozen = cfg.get_bool(section, "embedder_frozen", c.embedder_frozen);
  c.use_pseudo_loss = cfg.get_bool(section, "use_pseudo_loss", c.use_pseudo_loss);
  c.ssl_on_maestro = cfg.get_bool(section, "ssl_on_maestro", c.ssl_on_maestro);
  c.ssl_class_mask = cfg.get_bool(section, "ssl_class_mask", c.ssl_class_mask);
  c.separate_rnn = cfg.get_bool(section, "separate_rnn", c.separate_rnn);
  c.hard_pseudo = cfg.get_bool(section, "hard_pseudo", c.hard_pseudo);
  c.pseudo_all_classes = cfg.get_bool(section, "pseudo_all_classes", c.pseudo_all_classes);
  c.train_desed_only = cfg.get_bool(section, "train_desed_only", c.train_desed_only);
  c.train_maestro_only = cfg.get_bool(section, "train_maestro_only", c.train_maestro_only);
  c.use_class_mapping = cfg.get_bool(section, "use_class_mapping", c.use_class_mapping);

  if (c.train_desed_only && c.train_maestro_only)
    throw ConfigError(section + ": train_desed_only and train_maestro_only exclude each other");
  return c;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double bce_masked(const std::vector<double>& post, const std::vector<double>& targets,
                  const std::vector<char>& mask, int num_classes, int num_frames,
                  std::vector<double>* d_logits, double grad_scale) {
  const std::size_t expect =
      static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_frames);
  if (post.size() != expect || targets.size() != expect)
    throw DataError("cross-entropy inputs do not match the class/frame grid");
  if (static_cast<int>(mask.size()) != num_classes)
    throw DataError("cross-entropy mask does not match the class count");
  if (d_logits && d_logits->size() != expect)
    throw DataError("cross-entropy gradient buffer does not match the grid");

  const int rows = mask_count(mask);
  if (rows == 0) return 0.0;
  const double count = static_cast<double>(rows) * num_frames;

  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (!mask[c]) continue;
    for (int t = 0; t < num_frames; ++t) {
      const std::size_t i = static_cast<std::size_t>(c) * num_frames + t;
      const double p = std::clamp(post[i], kBceEps, 1.0 - kBceEps);
      sum += -(targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p));
      if (d_logits) (*d_logits)[i] += grad_scale * (post[i] - targets[i]) / count;
    }
  }
  return sum / count;
}

double mt_consistency(const ModelOutput& student, const ModelOutput& teacher,
                      const std::vector<char>* class_mask,
                      std::vector<double>* d_strong_logits,
                      std::vector<double>* d_weak_logits, double grad_scale) {
  if (student.num_classes != teacher.num_classes ||
      student.num_frames != teacher.num_frames)
    throw DataError("teacher and student output grids differ");
  const int C = student.num_classes;
  const int T = student.num_frames;
  if (class_mask && static_cast<int>(class_mask->size()) != C)
    throw DataError("consistency mask does not match the class count");

  const int rows = class_mask ? mask_count(*class_mask) : C;
  if (rows == 0) return 0.0;
  const double count = static_cast<double>(rows) * (T + 1);

  double sum = 0.0;
  for (int c = 0; c < C; ++c) {
    if (class_mask && !(*class_mask)[c]) continue;
    for (int t = 0; t < T; ++t) {
      const std::size_t i = static_cast<std::size_t>(c) * T + t;
      const double s = student.strong_post[i];
      const double diff = s - teacher.strong_post[i];
      sum += diff * diff;
      if (d_strong_logits)
        (*d_strong_logits)[i] += grad_scale * 2.0 * diff * s * (1.0 - s) / count;
    }
    const double s = student.weak_post[c];
    const double diff = s - teacher.weak_post[c];
    sum += diff * diff;
    if (d_weak_logits) (*d_weak_logits)[c] += grad_scale * 2.0 * diff * s * (1.0 - s) / count;
  }
  return sum / count;
}

double ict_loss(const ToyModel& student, const ModelOutput& teacher_a,
                const ModelOutput& teacher_b, const ClipRecord& a, const ClipRecord& b,
                double lambda, const std::vector<char>* class_mask, Workspace& ws,
                std::vector<double>* d_strong_logits, double grad_scale) {
  if (a.features.size() != b.features.size() ||
      a.num_feature_bins != b.num_feature_bins || a.num_input_frames != b.num_input_frames)
    throw DataError("interpolation pair features do not match");
  if (teacher_a.num_classes != teacher_b.num_classes ||
      teacher_a.num_frames != teacher_b.num_frames)
    throw DataError("interpolation pair teacher outputs do not match");

  std::vector<double> mixed(a.features.size());
  for (std::size_t i = 0; i < mixed.size(); ++i)
    mixed[i] = lambda * a.features[i] + (1.0 - lambda) * b.features[i];

  const ModelOutput out = student.forward(mixed, a.subset, ws);
  if (out.num_classes != teacher_a.num_classes || out.num_frames != teacher_a.num_frames)
    throw DataError("interpolation student output does not match the teachers");

  const int C = out.num_classes;
  const int T = out.num_frames;
  if (class_mask && static_cast<int>(class_mask->size()) != C)
    throw DataError("consistency mask does not match the class count");
  if (d_strong_logits &&
      d_strong_logits->size() != static_cast<std::size_t>(C) * static_cast<std::size_t>(T))
    throw DataError("interpolation gradient buffer does not match the grid");

  const int rows = class_mask ? mask_count(*class_mask) : C;
  if (rows == 0) return 0.0;
  const double count = static_cast<double>(rows) * T;

  double sum = 0.0;
  for (int c = 0; c < C; ++c) {
    if (class_mask && !(*class_mask)[c]) continue;
    for (int t = 0; t < T; ++t) {
      const std::size_t i = static_cast<std::size_t>(c) * T + t;
      const double target =
          lambda * teacher_a.strong_post[i] + (1.0 - lambda) * teacher_b.strong_post[i];
      const double s = out.strong_post[i];
      const double diff = s - target;
      sum += diff * diff;
      if (d_strong_logits)
        (*d_strong_logits)[i] += grad_scale * 2.0 * diff * s * (1.0 - s) / count;
    }
  }
  return sum / count;
}

// ---------------------------------------------------------------------------
// Mean teacher
// ---------------------------------------------------------------------------

Teacher::Teacher(const ToyModel& student, double tau) : model_(student), tau_(tau) {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw ConfigError("teacher decay must lie in [0, 1]");
}

void Teacher::update(const ToyModel& student) {
  auto& tp = model_.params();
  const auto& sp = student.params();
  if (tp.size() != sp.size())
    throw DataError("teacher and student parameters do not match");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    auto& t = tp[i].value.data;
    const auto& s = sp[i].value.data;
    if (t.size() != s.size())
      throw DataError("teacher and student parameters do not match");
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = tau_ * t[j] + (1.0 - tau_) * s[j];
  }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

AdamW::AdamW(const ToyModel& model, const StageConfig& config)
    : weight_decay_(config.weight_decay) {
  for (const auto& p : model.params()) {
    Slot s;
    s.m.assign(p.value.data.size(), 0.0);
    s.v.assign(p.value.data.size(), 0.0);
    switch (p.group) {
      case kGroupCnn:
        s.lr = config.lr_cnn;
        break;
      case kGroupRnnHeads:
        s.lr = config.lr_rnn;
        break;
      case kGroupEmbedder:
        s.lr = config.lr_tf * std::pow(config.lr_dec, p.depth);
        s.skip = config.embedder_frozen;
        break;
      default:
        throw ConfigError("unknown parameter group for " + p.name);
    }
    slots_.push_back(std::move(s));
  }
}

void AdamW::step(ToyModel& model) {
  auto& params = model.params();
  if (params.size() != slots_.size())
    throw DataError("optimizer state does not match the model");
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Slot& s = slots_[i];
    if (s.skip) continue;
    auto& value = params[i].value.data;
    const auto& grad = params[i].grad.data;
    if (value.size() != s.m.size() || grad.size() != value.size())
      throw DataError("optimizer state does not match parameter " + params[i].name);
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter " + params[i].name);
      s.m[j] = kBeta1 * s.m[j] + (1.0 - kBeta1) * g;
      s.v[j] = kBeta2 * s.v[j] + (1.0 - kBeta2) * g * g;
      const double mhat = s.m[j] / bc1;
      const double vhat = s.v[j] / bc2;
      value[j] -= s.lr * (mhat / (std::sqrt(vhat) + kAdamEps) + weight_decay_ * value[j]);
    }
  }
}

// ---------------------------------------------------------------------------
// Validation and selection
// ---------------------------------------------------------------------------

Posteriorgram model_posteriorgram(const ToyModel& model, const ClipRecord& clip,
                                  double clip_duration) {
  const ClipRecord norm = Augmenter::passthrough(clip);
  Workspace ws;
  const ModelOutput out = model.forward(norm.features, norm.subset, ws);

  Posteriorgram post;
  post.clip_id = clip.clip_id;
  post.num_classes = out.num_classes;
  post.num_frames = clip.num_input_frames;
  post.frame_hop = clip_duration / clip.num_input_frames;
  post.scores.assign(
      static_cast<std::size_t>(post.num_classes) * post.num_frames, 0.0);

  const auto taps = alignment_taps(out.num_frames, post.num_frames, AlignMethod::kLinear);
  for (int c = 0; c < post.num_classes; ++c) {
    const std::size_t row = static_cast<std::size_t>(c) * out.num_frames;
    for (int t = 0; t < post.num_frames; ++t) {
      double v = 0.0;
      for (const auto& [idx, w] : taps[t]) v += w * out.strong_post[row + idx];
      post.at(c, t) = v;
    }
  }
  return post;
}

namespace {

std::vector<Posteriorgram> filtered_posteriorgrams(const ToyModel& model,
                                                   const std::vector<const ClipRecord*>& clips,
                                                   double clip_duration) {
  std::vector<Posteriorgram> posts;
  posts.reserve(clips.size());
  for (const ClipRecord* clip : clips)
    posts.push_back(
        median_filter(model_posteriorgram(model, *clip, clip_duration), kDefaultMedianWindow));
  return posts;
}

std::vector<const ClipRecord*> clip_pointers(const std::vector<ClipRecord>& clips) {
  std::vector<const ClipRecord*> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(&c);
  return out;
}

double scored_psds1(const ToyModel& model, const Corpus& corpus,
                    const std::vector<const ClipRecord*>& clips) {
  const auto posts = filtered_posteriorgrams(model, clips, corpus.config.clip_duration);
  std::map<std::string, EventList> refs;
  for (const ClipRecord* clip : clips) {
    const auto it = corpus.strong_refs.find(clip->clip_id);
    if (it == corpus.strong_refs.end())
      throw DataError("no reference events for clip " + clip->clip_id);
    refs.emplace(it->first, it->second);
  }
  return psds1(posts, refs, PsdsParams{}, threshold_detector);
}

double scored_mpauc(const ToyModel& model, const Corpus& corpus,
                    const std::vector<const ClipRecord*>& clips) {
  const auto posts = filtered_posteriorgrams(model, clips, corpus.config.clip_duration);
  std::map<std::string, std::vector<SegmentRef>> refs;
  for (const ClipRecord* clip : clips) {
    const auto it = corpus.segment_refs.find(clip->clip_id);
    if (it == corpus.segment_refs.end())
      throw DataError("no segment references for clip " + clip->clip_id);
    refs.emplace(it->first, it->second);
  }
  return mpauc(posts, refs, corpus.vocab.native_indices(Subset::kMaestroStrong),
               MpaucParams{});
}

}  // namespace

SelectionRecord evaluate_selection(const ToyModel& model, const Corpus& corpus,
                                   const StageConfig& config, int epoch) {
  SelectionRecord rec;
  rec.epoch = epoch;
  if (!config.train_maestro_only) {
    rec.psds1_synth = scored_psds1(model, corpus, clip_pointers(corpus.valid_synth));
    rec.psds1_real = scored_psds1(model, corpus, clip_pointers(corpus.valid_real));
  }
  if (!config.train_desed_only)
    rec.mpauc = scored_mpauc(model, corpus, clip_pointers(corpus.valid_maestro));
  rec.score = rec.psds1_synth + rec.psds1_real + rec.mpauc;
  return rec;
}

MetricReport evaluate_metrics(const ToyModel& model, const Corpus& corpus,
                              const std::vector<const ClipRecord*>& strong_clips,
                              const std::vector<const ClipRecord*>& maestro_clips) {
  const double psds = strong_clips.empty() ? 0.0 : scored_psds1(model, corpus, strong_clips);
  const double mp = maestro_clips.empty() ? 0.0 : scored_mpauc(model, corpus, maestro_clips);
  return make_report(psds, mp);
}

// ---------------------------------------------------------------------------
// Stage training
// ---------------------------------------------------------------------------

namespace {

void log_epoch(std::ostream* log, StageId stage, const EpochRecord& rec) {
  if (!log) return;
  *log << "{\"stage\":\"" << stage_name(stage) << "\",\"epoch\":" << rec.epoch
       << ",\"loss_total\":" << format_double(rec.loss_total)
       << ",\"loss_strong\":" << format_double(rec.loss_strong)
       << ",\"loss_weak\":" << format_double(rec.loss_weak)
       << ",\"loss_pseudo\":" << format_double(rec.loss_pseudo)
       << ",\"loss_mt\":" << format_double(rec.loss_mt)
       << ",\"loss_ict\":" << format_double(rec.loss_ict)
       << ",\"psds1_synth\":" << format_double(rec.selection.psds1_synth)
       << ",\"psds1_real\":" << format_double(rec.selection.psds1_real)
       << ",\"mpauc\":" << format_double(rec.selection.mpauc)
       << ",\"score\":" << format_double(rec.selection.score) << "}\n";
}

std::string step_context(StageId stage, int epoch, int step) {
  return std::string("stage ") + stage_name(stage) + " epoch " + std::to_string(epoch) +
         " step " + std::to_string(step);
}

}  // namespace

StageResult train_stage(const ToyModel& init, const StageConfig& config,
                        const Corpus& corpus, const PseudoStore* pseudo,
                        std::uint64_t seed, std::ostream* log) {
  if (config.separate_rnn != init.config().separate_rnn)
    throw ConfigError("separate_rnn does not match the model");
  if (config.use_pseudo_loss && pseudo == nullptr)
    throw ConfigError("use_pseudo_loss requires stored pseudo targets");
  if (config.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (config.epochs > 0 && config.steps_per_epoch < 1)
    throw ConfigError("steps_per_epoch must be positive");
  if (config.w_ict > 0.0 && config.ict_alpha <= 0.0)
    throw ConfigError("ict_alpha must be positive");

  const BatchComposition comp = config.effective_batch();
  if (config.epochs > 0 && comp.total() < 1)
    throw ConfigError("the effective batch composition is empty");

  ToyModel model = init;
  Teacher teacher(model, config.mt_tau);
  AdamW opt(model, config);
  EpochSampler sampler(&corpus.train, Rng::derive_seed(seed, 1));
  Augmenter augmenter(config.augment, config.stage, &corpus.vocab, Rng::derive_seed(seed, 2));
  Rng ict_rng(Rng::derive_seed(seed, 3));

  const ClassMapping no_mapping;
  const ClassMapping& mapping = config.use_class_mapping ? corpus.mapping : no_mapping;

  StageResult result(model);
  {
    EpochRecord rec;
    rec.epoch = 0;
    rec.selection = evaluate_selection(model, corpus, config, 0);
    log_epoch(log, config.stage, rec);
    result.history.push_back(rec);
    result.best = rec.selection;
  }

  const bool need_teacher = config.w_mt > 0.0 || config.w_ict > 0.0;
  std::vector<double> d_strong, d_weak;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double e_total = 0.0, e_strong = 0.0, e_weak = 0.0, e_pseudo = 0.0, e_mt = 0.0,
           e_ict = 0.0;

    for (int step = 1; step <= config.steps_per_epoch; ++step) {
      const auto picked = sampler.sample_batch(comp);

      // Labels are mapped across datasets and pseudo targets attached before
      // augmentation, so mixup blends the grids the losses will actually see.
      std::vector<ClipRecord> staged;
      staged.reserve(picked.size());
      for (const ClipRecord* cp : picked) {
        ClipRecord c = *cp;
        if (config.use_class_mapping) {
          if (c.strong_labels)
            c.strong_labels = map_labels(*c.strong_labels, mapping, c.subset, corpus.vocab);
          if (c.weak_labels)
            c.weak_labels = map_labels(*c.weak_labels, mapping, c.subset, corpus.vocab);
        }
        if (config.use_pseudo_loss)
          c = attach_pseudo_targets(c, *pseudo, corpus.vocab, mapping);
        staged.push_back(std::move(c));
      }
      std::vector<const ClipRecord*> staged_ptrs;
      staged_ptrs.reserve(staged.size());
      for (const auto& c : staged) staged_ptrs.push_back(&c);

      const std::vector<ClipRecord> batch = augmenter.apply(staged_ptrs);
      const int n = static_cast<int>(batch.size());

      int n_strong = 0, n_weak = 0, n_pseudo = 0, n_mt = 0;
      std::vector<int> unlabeled;
      std::vector<char> mt_included(batch.size(), 0);
      for (int i = 0; i < n; ++i) {
        if (batch[i].strong_labels) ++n_strong;
        if (batch[i].weak_labels) ++n_weak;
        if (batch[i].pseudo_labels) ++n_pseudo;
        const bool in_mt =
            config.ssl_on_maestro || batch[i].subset != Subset::kMaestroStrong;
        if (in_mt) {
          mt_included[i] = 1;
          ++n_mt;
        }
        if (batch[i].subset == Subset::kDesedUnlabeled) unlabeled.push_back(i);
      }

      std::vector<std::vector<char>> ssl_masks;
      if (config.ssl_class_mask) {
        ssl_masks.reserve(batch.size());
        for (const auto& c : batch) {
          if (c.strong_labels)
            ssl_masks.push_back(c.strong_labels->loss_mask);
          else if (c.weak_labels)
            ssl_masks.push_back(c.weak_labels->loss_mask);
          else
            ssl_masks.push_back(
                build_loss_mask(c.subset, corpus.vocab, mapping, config.use_class_mapping));
        }
      }

      std::vector<ModelOutput> teacher_out;
      if (need_teacher) {
        teacher_out.reserve(batch.size());
        Workspace tws;
        for (const auto& c : batch)
          teacher_out.push_back(teacher.model().forward(c.features, c.subset, tws));
      }

      model.zero_grad();
      double s_strong = 0.0, s_weak = 0.0, s_pseudo = 0.0, s_mt = 0.0, s_ict = 0.0;

      Workspace ws;
      for (int i = 0; i < n; ++i) {
        const ClipRecord& c = batch[i];
        const ModelOutput out = model.forward(c.features, c.subset, ws);
        const std::size_t strong_size = out.strong_post.size();
        d_strong.assign(strong_size, 0.0);
        d_weak.assign(out.weak_post.size(), 0.0);

        if (c.strong_labels && config.w_strong > 0.0)
          s_strong += bce_masked(out.strong_post, c.strong_labels->targets,
                                 c.strong_labels->loss_mask, out.num_classes,
                                 out.num_frames, &d_strong, config.w_strong / n_strong);
        if (c.weak_labels && config.w_weak > 0.0)
          s_weak += bce_masked(out.weak_post, c.weak_labels->targets,
                               c.weak_labels->loss_mask, out.num_classes, 1, &d_weak,
                               config.w_weak / n_weak);
        if (c.pseudo_labels && config.w_pseudo > 0.0)
          s_pseudo += bce_masked(out.strong_post, c.pseudo_labels->targets,
                                 c.pseudo_labels->loss_mask, out.num_classes,
                                 out.num_frames, &d_strong, config.w_pseudo / n_pseudo);
        if (config.w_mt > 0.0 && mt_included[i])
          s_mt += mt_consistency(out, teacher_out[i],
                                 config.ssl_class_mask ? &ssl_masks[i] : nullptr, &d_strong,
                                 &d_weak, config.w_mt / n_mt);

        model.backward(ws, d_strong, d_weak);
      }

      int n_pairs = 0;
      if (config.w_ict > 0.0 && unlabeled.size() >= 2) {
        ict_rng.shuffle(unlabeled);
        n_pairs = static_cast<int>(unlabeled.size()) / 2;
        for (int p = 0; p < n_pairs; ++p) {
          const int u = unlabeled[2 * p];
          const int v = unlabeled[2 * p + 1];
          const double lambda = ict_rng.beta(config.ict_alpha, config.ict_alpha);
          Workspace mws;
          d_strong.assign(
              static_cast<std::size_t>(teacher_out[u].num_classes) *
                  static_cast<std::size_t>(teacher_out[u].num_frames),
              0.0);
          d_weak.assign(teacher_out[u].num_classes, 0.0);
          s_ict += ict_loss(model, teacher_out[u], teacher_out[v], batch[u], batch[v],
                            lambda, config.ssl_class_mask ? &ssl_masks[u] : nullptr, mws,
                            &d_strong, config.w_ict / n_pairs);
          model.backward(mws, d_strong, d_weak);
        }
      }

      const double t_strong = n_strong ? s_strong / n_strong : 0.0;
      const double t_weak = n_weak ? s_weak / n_weak : 0.0;
      const double t_pseudo = n_pseudo ? s_pseudo / n_pseudo : 0.0;
      const double t_mt = n_mt ? s_mt / n_mt : 0.0;
      const double t_ict = n_pairs ? s_ict / n_pairs : 0.0;
      const double total = config.w_strong * t_strong + config.w_weak * t_weak +
                           config.w_pseudo * t_pseudo + config.w_mt * t_mt +
                           config.w_ict * t_ict;
      if (!std::isfinite(total))
        throw NumericError(step_context(config.stage, epoch, step) + ": training diverged");

      try {
        opt.step(model);
      } catch (const NumericError& e) {
        throw NumericError(step_context(config.stage, epoch, step) + ": " + e.what());
      }
      teacher.update(model);

      e_total += total;
      e_strong += t_strong;
      e_weak += t_weak;
      e_pseudo += t_pseudo;
      e_mt += t_mt;
      e_ict += t_ict;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const double steps = config.steps_per_epoch;
    rec.loss_total = e_total / steps;
    rec.loss_strong = e_strong / steps;
    rec.loss_weak = e_weak / steps;
    rec.loss_pseudo = e_pseudo / steps;
    rec.loss_mt = e_mt / steps;
    rec.loss_ict = e_ict / steps;
    rec.selection = evaluate_selection(model, corpus, config, epoch);
    log_epoch(log, config.stage, rec);
    result.history.push_back(rec);

    if (rec.selection.score > result.best.score) {
      result.best = rec.selection;
      result.best_model = model;
    }
  }

  return result;
}

}  // namespace hetsed
