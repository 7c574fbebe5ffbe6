#include "hetsed/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hetsed {

AugmentConfig augment_config_from(const ConfigFile& cfg) {
  AugmentConfig a;
  const std::string sec = "augment";
  a.dir.p = cfg.get_double(sec, "dir_p", a.dir.p);
  a.wavmix.p = cfg.get_double(sec, "wavmix_p", a.wavmix.p);
  a.wavmix.alpha = cfg.get_double(sec, "wavmix_alpha", a.wavmix.alpha);
  a.freq_mixstyle.p = cfg.get_double(sec, "freq_mixstyle_p", a.freq_mixstyle.p);
  a.freq_mixstyle.alpha = cfg.get_double(sec, "freq_mixstyle_alpha", a.freq_mixstyle.alpha);
  a.mixup.p = cfg.get_double(sec, "mixup_p", a.mixup.p);
  a.mixup.alpha = cfg.get_double(sec, "mixup_alpha", a.mixup.alpha);
  a.filter_augment.p = cfg.get_double(sec, "filter_p", a.filter_augment.p);
  a.freq_warp.p = cfg.get_double(sec, "freq_warp_p", a.freq_warp.p);
  a.time_mask_lo = cfg.get_double(sec, "time_mask_lo", a.time_mask_lo);
  a.time_mask_hi = cfg.get_double(sec, "time_mask_hi", a.time_mask_hi);
  a.dir_db_limit = cfg.get_double(sec, "dir_db_limit", a.dir_db_limit);
  a.filter_min_bands = cfg.get_int(sec, "filter_min_bands", a.filter_min_bands);
  a.filter_max_bands = cfg.get_int(sec, "filter_max_bands", a.filter_max_bands);
  a.filter_db = cfg.get_double(sec, "filter_db", a.filter_db);
  a.freq_warp_lo = cfg.get_double(sec, "freq_warp_lo", a.freq_warp_lo);
  a.freq_warp_hi = cfg.get_double(sec, "freq_warp_hi", a.freq_warp_hi);
  for (const auto* m : {&a.dir, &a.wavmix, &a.freq_mixstyle, &a.mixup, &a.filter_augment,
                        &a.freq_warp}) {
    if (m->p < 0.0 || m->p > 1.0) throw ConfigError("augment probability outside [0,1]");
  }
  if (a.time_mask_lo < 0.0 || a.time_mask_hi > 1.0 || a.time_mask_lo > a.time_mask_hi) {
    throw ConfigError("time mask ratio interval malformed");
  }
  if (a.filter_min_bands < 1 || a.filter_max_bands < a.filter_min_bands) {
    throw ConfigError("filter band range malformed");
  }
  if (a.freq_warp_lo <= 0.0 || a.freq_warp_hi < a.freq_warp_lo) {
    throw ConfigError("frequency warp range malformed");
  }
  return a;
}

void normalize_features(ClipRecord& clip) {
  for (auto& v : clip.features) v = std::log1p(v);
}

namespace {

std::vector<char> union_mask_rule(const std::vector<char>& mask_a,
                                  const std::vector<char>& mask_b,
                                  const std::vector<char>& active,
                                  const std::vector<char>& native_a,
                                  const std::vector<char>& native_b) {
  std::vector<char> out(mask_a.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = ((mask_a[c] || mask_b[c]) && active[c]) || native_a[c] || native_b[c];
  }
  return out;
}

std::optional<FrameLabelGrid> mix_frame_grids(const std::optional<FrameLabelGrid>& ga,
                                              const std::optional<FrameLabelGrid>& gb,
                                              double lambda, const std::vector<char>& native_a,
                                              const std::vector<char>& native_b) {
  if (!ga && !gb) return std::nullopt;
  const int C = ga ? ga->num_classes : gb->num_classes;
  const int T = ga ? ga->num_frames : gb->num_frames;
  if (ga && gb && (ga->num_classes != gb->num_classes || ga->num_frames != gb->num_frames)) {
    throw DataError("label grid geometry mismatch in mixup");
  }
  FrameLabelGrid zero = FrameLabelGrid::zeros(C, T);
  zero.loss_mask.assign(C, 0);
  const FrameLabelGrid& a = ga ? *ga : zero;
  const FrameLabelGrid& b = gb ? *gb : zero;

  FrameLabelGrid out = FrameLabelGrid::zeros(C, T);
  std::vector<char> any_active(C, 0);
  for (int c = 0; c < C; ++c) {
    for (int t = 0; t < T; ++t) {
      const double v = lambda * a.at(c, t) + (1.0 - lambda) * b.at(c, t);
      out.at(c, t) = v;
      if (v > 0.0) any_active[c] = 1;
    }
  }
  out.loss_mask = union_mask_rule(a.loss_mask, b.loss_mask, any_active, native_a, native_b);
  return out;
}

std::optional<WeakLabelVector> mix_weak(const std::optional<WeakLabelVector>& wa,
                                        const std::optional<WeakLabelVector>& wb,
                                        double lambda, const std::vector<char>& native_a,
                                        const std::vector<char>& native_b) {
  if (!wa && !wb) return std::nullopt;
  const std::size_t C = wa ? wa->targets.size() : wb->targets.size();
  WeakLabelVector zero;
  zero.targets.assign(C, 0.0);
  zero.loss_mask.assign(C, 0);
  const WeakLabelVector& a = wa ? *wa : zero;
  const WeakLabelVector& b = wb ? *wb : zero;
  if (a.targets.size() != b.targets.size()) {
    throw DataError("weak label geometry mismatch in mixup");
  }
  WeakLabelVector out;
  out.targets.resize(C);
  std::vector<char> active(C, 0);
  for (std::size_t c = 0; c < C; ++c) {
    out.targets[c] = lambda * a.targets[c] + (1.0 - lambda) * b.targets[c];
    active[c] = out.targets[c] > 0.0;
  }
  out.loss_mask = union_mask_rule(a.loss_mask, b.loss_mask, active, native_a, native_b);
  return out;
}

}  // namespace

ClipRecord mixup(const ClipRecord& a, const ClipRecord& b, double lambda,
                 const ClassVocabulary& vocab) {
  if (a.num_feature_bins != b.num_feature_bins ||
      a.num_input_frames != b.num_input_frames) {
    throw DataError("feature geometry mismatch in mixup: " + a.clip_id + " vs " + b.clip_id);
  }
  if (lambda < 0.0 || lambda > 1.0) throw NumericError("mixup lambda outside [0,1]");
  // Degenerate draws keep the surviving clip bit-exact.
  if (lambda == 1.0) return a;
  if (lambda == 0.0) return b;

  ClipRecord out = a;
  for (std::size_t i = 0; i < out.features.size(); ++i) {
    out.features[i] = lambda * a.features[i] + (1.0 - lambda) * b.features[i];
  }
  const auto native_a = build_loss_mask(a.subset, vocab, ClassMapping(), false);
  const auto native_b = build_loss_mask(b.subset, vocab, ClassMapping(), false);
  out.strong_labels = mix_frame_grids(a.strong_labels, b.strong_labels, lambda, native_a, native_b);
  out.weak_labels = mix_weak(a.weak_labels, b.weak_labels, lambda, native_a, native_b);
  out.pseudo_labels = mix_frame_grids(a.pseudo_labels, b.pseudo_labels, lambda, native_a, native_b);
  return out;
}

ClipRecord wavmix(const ClipRecord& a, const ClipRecord& b, double lambda,
                  const ClassVocabulary& vocab) {
  const bool both_strong = is_strong_subset(a.subset) && a.strong_labels &&
                           is_strong_subset(b.subset) && b.strong_labels;
  if (!both_strong) return a;
  return mixup(a, b, lambda, vocab);
}

std::vector<double> freq_mixstyle(const std::vector<double>& a_features,
                                  const std::vector<double>& b_features, int bins,
                                  int frames, double lambda) {
  if (a_features.size() != b_features.size() ||
      a_features.size() != static_cast<std::size_t>(bins) * frames) {
    throw DataError("feature geometry mismatch in freq-mixstyle");
  }
  constexpr double kEps = 1e-6;
  std::vector<double> out(a_features.size());
  for (int f = 0; f < bins; ++f) {
    double mu_a = 0.0, mu_b = 0.0;
    for (int t = 0; t < frames; ++t) {
      mu_a += a_features[static_cast<std::size_t>(f) * frames + t];
      mu_b += b_features[static_cast<std::size_t>(f) * frames + t];
    }
    mu_a /= frames;
    mu_b /= frames;
    double var_a = 0.0, var_b = 0.0;
    for (int t = 0; t < frames; ++t) {
      const double da = a_features[static_cast<std::size_t>(f) * frames + t] - mu_a;
      const double db = b_features[static_cast<std::size_t>(f) * frames + t] - mu_b;
      var_a += da * da;
      var_b += db * db;
    }
    const double sd_a = std::sqrt(var_a / frames);
    const double sd_b = std::sqrt(var_b / frames);
    const double gamma = lambda * sd_a + (1.0 - lambda) * sd_b;
    const double beta = lambda * mu_a + (1.0 - lambda) * mu_b;
    for (int t = 0; t < frames; ++t) {
      const std::size_t i = static_cast<std::size_t>(f) * frames + t;
      out[i] = gamma * (a_features[i] - mu_a) / (sd_a + kEps) + beta;
    }
  }
  return out;
}

std::vector<double> filter_gain_curve(int bins, const std::vector<int>& boundaries,
                                      const std::vector<double>& gains_db) {
  const int k = static_cast<int>(gains_db.size());
  if (k < 1 || static_cast<int>(boundaries.size()) != k - 1) {
    throw ConfigError("filter band specification malformed");
  }
  std::vector<int> edges;
  edges.push_back(0);
  for (int b : boundaries) {
    if (b <= edges.back() || b >= bins) throw ConfigError("filter band boundaries malformed");
    edges.push_back(b);
  }
  edges.push_back(bins);

  // Gain is held at each band center and interpolated between centers.
  std::vector<double> centers(k);
  for (int i = 0; i < k; ++i) centers[i] = 0.5 * (edges[i] + edges[i + 1] - 1);
  std::vector<double> out(bins);
  for (int f = 0; f < bins; ++f) {
    double db;
    if (f <= centers.front()) {
      db = gains_db.front();
    } else if (f >= centers.back()) {
      db = gains_db.back();
    } else {
      int i = 0;
      while (f > centers[i + 1]) ++i;
      const double frac = (f - centers[i]) / (centers[i + 1] - centers[i]);
      db = gains_db[i] + frac * (gains_db[i + 1] - gains_db[i]);
    }
    out[f] = std::pow(10.0, db / 20.0);
  }
  return out;
}

void apply_gain_curve(std::vector<double>& features, int bins, int frames,
                      const std::vector<double>& gains) {
  if (static_cast<int>(gains.size()) != bins ||
      features.size() != static_cast<std::size_t>(bins) * frames) {
    throw DataError("gain curve geometry mismatch");
  }
  for (int f = 0; f < bins; ++f) {
    for (int t = 0; t < frames; ++t) {
      features[static_cast<std::size_t>(f) * frames + t] *= gains[f];
    }
  }
}

ClipRecord time_mask(const ClipRecord& clip, double start_frac, double ratio) {
  const bool desed_strong = (clip.subset == Subset::kDesedRealStrong ||
                             clip.subset == Subset::kDesedSynthStrong) &&
                            clip.strong_labels.has_value();
  if (!desed_strong) return clip;
  if (ratio < 0.0 || ratio > 1.0 || start_frac < 0.0 || start_frac + ratio > 1.0 + 1e-12) {
    throw NumericError("time mask span outside the clip");
  }
  ClipRecord out = clip;
  auto zero_span = [&](int frames, auto&& zero_col) {
    const int len = static_cast<int>(std::lround(ratio * frames));
    const int start = static_cast<int>(std::lround(start_frac * frames));
    for (int t = start; t < std::min(frames, start + len); ++t) zero_col(t);
  };
  zero_span(out.num_input_frames, [&](int t) {
    for (int f = 0; f < out.num_feature_bins; ++f) out.feature(f, t) = 0.0;
  });
  zero_span(out.strong_labels->num_frames, [&](int t) {
    for (int c = 0; c < out.strong_labels->num_classes; ++c) out.strong_labels->at(c, t) = 0.0;
  });
  return out;
}

std::vector<double> freq_warp(const std::vector<double>& features, int bins, int frames,
                              double w) {
  if (features.size() != static_cast<std::size_t>(bins) * frames) {
    throw DataError("feature geometry mismatch in frequency warp");
  }
  const int warped = std::max(2, static_cast<int>(std::lround(w * bins)));
  if (warped == bins) return features;

  // Endpoint-aligned linear resampling of the frequency axis.
  std::vector<double> resampled(static_cast<std::size_t>(warped) * frames);
  for (int j = 0; j < warped; ++j) {
    const double pos = static_cast<double>(j) * (bins - 1) / (warped - 1);
    const int f0 = std::min(bins - 2, static_cast<int>(pos));
    const double frac = pos - f0;
    for (int t = 0; t < frames; ++t) {
      const double lo = features[static_cast<std::size_t>(f0) * frames + t];
      const double hi = features[static_cast<std::size_t>(f0 + 1) * frames + t];
      resampled[static_cast<std::size_t>(j) * frames + t] = lo + frac * (hi - lo);
    }
  }

  std::vector<double> out(static_cast<std::size_t>(bins) * frames);
  if (warped > bins) {
    const int offset = (warped - bins) / 2;  // center crop
    for (int f = 0; f < bins; ++f) {
      for (int t = 0; t < frames; ++t) {
        out[static_cast<std::size_t>(f) * frames + t] =
            resampled[static_cast<std::size_t>(f + offset) * frames + t];
      }
    }
  } else {
    const int pad = (bins - warped) / 2;  // edge-pad with the boundary bins
    for (int f = 0; f < bins; ++f) {
      const int src = std::clamp(f - pad, 0, warped - 1);
      for (int t = 0; t < frames; ++t) {
        out[static_cast<std::size_t>(f) * frames + t] =
            resampled[static_cast<std::size_t>(src) * frames + t];
      }
    }
  }
  return out;
}

std::vector<double> random_dir_curve_db(int bins, double db_limit, Rng& rng) {
  std::vector<double> walk(bins);
  double x = rng.normal() * 2.0;
  for (int f = 0; f < bins; ++f) {
    walk[f] = x;
    x += rng.normal() * 2.0;
  }
  // Moving-average smoothing, then clamp.
  std::vector<double> out(bins);
  const int half = 2;
  for (int f = 0; f < bins; ++f) {
    double acc = 0.0;
    int n = 0;
    for (int g = std::max(0, f - half); g <= std::min(bins - 1, f + half); ++g) {
      acc += walk[g];
      ++n;
    }
    out[f] = std::clamp(acc / n, -db_limit, db_limit);
  }
  return out;
}

Augmenter::Augmenter(const AugmentConfig& config, StageId stage,
                     const ClassVocabulary* vocab, std::uint64_t seed)
    : config_(config), stage_(stage), vocab_(vocab), rng_(seed) {}

ClipRecord Augmenter::passthrough(const ClipRecord& clip) {
  ClipRecord out = clip;
  normalize_features(out);
  return out;
}

std::vector<ClipRecord> Augmenter::apply(const std::vector<const ClipRecord*>& batch) {
  std::vector<ClipRecord> out;
  out.reserve(batch.size());
  for (const auto* clip : batch) out.push_back(*clip);
  const int n = static_cast<int>(out.size());

  // 1. Device-response simulation (raw domain, per clip).
  if (on(config_.dir)) {
    for (auto& clip : out) {
      if (!rng_.bernoulli(config_.dir.p)) continue;
      const auto db = random_dir_curve_db(clip.num_feature_bins, config_.dir_db_limit, rng_);
      std::vector<double> gains(db.size());
      for (std::size_t f = 0; f < db.size(); ++f) gains[f] = std::pow(10.0, db[f] / 20.0);
      apply_gain_curve(clip.features, clip.num_feature_bins, clip.num_input_frames, gains);
    }
  }

  // 2. Raw-domain mixing of strongly labeled clips (one coin per batch).
  if (on(config_.wavmix) && rng_.bernoulli(config_.wavmix.p)) {
    std::vector<int> strong;
    for (int i = 0; i < n; ++i) {
      if (is_strong_subset(out[i].subset) && out[i].strong_labels) strong.push_back(i);
    }
    if (strong.size() >= 2) {
      std::vector<int> partner = strong;
      rng_.shuffle(partner);
      const std::vector<ClipRecord> snapshot(out.begin(), out.end());
      for (std::size_t j = 0; j < strong.size(); ++j) {
        const double lambda = rng_.beta(config_.wavmix.alpha, config_.wavmix.alpha);
        out[strong[j]] = wavmix(snapshot[strong[j]], snapshot[partner[j]], lambda, *vocab_);
      }
    }
  }

  // 3. Normalization: the raw/spectrogram-domain boundary.
  for (auto& clip : out) normalize_features(clip);

  // 4. Per-bin statistics mixing (one coin per batch, partners over the
  //    whole batch).
  if (on(config_.freq_mixstyle) && rng_.bernoulli(config_.freq_mixstyle.p) && n >= 2) {
    std::vector<int> partner(n);
    std::iota(partner.begin(), partner.end(), 0);
    rng_.shuffle(partner);
    const std::vector<ClipRecord> snapshot(out.begin(), out.end());
    for (int i = 0; i < n; ++i) {
      const double lambda =
          rng_.beta(config_.freq_mixstyle.alpha, config_.freq_mixstyle.alpha);
      out[i].features =
          freq_mixstyle(snapshot[i].features, snapshot[partner[i]].features,
                        out[i].num_feature_bins, out[i].num_input_frames, lambda);
    }
  }

  // 5. Mixup (one coin per batch); partners share the same label kind so
  //    every mixed grid has a counterpart, but datasets mix freely.
  if (on(config_.mixup) && rng_.bernoulli(config_.mixup.p)) {
    auto label_kind = [](const ClipRecord& c) {
      if (c.strong_labels) return 0;
      if (c.weak_labels) return 1;
      return 2;
    };
    const std::vector<ClipRecord> snapshot(out.begin(), out.end());
    for (int kind = 0; kind < 3; ++kind) {
      std::vector<int> group;
      for (int i = 0; i < n; ++i) {
        if (label_kind(out[i]) == kind) group.push_back(i);
      }
      if (group.size() < 2) continue;
      std::vector<int> partner = group;
      rng_.shuffle(partner);
      for (std::size_t j = 0; j < group.size(); ++j) {
        const double lambda = rng_.beta(config_.mixup.alpha, config_.mixup.alpha);
        out[group[j]] = mixup(snapshot[group[j]], snapshot[partner[j]], lambda, *vocab_);
      }
    }
  }

  // 6. Time masking (always applied to DESED strong clips when enabled).
  if (config_.time_mask_stages[static_cast<int>(stage_)]) {
    for (auto& clip : out) {
      if ((clip.subset != Subset::kDesedRealStrong &&
           clip.subset != Subset::kDesedSynthStrong) ||
          !clip.strong_labels) {
        continue;
      }
      const double ratio = rng_.uniform(config_.time_mask_lo, config_.time_mask_hi);
      const double start = rng_.uniform(0.0, 1.0 - ratio);
      clip = time_mask(clip, start, ratio);
    }
  }

  // 7. Band-gain filtering (per clip).
  if (on(config_.filter_augment)) {
    for (auto& clip : out) {
      if (!rng_.bernoulli(config_.filter_augment.p)) continue;
      const int span = config_.filter_max_bands - config_.filter_min_bands + 1;
      const int k = std::min(clip.num_feature_bins,
                             config_.filter_min_bands +
                                 static_cast<int>(rng_.uniform_index(span)));
      std::vector<int> interior(clip.num_feature_bins - 1);
      std::iota(interior.begin(), interior.end(), 1);
      rng_.shuffle(interior);
      std::vector<int> boundaries(interior.begin(), interior.begin() + (k - 1));
      std::sort(boundaries.begin(), boundaries.end());
      std::vector<double> gains(k);
      for (auto& g : gains) g = rng_.uniform(-config_.filter_db, config_.filter_db);
      const auto curve = filter_gain_curve(clip.num_feature_bins, boundaries, gains);
      apply_gain_curve(clip.features, clip.num_feature_bins, clip.num_input_frames, curve);
    }
  }

  // 8. Frequency warping (per clip).
  if (on(config_.freq_warp)) {
    for (auto& clip : out) {
      if (!rng_.bernoulli(config_.freq_warp.p)) continue;
      const double w = rng_.uniform(config_.freq_warp_lo, config_.freq_warp_hi);
      clip.features =
          freq_warp(clip.features, clip.num_feature_bins, clip.num_input_frames, w);
    }
  }

  for (const auto& clip : out) {
    for (double v : clip.features) {
      if (!std::isfinite(v)) throw NumericError("augmentation produced non-finite features");
    }
  }
  return out;
}

}  // namespace hetsed
