#include "hetsed/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace hetsed {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

const char* align_method_name(AlignMethod m) {
  switch (m) {
    case AlignMethod::kLinear: return "linear";
    case AlignMethod::kNearestExact: return "nearest_exact";
    case AlignMethod::kAvgPool: return "avg_pool";
  }
  return "?";
}

AlignMethod align_method_from_name(const std::string& name) {
  if (name == "linear") return AlignMethod::kLinear;
  if (name == "nearest_exact") return AlignMethod::kNearestExact;
  if (name == "avg_pool") return AlignMethod::kAvgPool;
  throw ConfigError("unknown alignment method: " + name);
}

std::vector<std::vector<std::pair<int, double>>> alignment_taps(int len_in, int len_out,
                                                                AlignMethod method) {
  if (len_in < 1 || len_out < 1) throw ConfigError("alignment lengths must be positive");
  std::vector<std::vector<std::pair<int, double>>> taps(len_out);
  switch (method) {
    case AlignMethod::kLinear: {
      for (int i = 0; i < len_out; ++i) {
        const double pos =
            len_out == 1 ? 0.0
                         : static_cast<double>(i) * (len_in - 1) / (len_out - 1);
        const int j0 = std::min(len_in - 1, static_cast<int>(pos));
        const double frac = pos - j0;
        if (frac == 0.0 || j0 + 1 >= len_in) {
          taps[i] = {{j0, 1.0}};
        } else {
          taps[i] = {{j0, 1.0 - frac}, {j0 + 1, frac}};
        }
      }
      break;
    }
    case AlignMethod::kNearestExact: {
      for (int i = 0; i < len_out; ++i) {
        const int j = std::min(
            len_in - 1,
            static_cast<int>(std::floor((i + 0.5) * len_in / len_out)));
        taps[i] = {{j, 1.0}};
      }
      break;
    }
    case AlignMethod::kAvgPool: {
      for (int i = 0; i < len_out; ++i) {
        const int lo = static_cast<int>(std::floor(static_cast<double>(i) * len_in / len_out));
        const int hi = static_cast<int>(
            std::ceil(static_cast<double>(i + 1) * len_in / len_out));
        const double w = 1.0 / (hi - lo);
        for (int j = lo; j < hi; ++j) taps[i].emplace_back(j, w);
      }
      break;
    }
  }
  return taps;
}

std::vector<double> align_sequence(const std::vector<double>& seq, int dim, int len_in,
                                   int len_out, AlignMethod method) {
  if (seq.size() != static_cast<std::size_t>(dim) * len_in) {
    throw DataError("alignment input size mismatch");
  }
  const auto taps = alignment_taps(len_in, len_out, method);
  std::vector<double> out(static_cast<std::size_t>(dim) * len_out, 0.0);
  for (int d = 0; d < dim; ++d) {
    const double* in_row = seq.data() + static_cast<std::size_t>(d) * len_in;
    double* out_row = out.data() + static_cast<std::size_t>(d) * len_out;
    for (int i = 0; i < len_out; ++i) {
      double acc = 0.0;
      for (const auto& [j, w] : taps[i]) acc += w * in_row[j];
      out_row[i] = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (feature_bins < 4 || feature_bins % 4 != 0) {
    throw ConfigError("feature_bins must be a positive multiple of 4");
  }
  if (input_frames < 4 || input_frames % 4 != 0) {
    throw ConfigError("input_frames must be a positive multiple of 4");
  }
  if (num_classes < 1) throw ConfigError("model needs at least one class");
  if (cnn_ch1 < 1 || cnn_ch2 < 1 || embed_dim < 1 || hidden < 1) {
    throw ConfigError("model widths must be positive");
  }
  if (embed_kernel < 1 || embed_stride < 1 || input_frames < embed_kernel) {
    throw ConfigError("embedder kernel/stride inconsistent with input length");
  }
  if (t_emb() < 1) throw ConfigError("embedder output length must be positive");
}

ModelConfig model_config_from(const ConfigFile& cfg, int num_classes) {
  ModelConfig m;
  m.num_classes = num_classes;
  const std::string sec = "model";
  m.feature_bins = cfg.get_int(sec, "feature_bins", m.feature_bins);
  m.input_frames = cfg.get_int(sec, "input_frames", m.input_frames);
  m.cnn_ch1 = cfg.get_int(sec, "cnn_ch1", m.cnn_ch1);
  m.cnn_ch2 = cfg.get_int(sec, "cnn_ch2", m.cnn_ch2);
  m.embed_dim = cfg.get_int(sec, "embed_dim", m.embed_dim);
  m.embed_kernel = cfg.get_int(sec, "embed_kernel", m.embed_kernel);
  m.embed_stride = cfg.get_int(sec, "embed_stride", m.embed_stride);
  m.hidden = cfg.get_int(sec, "hidden", m.hidden);
  m.align = align_method_from_name(
      cfg.get_string(sec, "align", align_method_name(m.align)));
  m.separate_rnn = cfg.get_bool(sec, "separate_rnn", m.separate_rnn);
  m.init_seed = cfg.get_u64(sec, "init_seed", m.init_seed);
  m.embedder_seed = cfg.get_u64(sec, "embedder_seed", m.embedder_seed);
  m.validate();
  return m;
}

namespace {

std::vector<char> config_bytes(const ModelConfig& c) {
  std::vector<char> out;
  auto put_i32 = [&](std::int32_t v) {
    const char* p = reinterpret_cast<const char*>(&v);
    out.insert(out.end(), p, p + 4);
  };
  auto put_u64 = [&](std::uint64_t v) {
    const char* p = reinterpret_cast<const char*>(&v);
    out.insert(out.end(), p, p + 8);
  };
  put_i32(c.feature_bins);
  put_i32(c.input_frames);
  put_i32(c.num_classes);
  put_i32(c.cnn_ch1);
  put_i32(c.cnn_ch2);
  put_i32(c.embed_dim);
  put_i32(c.embed_kernel);
  put_i32(c.embed_stride);
  put_i32(c.hidden);
  put_i32(static_cast<std::int32_t>(c.align));
  put_i32(c.separate_rnn ? 1 : 0);
  put_u64(c.init_seed);
  put_u64(c.embedder_seed);
  return out;
}

std::uint64_t fnv1a_bytes(const void* data, std::size_t n,
                          std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t model_config_hash(const ModelConfig& c) {
  const auto bytes = config_bytes(c);
  return fnv1a_bytes(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

int ToyModel::add_param(const std::string& name, std::vector<int> shape, int group,
                        int depth, double init_scale, Rng& rng) {
  Param p;
  p.name = name;
  p.group = group;
  p.depth = depth;
  p.value = Tensor::zeros(shape);
  p.grad = Tensor::zeros(std::move(shape));
  if (init_scale > 0.0) {
    for (auto& v : p.value.data) v = rng.uniform(-init_scale, init_scale);
  }
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size()) - 1;
}

ToyModel::GruParams ToyModel::add_gru(const std::string& prefix, int input_dim, int group,
                                      Rng& rng) {
  const int H = config_.hidden;
  const double sx = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double sh = 1.0 / std::sqrt(static_cast<double>(H));
  GruParams g;
  g.wz = add_param(prefix + ".wz", {H, input_dim}, group, 0, sx, rng);
  g.uz = add_param(prefix + ".uz", {H, H}, group, 0, sh, rng);
  g.bz = add_param(prefix + ".bz", {H}, group, 0, 0.0, rng);
  g.wr = add_param(prefix + ".wr", {H, input_dim}, group, 0, sx, rng);
  g.ur = add_param(prefix + ".ur", {H, H}, group, 0, sh, rng);
  g.br = add_param(prefix + ".br", {H}, group, 0, 0.0, rng);
  g.wn = add_param(prefix + ".wn", {H, input_dim}, group, 0, sx, rng);
  g.un = add_param(prefix + ".un", {H, H}, group, 0, sh, rng);
  g.bn = add_param(prefix + ".bn", {H}, group, 0, 0.0, rng);
  return g;
}

ToyModel::ToyModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.init_seed);
  Rng emb_rng(config_.embedder_seed);

  const double s1 = 1.0 / std::sqrt(1.0 * 9);
  conv1_w_ = add_param("cnn.conv1.weight", {config_.cnn_ch1, 1, 3, 3}, kGroupCnn, 0, s1, rng);
  conv1_b_ = add_param("cnn.conv1.bias", {config_.cnn_ch1}, kGroupCnn, 0, 0.0, rng);
  const double s2 = 1.0 / std::sqrt(config_.cnn_ch1 * 9.0);
  conv2_w_ = add_param("cnn.conv2.weight", {config_.cnn_ch2, config_.cnn_ch1, 3, 3},
                       kGroupCnn, 0, s2, rng);
  conv2_b_ = add_param("cnn.conv2.bias", {config_.cnn_ch2}, kGroupCnn, 0, 0.0, rng);

  // The frozen branch draws from its own stream so its weights do not depend
  // on init_seed.
  const double se1 = 1.0 / std::sqrt(config_.feature_bins * 1.0 * config_.embed_kernel);
  e1_w_ = add_param("embed.conv1.weight",
                    {config_.embed_dim, config_.feature_bins, config_.embed_kernel},
                    kGroupEmbedder, 2, se1, emb_rng);
  e1_b_ = add_param("embed.conv1.bias", {config_.embed_dim}, kGroupEmbedder, 2, 0.0, emb_rng);
  const double se = 1.0 / std::sqrt(config_.embed_dim * 3.0);
  e2_w_ = add_param("embed.conv2.weight", {config_.embed_dim, config_.embed_dim, 3},
                    kGroupEmbedder, 1, se, emb_rng);
  e2_b_ = add_param("embed.conv2.bias", {config_.embed_dim}, kGroupEmbedder, 1, 0.0, emb_rng);
  e3_w_ = add_param("embed.conv3.weight", {config_.embed_dim, config_.embed_dim, 3},
                    kGroupEmbedder, 0, se, emb_rng);
  e3_b_ = add_param("embed.conv3.bias", {config_.embed_dim}, kGroupEmbedder, 0, 0.0, emb_rng);

  gru_fwd_ = add_gru("rnn.fwd", config_.concat_dim(), kGroupRnnHeads, rng);
  gru_bwd_ = add_gru("rnn.bwd", config_.concat_dim(), kGroupRnnHeads, rng);

  if (config_.separate_rnn) {
    const char* names[2] = {"desed", "maestro"};
    for (int d = 0; d < 2; ++d) {
      sep_fwd_[d] = add_gru(std::string("sep_rnn.") + names[d] + ".fwd", 2 * config_.hidden,
                            kGroupRnnHeads, rng);
      sep_bwd_[d] = add_gru(std::string("sep_rnn.") + names[d] + ".bwd", 2 * config_.hidden,
                            kGroupRnnHeads, rng);
    }
  }

  const double shd = 1.0 / std::sqrt(2.0 * config_.hidden);
  strong_w_ = add_param("head.strong.weight", {config_.num_classes, 2 * config_.hidden},
                        kGroupRnnHeads, 0, shd, rng);
  strong_b_ = add_param("head.strong.bias", {config_.num_classes}, kGroupRnnHeads, 0, 0.0, rng);
  att_w_ = add_param("head.att.weight", {config_.num_classes, 2 * config_.hidden},
                     kGroupRnnHeads, 0, shd, rng);
  att_b_ = add_param("head.att.bias", {config_.num_classes}, kGroupRnnHeads, 0, 0.0, rng);
}

void ToyModel::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

// y[o,f,t] over Cout x F x T with 3x3 kernel, zero padding 1.
void conv2d_forward(const double* x, int cin, int F, int T, const double* w,
                    const double* b, int cout, double* y) {
  for (int o = 0; o < cout; ++o) {
    double* yo = y + static_cast<std::size_t>(o) * F * T;
    for (int f = 0; f < F; ++f) {
      for (int t = 0; t < T; ++t) yo[f * T + t] = b[o];
    }
    for (int i = 0; i < cin; ++i) {
      const double* xi = x + static_cast<std::size_t>(i) * F * T;
      const double* wk = w + (static_cast<std::size_t>(o) * cin + i) * 9;
      for (int df = 0; df < 3; ++df) {
        for (int dt = 0; dt < 3; ++dt) {
          const double wv = wk[df * 3 + dt];
          if (wv == 0.0) continue;
          const int f_lo = std::max(0, 1 - df), f_hi = std::min(F, F + 1 - df);
          const int t_lo = std::max(0, 1 - dt), t_hi = std::min(T, T + 1 - dt);
          for (int f = f_lo; f < f_hi; ++f) {
            const double* xrow = xi + (f + df - 1) * T + (dt - 1);
            double* yrow = yo + f * T;
            for (int t = t_lo; t < t_hi; ++t) yrow[t] += wv * xrow[t];
          }
        }
      }
    }
  }
}

void conv2d_backward(const double* x, int cin, int F, int T, const double* w, int cout,
                     const double* dy, double* dx, double* dw, double* db) {
  for (int o = 0; o < cout; ++o) {
    const double* dyo = dy + static_cast<std::size_t>(o) * F * T;
    double acc_b = 0.0;
    for (int ft = 0; ft < F * T; ++ft) acc_b += dyo[ft];
    db[o] += acc_b;
    for (int i = 0; i < cin; ++i) {
      const double* xi = x + static_cast<std::size_t>(i) * F * T;
      double* dxi = dx ? dx + static_cast<std::size_t>(i) * F * T : nullptr;
      const double* wk = w + (static_cast<std::size_t>(o) * cin + i) * 9;
      double* dwk = dw + (static_cast<std::size_t>(o) * cin + i) * 9;
      for (int df = 0; df < 3; ++df) {
        for (int dt = 0; dt < 3; ++dt) {
          const int f_lo = std::max(0, 1 - df), f_hi = std::min(F, F + 1 - df);
          const int t_lo = std::max(0, 1 - dt), t_hi = std::min(T, T + 1 - dt);
          double acc_w = 0.0;
          const double wv = wk[df * 3 + dt];
          for (int f = f_lo; f < f_hi; ++f) {
            const double* xrow = xi + (f + df - 1) * T + (dt - 1);
            double* dxrow = dxi ? dxi + (f + df - 1) * T + (dt - 1) : nullptr;
            const double* dyrow = dyo + f * T;
            for (int t = t_lo; t < t_hi; ++t) {
              acc_w += xrow[t] * dyrow[t];
              if (dxrow) dxrow[t] += wv * dyrow[t];
            }
          }
          dwk[df * 3 + dt] += acc_w;
        }
      }
    }
  }
}

void tanh_inplace(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = std::tanh(x[i]);
}

void avgpool2_forward(const double* x, int C, int F, int T, double* y) {
  const int Fo = F / 2, To = T / 2;
  for (int c = 0; c < C; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * F * T;
    double* yc = y + static_cast<std::size_t>(c) * Fo * To;
    for (int f = 0; f < Fo; ++f) {
      for (int t = 0; t < To; ++t) {
        yc[f * To + t] = 0.25 * (xc[(2 * f) * T + 2 * t] + xc[(2 * f) * T + 2 * t + 1] +
                                 xc[(2 * f + 1) * T + 2 * t] +
                                 xc[(2 * f + 1) * T + 2 * t + 1]);
      }
    }
  }
}

void avgpool2_backward(const double* dy, int C, int F, int T, double* dx) {
  const int Fo = F / 2, To = T / 2;
  for (int c = 0; c < C; ++c) {
    const double* dyc = dy + static_cast<std::size_t>(c) * Fo * To;
    double* dxc = dx + static_cast<std::size_t>(c) * F * T;
    for (int f = 0; f < Fo; ++f) {
      for (int t = 0; t < To; ++t) {
        const double g = 0.25 * dyc[f * To + t];
        dxc[(2 * f) * T + 2 * t] += g;
        dxc[(2 * f) * T + 2 * t + 1] += g;
        dxc[(2 * f + 1) * T + 2 * t] += g;
        dxc[(2 * f + 1) * T + 2 * t + 1] += g;
      }
    }
  }
}

void conv1d_forward(const double* x, int cin, int T, const double* w, const double* b,
                    int cout, int k, int stride, int pad, int To, double* y) {
  for (int o = 0; o < cout; ++o) {
    double* yo = y + static_cast<std::size_t>(o) * To;
    for (int t = 0; t < To; ++t) yo[t] = b[o];
    for (int i = 0; i < cin; ++i) {
      const double* xi = x + static_cast<std::size_t>(i) * T;
      const double* wk = w + (static_cast<std::size_t>(o) * cin + i) * k;
      for (int t = 0; t < To; ++t) {
        const int base = t * stride - pad;
        double acc = 0.0;
        const int k_lo = std::max(0, -base), k_hi = std::min(k, T - base);
        for (int kk = k_lo; kk < k_hi; ++kk) acc += wk[kk] * xi[base + kk];
        yo[t] += acc;
      }
    }
  }
}

void conv1d_backward(const double* x, int cin, int T, const double* w, int cout, int k,
                     int stride, int pad, int To, const double* dy, double* dx, double* dw,
                     double* db) {
  for (int o = 0; o < cout; ++o) {
    const double* dyo = dy + static_cast<std::size_t>(o) * To;
    double acc_b = 0.0;
    for (int t = 0; t < To; ++t) acc_b += dyo[t];
    db[o] += acc_b;
    for (int i = 0; i < cin; ++i) {
      const double* xi = x + static_cast<std::size_t>(i) * T;
      double* dxi = dx ? dx + static_cast<std::size_t>(i) * T : nullptr;
      const double* wk = w + (static_cast<std::size_t>(o) * cin + i) * k;
      double* dwk = dw + (static_cast<std::size_t>(o) * cin + i) * k;
      for (int t = 0; t < To; ++t) {
        const int base = t * stride - pad;
        const double g = dyo[t];
        const int k_lo = std::max(0, -base), k_hi = std::min(k, T - base);
        for (int kk = k_lo; kk < k_hi; ++kk) {
          dwk[kk] += g * xi[base + kk];
          if (dxi) dxi[base + kk] += g * wk[kk];
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Recurrence
// ---------------------------------------------------------------------------

void ToyModel::gru_forward(const GruParams& p, const std::vector<double>& x, int dim,
                           int frames, bool reversed, Workspace::GruTrace& trace) const {
  const int H = config_.hidden;
  const auto sz = static_cast<std::size_t>(H) * frames;
  trace.z.assign(sz, 0.0);
  trace.r.assign(sz, 0.0);
  trace.n.assign(sz, 0.0);
  trace.unh.assign(sz, 0.0);
  trace.h.assign(sz, 0.0);

  const double* wz = params_[p.wz].value.data.data();
  const double* uz = params_[p.uz].value.data.data();
  const double* bz = params_[p.bz].value.data.data();
  const double* wr = params_[p.wr].value.data.data();
  const double* ur = params_[p.ur].value.data.data();
  const double* br = params_[p.br].value.data.data();
  const double* wn = params_[p.wn].value.data.data();
  const double* un = params_[p.un].value.data.data();
  const double* bn = params_[p.bn].value.data.data();

  std::vector<double> hprev(H, 0.0), xcol(dim);
  for (int step = 0; step < frames; ++step) {
    const int t = reversed ? frames - 1 - step : step;
    for (int d = 0; d < dim; ++d) xcol[d] = x[static_cast<std::size_t>(d) * frames + t];
    for (int h = 0; h < H; ++h) {
      double pz = bz[h], pr = br[h], pn = bn[h], uh = 0.0;
      const double* wzr = wz + static_cast<std::size_t>(h) * dim;
      const double* wrr = wr + static_cast<std::size_t>(h) * dim;
      const double* wnr = wn + static_cast<std::size_t>(h) * dim;
      for (int d = 0; d < dim; ++d) {
        pz += wzr[d] * xcol[d];
        pr += wrr[d] * xcol[d];
        pn += wnr[d] * xcol[d];
      }
      const double* uzr = uz + static_cast<std::size_t>(h) * H;
      const double* urr = ur + static_cast<std::size_t>(h) * H;
      const double* unr = un + static_cast<std::size_t>(h) * H;
      for (int k = 0; k < H; ++k) {
        pz += uzr[k] * hprev[k];
        pr += urr[k] * hprev[k];
        uh += unr[k] * hprev[k];
      }
      const double az = sigmoid(pz);
      const double ar = sigmoid(pr);
      const double an = std::tanh(pn + ar * uh);
      trace.z[static_cast<std::size_t>(h) * frames + t] = az;
      trace.r[static_cast<std::size_t>(h) * frames + t] = ar;
      trace.n[static_cast<std::size_t>(h) * frames + t] = an;
      trace.unh[static_cast<std::size_t>(h) * frames + t] = uh;
      trace.h[static_cast<std::size_t>(h) * frames + t] =
          (1.0 - az) * an + az * hprev[h];
    }
    for (int h = 0; h < H; ++h) hprev[h] = trace.h[static_cast<std::size_t>(h) * frames + t];
  }
}

void ToyModel::gru_backward(const GruParams& p, const std::vector<double>& x, int dim,
                            int frames, bool reversed, const Workspace::GruTrace& trace,
                            const std::vector<double>& d_h, std::vector<double>& d_x) {
  const int H = config_.hidden;
  const double* uz = params_[p.uz].value.data.data();
  const double* ur = params_[p.ur].value.data.data();
  const double* un = params_[p.un].value.data.data();
  const double* wz = params_[p.wz].value.data.data();
  const double* wr = params_[p.wr].value.data.data();
  const double* wn = params_[p.wn].value.data.data();
  double* dwz = params_[p.wz].grad.data.data();
  double* duz = params_[p.uz].grad.data.data();
  double* dbz = params_[p.bz].grad.data.data();
  double* dwr = params_[p.wr].grad.data.data();
  double* dur = params_[p.ur].grad.data.data();
  double* dbr = params_[p.br].grad.data.data();
  double* dwn = params_[p.wn].grad.data.data();
  double* dun = params_[p.un].grad.data.data();
  double* dbn = params_[p.bn].grad.data.data();

  std::vector<double> carry(H, 0.0), hprev(H), xcol(dim);
  std::vector<double> dpz(H), dpr(H), dpn(H);
  for (int step = frames - 1; step >= 0; --step) {
    const int t = reversed ? frames - 1 - step : step;
    const int t_prev = reversed ? t + 1 : t - 1;
    const bool has_prev = reversed ? (t_prev < frames) : (t_prev >= 0);
    for (int h = 0; h < H; ++h) {
      hprev[h] = has_prev ? trace.h[static_cast<std::size_t>(h) * frames + t_prev] : 0.0;
    }
    for (int d = 0; d < dim; ++d) xcol[d] = x[static_cast<std::size_t>(d) * frames + t];

    std::vector<double> dhprev(H, 0.0);
    for (int h = 0; h < H; ++h) {
      const std::size_t idx = static_cast<std::size_t>(h) * frames + t;
      const double az = trace.z[idx];
      const double ar = trace.r[idx];
      const double an = trace.n[idx];
      const double uh = trace.unh[idx];
      const double dht = d_h[idx] + carry[h];
      const double dz = dht * (hprev[h] - an);
      const double dn = dht * (1.0 - az);
      dhprev[h] += dht * az;
      const double dpre_n = dn * (1.0 - an * an);
      const double dr = dpre_n * uh;
      dpz[h] = dz * az * (1.0 - az);
      dpr[h] = dr * ar * (1.0 - ar);
      dpn[h] = dpre_n;
      dbz[h] += dpz[h];
      dbr[h] += dpr[h];
      dbn[h] += dpre_n;
    }
    for (int h = 0; h < H; ++h) {
      const std::size_t idx = static_cast<std::size_t>(h) * frames + t;
      const double rn = dpn[h] * trace.r[idx];  // gradient into (Un h_prev)
      double* dwzr = dwz + static_cast<std::size_t>(h) * dim;
      double* dwrr = dwr + static_cast<std::size_t>(h) * dim;
      double* dwnr = dwn + static_cast<std::size_t>(h) * dim;
      for (int d = 0; d < dim; ++d) {
        dwzr[d] += dpz[h] * xcol[d];
        dwrr[d] += dpr[h] * xcol[d];
        dwnr[d] += dpn[h] * xcol[d];
      }
      double* duzr = duz + static_cast<std::size_t>(h) * H;
      double* durr = dur + static_cast<std::size_t>(h) * H;
      double* dunr = dun + static_cast<std::size_t>(h) * H;
      const double* uzr = uz + static_cast<std::size_t>(h) * H;
      const double* urr = ur + static_cast<std::size_t>(h) * H;
      const double* unr = un + static_cast<std::size_t>(h) * H;
      for (int k = 0; k < H; ++k) {
        duzr[k] += dpz[h] * hprev[k];
        durr[k] += dpr[h] * hprev[k];
        dunr[k] += rn * hprev[k];
        dhprev[k] += uzr[k] * dpz[h] + urr[k] * dpr[h] + unr[k] * rn;
      }
      const double* wzr = wz + static_cast<std::size_t>(h) * dim;
      const double* wrr = wr + static_cast<std::size_t>(h) * dim;
      const double* wnr = wn + static_cast<std::size_t>(h) * dim;
      for (int d = 0; d < dim; ++d) {
        d_x[static_cast<std::size_t>(d) * frames + t] +=
            wzr[d] * dpz[h] + wrr[d] * dpr[h] + wnr[d] * dpn[h];
      }
    }
    carry = dhprev;
  }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

ModelOutput ToyModel::forward(const std::vector<double>& features, Subset subset,
                              Workspace& ws) const {
  const int F = config_.feature_bins, T = config_.input_frames;
  if (features.size() != static_cast<std::size_t>(F) * T) {
    throw DataError("model input geometry mismatch");
  }
  const int C = config_.num_classes;
  const int Tc = config_.t_cnn(), Te = config_.t_emb(), To = config_.t_out();
  const int Dc = config_.cnn_ch2, De = config_.embed_dim, D = config_.concat_dim();
  const int H = config_.hidden;
  ws.subset = subset;
  ws.features_snapshot = features;

  if (!ws.reuse_cnn) {
    const int F1 = F / 2, T1 = T / 2, F2 = F / 4, T2 = T / 4;
    ws.conv1_act.assign(static_cast<std::size_t>(config_.cnn_ch1) * F * T, 0.0);
    conv2d_forward(features.data(), 1, F, T, params_[conv1_w_].value.data.data(),
                   params_[conv1_b_].value.data.data(), config_.cnn_ch1,
                   ws.conv1_act.data());
    tanh_inplace(ws.conv1_act.data(), ws.conv1_act.size());
    ws.pool1.assign(static_cast<std::size_t>(config_.cnn_ch1) * F1 * T1, 0.0);
    avgpool2_forward(ws.conv1_act.data(), config_.cnn_ch1, F, T, ws.pool1.data());
    ws.conv2_act.assign(static_cast<std::size_t>(Dc) * F1 * T1, 0.0);
    conv2d_forward(ws.pool1.data(), config_.cnn_ch1, F1, T1,
                   params_[conv2_w_].value.data.data(),
                   params_[conv2_b_].value.data.data(), Dc, ws.conv2_act.data());
    tanh_inplace(ws.conv2_act.data(), ws.conv2_act.size());
    ws.pool2.assign(static_cast<std::size_t>(Dc) * F2 * T2, 0.0);
    avgpool2_forward(ws.conv2_act.data(), Dc, F1, T1, ws.pool2.data());
    // Collapse the remaining frequency bins by averaging.
    ws.cnn_seq.assign(static_cast<std::size_t>(Dc) * Tc, 0.0);
    for (int c = 0; c < Dc; ++c) {
      for (int f = 0; f < F2; ++f) {
        const double* row = ws.pool2.data() + (static_cast<std::size_t>(c) * F2 + f) * T2;
        double* out = ws.cnn_seq.data() + static_cast<std::size_t>(c) * Tc;
        for (int t = 0; t < Tc; ++t) out[t] += row[t];
      }
      double* out = ws.cnn_seq.data() + static_cast<std::size_t>(c) * Tc;
      for (int t = 0; t < Tc; ++t) out[t] /= F2;
    }
  }

  if (!ws.reuse_embedder) {
    ws.e1_act.assign(static_cast<std::size_t>(De) * Te, 0.0);
    conv1d_forward(features.data(), F, T, params_[e1_w_].value.data.data(),
                   params_[e1_b_].value.data.data(), De, config_.embed_kernel,
                   config_.embed_stride, 0, Te, ws.e1_act.data());
    tanh_inplace(ws.e1_act.data(), ws.e1_act.size());
    ws.e2_act.assign(static_cast<std::size_t>(De) * Te, 0.0);
    conv1d_forward(ws.e1_act.data(), De, Te, params_[e2_w_].value.data.data(),
                   params_[e2_b_].value.data.data(), De, 3, 1, 1, Te, ws.e2_act.data());
    tanh_inplace(ws.e2_act.data(), ws.e2_act.size());
    ws.e3_act.assign(static_cast<std::size_t>(De) * Te, 0.0);
    conv1d_forward(ws.e2_act.data(), De, Te, params_[e3_w_].value.data.data(),
                   params_[e3_b_].value.data.data(), De, 3, 1, 1, Te, ws.e3_act.data());
    tanh_inplace(ws.e3_act.data(), ws.e3_act.size());
    ws.emb_aligned = align_sequence(ws.e3_act, De, Te, To, config_.align);
  }

  ws.concat.assign(static_cast<std::size_t>(D) * To, 0.0);
  std::copy(ws.cnn_seq.begin(), ws.cnn_seq.end(), ws.concat.begin());
  std::copy(ws.emb_aligned.begin(), ws.emb_aligned.end(),
            ws.concat.begin() + static_cast<std::size_t>(Dc) * To);

  gru_forward(gru_fwd_, ws.concat, D, To, false, ws.fwd);
  gru_forward(gru_bwd_, ws.concat, D, To, true, ws.bwd);
  ws.rnn_out.assign(static_cast<std::size_t>(2 * H) * To, 0.0);
  std::copy(ws.fwd.h.begin(), ws.fwd.h.end(), ws.rnn_out.begin());
  std::copy(ws.bwd.h.begin(), ws.bwd.h.end(),
            ws.rnn_out.begin() + static_cast<std::size_t>(H) * To);

  const std::vector<double>* head_in = &ws.rnn_out;
  ws.sep_dataset = -1;
  if (config_.separate_rnn) {
    ws.sep_dataset = is_desed_subset(subset) ? 0 : 1;
    gru_forward(sep_fwd_[ws.sep_dataset], ws.rnn_out, 2 * H, To, false, ws.sep_fwd);
    gru_forward(sep_bwd_[ws.sep_dataset], ws.rnn_out, 2 * H, To, true, ws.sep_bwd);
    ws.sep_out.assign(static_cast<std::size_t>(2 * H) * To, 0.0);
    std::copy(ws.sep_fwd.h.begin(), ws.sep_fwd.h.end(), ws.sep_out.begin());
    std::copy(ws.sep_bwd.h.begin(), ws.sep_bwd.h.end(),
              ws.sep_out.begin() + static_cast<std::size_t>(H) * To);
    head_in = &ws.sep_out;
  }

  // Per-frame affine heads.
  const double* wsparam = params_[strong_w_].value.data.data();
  const double* bs = params_[strong_b_].value.data.data();
  const double* wa = params_[att_w_].value.data.data();
  const double* ba = params_[att_b_].value.data.data();
  ws.strong_logits.assign(static_cast<std::size_t>(C) * To, 0.0);
  ws.att_logits.assign(static_cast<std::size_t>(C) * To, 0.0);
  for (int c = 0; c < C; ++c) {
    const double* wsr = wsparam + static_cast<std::size_t>(c) * 2 * H;
    const double* war = wa + static_cast<std::size_t>(c) * 2 * H;
    for (int t = 0; t < To; ++t) {
      double acc_s = bs[c], acc_a = ba[c];
      for (int d = 0; d < 2 * H; ++d) {
        const double v = (*head_in)[static_cast<std::size_t>(d) * To + t];
        acc_s += wsr[d] * v;
        acc_a += war[d] * v;
      }
      ws.strong_logits[static_cast<std::size_t>(c) * To + t] = acc_s;
      ws.att_logits[static_cast<std::size_t>(c) * To + t] = acc_a;
    }
  }

  // Class-wise softmax attention pooling of the strong logits.
  ws.att_weights.assign(static_cast<std::size_t>(C) * To, 0.0);
  ws.weak_logits.assign(C, 0.0);
  for (int c = 0; c < C; ++c) {
    const double* att = ws.att_logits.data() + static_cast<std::size_t>(c) * To;
    double* aw = ws.att_weights.data() + static_cast<std::size_t>(c) * To;
    double mx = att[0];
    for (int t = 1; t < To; ++t) mx = std::max(mx, att[t]);
    double denom = 0.0;
    for (int t = 0; t < To; ++t) {
      aw[t] = std::exp(att[t] - mx);
      denom += aw[t];
    }
    double weak = 0.0;
    for (int t = 0; t < To; ++t) {
      aw[t] /= denom;
      weak += aw[t] * ws.strong_logits[static_cast<std::size_t>(c) * To + t];
    }
    ws.weak_logits[c] = weak;
  }

  ws.strong_post.resize(ws.strong_logits.size());
  for (std::size_t i = 0; i < ws.strong_logits.size(); ++i) {
    ws.strong_post[i] = sigmoid(ws.strong_logits[i]);
  }
  ws.weak_post.resize(C);
  for (int c = 0; c < C; ++c) ws.weak_post[c] = sigmoid(ws.weak_logits[c]);

  ModelOutput out;
  out.strong_logits = ws.strong_logits;
  out.weak_logits = ws.weak_logits;
  out.strong_post = ws.strong_post;
  out.weak_post = ws.weak_post;
  out.num_classes = C;
  out.num_frames = To;
  for (double v : out.strong_post) {
    if (!std::isfinite(v)) throw NumericError("model produced non-finite outputs");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void ToyModel::backward(const Workspace& ws, const std::vector<double>& d_strong_logits,
                        const std::vector<double>& d_weak_logits) {
  const int F = config_.feature_bins, T = config_.input_frames;
  const int C = config_.num_classes;
  const int Tc = config_.t_cnn(), Te = config_.t_emb(), To = config_.t_out();
  const int Dc = config_.cnn_ch2, De = config_.embed_dim, D = config_.concat_dim();
  const int H = config_.hidden;
  if (d_strong_logits.size() != static_cast<std::size_t>(C) * To ||
      d_weak_logits.size() != static_cast<std::size_t>(C)) {
    throw DataError("loss gradient geometry mismatch");
  }

  // Attention pooling: route the weak gradient into both logit grids.
  std::vector<double> dsl(d_strong_logits);
  std::vector<double> datt(static_cast<std::size_t>(C) * To, 0.0);
  for (int c = 0; c < C; ++c) {
    const double dw = d_weak_logits[c];
    if (dw == 0.0) continue;
    const double* aw = ws.att_weights.data() + static_cast<std::size_t>(c) * To;
    const double* sl = ws.strong_logits.data() + static_cast<std::size_t>(c) * To;
    const double weak = ws.weak_logits[c];
    for (int t = 0; t < To; ++t) {
      dsl[static_cast<std::size_t>(c) * To + t] += dw * aw[t];
      datt[static_cast<std::size_t>(c) * To + t] = dw * aw[t] * (sl[t] - weak);
    }
  }

  // Heads.
  const std::vector<double>& head_in = config_.separate_rnn ? ws.sep_out : ws.rnn_out;
  std::vector<double> d_head_in(static_cast<std::size_t>(2 * H) * To, 0.0);
  {
    const double* wsr = params_[strong_w_].value.data.data();
    const double* war = params_[att_w_].value.data.data();
    double* dws = params_[strong_w_].grad.data.data();
    double* dbs = params_[strong_b_].grad.data.data();
    double* dwa = params_[att_w_].grad.data.data();
    double* dba = params_[att_b_].grad.data.data();
    for (int c = 0; c < C; ++c) {
      const double* ws_row = wsr + static_cast<std::size_t>(c) * 2 * H;
      const double* wa_row = war + static_cast<std::size_t>(c) * 2 * H;
      double* dws_row = dws + static_cast<std::size_t>(c) * 2 * H;
      double* dwa_row = dwa + static_cast<std::size_t>(c) * 2 * H;
      for (int t = 0; t < To; ++t) {
        const double gs = dsl[static_cast<std::size_t>(c) * To + t];
        const double ga = datt[static_cast<std::size_t>(c) * To + t];
        if (gs == 0.0 && ga == 0.0) continue;
        dbs[c] += gs;
        dba[c] += ga;
        for (int d = 0; d < 2 * H; ++d) {
          const double v = head_in[static_cast<std::size_t>(d) * To + t];
          dws_row[d] += gs * v;
          dwa_row[d] += ga * v;
          d_head_in[static_cast<std::size_t>(d) * To + t] += ws_row[d] * gs + wa_row[d] * ga;
        }
      }
    }
  }

  // Recurrent stack.
  std::vector<double> d_rnn_out;
  if (config_.separate_rnn) {
    std::vector<double> d_sep_fwd(static_cast<std::size_t>(H) * To),
        d_sep_bwd(static_cast<std::size_t>(H) * To);
    std::copy(d_head_in.begin(), d_head_in.begin() + static_cast<std::size_t>(H) * To,
              d_sep_fwd.begin());
    std::copy(d_head_in.begin() + static_cast<std::size_t>(H) * To, d_head_in.end(),
              d_sep_bwd.begin());
    d_rnn_out.assign(static_cast<std::size_t>(2 * H) * To, 0.0);
    gru_backward(sep_fwd_[ws.sep_dataset], ws.rnn_out, 2 * H, To, false, ws.sep_fwd,
                 d_sep_fwd, d_rnn_out);
    gru_backward(sep_bwd_[ws.sep_dataset], ws.rnn_out, 2 * H, To, true, ws.sep_bwd,
                 d_sep_bwd, d_rnn_out);
  } else {
    d_rnn_out = std::move(d_head_in);
  }

  std::vector<double> d_fwd(static_cast<std::size_t>(H) * To),
      d_bwd(static_cast<std::size_t>(H) * To);
  std::copy(d_rnn_out.begin(), d_rnn_out.begin() + static_cast<std::size_t>(H) * To,
            d_fwd.begin());
  std::copy(d_rnn_out.begin() + static_cast<std::size_t>(H) * To, d_rnn_out.end(),
            d_bwd.begin());
  std::vector<double> d_concat(static_cast<std::size_t>(D) * To, 0.0);
  gru_backward(gru_fwd_, ws.concat, D, To, false, ws.fwd, d_fwd, d_concat);
  gru_backward(gru_bwd_, ws.concat, D, To, true, ws.bwd, d_bwd, d_concat);

  // Split into the two branches.
  // CNN branch: undo frequency mean, pools and convolutions.
  {
    const int F1 = F / 2, T1 = T / 2, F2 = F / 4, T2 = T / 4;
    std::vector<double> d_pool2(static_cast<std::size_t>(Dc) * F2 * T2, 0.0);
    for (int c = 0; c < Dc; ++c) {
      const double* dseq = d_concat.data() + static_cast<std::size_t>(c) * Tc;
      for (int f = 0; f < F2; ++f) {
        double* row = d_pool2.data() + (static_cast<std::size_t>(c) * F2 + f) * T2;
        for (int t = 0; t < T2; ++t) row[t] = dseq[t] / F2;
      }
    }
    std::vector<double> d_conv2(static_cast<std::size_t>(Dc) * F1 * T1, 0.0);
    avgpool2_backward(d_pool2.data(), Dc, F1, T1, d_conv2.data());
    for (std::size_t i = 0; i < d_conv2.size(); ++i) {
      d_conv2[i] *= 1.0 - ws.conv2_act[i] * ws.conv2_act[i];
    }
    std::vector<double> d_pool1(static_cast<std::size_t>(config_.cnn_ch1) * F1 * T1, 0.0);
    conv2d_backward(ws.pool1.data(), config_.cnn_ch1, F1, T1,
                    params_[conv2_w_].value.data.data(), Dc, d_conv2.data(),
                    d_pool1.data(), params_[conv2_w_].grad.data.data(),
                    params_[conv2_b_].grad.data.data());
    std::vector<double> d_conv1(static_cast<std::size_t>(config_.cnn_ch1) * F * T, 0.0);
    avgpool2_backward(d_pool1.data(), config_.cnn_ch1, F, T, d_conv1.data());
    for (std::size_t i = 0; i < d_conv1.size(); ++i) {
      d_conv1[i] *= 1.0 - ws.conv1_act[i] * ws.conv1_act[i];
    }
    conv2d_backward(ws.features_snapshot.data(), 1, F, T,
                    params_[conv1_w_].value.data.data(), config_.cnn_ch1, d_conv1.data(),
                    nullptr, params_[conv1_w_].grad.data.data(),
                    params_[conv1_b_].grad.data.data());
  }

  // Embedder branch: undo alignment, then the conv1d stack.
  {
    std::vector<double> d_e3(static_cast<std::size_t>(De) * Te, 0.0);
    const auto taps = alignment_taps(Te, To, config_.align);
    for (int d = 0; d < De; ++d) {
      const double* dal = d_concat.data() + (static_cast<std::size_t>(Dc + d)) * To;
      double* de3 = d_e3.data() + static_cast<std::size_t>(d) * Te;
      for (int i = 0; i < To; ++i) {
        for (const auto& [j, w] : taps[i]) de3[j] += w * dal[i];
      }
    }
    for (std::size_t i = 0; i < d_e3.size(); ++i) {
      d_e3[i] *= 1.0 - ws.e3_act[i] * ws.e3_act[i];
    }
    std::vector<double> d_e2(static_cast<std::size_t>(De) * Te, 0.0);
    conv1d_backward(ws.e2_act.data(), De, Te, params_[e3_w_].value.data.data(), De, 3, 1,
                    1, Te, d_e3.data(), d_e2.data(), params_[e3_w_].grad.data.data(),
                    params_[e3_b_].grad.data.data());
    for (std::size_t i = 0; i < d_e2.size(); ++i) {
      d_e2[i] *= 1.0 - ws.e2_act[i] * ws.e2_act[i];
    }
    std::vector<double> d_e1(static_cast<std::size_t>(De) * Te, 0.0);
    conv1d_backward(ws.e1_act.data(), De, Te, params_[e2_w_].value.data.data(), De, 3, 1,
                    1, Te, d_e2.data(), d_e1.data(), params_[e2_w_].grad.data.data(),
                    params_[e2_b_].grad.data.data());
    for (std::size_t i = 0; i < d_e1.size(); ++i) {
      d_e1[i] *= 1.0 - ws.e1_act[i] * ws.e1_act[i];
    }
    conv1d_backward(ws.features_snapshot.data(), F, T, params_[e1_w_].value.data.data(),
                    De, config_.embed_kernel, config_.embed_stride, 0, Te, d_e1.data(),
                    nullptr, params_[e1_w_].grad.data.data(),
                    params_[e1_b_].grad.data.data());
  }
}

// ---------------------------------------------------------------------------
// Flat parameter access and checkpoints
// ---------------------------------------------------------------------------

std::vector<double> ToyModel::flat_values() const {
  std::vector<double> out;
  for (const auto& p : params_) {
    out.insert(out.end(), p.value.data.begin(), p.value.data.end());
  }
  return out;
}

void ToyModel::set_flat_values(const std::vector<double>& flat) {
  std::size_t off = 0;
  for (auto& p : params_) {
    if (off + p.value.data.size() > flat.size()) {
      throw DataError("flat parameter vector too short");
    }
    std::copy(flat.begin() + off, flat.begin() + off + p.value.data.size(),
              p.value.data.begin());
    off += p.value.data.size();
  }
  if (off != flat.size()) throw DataError("flat parameter vector too long");
}

std::uint64_t ToyModel::param_hash(int group) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    if (group >= 0 && p.group != group) continue;
    h = fnv1a_bytes(p.name.data(), p.name.size(), h);
    h = fnv1a_bytes(p.value.data.data(), p.value.data.size() * sizeof(double), h);
  }
  return h;
}

namespace {
constexpr char kCheckpointMagic[4] = {'H', 'S', 'C', 'K'};
}

void ToyModel::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t hash = model_config_hash(config_);
  out.write(reinterpret_cast<const char*>(&hash), 8);
  const auto cfg = config_bytes(config_);
  const std::uint32_t cfg_len = static_cast<std::uint32_t>(cfg.size());
  out.write(reinterpret_cast<const char*>(&cfg_len), 4);
  out.write(cfg.data(), cfg.size());
  const std::uint32_t n = static_cast<std::uint32_t>(params_.size());
  out.write(reinterpret_cast<const char*>(&n), 4);
  for (const auto& p : params_) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(p.name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(p.name.data(), name_len);
    const std::uint32_t ndim = static_cast<std::uint32_t>(p.value.shape.size());
    out.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int d : p.value.shape) {
      const std::int32_t dd = d;
      out.write(reinterpret_cast<const char*>(&dd), 4);
    }
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
  }
}

ToyModel ToyModel::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw DataError("unsupported checkpoint version");
  std::uint64_t stored_hash = 0;
  in.read(reinterpret_cast<char*>(&stored_hash), 8);
  std::uint32_t cfg_len = 0;
  in.read(reinterpret_cast<char*>(&cfg_len), 4);
  std::vector<char> cfg_raw(cfg_len);
  in.read(cfg_raw.data(), cfg_len);
  if (!in) throw DataError("truncated checkpoint header");

  ModelConfig config;
  {
    std::size_t off = 0;
    auto get_i32 = [&] {
      std::int32_t v;
      std::memcpy(&v, cfg_raw.data() + off, 4);
      off += 4;
      return v;
    };
    auto get_u64 = [&] {
      std::uint64_t v;
      std::memcpy(&v, cfg_raw.data() + off, 8);
      off += 8;
      return v;
    };
    if (cfg_raw.size() != 11 * 4 + 2 * 8) throw DataError("bad checkpoint config block");
    config.feature_bins = get_i32();
    config.input_frames = get_i32();
    config.num_classes = get_i32();
    config.cnn_ch1 = get_i32();
    config.cnn_ch2 = get_i32();
    config.embed_dim = get_i32();
    config.embed_kernel = get_i32();
    config.embed_stride = get_i32();
    config.hidden = get_i32();
    config.align = static_cast<AlignMethod>(get_i32());
    config.separate_rnn = get_i32() != 0;
    config.init_seed = get_u64();
    config.embedder_seed = get_u64();
  }
  if (model_config_hash(config) != stored_hash) {
    throw DataError("checkpoint config hash mismatch: " + path);
  }

  ToyModel model(config);
  std::uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  if (n != model.params_.size()) throw DataError("checkpoint parameter count mismatch");
  for (auto& p : model.params_) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != p.name) throw DataError("checkpoint parameter order mismatch: " + name);
    std::uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), 4);
    std::vector<int> shape(ndim);
    for (auto& d : shape) {
      std::int32_t dd;
      in.read(reinterpret_cast<char*>(&dd), 4);
      d = dd;
    }
    if (shape != p.value.shape) throw DataError("checkpoint shape mismatch: " + name);
    in.read(reinterpret_cast<char*>(p.value.data.data()),
            static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint: " + path);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

GradientCheckResult finite_difference_check(
    std::vector<Param>& params, const std::function<double(int)>& loss_value,
    const std::vector<std::vector<double>>& analytic, double step, double floor) {
  if (analytic.size() != params.size()) {
    throw ConfigError("analytic gradient list does not match parameter list");
  }
  GradientCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p].value.data;
    if (analytic[p].size() != value.size()) {
      throw ConfigError("analytic gradient size mismatch for " + params[p].name);
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + step;
      const double up = loss_value(static_cast<int>(p));
      value[i] = orig - step;
      const double down = loss_value(static_cast<int>(p));
      value[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("non-finite loss during gradient check at " + params[p].name);
      }
      const double gfd = (up - down) / (2.0 * step);
      const double ga = analytic[p][i];
      const double denom = std::max({std::abs(ga), std::abs(gfd), floor});
      const double rel = std::abs(ga - gfd) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = params[p].name;
        result.worst_index = static_cast<int>(i);
      }
    }
  }
  return result;
}

}  // namespace hetsed
