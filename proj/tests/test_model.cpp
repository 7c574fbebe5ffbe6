#include "hetsed/model.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hetsed/rng.hpp"

using namespace hetsed;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.feature_bins = 8;
  c.input_frames = 24;  // t_cnn = 6, t_emb = (24 - 10) / 3 + 1 = 5
  c.num_classes = 3;
  c.cnn_ch1 = 3;
  c.cnn_ch2 = 4;
  c.embed_dim = 4;
  c.hidden = 4;
  return c;
}

std::vector<double> random_features(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(static_cast<std::size_t>(c.feature_bins) * c.input_frames);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  return x;
}

// Runs forward/backward once with a fixed random linear loss over the logits
// and compares every analytic gradient against central differences.
GradientCheckResult check_model_gradients(ToyModel& model, Subset subset,
                                          std::uint64_t seed) {
  const auto& cfg = model.config();
  const auto features = random_features(cfg, seed);
  const int C = cfg.num_classes, To = cfg.t_out();
  Rng rng(seed + 17);
  std::vector<double> d_strong(static_cast<std::size_t>(C) * To);
  std::vector<double> d_weak(C);
  for (auto& v : d_strong) v = rng.uniform(-1.0, 1.0);
  for (auto& v : d_weak) v = rng.uniform(-1.0, 1.0);

  Workspace ws;
  model.zero_grad();
  model.forward(features, subset, ws);
  model.backward(ws, d_strong, d_weak);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : model.params()) analytic.push_back(p.grad.data);

  // Branch caches are only valid while the perturbed parameter stays in the
  // same group; resync with a full forward whenever the group changes.
  Workspace fd_ws;
  int last_group = -1;
  auto loss_value = [&](int perturbed) {
    const int group = model.params()[perturbed].group;
    if (group != last_group) {
      fd_ws.reuse_cnn = false;
      fd_ws.reuse_embedder = false;
      last_group = group;
    } else {
      fd_ws.reuse_cnn = group != kGroupCnn;
      fd_ws.reuse_embedder = group != kGroupEmbedder;
    }
    const ModelOutput out = model.forward(features, subset, fd_ws);
    double loss = 0.0;
    for (std::size_t i = 0; i < d_strong.size(); ++i) {
      loss += d_strong[i] * out.strong_logits[i];
    }
    for (int c = 0; c < C; ++c) loss += d_weak[c] * out.weak_logits[c];
    return loss;
  };
  return finite_difference_check(model.params(), loss_value, analytic, 1e-5, 1e-5);
}

struct TempFile {
  std::string path;
  TempFile(const char* tag) {
    static int counter = 0;
    path = (std::filesystem::temp_directory_path() /
            (std::string("hetsed_model_") + tag + "_" + std::to_string(::getpid()) +
             "_" + std::to_string(counter++)))
               .string();
  }
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("avg-pool alignment halves [1,2,3,4] to [1.5,3.5]") {
  const std::vector<double> in = {1.0, 2.0, 3.0, 4.0};
  const auto out = align_sequence(in, 1, 4, 2, AlignMethod::kAvgPool);
  REQUIRE(out.size() == 2);
  CHECK(out[0] == 1.5);
  CHECK(out[1] == 3.5);
}

TEST_CASE("nearest-exact alignment doubles [a,b] to [a,a,b,b]") {
  const std::vector<double> in = {5.0, 9.0};
  const auto out = align_sequence(in, 1, 2, 4, AlignMethod::kNearestExact);
  REQUIRE(out.size() == 4);
  CHECK(out[0] == 5.0);
  CHECK(out[1] == 5.0);
  CHECK(out[2] == 9.0);
  CHECK(out[3] == 9.0);
}

TEST_CASE("linear alignment endpoint behaviour") {
  const std::vector<double> in = {2.0, 6.0};
  const auto out = align_sequence(in, 1, 2, 3, AlignMethod::kLinear);
  REQUIRE(out.size() == 3);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == 4.0);
  CHECK(out[2] == 6.0);

  // A single output frame reads position 0.
  const auto single = align_sequence(in, 1, 2, 1, AlignMethod::kLinear);
  CHECK(single == std::vector<double>{2.0});
}

TEST_CASE("alignment is the identity when lengths match") {
  Rng rng(7);
  std::vector<double> in(3 * 9);
  for (auto& v : in) v = rng.uniform(-2.0, 2.0);
  for (AlignMethod m :
       {AlignMethod::kLinear, AlignMethod::kNearestExact, AlignMethod::kAvgPool}) {
    CHECK(align_sequence(in, 3, 9, 9, m) == in);
  }
}

TEST_CASE("alignment taps are convex combinations") {
  for (AlignMethod m :
       {AlignMethod::kLinear, AlignMethod::kNearestExact, AlignMethod::kAvgPool}) {
    for (auto [li, lo] : {std::pair{5, 13}, {13, 5}, {1, 4}, {7, 7}, {100, 25}}) {
      const auto taps = alignment_taps(li, lo, m);
      REQUIRE(static_cast<int>(taps.size()) == lo);
      for (const auto& row : taps) {
        double sum = 0.0;
        for (const auto& [j, w] : row) {
          CHECK(j >= 0);
          CHECK(j < li);
          CHECK(w > 0.0);
          sum += w;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("alignment is a linear operator") {
  Rng rng(11);
  for (AlignMethod m :
       {AlignMethod::kLinear, AlignMethod::kNearestExact, AlignMethod::kAvgPool}) {
    for (int trial = 0; trial < 20; ++trial) {
      const int li = 2 + static_cast<int>(rng.uniform_index(30));
      const int lo = 1 + static_cast<int>(rng.uniform_index(30));
      std::vector<double> x(li), y(li), combo(li);
      for (int i = 0; i < li; ++i) {
        x[i] = rng.uniform(-3.0, 3.0);
        y[i] = rng.uniform(-3.0, 3.0);
      }
      const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
      for (int i = 0; i < li; ++i) combo[i] = a * x[i] + b * y[i];
      const auto fx = align_sequence(x, 1, li, lo, m);
      const auto fy = align_sequence(y, 1, li, lo, m);
      const auto fc = align_sequence(combo, 1, li, lo, m);
      for (int i = 0; i < lo; ++i) {
        CHECK(std::abs(fc[i] - (a * fx[i] + b * fy[i])) <= 1e-12);
      }
    }
  }
}

TEST_CASE("avg-pool alignment preserves the mean for integer ratios") {
  Rng rng(13);
  std::vector<double> in(12);
  for (auto& v : in) v = rng.uniform(-5.0, 5.0);
  double mean_in = 0.0;
  for (double v : in) mean_in += v;
  mean_in /= in.size();
  for (int lo : {1, 2, 3, 4, 6, 12}) {
    const auto out = align_sequence(in, 1, 12, lo, AlignMethod::kAvgPool);
    double mean_out = 0.0;
    for (double v : out) mean_out += v;
    mean_out /= out.size();
    CHECK(std::abs(mean_out - mean_in) <= 1e-12);
  }
}

TEST_CASE("finite-difference driver recovers a quadratic gradient exactly") {
  std::vector<Param> params(1);
  params[0].name = "x";
  params[0].value = Tensor::zeros({4});
  params[0].grad = Tensor::zeros({4});
  const std::vector<double> a = {0.5, -1.25, 2.0, 3.5};
  const std::vector<double> b = {1.0, 0.25, -0.75, 2.0};
  auto& x = params[0].value.data;
  x = {0.3, -0.8, 1.1, 0.05};
  auto loss_value = [&](int) {
    double l = 0.0;
    for (int i = 0; i < 4; ++i) l += a[i] * x[i] * x[i] + b[i] * x[i];
    return l;
  };
  std::vector<std::vector<double>> analytic(1);
  analytic[0].resize(4);
  for (int i = 0; i < 4; ++i) analytic[0][i] = 2.0 * a[i] * x[i] + b[i];
  const auto res = finite_difference_check(params, loss_value, analytic, 1e-5, 1e-8);
  CHECK(res.checked == 4);
  CHECK(res.max_rel_error <= 1e-9);
}

TEST_CASE("model forward has the right geometry and finite posteriors") {
  ModelConfig cfg = tiny_config();
  ToyModel model(cfg);
  Workspace ws;
  const auto out = model.forward(random_features(cfg, 3), Subset::kDesedSynthStrong, ws);
  CHECK(out.num_classes == 3);
  CHECK(out.num_frames == 6);
  REQUIRE(out.strong_logits.size() == 18);
  REQUIRE(out.weak_logits.size() == 3);
  for (double p : out.strong_post) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  for (double p : out.weak_post) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("construction and forward are deterministic") {
  ModelConfig cfg = tiny_config();
  ToyModel a(cfg), b(cfg);
  CHECK(a.flat_values() == b.flat_values());
  CHECK(a.param_hash() == b.param_hash());
  Workspace wa, wb;
  const auto fa = random_features(cfg, 5);
  const auto oa = a.forward(fa, Subset::kMaestroStrong, wa);
  const auto ob = b.forward(fa, Subset::kMaestroStrong, wb);
  CHECK(oa.strong_post == ob.strong_post);
  CHECK(oa.weak_post == ob.weak_post);
}

TEST_CASE("zeroed heads give posteriors of exactly one half") {
  ModelConfig cfg = tiny_config();
  ToyModel model(cfg);
  for (auto& p : model.params()) {
    if (p.name.rfind("head.", 0) == 0) p.value.fill(0.0);
  }
  Workspace ws;
  const auto out = model.forward(random_features(cfg, 9), Subset::kDesedWeak, ws);
  for (double p : out.strong_post) CHECK(p == 0.5);
  for (double p : out.weak_post) CHECK(p == 0.5);
}

TEST_CASE("frozen branch weights do not depend on the main init seed") {
  ModelConfig a = tiny_config();
  ModelConfig b = tiny_config();
  b.init_seed = 99;
  ToyModel ma(a), mb(b);
  CHECK(ma.param_hash(kGroupEmbedder) == mb.param_hash(kGroupEmbedder));
  CHECK(ma.param_hash(kGroupCnn) != mb.param_hash(kGroupCnn));
  CHECK(ma.param_hash(kGroupRnnHeads) != mb.param_hash(kGroupRnnHeads));

  ModelConfig c = tiny_config();
  c.embedder_seed = 4321;
  ToyModel mc(c);
  CHECK(ma.param_hash(kGroupEmbedder) != mc.param_hash(kGroupEmbedder));
  CHECK(ma.param_hash(kGroupCnn) == mc.param_hash(kGroupCnn));
}

TEST_CASE("parameter groups and depths are assigned as the optimizer expects") {
  ModelConfig cfg = tiny_config();
  cfg.separate_rnn = true;
  ToyModel model(cfg);
  int embed_params = 0;
  for (const auto& p : model.params()) {
    if (p.name.rfind("cnn.", 0) == 0) CHECK(p.group == kGroupCnn);
    if (p.name.rfind("embed.", 0) == 0) {
      CHECK(p.group == kGroupEmbedder);
      ++embed_params;
      if (p.name.find("conv1") != std::string::npos) CHECK(p.depth == 2);
      if (p.name.find("conv2") != std::string::npos) CHECK(p.depth == 1);
      if (p.name.find("conv3") != std::string::npos) CHECK(p.depth == 0);
    }
    if (p.name.rfind("rnn.", 0) == 0 || p.name.rfind("sep_rnn.", 0) == 0 ||
        p.name.rfind("head.", 0) == 0) {
      CHECK(p.group == kGroupRnnHeads);
    }
  }
  CHECK(embed_params == 6);
}

TEST_CASE("analytic gradients match finite differences (shared recurrent layer)") {
  for (AlignMethod m :
       {AlignMethod::kLinear, AlignMethod::kNearestExact, AlignMethod::kAvgPool}) {
    ModelConfig cfg = tiny_config();
    cfg.align = m;
    ToyModel model(cfg);
    const auto res = check_model_gradients(model, Subset::kDesedRealStrong, 21);
    INFO("align=" << align_method_name(m) << " worst=" << res.worst_param
                  << " rel=" << res.max_rel_error);
    CHECK(res.checked > 900);
    CHECK(res.max_rel_error <= 1e-4);
  }
}

TEST_CASE("analytic gradients match finite differences (per-dataset layer)") {
  ModelConfig cfg = tiny_config();
  cfg.separate_rnn = true;
  ToyModel model(cfg);
  for (Subset s : {Subset::kDesedWeak, Subset::kMaestroStrong}) {
    const auto res = check_model_gradients(model, s, 33);
    INFO("subset=" << subset_name(s) << " worst=" << res.worst_param
                   << " rel=" << res.max_rel_error);
    CHECK(res.max_rel_error <= 1e-4);
  }
}

TEST_CASE("unused per-dataset layer receives zero gradient") {
  ModelConfig cfg = tiny_config();
  cfg.separate_rnn = true;
  ToyModel model(cfg);
  Workspace ws;
  const auto features = random_features(cfg, 41);
  model.zero_grad();
  model.forward(features, Subset::kMaestroStrong, ws);
  std::vector<double> d_strong(static_cast<std::size_t>(cfg.num_classes) * cfg.t_out(),
                               0.25);
  std::vector<double> d_weak(cfg.num_classes, -0.5);
  model.backward(ws, d_strong, d_weak);
  for (const auto& p : model.params()) {
    const bool desed_branch = p.name.rfind("sep_rnn.desed.", 0) == 0;
    double mag = 0.0;
    for (double g : p.grad.data) mag += std::abs(g);
    if (desed_branch) {
      CHECK(mag == 0.0);
    }
  }
}

TEST_CASE("branch caches reproduce a fresh forward bit for bit") {
  ModelConfig cfg = tiny_config();
  ToyModel model(cfg);
  const auto features = random_features(cfg, 55);
  Workspace fresh, cached;
  const auto base = model.forward(features, Subset::kDesedUnlabeled, fresh);
  model.forward(features, Subset::kDesedUnlabeled, cached);

  // Perturb a recurrent weight: both branch prefixes stay valid.
  for (auto& p : model.params()) {
    if (p.name == "rnn.fwd.wz") p.value.data[0] += 0.125;
  }
  cached.reuse_cnn = true;
  cached.reuse_embedder = true;
  const auto via_cache = model.forward(features, Subset::kDesedUnlabeled, cached);
  Workspace redo;
  const auto via_fresh = model.forward(features, Subset::kDesedUnlabeled, redo);
  CHECK(via_cache.strong_logits == via_fresh.strong_logits);
  CHECK(via_cache.weak_logits == via_fresh.weak_logits);
  CHECK(via_cache.strong_logits != base.strong_logits);

  // Perturb a cnn weight: only the frozen branch may be reused.
  for (auto& p : model.params()) {
    if (p.name == "cnn.conv1.weight") p.value.data[0] += 0.25;
  }
  cached.reuse_cnn = false;
  cached.reuse_embedder = true;
  const auto cnn_cache = model.forward(features, Subset::kDesedUnlabeled, cached);
  Workspace redo2;
  const auto cnn_fresh = model.forward(features, Subset::kDesedUnlabeled, redo2);
  CHECK(cnn_cache.strong_logits == cnn_fresh.strong_logits);
}

TEST_CASE("per-dataset layer routing changes desed vs maestro outputs") {
  ModelConfig cfg = tiny_config();
  cfg.separate_rnn = true;
  ToyModel model(cfg);
  const auto features = random_features(cfg, 71);
  Workspace w1, w2;
  const auto desed = model.forward(features, Subset::kDesedWeak, w1);
  const auto maestro = model.forward(features, Subset::kMaestroStrong, w2);
  CHECK(desed.strong_logits != maestro.strong_logits);

  ModelConfig plain = tiny_config();
  ToyModel flat(plain);
  Workspace w3, w4;
  const auto a = flat.forward(features, Subset::kDesedWeak, w3);
  const auto b = flat.forward(features, Subset::kMaestroStrong, w4);
  CHECK(a.strong_logits == b.strong_logits);
}

TEST_CASE("checkpoints round trip bit for bit") {
  ModelConfig cfg = tiny_config();
  cfg.separate_rnn = true;
  cfg.align = AlignMethod::kAvgPool;
  ToyModel model(cfg);
  TempFile file("ckpt");
  model.save_checkpoint(file.path);
  ToyModel loaded = ToyModel::load_checkpoint(file.path);
  CHECK(loaded.flat_values() == model.flat_values());
  CHECK(loaded.param_hash() == model.param_hash());
  CHECK(loaded.config().separate_rnn);
  CHECK(loaded.config().align == AlignMethod::kAvgPool);
  CHECK(model_config_hash(loaded.config()) == model_config_hash(cfg));
}

TEST_CASE("checkpoint loader rejects foreign files") {
  TempFile file("bad");
  {
    std::ofstream out(file.path, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  CHECK_THROWS_AS(ToyModel::load_checkpoint(file.path), DataError);
  CHECK_THROWS_AS(ToyModel::load_checkpoint(file.path + ".missing"), DataError);
}

TEST_CASE("model config validation and parsing") {
  ModelConfig bad = tiny_config();
  bad.feature_bins = 10;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.input_frames = 8;  // shorter than the embedder kernel
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  ConfigFile cfg = ConfigFile::parse_text(
      "[model]\n"
      "feature_bins = 16\n"
      "input_frames = 48\n"
      "hidden = 6\n"
      "align = avg_pool\n"
      "separate_rnn = true\n",
      "inline");
  const ModelConfig parsed = model_config_from(cfg, 5);
  CHECK(parsed.feature_bins == 16);
  CHECK(parsed.input_frames == 48);
  CHECK(parsed.num_classes == 5);
  CHECK(parsed.hidden == 6);
  CHECK(parsed.align == AlignMethod::kAvgPool);
  CHECK(parsed.separate_rnn);
  CHECK(parsed.t_emb() == 13);
  CHECK(parsed.t_out() == 12);
  CHECK_THROWS_AS(align_method_from_name("cubic"), ConfigError);
}
