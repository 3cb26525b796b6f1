#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "msrn/dataio.hpp"
#include "msrn/gradcheck.hpp"
#include "msrn/model.hpp"
#include "msrn/rng.hpp"
#include "temp_dir.hpp"

using namespace msrn;

namespace {

// hand-composed head: logits = W2 * leaky(W1 * tanh(flat(M)) + b1) + b2
std::vector<double> oracle_head(const Tensor& o, const Tensor& q, const HeadParams& head) {
  std::vector<double> x;
  for (int64_t i = 0; i < o.numel(); ++i) x.push_back(std::tanh(o[i]));
  for (int64_t i = 0; i < q.numel(); ++i) x.push_back(std::tanh(q[i]));
  int64_t hidden = head.w1.dim(0), in = head.w1.dim(1), n = head.w2.dim(0);
  REQUIRE(static_cast<int64_t>(x.size()) == in);
  std::vector<double> h(static_cast<size_t>(hidden));
  for (int64_t j = 0; j < hidden; ++j) {
    double s = head.b1[j];
    for (int64_t k = 0; k < in; ++k) s += head.w1[j * in + k] * x[static_cast<size_t>(k)];
    h[static_cast<size_t>(j)] = s > 0.0 ? s : head.slope * s;
  }
  std::vector<double> logits(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j) {
    double s = head.b2[j];
    for (int64_t k = 0; k < hidden; ++k) s += head.w2[j * hidden + k] * h[static_cast<size_t>(k)];
    logits[static_cast<size_t>(j)] = s;
  }
  return logits;
}

// direct unstable form, mean over rows of -[y ln s + (1-y) ln(1-s)]
double oracle_bce(const Tensor& logits, const Tensor& y) {
  double total = 0.0;
  for (int64_t i = 0; i < logits.numel(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-logits[i]));
    total -= y[i] * std::log(s) + (1.0 - y[i]) * std::log(1.0 - s);
  }
  return total / static_cast<double>(logits.dim(0));
}

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

HeadParams random_head(int64_t in, int64_t hidden, int64_t n, Rng& rng) {
  HeadParams head;
  head.w1 = randn({hidden, in}, rng, 0.3);
  head.b1 = randn({1, hidden}, rng, 0.3);
  head.w2 = randn({n, hidden}, rng, 0.3);
  head.b2 = randn({1, n}, rng, 0.3);
  return head;
}

Tensor ring_adjacency(int64_t n) {
  Tensor a({n, n});
  for (int64_t i = 0; i < n; ++i) {
    a[i * n + i] = 1.0;
    a[i * n + (i + 1) % n] = 1.0;
    a[((i + 1) % n) * n + i] = 1.0;
  }
  return a;
}

ModelConfig micro_config(Variant v = Variant::kFull) {
  ModelConfig cfg;
  cfg.labels = 3;
  cfg.groups = 2;
  cfg.embed_dim = 3;
  cfg.branches = 2;
  cfg.widths = {2, 2};
  cfg.image = 8;
  cfg.channels = 2;
  cfg.gat_hidden = 3;
  cfg.head_hidden = 4;
  cfg.variant = v;
  return cfg;
}

Model micro_model(Variant v, uint64_t seed) {
  ModelConfig cfg = micro_config(v);
  return Model(cfg, LabelGraph::make(random_label_features(cfg.labels, 5, seed), ring_adjacency(cfg.labels)), seed);
}

}  // namespace

TEST_CASE("config defaults match the published recipe") {
  ModelConfig cfg;
  CHECK(cfg.groups == 4);
  CHECK(cfg.branches == 3);
  CHECK(cfg.lambda == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(cfg.slope == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(cfg.head_hidden == 64);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config validation rejects bad shapes") {
  ModelConfig cfg = micro_config();
  CHECK_NOTHROW(cfg.validate());

  ModelConfig bad = cfg;
  bad.groups = 4;  // more groups than labels
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.widths.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.branches = 3;  // only 2 blocks
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.branches = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.image = 10;  // not divisible by 2^blocks
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.lambda = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.slope = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("config json round trip covers every variant") {
  for (Variant v : {Variant::kFull, Variant::kNoLge, Variant::kLabelE, Variant::kGroupE}) {
    ModelConfig cfg = micro_config(v);
    cfg.lambda = 0.25;
    ModelConfig back = model_config_from_json(model_config_to_json(cfg));
    CHECK(back.labels == cfg.labels);
    CHECK(back.groups == cfg.groups);
    CHECK(back.embed_dim == cfg.embed_dim);
    CHECK(back.branches == cfg.branches);
    CHECK(back.widths == cfg.widths);
    CHECK(back.image == cfg.image);
    CHECK(back.channels == cfg.channels);
    CHECK(back.gat_hidden == cfg.gat_hidden);
    CHECK(back.head_hidden == cfg.head_hidden);
    CHECK(back.lambda == cfg.lambda);
    CHECK(back.variant == cfg.variant);
    CHECK(variant_from_name(variant_name(v)) == v);
  }
  CHECK_THROWS_AS(variant_from_name("resnet"), std::invalid_argument);
}

TEST_CASE("backbone taps halve 32x32 down to 8/4/2") {
  ModelConfig cfg;
  cfg.labels = 3;
  cfg.groups = 2;
  cfg.embed_dim = 4;
  cfg.widths = {2, 3, 4, 5};
  cfg.branches = 3;
  cfg.image = 32;
  cfg.gat_hidden = 3;
  cfg.head_hidden = 4;
  Model model(cfg, LabelGraph::make(random_label_features(3, 5, 9), ring_adjacency(3)), 9);

  Rng rng(42);
  FeaturePyramid pyr = model.backbone_forward(randn({32, 32, 3}, rng));
  REQUIRE(pyr.raw.size() == 3);
  REQUIRE(pyr.projected.size() == 3);
  CHECK(pyr.raw[0].shape() == Shape{8, 8, 3});
  CHECK(pyr.raw[1].shape() == Shape{4, 4, 4});
  CHECK(pyr.raw[2].shape() == Shape{2, 2, 5});
  for (int t = 0; t < 3; ++t) {
    CHECK(model.tap_shape(t) == pyr.raw[static_cast<size_t>(t)].shape());
    CHECK(pyr.projected[static_cast<size_t>(t)].dim(2) == cfg.embed_dim);
    CHECK(pyr.projected[static_cast<size_t>(t)].dim(0) == pyr.raw[static_cast<size_t>(t)].dim(0));
  }
  CHECK_THROWS_AS(model.tap_shape(3), std::invalid_argument);
}

TEST_CASE("single branch taps only the deepest block") {
  ModelConfig cfg = micro_config();
  cfg.branches = 1;
  Model model(cfg, LabelGraph::make(random_label_features(3, 5, 9), ring_adjacency(3)), 9);
  Rng rng(7);
  FeaturePyramid pyr = model.backbone_forward(randn({8, 8, 2}, rng));
  REQUIRE(pyr.raw.size() == 1);
  CHECK(pyr.raw[0].shape() == Shape{2, 2, 2});
}

TEST_CASE("zeroed weights turn any image into zero features") {
  Model model = micro_model(Variant::kFull, 5);
  for (const std::string& name : model.params().order)
    if (name.rfind("backbone", 0) == 0 || name.rfind("buffer", 0) == 0 || name.rfind("proj", 0) == 0) {
      Tensor& p = model.params().at(name);
      p = Tensor::zeros(p.shape());
    }
  Tensor image = Tensor::full({8, 8, 2}, 0.7);
  FeaturePyramid pyr = model.backbone_forward(image);
  for (const Tensor& t : pyr.raw)
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);
  for (const Tensor& t : pyr.projected)
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);
}

TEST_CASE("classify on zero inputs rides the bias path") {
  Rng rng(11);
  HeadParams head = random_head(4 * 5, 6, 4, rng);
  Tensor o({3, 5}), q({1, 5});
  Prediction pred = classify(o, q, head);
  REQUIRE(pred.logits.shape() == Shape{1, 4});
  for (int64_t j = 0; j < 4; ++j) {
    double s = head.b2[j];
    for (int64_t k = 0; k < 6; ++k) {
      double h = head.b1[k];
      if (h < 0.0) h *= head.slope;
      s += head.w2[j * 6 + k] * h;
    }
    CHECK(pred.logits[j] == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("classify supports the published fc1 width") {
  Rng rng(13);
  HeadParams head = random_head(6 * 4, 2048, 5, rng);
  Tensor o = randn({4, 4}, rng), q = randn({2, 4}, rng);
  Prediction pred = classify(o, q, head);
  CHECK(pred.logits.shape() == Shape{1, 5});
  CHECK(pred.probabilities.shape() == Shape{1, 5});
  for (int64_t i = 0; i < 5; ++i) {
    CHECK(pred.probabilities[i] > 0.0);
    CHECK(pred.probabilities[i] < 1.0);
  }
}

TEST_CASE("classify matches the matmul chain oracle") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    Tensor o = randn({3, 4}, rng), q = randn({2, 4}, rng);
    HeadParams head = random_head(5 * 4, 5, 3, rng);
    Prediction pred = classify(o, q, head);
    std::vector<double> want = oracle_head(o, q, head);
    REQUIRE(pred.logits.numel() == 3);
    for (int64_t j = 0; j < 3; ++j) {
      CHECK(pred.logits[j] == doctest::Approx(want[static_cast<size_t>(j)]).epsilon(1e-12));
      CHECK(pred.probabilities[j] ==
            doctest::Approx(1.0 / (1.0 + std::exp(-pred.logits[j]))).epsilon(1e-12));
    }
  }
}

TEST_CASE("classify is deterministic and rejects mismatched widths") {
  Rng rng(17);
  Tensor o = randn({3, 4}, rng), q = randn({2, 4}, rng);
  HeadParams head = random_head(5 * 4, 6, 3, rng);
  Prediction a = classify(o, q, head);
  Prediction b = classify(o, q, head);
  for (int64_t i = 0; i < a.logits.numel(); ++i) CHECK(a.logits[i] == b.logits[i]);

  Tensor wrong = randn({2, 5}, rng);
  CHECK_THROWS_AS(classify(o, wrong, head), std::invalid_argument);
}

TEST_CASE("bce loss vanishes on saturated correct logits") {
  Tensor z({2, 3}), y({2, 3});
  double big = 40.0;
  Rng rng(23);
  for (int64_t i = 0; i < 6; ++i) {
    y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    z[i] = y[i] == 1.0 ? big : -big;
  }
  CHECK(bce_loss(z, y) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("bce loss at zero logit is ln 2 per label") {
  Tensor z({1, 1}), y({1, 1});
  y[0] = 1.0;
  CHECK(bce_loss(z, y) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Tensor z4({1, 4}), y4({1, 4});
  for (int64_t i = 0; i < 4; ++i) y4[i] = 1.0;
  // summed over labels, averaged over the batch
  CHECK(bce_loss(z4, y4) == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-15));

  Tensor z2({2, 2}), y2({2, 2});
  CHECK(bce_loss(z2, y2) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("bce loss matches the direct formula") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(1000 + trial);
    Tensor z({3, 4}), y({3, 4});
    for (int64_t i = 0; i < 12; ++i) {
      z[i] = rng.uniform(-4.0, 4.0);
      y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    CHECK(bce_loss(z, y) == doctest::Approx(oracle_bce(z, y)).epsilon(1e-10));
  }
}

TEST_CASE("stable bce agrees with the naive form where that form is well conditioned") {
  // past |z| ~ 12 the naive log(1-s) loses more than the tolerance
  for (uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(2000 + trial);
    Tensor z({2, 5}), y({2, 5});
    for (int64_t i = 0; i < 10; ++i) {
      z[i] = rng.uniform(-12.0, 12.0);
      y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    double naive = oracle_bce(z, y);
    REQUIRE(std::isfinite(naive));
    double stable = bce_loss(z, y);
    CHECK(std::abs(stable - naive) <= 1e-10 * std::max(1.0, std::abs(naive)));
  }
}

TEST_CASE("stable bce hits the exact asymptotes where the naive form breaks") {
  auto term = [](double z, double y) {
    Tensor zt({1, 1}), yt({1, 1});
    zt[0] = z;
    yt[0] = y;
    return bce_loss(zt, yt);
  };
  // confident and wrong: the true term is |z| + exp(-|z|), which rounds
  // to |z| at these magnitudes; the naive form is already -log(0) here
  CHECK(term(40.0, 0.0) == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(term(-40.0, 1.0) == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(term(-700.0, 1.0) == doctest::Approx(700.0).epsilon(1e-12));
  CHECK(term(1000.0, 0.0) == 1000.0);
  CHECK(term(-1000.0, 1.0) == 1000.0);
  // confident and right: the true term is exp(-|z|) to first order
  CHECK(term(40.0, 1.0) == doctest::Approx(std::exp(-40.0)).epsilon(1e-12));
  CHECK(term(-40.0, 0.0) == doctest::Approx(std::exp(-40.0)).epsilon(1e-12));
  double tiny = term(700.0, 1.0);
  CHECK(tiny > 0.0);
  CHECK(tiny < 1e-300);
}

TEST_CASE("bce loss rejects non binary targets") {
  Tensor z({1, 2}), y({1, 2});
  y[0] = 0.5;
  CHECK_THROWS_WITH_AS(bce_loss(z, y), doctest::Contains("targets must be 0/1"), std::invalid_argument);
}

TEST_CASE("total loss arithmetic") {
  CHECK(total_loss(3.5, 99.0, 0.0) == 3.5);
  CHECK(total_loss(1.0, 2.0, 0.001) == doctest::Approx(1.002).epsilon(1e-15));
  CHECK_THROWS_AS(total_loss(1.0, 2.0, -0.001), std::invalid_argument);
}

TEST_CASE("batch loss decomposes as l1 plus lambda l2") {
  Model model = micro_model(Variant::kFull, 31);
  Rng rng(31);
  Tensor img = randn({8, 8, 2}, rng, 0.5);
  Tensor y({1, 3});
  y[0] = 1.0;
  y[2] = 1.0;

  Graph g;
  Model::BatchNodes nodes = model.build_batch(g, {&img}, &y, false);
  REQUIRE(nodes.l2 >= 0);
  double l1 = g.value(nodes.l1).item();
  double l2 = g.value(nodes.l2).item();
  double loss = g.value(nodes.loss).item();
  CHECK(loss == doctest::Approx(l1 + model.config().lambda * l2).epsilon(1e-15));
  CHECK(loss == doctest::Approx(total_loss(l1, l2, model.config().lambda)).epsilon(1e-15));
}

TEST_CASE("loss gradient is linear in the regularizer weight") {
  Model model = micro_model(Variant::kFull, 37);
  Rng rng(37);
  Tensor img = randn({8, 8, 2}, rng, 0.5);
  Tensor y({1, 3});
  y[1] = 1.0;

  auto grads_of = [&](NodeId Model::BatchNodes::*node) {
    Graph g;
    Model::BatchNodes nodes = model.build_batch(g, {&img}, &y, true);
    return g.backward(nodes.*node);
  };
  GradMap d_loss = grads_of(&Model::BatchNodes::loss);
  GradMap d_l1 = grads_of(&Model::BatchNodes::l1);
  GradMap d_l2 = grads_of(&Model::BatchNodes::l2);
  double lambda = model.config().lambda;
  for (const auto& [name, g_loss] : d_loss) {
    const Tensor& g1 = d_l1.at(name);
    const Tensor& g2 = d_l2.at(name);
    for (int64_t i = 0; i < g_loss.numel(); ++i)
      CHECK(g_loss[i] == doctest::Approx(g1[i] + lambda * g2[i]).epsilon(1e-12));
  }
}

TEST_CASE("every variant wires the head to the right rows") {
  struct Case {
    Variant v;
    int64_t rows;
    bool group_loss;
  };
  // labels 3, groups 2
  for (Case c : {Case{Variant::kFull, 5, true}, Case{Variant::kNoLge, 5, false}, Case{Variant::kLabelE, 3, false},
                 Case{Variant::kGroupE, 2, true}}) {
    CAPTURE(variant_name(c.v));
    Model model = micro_model(c.v, 41);
    const ModelConfig& cfg = model.config();
    CHECK(model.params().at("head1.w").dim(1) == c.rows * cfg.branches * cfg.embed_dim);

    Rng rng(41);
    Tensor img = randn({8, 8, 2}, rng, 0.5);
    Tensor y({1, 3});
    y[0] = 1.0;
    Graph g;
    Model::BatchNodes nodes = model.build_batch(g, {&img}, &y, false);
    CHECK(g.value(nodes.logits).shape() == Shape{1, 3});
    CHECK((nodes.l2 >= 0) == c.group_loss);
    const Tensor& s = g.value(nodes.scores);
    for (int64_t i = 0; i < s.numel(); ++i) {
      CHECK(s[i] > 0.0);
      CHECK(s[i] < 1.0);
    }
  }
}

TEST_CASE("end to end loss gradients pass finite difference checks") {
  for (Variant v : {Variant::kFull, Variant::kNoLge, Variant::kLabelE, Variant::kGroupE}) {
    std::string vname = variant_name(v);
    CAPTURE(vname);
    Model model = micro_model(v, 53);
    Rng rng(53);
    Tensor img1 = randn({8, 8, 2}, rng, 0.5);
    Tensor img2 = randn({8, 8, 2}, rng, 0.5);

    // The check point must keep the loss small: a near-chance loss is
    // large enough that its own rounding ulp swamps the difference
    // quotient on coordinates the row softmax is insensitive to.
    // Shifting the output biases until both items clear every label and
    // targeting all ones pins the loss near zero without adding
    // curvature.
    Graph probe;
    Model::BatchNodes probed = model.build_batch(probe, {&img1, &img2}, nullptr, false);
    const Tensor& z = probe.value(probed.logits);
    Tensor& b2 = model.params().at("head2.b");
    int64_t n = model.config().labels;
    for (int64_t j = 0; j < n; ++j) b2[j] += 7.0 - std::min(z[j], z[n + j]);
    Tensor y = Tensor::full({2, n}, 1.0);

    Graph g;
    Model::BatchNodes nodes = model.build_batch(g, {&img1, &img2}, &y, true);
    GradCheckResult r = grad_check(g, nodes.loss, {}, 1e-5);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("scores are independent of batch order and chunking") {
  Model model = micro_model(Variant::kFull, 61);
  Rng rng(61);
  std::vector<Tensor> images;
  for (int i = 0; i < 5; ++i) images.push_back(randn({8, 8, 2}, rng, 0.5));

  std::vector<const Tensor*> fwd, rev;
  for (const Tensor& t : images) fwd.push_back(&t);
  for (auto it = images.rbegin(); it != images.rend(); ++it) rev.push_back(&*it);

  Tensor a = model.score_batch(fwd);
  Tensor b = model.score_batch(rev);
  Tensor c = model.score_batch(fwd, 1);
  int64_t n = model.config().labels;
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < n; ++j) {
      CHECK(a[i * n + j] == b[(4 - i) * n + j]);
      CHECK(a[i * n + j] == c[i * n + j]);
    }
}

TEST_CASE("stored pyramids reproduce image scores exactly") {
  Model model = micro_model(Variant::kFull, 71);
  Rng rng(71);
  std::vector<Tensor> images;
  for (int i = 0; i < 3; ++i) images.push_back(randn({8, 8, 2}, rng, 0.5));

  std::vector<std::vector<Tensor>> pyramids;
  for (const Tensor& img : images) pyramids.push_back(model.backbone_forward(img).raw);

  std::vector<const Tensor*> img_ptrs;
  std::vector<const std::vector<Tensor>*> pyr_ptrs;
  for (const Tensor& t : images) img_ptrs.push_back(&t);
  for (const std::vector<Tensor>& p : pyramids) pyr_ptrs.push_back(&p);

  Tensor from_images = model.score_batch(img_ptrs);
  Tensor from_feats = model.score_features(pyr_ptrs);
  for (int64_t i = 0; i < from_images.numel(); ++i) CHECK(from_images[i] == from_feats[i]);

  Tensor y({3, 3});
  for (int64_t i = 0; i < 3; ++i) y[i * 3 + i] = 1.0;
  Graph gi, gf;
  double li = gi.value(model.build_batch(gi, img_ptrs, &y, false).loss).item();
  double lf = gf.value(model.build_batch_from_features(gf, pyr_ptrs, &y, false).loss).item();
  CHECK(li == lf);
}

TEST_CASE("pyramid ingestion validates branch count and shapes") {
  Model model = micro_model(Variant::kFull, 73);
  std::vector<Tensor> short_pyr = {Tensor({4, 4, 2})};
  std::vector<const std::vector<Tensor>*> ptrs = {&short_pyr};
  Graph g;
  CHECK_THROWS_WITH_AS(model.build_batch_from_features(g, ptrs, nullptr, false),
                       doctest::Contains("pyramid has 1 maps, expected 2"), std::invalid_argument);

  std::vector<Tensor> bad_shape = {Tensor({4, 4, 2}), Tensor({2, 2, 3})};
  ptrs = {&bad_shape};
  Graph g2;
  CHECK_THROWS_WITH_AS(model.build_batch_from_features(g2, ptrs, nullptr, false),
                       doctest::Contains("branch 1 features [2x2x3]"), std::invalid_argument);
}

TEST_CASE("batch construction rejects bad inputs") {
  Model model = micro_model(Variant::kFull, 79);
  Graph g;
  CHECK_THROWS_WITH_AS(model.build_batch(g, {}, nullptr, false), doctest::Contains("empty batch"),
                       std::invalid_argument);

  Tensor wrong({4, 4, 2});
  Graph g2;
  CHECK_THROWS_WITH_AS(model.build_batch(g2, {&wrong}, nullptr, false), doctest::Contains("image shape [4x4x2]"),
                       std::invalid_argument);

  Rng rng(79);
  Tensor img = randn({8, 8, 2}, rng);
  Tensor y({2, 3});
  Graph g3;
  CHECK_THROWS_WITH_AS(model.build_batch(g3, {&img}, &y, false), doctest::Contains("target shape [2x3]"),
                       std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves everything") {
  TempDir tmp;
  Model model = micro_model(Variant::kFull, 83);
  Rng rng(83);
  Tensor img = randn({8, 8, 2}, rng, 0.5);
  Tensor before = model.score_batch({&img});

  std::string dir = tmp.file("ckpt");
  model.save(dir);
  CHECK(std::filesystem::exists(std::filesystem::path(dir) / "config.json"));
  CHECK(std::filesystem::exists(std::filesystem::path(dir) / "manifest.txt"));

  Model loaded = Model::load(dir);
  CHECK(loaded.config().labels == model.config().labels);
  CHECK(loaded.config().variant == model.config().variant);
  CHECK(loaded.config().widths == model.config().widths);
  REQUIRE(loaded.params().order == model.params().order);
  for (const std::string& name : model.params().order) {
    const Tensor &a = model.params().at(name), &b = loaded.params().at(name);
    REQUIRE(a.same_shape(b));
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  }
  Tensor after = loaded.score_batch({&img});
  for (int64_t i = 0; i < before.numel(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("checkpoint load fails on missing tensors") {
  TempDir tmp;
  Model model = micro_model(Variant::kFull, 89);
  std::string dir = tmp.file("ckpt");
  model.save(dir);
  std::filesystem::remove(std::filesystem::path(dir) / "params" / "head2.b.msrnt");
  CHECK_THROWS(Model::load(dir));
}

TEST_CASE("model construction cross checks the label graph") {
  ModelConfig cfg = micro_config();
  LabelGraph graph = LabelGraph::make(random_label_features(4, 5, 97), ring_adjacency(4));
  CHECK_THROWS_WITH_AS(Model(cfg, graph, 97), doctest::Contains("label graph has 4 labels"), std::invalid_argument);
}
