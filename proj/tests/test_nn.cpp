#include "fviz/nn.hpp"
#include "fviz/model.hpp"
#include "fviz/train.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace fviz;
using namespace fviz::testing;

namespace {

ArchSpec tiny_arch(int in_h = 8, int in_w = 8) {
  ArchSpec spec;
  spec.in_c = 1;
  spec.in_h = in_h;
  spec.in_w = in_w;
  LayerDef conv1;
  conv1.kind = LayerDef::Kind::conv;
  conv1.out_c = 4;
  LayerDef relu;
  relu.kind = LayerDef::Kind::relu;
  LayerDef pool;
  pool.kind = LayerDef::Kind::pool;
  LayerDef conv2 = conv1;
  LayerDef fc;
  fc.kind = LayerDef::Kind::fc;
  fc.width = 3;
  spec.layers = {conv1, relu, pool, conv2, relu, fc};
  return spec;
}

}  // namespace

TEST_CASE("conv forward matches direct convolution") {
  auto rng = substream(7, "test");
  Conv2d<double> conv(2, 3, 3, 1, 1);
  conv.init_he(rng);
  auto x = random_batch(2, 2, 5, 6, rng);
  auto y = conv.forward(x);
  REQUIRE(y.height == 5);
  REQUIRE(y.width == 6);
  const Matd& w = *conv.params()[0];
  const Vecd b = conv.params()[1]->col(0);
  for (int img = 0; img < 2; ++img) {
    Matd ref = conv2d_reference(x.image(img), 5, 6, w, b, 2, 3, 3, 1, 1);
    CHECK((y.image(img) - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv forward with stride 2 and pad 0") {
  auto rng = substream(9, "test");
  Conv2d<double> conv(3, 2, 3, 2, 0);
  conv.init_he(rng);
  auto x = random_batch(1, 3, 9, 7, rng);
  auto y = conv.forward(x);
  REQUIRE(y.height == 4);
  REQUIRE(y.width == 3);
  Matd ref = conv2d_reference(x.image(0), 9, 7, *conv.params()[0], conv.params()[1]->col(0), 3, 2, 3, 2, 0);
  CHECK((y.image(0) - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("classifier gradients match finite differences on every parameter") {
  ModelT<double> model(tiny_arch(), 11);
  auto rng = substream(13, "test");
  auto x = random_batch(5, 1, 8, 8, rng);
  std::vector<int> labels = {0, 2, 1, 1, 0};

  auto loss_value = [&]() {
    auto tr = model.forward(x);
    return static_cast<double>(softmax_cross_entropy<double>(tr.logits, labels));
  };
  auto tr = model.forward(x);
  Matd dlogits;
  softmax_cross_entropy<double>(tr.logits, labels, &dlogits);
  model.zero_grads();
  model.backward(dlogits, 5);

  std::vector<Matd> analytic;
  for (auto* g : model.grads()) analytic.push_back(*g);
  CHECK(max_grad_rel_err(model.params(), analytic, loss_value) < 1e-5);
}

TEST_CASE("backward through injected activation gradient matches finite differences") {
  // Loss: sum of squares of conv2 post-relu maps over the whole batch.
  ModelT<double> model(tiny_arch(), 5);
  auto rng = substream(17, "test");
  auto x = random_batch(3, 1, 8, 8, rng);
  const std::string layer = "conv2";

  auto loss_value = [&]() {
    auto tr = model.forward(x, {{layer, false}});
    return tr.acts[0].data.array().square().sum();
  };
  auto tr = model.forward(x, {{layer, false}});
  Injection<double> inj;
  inj.node = model.capture_node(layer, false);
  inj.grad = tr.acts[0];
  inj.grad.data *= 2.0;
  model.zero_grads();
  model.backward(Matd(), 3, {inj});

  std::vector<Matd> analytic;
  for (auto* g : model.grads()) analytic.push_back(*g);
  CHECK(max_grad_rel_err(model.params(), analytic, loss_value) < 1e-5);
}

TEST_CASE("capture does not disturb logits") {
  ModelT<double> model(tiny_arch(), 3);
  auto rng = substream(23, "test");
  auto x = random_batch(4, 1, 8, 8, rng);
  auto plain = model.forward(x);
  auto captured = model.forward(x, {{"conv1", true}, {"conv2", false}, {"fc1", true}});
  CHECK((plain.logits - captured.logits).cwiseAbs().maxCoeff() == 0.0);
  CHECK(captured.acts.size() == 3);
}

TEST_CASE("channel score basics") {
  Matd m(2, 2);
  m << 1, 1, 1, 1;
  CHECK(channel_score(m) == doctest::Approx(4.0));
  CHECK(channel_score(Matd::Zero(3, 3)) == 0.0);
  Matd neg(1, 1);
  neg << -2.0;
  CHECK(channel_score(neg) == doctest::Approx(4.0));
}

TEST_CASE("channel score scaling and positivity") {
  auto rng = substream(29, "test");
  auto x = random_batch(1, 4, 6, 6, rng);
  Matd scores = channel_scores_post(x);
  CHECK(scores.minCoeff() >= 0.0);
  FeatureBatch<double> scaled = x;
  scaled.data *= 3.0;
  Matd scores9 = channel_scores_post(scaled);
  CHECK((scores9 - 9.0 * scores).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("same seed gives bit-identical parameters") {
  ModelT<float> a(tiny_arch(), 42), b(tiny_arch(), 42);
  CHECK(a.param_hash() == b.param_hash());
  ModelT<float> c(tiny_arch(), 43);
  CHECK(a.param_hash() != c.param_hash());
}

TEST_CASE("bad architectures are rejected") {
  CHECK_THROWS_AS(ArchSpec::parse("fc:10", 3, 32, 32), SpecError);
  CHECK_THROWS_AS(ArchSpec::parse("conv:8,relu,conv:8,relu", 3, 32, 32), SpecError);
  CHECK_THROWS_AS(ArchSpec::parse("conv:8x33,relu,conv:8,relu,fc:10", 3, 16, 16), SpecError);
  CHECK_THROWS_AS(ArchSpec::parse("conv:8,relu,pool:64,conv:8,relu,fc:10", 3, 16, 16), SpecError);
  CHECK_THROWS_AS(ArchSpec::parse("gonv:8", 3, 16, 16), SpecError);
  auto ok = ArchSpec::parse("conv:8,relu,pool,conv:16,relu,fc:10", 3, 16, 16);
  CHECK(ok.class_count() == 10);
  CHECK(ok.to_string() == "conv:8x3s1p1,relu,pool:2,conv:16x3s1p1,relu,fc:10");
}

TEST_CASE("arch round-trips through its text form") {
  auto a = ArchSpec::parse("conv:8x5s2p2,relu,pool,conv:16,relu,flatten,fc:32,relu,fc:10", 3, 32, 32);
  auto b = ArchSpec::parse(a.to_string(), 3, 32, 32);
  CHECK(a.to_string() == b.to_string());
  CHECK(a.hash() == b.hash());
}
