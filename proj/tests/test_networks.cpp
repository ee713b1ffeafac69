#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "helpers.hpp"

using namespace facl;
using namespace facl::testing;

TEST_CASE("projector kinds wire the documented layer stacks") {
  MlpSpec weak = build_projector("weak", 8, 16, 4);
  REQUIRE(weak.layers.size() == 2);
  CHECK(weak.layers[0].in == 8);
  CHECK(weak.layers[0].out == 16);
  CHECK_FALSE(weak.layers[0].bn);
  CHECK(weak.layers[0].act == Act::relu);
  CHECK(weak.layers[1].out == 4);
  CHECK_FALSE(weak.layers[1].bn);
  CHECK(weak.layers[1].act == Act::none);

  MlpSpec strong = build_projector("strong", 8, 16, 4);
  REQUIRE(strong.layers.size() == 3);
  for (const auto& l : strong.layers) CHECK(l.bn);
  CHECK(strong.layers[0].act == Act::relu);
  CHECK(strong.layers[1].act == Act::relu);
  CHECK(strong.layers[2].act == Act::none);
  CHECK(strong.layers[1].in == 16);
  CHECK(strong.layers[1].out == 16);

  MlpSpec no_final = build_projector("strong", 8, 16, 4, false);
  CHECK(no_final.layers[0].bn);
  CHECK(no_final.layers[1].bn);
  CHECK_FALSE(no_final.layers[2].bn);

  CHECK_THROWS_AS(build_projector("medium", 8, 16, 4), std::invalid_argument);
  CHECK_THROWS_AS(build_projector("weak", 0, 16, 4), std::invalid_argument);
}

TEST_CASE("predictor puts bn and relu after the first layer only") {
  MlpSpec p = build_predictor(4, 8, 4);
  REQUIRE(p.layers.size() == 2);
  CHECK(p.layers[0].bn);
  CHECK(p.layers[0].act == Act::relu);
  CHECK_FALSE(p.layers[1].bn);
  CHECK(p.layers[1].act == Act::none);
}

TEST_CASE("mlp spec rejects inconsistent stacks") {
  MlpSpec s;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.layers = {{4, 8, false, Act::relu}, {6, 2, false, Act::none}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.layers = {{4, 8, false, Act::relu}, {8, 2, false, Act::relu}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.layers = {{4, 8, false, Act::relu}, {8, 2, false, Act::none}};
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("xavier init stays inside the symmetric fan bound") {
  Rng rng(3);
  const std::size_t fin = 24, fout = 56;
  const double bound = std::sqrt(6.0 / (fin + fout));
  Tensor w = xavier_uniform({fin, fout}, fin, fout, rng);
  double lo = 1e9, hi = -1e9, sum = 0.0;
  for (double v : w.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(hi > 0.9 * bound);   // the draw actually spans the interval
  CHECK(lo < -0.9 * bound);
  CHECK(std::abs(sum / w.numel()) < 0.05 * bound);
}

TEST_CASE("mlp init names parameters and creates bn state only where asked") {
  Rng rng(4);
  MlpSpec spec = build_predictor(4, 8, 2);
  ModelParams mp = init_mlp("pred", spec, rng);
  CHECK(mp.find("pred.L0.w")->v.size(0) == 4);
  CHECK(mp.find("pred.L0.w")->v.size(1) == 8);
  CHECK(mp.find("pred.L0.b")->v.numel() == 8);
  CHECK(mp.find("pred.L0.gamma")->v.numel() == 8);
  CHECK(mp.find("pred.L0.beta")->v.numel() == 8);
  CHECK(mp.find("pred.L1.w")->v.size(1) == 2);
  CHECK_THROWS_AS(mp.find("pred.L1.gamma"), std::out_of_range);
  CHECK_NOTHROW(mp.bn_state("pred.L0"));
  CHECK_THROWS_AS(mp.bn_state("pred.L1"), std::out_of_range);
  for (const auto& [name, p] : mp.params) {
    CHECK(p->needs_grad);
    if (name.ends_with(".b") || name.ends_with(".beta"))
      for (double v : p->v.data) CHECK(v == 0.0);
    if (name.ends_with(".gamma"))
      for (double v : p->v.data) CHECK(v == 1.0);
  }
}

TEST_CASE("weak forward matches a literal matmul chain") {
  Rng rng(5);
  MlpSpec spec = build_projector("weak", 3, 5, 2);
  ModelParams mp = init_mlp("proj", spec, rng);
  Tensor x = rand_tensor(rng, {4, 3});
  Val out = forward_mlp("proj", spec, mp, constant(x), true);

  const Tensor& w0 = mp.find("proj.L0.w")->v;
  const Tensor& b0 = mp.find("proj.L0.b")->v;
  const Tensor& w1 = mp.find("proj.L1.w")->v;
  const Tensor& b1 = mp.find("proj.L1.b")->v;
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> h(5);
    for (std::size_t j = 0; j < 5; ++j) {
      double s = b0.data[j];
      for (std::size_t k = 0; k < 3; ++k) s += x.at(i, k) * w0.at(k, j);
      h[j] = std::max(s, 0.0);
    }
    for (std::size_t j = 0; j < 2; ++j) {
      double s = b1.data[j];
      for (std::size_t k = 0; k < 5; ++k) s += h[k] * w1.at(k, j);
      CHECK(out->v.at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("bn train mode normalizes by batch statistics") {
  Rng rng(6);
  const std::size_t b = 64, d = 3;
  Tensor x = rand_tensor(rng, {b, d}, -2.0, 5.0);
  Val gamma = parameter(Tensor({d}, 1.0));
  Val beta = parameter(Tensor({d}, 0.0));
  BnState st(d);
  Val y = batch_norm(constant(x), gamma, beta, st, true, false);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < b; ++i) m += y->v.at(i, j);
    m /= b;
    for (std::size_t i = 0; i < b; ++i) v += (y->v.at(i, j) - m) * (y->v.at(i, j) - m);
    v /= b;
    CHECK(std::abs(m) < 1e-10);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator shifts it slightly
  }
  // update_stats=false left the state untouched
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(st.running_mean.data[j] == 0.0);
    CHECK(st.running_var.data[j] == 1.0);
  }
}

TEST_CASE("bn running statistics follow the momentum recurrence") {
  Rng rng(7);
  const std::size_t b = 8, d = 2;
  Val gamma = parameter(Tensor({d}, 1.0));
  Val beta = parameter(Tensor({d}, 0.0));
  BnState st(d);
  std::vector<double> rm(d, 0.0), rv(d, 1.0);
  for (int step = 0; step < 5; ++step) {
    Tensor x = rand_tensor(rng, {b, d}, -1.0 + step, 2.0 + step);
    batch_norm(constant(x), gamma, beta, st, true);
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < b; ++i) m += x.at(i, j);
      m /= b;
      for (std::size_t i = 0; i < b; ++i) v += (x.at(i, j) - m) * (x.at(i, j) - m);
      v /= b;
      rm[j] = 0.9 * rm[j] + 0.1 * m;
      rv[j] = 0.9 * rv[j] + 0.1 * v * static_cast<double>(b) / (b - 1);
      CHECK(st.running_mean.data[j] == doctest::Approx(rm[j]).epsilon(1e-12));
      CHECK(st.running_var.data[j] == doctest::Approx(rv[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("bn eval mode applies the stored estimates elementwise") {
  const std::size_t d = 2;
  Val gamma = parameter(Tensor({d}, 2.0));
  Val beta = parameter(Tensor({d}, -1.0));
  BnState st(d);
  st.running_mean.data = {0.5, -0.25};
  st.running_var.data = {4.0, 0.25};
  Tensor x({1, d});
  x.data = {2.5, 0.25};
  Val y = batch_norm(constant(x), gamma, beta, st, false);
  CHECK(y->v.data[0] == doctest::Approx(2.0 * (2.0 / std::sqrt(4.0 + st.eps)) - 1.0).epsilon(1e-9));
  CHECK(y->v.data[1] == doctest::Approx(2.0 * (0.5 / std::sqrt(0.25 + st.eps)) - 1.0).epsilon(1e-9));
}

TEST_CASE("bn train mode refuses a single-row batch") {
  Val gamma = parameter(Tensor({2}, 1.0));
  Val beta = parameter(Tensor({2}, 0.0));
  BnState st(2);
  Tensor x({1, 2}, 0.3);
  CHECK_THROWS_AS(batch_norm(constant(x), gamma, beta, st, true), std::invalid_argument);
  CHECK_NOTHROW(batch_norm(constant(x), gamma, beta, st, false));
}

TEST_CASE("decay exclusion covers biases and bn parameters") {
  CHECK(is_bias_or_bn("enc.L0.b"));
  CHECK(is_bias_or_bn("proj.L2.gamma"));
  CHECK(is_bias_or_bn("pred.L1.beta"));
  CHECK_FALSE(is_bias_or_bn("enc.L0.w"));
  CHECK_FALSE(is_bias_or_bn("enc.C1.w"));
  CHECK_FALSE(is_bias_or_bn("b"));
  CHECK_FALSE(is_bias_or_bn("enc.L0.bias"));
}

TEST_CASE("mlp encoder builder chains hidden widths") {
  EncoderSpec e = mlp_encoder(10, {32, 16}, 8);
  REQUIRE(e.mlp.layers.size() == 3);
  CHECK(e.mlp.layers[0].in == 10);
  CHECK(e.mlp.layers[0].out == 32);
  CHECK(e.mlp.layers[1].out == 16);
  CHECK(e.mlp.layers[2].out == 8);
  CHECK(e.mlp.layers[2].act == Act::none);
  CHECK(e.out_dim == 8);

  EncoderSpec flat = mlp_encoder(10, {}, 4);
  CHECK(flat.mlp.layers.size() == 1);
}

TEST_CASE("smallconv produces the flattened embedding shape") {
  Rng rng(8);
  EncoderSpec e = smallconv_encoder({4, 6, 8}, 32, 12);
  ModelParams mp = init_encoder("enc", e, rng);
  CHECK(mp.find("enc.C0.w").get() != nullptr);
  CHECK(mp.find("enc.C0.w")->v.size(0) == 4);
  CHECK(mp.find("enc.C0.w")->v.size(1) == 3);
  CHECK(mp.find("enc.C1.w")->v.size(1) == 4);
  CHECK(mp.find("enc.C2.w")->v.size(0) == 8);
  // 32 -> 16 -> 8 -> 4 spatial after three pooled stages
  CHECK(mp.find("enc.F.w")->v.size(0) == 8 * 4 * 4);
  CHECK(mp.find("enc.F.w")->v.size(1) == 12);

  Tensor img = rand_tensor(rng, {2, 3, 32, 32});
  Val out = forward_encoder("enc", e, mp, constant(img), true);
  REQUIRE(out->v.ndim() == 2);
  CHECK(out->v.size(0) == 2);
  CHECK(out->v.size(1) == 12);

  CHECK_THROWS_AS(smallconv_encoder({4, 6}, 32, 12), std::invalid_argument);
  CHECK_THROWS_AS(smallconv_encoder({4, 6, 8}, 48, 12), std::invalid_argument);
}

TEST_CASE("param store lookup and merge keep ordering and reject misses") {
  Rng rng(9);
  ModelParams a = init_mlp("proj", build_projector("weak", 3, 4, 2), rng);
  ModelParams b = init_mlp("pred", build_predictor(2, 4, 2), rng);
  const std::size_t na = a.params.size();
  a.merge(b);
  CHECK(a.params.size() == na + b.params.size());
  CHECK(a.params[na].first == "pred.L0.w");
  CHECK_NOTHROW(a.bn_state("pred.L0"));
  CHECK_THROWS_AS(a.find("pred.L9.w"), std::out_of_range);
}

TEST_CASE("constant clone copies values, drops gradients, deep-copies bn") {
  Rng rng(10);
  MlpSpec spec = build_projector("strong", 4, 6, 3);
  ModelParams src = init_mlp("proj", spec, rng);
  src.bn_state("proj.L0").running_mean.data[0] = 0.7;

  ModelParams tgt = clone_as_constant(src, "proj", "proj_t");
  REQUIRE(tgt.params.size() == src.params.size());
  for (std::size_t i = 0; i < src.params.size(); ++i) {
    CHECK(tgt.params[i].first == "proj_t" + src.params[i].first.substr(4));
    CHECK_FALSE(tgt.params[i].second->needs_grad);
    REQUIRE(tgt.params[i].second->v.same_shape(src.params[i].second->v));
    for (std::size_t j = 0; j < src.params[i].second->v.numel(); ++j)
      CHECK(tgt.params[i].second->v.data[j] == src.params[i].second->v.data[j]);
  }
  CHECK(tgt.bn_state("proj_t.L0").running_mean.data[0] == 0.7);
  src.bn_state("proj.L0").running_mean.data[0] = -0.3;
  CHECK(tgt.bn_state("proj_t.L0").running_mean.data[0] == 0.7);

  // the clone forwards without touching source parameters
  Tensor x = rand_tensor(rng, {4, 4});
  Val out = forward_mlp("proj_t", spec, tgt, constant(x), true, false);
  CHECK_FALSE(out->needs_grad);
}
