#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <deque>

#include "doctest.h"
#include "helpers.hpp"

using namespace facl;
using namespace facl::testing;

TEST_CASE("bank stores unit rows and reports fill and cursor") {
  Rng rng(1);
  FeatureBank bank(8, 4);
  CHECK(bank.capacity() == 8);
  CHECK(bank.dim() == 4);
  CHECK(bank.fill() == 0);

  bank.push(rand_tensor(rng, {3, 4}));
  CHECK(bank.fill() == 3);
  CHECK(bank.cursor() == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    double n = 0.0;
    for (std::size_t j = 0; j < 4; ++j) n += bank.storage().at(r, j) * bank.storage().at(r, j);
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(bank.push(rand_tensor(rng, {2, 5})), std::invalid_argument);
  CHECK_THROWS_AS(FeatureBank(0, 4), std::invalid_argument);
}

TEST_CASE("bank FIFO matches a deque reference over 10000 randomized pushes") {
  Rng rng(7);
  const std::size_t cap = 37, d = 3;
  FeatureBank bank(cap, d);
  std::deque<std::vector<double>> ref;

  std::size_t pushed = 0;
  while (pushed < 10000) {
    const std::size_t b = 1 + rng.below(5);
    Tensor batch = rand_tensor(rng, {b, d});
    bank.push(batch);
    for (std::size_t i = 0; i < b; ++i) {
      double n = 0.0;
      for (std::size_t j = 0; j < d; ++j) n += batch.at(i, j) * batch.at(i, j);
      n = std::max(std::sqrt(n), 1e-12);
      std::vector<double> row(d);
      for (std::size_t j = 0; j < d; ++j) row[j] = stored(batch.at(i, j) / n);
      ref.push_back(std::move(row));
      if (ref.size() > cap) ref.pop_front();
    }
    pushed += b;

    CHECK(bank.fill() == ref.size());
    // oldest-to-newest: when full the cursor points at the oldest slot
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const std::size_t slot = bank.fill() < cap ? i : (bank.cursor() + i) % cap;
      for (std::size_t j = 0; j < d; ++j)
        if (bank.storage().at(slot, j) != ref[i][j]) {
          REQUIRE(bank.storage().at(slot, j) == ref[i][j]);
        }
    }
  }
}

TEST_CASE("bank top-k equals brute-force cosine argsort on 500 random banks") {
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t cap = 2 + rng.below(24);
    const std::size_t d = 1 + rng.below(6);
    FeatureBank bank(cap, d);
    const std::size_t n = 1 + rng.below(2 * cap);
    Tensor rows = rand_tensor(rng, {n, d});
    if (trial % 3 == 0)  // force cosine ties via duplicated rows
      for (std::size_t i = 1; i < n; i += 2)
        for (std::size_t j = 0; j < d; ++j) rows.at(i, j) = rows.at(i - 1, j) * 2.0;
    bank.push(rows);

    const std::size_t k = 1 + rng.below(bank.fill());
    Tensor q = rand_tensor(rng, {3, d});
    auto got = bank.topk_indices(q, k);

    for (std::size_t qi = 0; qi < 3; ++qi) {
      std::vector<std::pair<double, std::size_t>> sims;
      for (std::size_t r = 0; r < bank.fill(); ++r) {
        double s = 0.0, qn = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          s += q.at(qi, j) * bank.storage().at(r, j);
          qn += q.at(qi, j) * q.at(qi, j);
        }
        sims.emplace_back(s / std::max(std::sqrt(qn), 1e-12), r);
      }
      std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::size_t j = 0; j < k; ++j) REQUIRE(got[qi][j] == sims[j].second);
    }
  }
}

TEST_CASE("top-k on an underfilled bank demands warm-up") {
  FeatureBank bank(16, 3);
  Rng rng(2);
  bank.push(rand_tensor(rng, {2, 3}));
  CHECK_THROWS_WITH_AS(bank.topk_indices(rand_tensor(rng, {1, 3}), 3),
                       doctest::Contains("warm the bank up"), std::runtime_error);
  CHECK_NOTHROW(bank.topk_indices(rand_tensor(rng, {1, 3}), 2));
}

TEST_CASE("mask plan zeroes exactly round(rate*d) coordinates per row") {
  Rng rng(3);
  FaConfig cfg;
  cfg.method = FaMethod::Mask;
  cfg.k = 3;
  cfg.mask_rate = 0.2;
  const std::size_t b = 16, d = 37;  // round(0.2*37) = 7
  Tensor z = rand_tensor(rng, {b, d});
  FaPlan plan = plan_fa(cfg, z, nullptr, rng);
  REQUIRE(plan.k == 3);
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor out = apply_fa_raw(plan, z, c);
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t zeros = 0;
      for (std::size_t j = 0; j < d; ++j) {
        if (plan.masks[c].at(i, j) == 0.0) {
          ++zeros;
          CHECK(out.at(i, j) == 0.0);
        } else {
          // retained coordinates are bitwise untouched
          CHECK(out.at(i, j) == z.at(i, j));
        }
      }
      CHECK(zeros == 7);
    }
  }
}

TEST_CASE("mask rates that floor to zero or to the whole row are rejected") {
  Rng rng(4);
  Tensor z = rand_tensor(rng, {2, 4});
  FaConfig cfg;
  cfg.method = FaMethod::Mask;
  cfg.mask_rate = 0.05;  // round(0.05*4) = 0
  CHECK_THROWS_AS(plan_fa(cfg, z, nullptr, rng), std::invalid_argument);
  cfg.mask_rate = 0.9;  // round(0.9*4) = 4 == d
  CHECK_THROWS_AS(plan_fa(cfg, z, nullptr, rng), std::invalid_argument);
  cfg.mask_rate = 0.5;
  CHECK_NOTHROW(plan_fa(cfg, z, nullptr, rng));
}

TEST_CASE("mixup lambda is uniform on [0.85, 1): mean within 1% over 1e5 draws") {
  Rng rng(5);
  FaConfig cfg;
  cfg.method = FaMethod::GaussianNoise;
  cfg.alpha = 0.85;
  const std::size_t b = 500;
  double sum = 0.0, lo = 1.0, hi = 0.0;
  std::size_t count = 0;
  Tensor z({b, 4}, 0.1);
  for (int rep = 0; rep < 200; ++rep) {  // 200 * 500 = 1e5 draws
    FaPlan plan = plan_fa(cfg, z, nullptr, rng);
    for (double l : plan.lambdas[0].data) {
      sum += l;
      lo = std::min(lo, l);
      hi = std::max(hi, l);
      ++count;
    }
  }
  REQUIRE(count == 100000);
  const double mean = sum / count;
  CHECK(std::abs(mean - 0.925) < 0.01 * 0.925);
  CHECK(lo >= 0.85);
  CHECK(hi < 1.0);
  MESSAGE("lambda mean ", mean);
}

TEST_CASE("gaussian noise draws have the configured spread") {
  Rng rng(6);
  FaConfig cfg;
  cfg.method = FaMethod::GaussianNoise;
  cfg.gaussian_sigma = 0.2;
  Tensor z({100, 50}, 0.0);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (int rep = 0; rep < 20; ++rep) {
    FaPlan plan = plan_fa(cfg, z, nullptr, rng);
    for (double v : plan.noise[0].data) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.005);
  CHECK(sd == doctest::Approx(0.2).epsilon(0.02));
}

TEST_CASE("mixup recomposition: f_aug = lambda*f + (1-lambda)*n exactly") {
  Rng rng(8);
  FeatureBank bank(32, 5);
  bank.push(rand_tensor(rng, {20, 5}));
  for (FaMethod m : {FaMethod::NNNoise, FaMethod::BatchNoise, FaMethod::GaussianNoise}) {
    FaConfig cfg;
    cfg.method = m;
    cfg.k = 2;
    Tensor z = rand_tensor(rng, {6, 5});
    FaPlan plan = plan_fa(cfg, z, &bank, rng);
    for (std::size_t c = 0; c < 2; ++c) {
      Tensor out = apply_fa_raw(plan, z, c);
      for (std::size_t i = 0; i < 6; ++i) {
        const double lam = plan.lambdas[c].data[i];
        for (std::size_t j = 0; j < 5; ++j) {
          const double noise = m == FaMethod::BatchNoise ? z.at(plan.partner[c][i], j)
                                                         : plan.noise[c].at(i, j);
          CHECK(out.at(i, j) ==
                doctest::Approx(lam * z.at(i, j) + (1.0 - lam) * noise).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("nn replacement returns the rank-c neighbor for copy c") {
  Rng rng(9);
  FeatureBank bank(16, 4);
  bank.push(rand_tensor(rng, {10, 4}));
  FaConfig cfg;
  cfg.method = FaMethod::NN;
  cfg.k = 3;
  Tensor z = rand_tensor(rng, {5, 4});
  FaPlan plan = plan_fa(cfg, z, &bank, rng);
  auto ranks = bank.topk_indices(z, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor out = apply_fa_raw(plan, z, c);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(out.at(i, j) == bank.storage().at(ranks[i][c], j));
  }
}

TEST_CASE("batch noise partners never point at the row itself") {
  Rng rng(10);
  FaConfig cfg;
  cfg.method = FaMethod::BatchNoise;
  cfg.k = 4;
  Tensor z = rand_tensor(rng, {2, 3});
  for (int rep = 0; rep < 200; ++rep) {
    FaPlan plan = plan_fa(cfg, z, nullptr, rng);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < 2; ++i) CHECK(plan.partner[c][i] != i);
  }
  Tensor single({1, 3}, 0.5);
  CHECK_THROWS_AS(plan_fa(cfg, single, nullptr, rng), std::invalid_argument);
}

TEST_CASE("node application equals raw application on values") {
  Rng rng(11);
  FeatureBank bank(16, 4);
  bank.push(rand_tensor(rng, {12, 4}));
  for (FaMethod m : {FaMethod::Mask, FaMethod::NN, FaMethod::NNNoise, FaMethod::BatchNoise,
                     FaMethod::GaussianNoise}) {
    FaConfig cfg;
    cfg.method = m;
    cfg.k = 2;
    cfg.mask_rate = 0.5;
    Tensor z = rand_tensor(rng, {4, 4});
    FaPlan plan = plan_fa(cfg, z, &bank, rng);
    for (std::size_t c = 0; c < 2; ++c) {
      Tensor raw = apply_fa_raw(plan, z, c);
      Val node = apply_fa_node(plan, constant(z), c);
      REQUIRE(raw.same_shape(node->v));
      for (std::size_t i = 0; i < raw.numel(); ++i)
        CHECK(node->v.data[i] == doctest::Approx(raw.data[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("node application keeps mask and mixup differentiable") {
  PrecisionGuard guard(Precision::f64);
  Rng rng(12);
  FeatureBank bank(16, 4);
  bank.push(rand_tensor(rng, {12, 4}));
  for (FaMethod m : {FaMethod::Mask, FaMethod::NNNoise, FaMethod::BatchNoise,
                     FaMethod::GaussianNoise}) {
    FaConfig cfg;
    cfg.method = m;
    cfg.mask_rate = 0.5;
    Tensor z0 = rand_tensor(rng, {4, 4});
    Rng plan_rng(99);
    FaPlan plan = plan_fa(cfg, z0, &bank, plan_rng);
    Val z = parameter(z0);
    Tensor w = rand_tensor(rng, {4, 4});
    const double err =
        gradcheck([&] { return mean_all(mul(apply_fa_node(plan, z, 0), constant(w))); }, {z});
    CHECK(err < 1e-6);
  }
  // NN replacement is a constant: no gradient path back to z
  FaConfig cfg;
  cfg.method = FaMethod::NN;
  Rng plan_rng(100);
  Tensor z0 = rand_tensor(rng, {4, 4});
  FaPlan plan = plan_fa(cfg, z0, &bank, plan_rng);
  Val z = parameter(z0);
  CHECK_FALSE(apply_fa_node(plan, z, 0)->needs_grad);
}

TEST_CASE("method names round-trip and config validates") {
  for (const char* name : {"none", "mask", "nn", "nn_noise", "batch_noise", "gaussian_noise"})
    CHECK(fa_method_name(fa_method_from(name)) == name);
  CHECK_THROWS_AS(fa_method_from("dropout"), std::invalid_argument);

  FaConfig cfg;
  cfg.method = FaMethod::Mask;
  cfg.k = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.k = 1;
  cfg.mask_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.mask_rate = 0.2;
  cfg.alpha = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.alpha = 0.85;
  cfg.gaussian_sigma = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.gaussian_sigma = 0.2;
  CHECK_NOTHROW(cfg.validate());

  FaConfig none;  // inert without a method, whatever the other fields say
  none.k = 0;
  CHECK_NOTHROW(none.validate());
}

TEST_CASE("plans need a bank only for the nn family") {
  Rng rng(13);
  Tensor z = rand_tensor(rng, {3, 4});
  FaConfig cfg;
  cfg.method = FaMethod::NN;
  CHECK(cfg.needs_bank());
  CHECK_THROWS_AS(plan_fa(cfg, z, nullptr, rng), std::invalid_argument);
  cfg.method = FaMethod::NNNoise;
  CHECK(cfg.needs_bank());
  cfg.method = FaMethod::GaussianNoise;
  CHECK_FALSE(cfg.needs_bank());
  CHECK_NOTHROW(plan_fa(cfg, z, nullptr, rng));
  cfg.method = FaMethod::None;
  FaPlan plan = plan_fa(cfg, z, nullptr, rng);
  CHECK(plan.k == 0);
}
