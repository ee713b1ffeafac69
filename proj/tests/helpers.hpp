#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "facl/facl.hpp"

namespace facl::testing {

/// Pins the global storage precision for a scope.
struct PrecisionGuard {
  Precision saved;
  explicit PrecisionGuard(Precision p) : saved(precision()) { precision() = p; }
  ~PrecisionGuard() { precision() = saved; }
};

inline Tensor rand_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0,
                          double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Random rows guaranteed to have l2 norm comfortably above zero.
inline Tensor rand_rows_safe(Rng& rng, std::size_t b, std::size_t d) {
  Tensor t = rand_tensor(rng, {b, d});
  for (std::size_t i = 0; i < b; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < d; ++j) n += t.at(i, j) * t.at(i, j);
    if (std::sqrt(n) < 0.3) t.at(i, 0) += 1.0;
  }
  return t;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
}

/// Central-finite-difference check of every element of every leaf. `build`
/// must reconstruct the loss graph from the leaves' current values on each
/// call. Returns the largest relative error seen.
inline double gradcheck(const std::function<Val()>& build, const std::vector<Val>& leaves,
                        double h = 1e-5) {
  for (const Val& l : leaves) l->zero_grad();
  Val loss = build();
  backward(loss);

  double worst = 0.0;
  for (const Val& leaf : leaves) {
    const Tensor analytic = leaf->g.data.empty() ? Tensor(leaf->v.shape) : leaf->g;
    for (std::size_t i = 0; i < leaf->v.numel(); ++i) {
      const double saved = leaf->v.data[i];
      leaf->v.data[i] = saved + h;
      const double fp = build()->v.data[0];
      leaf->v.data[i] = saved - h;
      const double fm = build()->v.data[0];
      leaf->v.data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic.data[i], numeric));
    }
  }
  return worst;
}

inline double check_op_grads(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  auto run = [&](const std::function<Val()>& f, const std::vector<Val>& leaves) {
    worst = std::max(worst, gradcheck(f, leaves));
  };

  {  // elementwise chain: add, sub, mul, scale, add_scalar
    Val a = parameter(rand_tensor(rng, {3, 4}));
    Val b = parameter(rand_tensor(rng, {3, 4}));
    run([&] { return sum_all(mul(add(a, b), sub(scale(a, 1.3), add_scalar(b, 0.7)))); }, {a, b});
  }
  {  // relu away from the kink
    Tensor t = rand_tensor(rng, {4, 5});
    for (double& v : t.data)
      if (std::abs(v) < 1e-2) v += 0.5;
    Val a = parameter(t);
    Val c = constant(rand_tensor(rng, {4, 5}));
    run([&] { return mean_all(mul(relu(a), c)); }, {a});
  }
  {  // add_bias and mul_rows
    Val x = parameter(rand_tensor(rng, {4, 3}));
    Val b = parameter(rand_tensor(rng, {3}));
    Tensor col = rand_tensor(rng, {4});
    Val c = constant(rand_tensor(rng, {4, 3}));
    run([&] { return sum_all(mul(mul_rows(add_bias(x, b), col), c)); }, {x, b});
  }
  {  // matmul
    Val a = parameter(rand_tensor(rng, {3, 4}));
    Val b = parameter(rand_tensor(rng, {4, 5}));
    Val c = constant(rand_tensor(rng, {3, 5}));
    run([&] { return mean_all(mul(matmul(a, b), c)); }, {a, b});
  }
  {  // matmul_nt
    Val a = parameter(rand_tensor(rng, {3, 4}));
    Val b = parameter(rand_tensor(rng, {5, 4}));
    Val c = constant(rand_tensor(rng, {3, 5}));
    run([&] { return mean_all(mul(matmul_nt(a, b), c)); }, {a, b});
  }
  {  // gather_rows with a repeated index, through reshape
    Val x = parameter(rand_tensor(rng, {3, 4}));
    Val c = constant(rand_tensor(rng, {2, 8}));
    run([&] { return sum_all(mul(reshape(gather_rows(x, {0, 2, 1, 2}), {2, 8}), c)); }, {x});
  }
  {  // row_dot
    Val a = parameter(rand_tensor(rng, {5, 3}));
    Val b = parameter(rand_tensor(rng, {5, 3}));
    run([&] { return mean_all(row_dot(a, b)); }, {a, b});
  }
  {  // l2_normalize_rows
    Val a = parameter(rand_rows_safe(rng, 4, 6));
    Val c = constant(rand_tensor(rng, {4, 6}));
    run([&] { return mean_all(mul(l2_normalize_rows(a), c)); }, {a});
  }
  {  // batch_norm, train statistics (stats update disabled so rebuilds agree)
    Val x = parameter(rand_tensor(rng, {6, 4}));
    Val gamma = parameter(rand_tensor(rng, {4}, 0.5, 1.5));
    Val beta = parameter(rand_tensor(rng, {4}));
    BnState st(4);
    Val c = constant(rand_tensor(rng, {6, 4}));
    run([&] { return mean_all(mul(batch_norm(x, gamma, beta, st, true, false), c)); },
        {x, gamma, beta});
  }
  {  // batch_norm, eval statistics
    Val x = parameter(rand_tensor(rng, {5, 3}));
    Val gamma = parameter(rand_tensor(rng, {3}, 0.5, 1.5));
    Val beta = parameter(rand_tensor(rng, {3}));
    BnState st(3);
    st.running_mean = rand_tensor(rng, {3});
    st.running_var = rand_tensor(rng, {3}, 0.5, 2.0);
    Val c = constant(rand_tensor(rng, {5, 3}));
    run([&] { return mean_all(mul(batch_norm(x, gamma, beta, st, false), c)); }, {x, gamma, beta});
  }
  {  // conv2d
    Val x = parameter(rand_tensor(rng, {2, 2, 4, 4}));
    Val k = parameter(rand_tensor(rng, {3, 2, 3, 3}));
    Val c = constant(rand_tensor(rng, {2, 3, 4, 4}));
    run([&] { return mean_all(mul(conv2d(x, k), c)); }, {x, k});
  }
  {  // avg_pool2
    Val x = parameter(rand_tensor(rng, {2, 3, 4, 4}));
    Val c = constant(rand_tensor(rng, {2, 3, 2, 2}));
    run([&] { return sum_all(mul(avg_pool2(x), c)); }, {x});
  }
  {  // cross_entropy_rows
    Val logits = parameter(rand_tensor(rng, {5, 7}, -2.0, 2.0));
    run([&] { return cross_entropy_rows(logits, {0, 3, 6, 2, 2}); }, {logits});
  }
  {  // info_nce, both candidate sets
    Val a = parameter(rand_rows_safe(rng, 4, 6));
    Val p = parameter(rand_rows_safe(rng, 4, 6));
    run([&] { return info_nce(a, p, 0.2, false); }, {a, p});
    run([&] { return info_nce(a, p, 0.5, true); }, {a, p});
  }
  {  // byol_similarity
    Val a = parameter(rand_rows_safe(rng, 4, 6));
    Val t = parameter(rand_rows_safe(rng, 4, 6));
    run([&] { return byol_similarity(a, t); }, {a, t});
  }
  {  // combine
    Val a = parameter(rand_tensor(rng, {3, 3}));
    Tensor cc = rand_tensor(rng, {3, 3});
    run([&] {
      std::vector<Val> terms{mean_all(a), sum_all(mul(a, a)), mean_all(mul(a, constant(cc)))};
      return combine(terms, CombineMode::Free);
    }, {a});
  }
  return worst;
}

/// One composed layout as a function of the encoder/projector/predictor
/// parameters, with the FA randomness re-derived from a fixed seed on every
/// rebuild. The discrimination layouts are checked with stop-grad off: with
/// it on, the loss still depends on the shared online parameters through the
/// positive branch, so the total derivative a finite difference measures is
/// intentionally not what backprop computes (that contract is covered by the
/// exact-zero stop-gradient tests instead). Draws where a row lands near the
/// l2-normalization singularity (gradient magnitudes blowing past 1e3) are
/// ill-conditioned for finite differences and are reseeded.
inline double check_layout_grads(Layout layout, FaMethod fa, std::uint64_t seed) {
  for (int attempt = 0; attempt < 8; ++attempt, seed += 9973) {
    Rng init(seed);
    LayoutSpec spec;
    spec.layout = layout;
    spec.stop_grad = false;
    spec.fa.method = fa;
    spec.fa.k = 2;
    spec.fa.bank_capacity = 16;
    spec.tau = 0.2;

    Models m = build_models(mlp_encoder(5, {6}, 4), build_projector("strong", 4, 6, 4),
                            build_predictor(4, 6, 4), spec, init);
    FeatureBank bank(16, 4);
    if (spec.fa.needs_bank()) bank.push(rand_tensor(init, {8, 4}));

    const Tensor va = rand_tensor(init, {4, 5});
    const Tensor vp = rand_tensor(init, {4, 5});

    std::vector<Val> leaves;
    for (const auto& [name, p] : m.trainable()) leaves.push_back(p);

    auto build = [&]() {
      Rng step_rng(seed ^ 0x5bf03635);
      StepOutput out = forward_step(spec, m, va, vp, &bank, step_rng);
      return out.total;
    };

    for (const Val& l : leaves) l->zero_grad();
    backward(build());
    double gmax = 0.0;
    for (const Val& l : leaves)
      for (double v : l->g.data) gmax = std::max(gmax, std::abs(v));
    if (gmax > 1e3) continue;

    return gradcheck(build, leaves);
  }
  throw std::runtime_error("check_layout_grads: no well-conditioned draw found");
}

/// Gradient suite shared by the unit tests and the acceptance gate: every
/// differentiable operation plus the composed layouts, `seeds` seeds each.
/// Returns the worst relative error across everything.
inline double gradient_suite(std::size_t seeds, double* worst_layout_out = nullptr) {
  PrecisionGuard guard(Precision::f64);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < seeds; ++s) worst = std::max(worst, check_op_grads(s));

  double worst_layout = 0.0;
  const std::vector<std::pair<Layout, FaMethod>> cases = {
      {Layout::Basic, FaMethod::Mask},         {Layout::ParallelPred, FaMethod::GaussianNoise},
      {Layout::PostPred, FaMethod::BatchNoise}, {Layout::PrePred, FaMethod::NNNoise},
      {Layout::ByolFa, FaMethod::NN},
  };
  for (std::uint64_t s = 0; s < seeds; ++s)
    for (const auto& [layout, fa] : cases)
      worst_layout = std::max(worst_layout, check_layout_grads(layout, fa, 101 + s));
  if (worst_layout_out) *worst_layout_out = worst_layout;
  return std::max(worst, worst_layout);
}

}  // namespace facl::testing
