#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "facl/config.hpp"
#include "facl/data.hpp"
#include "facl/nets.hpp"
#include "facl/optim.hpp"

namespace facl {

/// Eval-mode encoder forward over a whole dataset, batched. Parameters are
/// only read; nothing is trained.
inline Tensor encode_vectors(const EncoderSpec& spec, const ModelParams& enc, const Tensor& x,
                             std::size_t batch = 256) {
  const std::size_t n = x.size(0), d = x.size(1);
  Tensor out;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t b = std::min(batch, n - start);
    Tensor xb({b, d});
    std::copy(x.data.begin() + start * d, x.data.begin() + (start + b) * d, xb.data.begin());
    Val h = forward_encoder("enc", spec, enc, constant(xb), /*train=*/false);
    if (out.numel() == 0) out = Tensor({n, h->v.size(1)});
    std::copy(h->v.data.begin(), h->v.data.end(), out.data.begin() + start * h->v.size(1));
  }
  return out;
}

inline Tensor encode_images(const EncoderSpec& spec, const ModelParams& enc,
                            const std::vector<Image>& images, const std::array<double, 3>& mean,
                            const std::array<double, 3>& sd, std::size_t batch = 64) {
  const std::size_t n = images.size();
  Tensor out;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t b = std::min(batch, n - start);
    std::vector<Image> slice(images.begin() + start, images.begin() + start + b);
    Tensor xb;
    image_to_rows(slice, xb, mean, sd);
    Val h = forward_encoder("enc", spec, enc, constant(xb), /*train=*/false);
    if (out.numel() == 0) out = Tensor({n, h->v.size(1)});
    std::copy(h->v.data.begin(), h->v.data.end(), out.data.begin() + start * h->v.size(1));
  }
  return out;
}

inline std::size_t argmax_row(const Tensor& t, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < t.size(1); ++j)
    if (t.at(r, j) > t.at(r, best)) best = j;
  return best;
}

/// Trains one linear layer on fixed features with SGD momentum and step decay
/// at the configured milestone epochs. Returns top-1 test accuracy.
inline double linear_probe_features(const Tensor& train_x, const std::vector<int>& train_y,
                                    const Tensor& test_x, const std::vector<int>& test_y,
                                    std::size_t n_classes, const ProbeConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = train_y.size(), d = train_x.size(1);
  Rng rng(seed);
  Val w = parameter(xavier_uniform({d, n_classes}, d, n_classes, rng));
  Val b = parameter(Tensor({n_classes}, 0.0));

  OptimConfig oc;
  oc.base_lr = cfg.lr;
  oc.momentum = cfg.momentum;
  oc.weight_decay = cfg.weight_decay;
  oc.lars = false;
  oc.clip_norm = 0.0;
  Optimizer opt({{"probe.w", w}, {"probe.b", b}}, oc);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  double lr = cfg.lr;
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    if (std::find(cfg.milestones.begin(), cfg.milestones.end(), ep) != cfg.milestones.end())
      lr *= cfg.gamma;
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, n - start);
      Tensor xb({bs, d});
      std::vector<std::size_t> targets(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t r = order[start + i];
        std::copy(train_x.data.begin() + r * d, train_x.data.begin() + (r + 1) * d,
                  xb.data.begin() + i * d);
        targets[i] = static_cast<std::size_t>(train_y[r]);
      }
      Val logits = add_bias(matmul(constant(xb), w), b);
      Val loss = cross_entropy_rows(logits, targets);
      opt.zero_grad();
      backward(loss);
      opt.step(lr);
    }
  }

  Val logits = add_bias(matmul(constant(test_x), w), b);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test_y.size(); ++i)
    if (argmax_row(logits->v, i) == static_cast<std::size_t>(test_y[i])) ++hits;
  return static_cast<double>(hits) / test_y.size();
}

/// Cosine-similarity k nearest neighbor vote. Ties on similarity prefer the
/// lower train index; ties on votes prefer the smaller label.
inline double knn_probe_features(const Tensor& train_x, const std::vector<int>& train_y,
                                 const Tensor& test_x, const std::vector<int>& test_y,
                                 std::size_t k) {
  const std::size_t n = train_y.size(), d = train_x.size(1);
  require(k >= 1, "knn_probe: k must be at least 1");
  require(k <= n, "knn_probe: k exceeds the train set size");

  auto norm_rows = [](const Tensor& t) {
    Tensor out = t;
    for (std::size_t i = 0; i < t.size(0); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < t.size(1); ++j) s += t.at(i, j) * t.at(i, j);
      s = std::max(std::sqrt(s), 1e-12);
      for (std::size_t j = 0; j < t.size(1); ++j) out.at(i, j) /= s;
    }
    return out;
  };
  const Tensor tr = norm_rows(train_x);
  const Tensor te = norm_rows(test_x);

  std::size_t hits = 0;
  std::vector<std::pair<double, std::size_t>> sims(n);
  int max_label = 0;
  for (int y : train_y) max_label = std::max(max_label, y);
  std::vector<std::size_t> votes(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < test_y.size(); ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += te.at(i, j) * tr.at(r, j);
      sims[r] = {s, r};
    }
    std::partial_sort(sims.begin(), sims.begin() + k, sims.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::fill(votes.begin(), votes.end(), 0);
    for (std::size_t r = 0; r < k; ++r) ++votes[static_cast<std::size_t>(train_y[sims[r].second])];
    std::size_t pred = 0;
    for (std::size_t c = 1; c < votes.size(); ++c)
      if (votes[c] > votes[pred]) pred = c;
    if (pred == static_cast<std::size_t>(test_y[i])) ++hits;
  }
  return static_cast<double>(hits) / test_y.size();
}

}  // namespace facl
