#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "facl/graph.hpp"
#include "facl/ops.hpp"
#include "facl/rng.hpp"
#include "facl/tensor.hpp"

namespace facl {

/// Fixed-capacity FIFO ring of l2-normalized feature rows with exact top-k
/// cosine retrieval.
class FeatureBank {
 public:
  FeatureBank(std::size_t capacity, std::size_t dim)
      : capacity_(capacity), dim_(dim), rows_({capacity, dim}) {
    require(capacity > 0 && dim > 0, "FeatureBank: capacity and dim must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t fill() const { return fill_; }
  std::size_t cursor() const { return cursor_; }
  const Tensor& storage() const { return rows_; }

  /// Rows are normalized on write; when full, the oldest rows are overwritten
  /// in insertion order.
  void push(const Tensor& batch) {
    require(batch.ndim() == 2 && batch.size(1) == dim_, "FeatureBank::push: dimension mismatch");
    for (std::size_t i = 0; i < batch.size(0); ++i) {
      double n = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) n += batch.at(i, j) * batch.at(i, j);
      n = std::max(std::sqrt(n), 1e-12);
      for (std::size_t j = 0; j < dim_; ++j) rows_.at(cursor_, j) = stored(batch.at(i, j) / n);
      cursor_ = (cursor_ + 1) % capacity_;
      if (fill_ < capacity_) ++fill_;
    }
  }

  /// Indices of the k most cosine-similar stored rows per query row,
  /// descending similarity, ties broken by lower storage index.
  std::vector<std::vector<std::size_t>> topk_indices(const Tensor& query, std::size_t k) const {
    require(query.ndim() == 2 && query.size(1) == dim_, "FeatureBank::topk: dimension mismatch");
    if (fill_ < k)
      throw std::runtime_error("FeatureBank::topk: bank holds " + std::to_string(fill_) +
                               " rows but " + std::to_string(k) +
                               " are requested; warm the bank up with more steps first");
    const std::size_t b = query.size(0);
    std::vector<std::vector<std::size_t>> out(b);
    std::vector<std::pair<double, std::size_t>> sims(fill_);
    for (std::size_t i = 0; i < b; ++i) {
      double qn = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) qn += query.at(i, j) * query.at(i, j);
      qn = std::max(std::sqrt(qn), 1e-12);
      for (std::size_t r = 0; r < fill_; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) s += query.at(i, j) * rows_.at(r, j);
        sims[r] = {s / qn, r};
      }
      std::partial_sort(sims.begin(), sims.begin() + k, sims.end(),
                        [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                        });
      out[i].resize(k);
      for (std::size_t r = 0; r < k; ++r) out[i][r] = sims[r].second;
    }
    return out;
  }

  Tensor row(std::size_t r) const {
    Tensor t({1, dim_});
    for (std::size_t j = 0; j < dim_; ++j) t.data[j] = rows_.at(r, j);
    return t;
  }

  void load(Tensor rows, std::size_t fill, std::size_t cursor) {
    require(rows.same_shape(rows_), "FeatureBank::load: shape mismatch");
    require(fill <= capacity_ && cursor < capacity_, "FeatureBank::load: bad meta");
    rows_ = std::move(rows);
    fill_ = fill;
    cursor_ = cursor;
  }

 private:
  std::size_t capacity_, dim_;
  Tensor rows_;
  std::size_t cursor_ = 0, fill_ = 0;
};

enum class FaMethod { None, Mask, NN, NNNoise, BatchNoise, GaussianNoise };

inline FaMethod fa_method_from(const std::string& s) {
  if (s == "none") return FaMethod::None;
  if (s == "mask") return FaMethod::Mask;
  if (s == "nn") return FaMethod::NN;
  if (s == "nn_noise") return FaMethod::NNNoise;
  if (s == "batch_noise") return FaMethod::BatchNoise;
  if (s == "gaussian_noise") return FaMethod::GaussianNoise;
  throw std::invalid_argument("unknown fa method: " + s);
}

inline std::string fa_method_name(FaMethod m) {
  switch (m) {
    case FaMethod::None: return "none";
    case FaMethod::Mask: return "mask";
    case FaMethod::NN: return "nn";
    case FaMethod::NNNoise: return "nn_noise";
    case FaMethod::BatchNoise: return "batch_noise";
    case FaMethod::GaussianNoise: return "gaussian_noise";
  }
  return "?";
}

struct FaConfig {
  FaMethod method = FaMethod::None;
  std::size_t k = 1;
  double mask_rate = 0.2;
  double alpha = 0.85;          // mixup lambda ~ U(alpha, 1)
  double gaussian_sigma = 0.2;  // noise standard deviation
  std::size_t bank_capacity = 4096;

  void validate() const {
    if (method == FaMethod::None) return;
    require(k >= 1, "FaConfig: k must be >= 1");
    require(mask_rate > 0.0 && mask_rate < 1.0, "FaConfig: mask_rate must be in (0,1)");
    require(alpha >= 0.0 && alpha < 1.0, "FaConfig: alpha must be in [0,1)");
    require(gaussian_sigma >= 0.0, "FaConfig: gaussian_sigma must be >= 0");
  }

  bool needs_bank() const { return method == FaMethod::NN || method == FaMethod::NNNoise; }
};

/// Sampled randomness for one step's FA application. Planning happens on the
/// detached feature values; the same plan can then be applied to a raw tensor
/// (stop-gradient path) or to a live graph node (stop-gradient ablation).
struct FaPlan {
  FaMethod method = FaMethod::None;
  std::size_t k = 0;
  std::vector<Tensor> masks;                  // Mask: 0/1 per copy
  std::vector<Tensor> lambdas;                // mixups: [b] per copy
  std::vector<Tensor> noise;                  // NN/NNNoise/Gaussian: [b x d] per copy
  std::vector<std::vector<std::size_t>> partner;  // BatchNoise: per copy
};

inline FaPlan plan_fa(const FaConfig& cfg, const Tensor& z, const FeatureBank* bank, Rng& rng) {
  cfg.validate();
  require(z.ndim() == 2, "plan_fa: expects [b x d]");
  const std::size_t b = z.size(0), d = z.size(1);
  FaPlan plan;
  plan.method = cfg.method;
  plan.k = cfg.method == FaMethod::None ? 0 : cfg.k;
  if (cfg.method == FaMethod::None) return plan;

  std::vector<std::vector<std::size_t>> nn;
  if (cfg.needs_bank()) {
    require(bank != nullptr, "plan_fa: method needs a feature bank");
    nn = bank->topk_indices(z, cfg.k);
  }
  if (cfg.method == FaMethod::Mask) {
    const std::size_t zeros = static_cast<std::size_t>(std::llround(cfg.mask_rate * d));
    require(zeros > 0 && zeros < d, "plan_fa: mask zero count degenerates");
    for (std::size_t c = 0; c < cfg.k; ++c) {
      Tensor m({b, d}, 1.0);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t idx : rng.sample_indices(d, zeros)) m.at(i, idx) = 0.0;
      plan.masks.push_back(std::move(m));
    }
    return plan;
  }
  if (cfg.method == FaMethod::BatchNoise) require(b >= 2, "plan_fa: batch noise needs batch >= 2");

  for (std::size_t c = 0; c < cfg.k; ++c) {
    if (cfg.method != FaMethod::NN) {
      Tensor lam({b});
      for (std::size_t i = 0; i < b; ++i) lam.data[i] = rng.uniform(cfg.alpha, 1.0);
      plan.lambdas.push_back(std::move(lam));
    }
    switch (cfg.method) {
      case FaMethod::NN:
      case FaMethod::NNNoise: {
        Tensor nb({b, d});
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < d; ++j) nb.at(i, j) = bank->storage().at(nn[i][c], j);
        plan.noise.push_back(std::move(nb));
        break;
      }
      case FaMethod::BatchNoise: {
        std::vector<std::size_t> p(b);
        for (std::size_t i = 0; i < b; ++i) {
          std::size_t r = rng.below(b - 1);
          p[i] = r >= i ? r + 1 : r;
        }
        plan.partner.push_back(std::move(p));
        break;
      }
      case FaMethod::GaussianNoise: {
        Tensor nb({b, d});
        for (double& v : nb.data) v = rng.normal(0.0, cfg.gaussian_sigma);
        plan.noise.push_back(std::move(nb));
        break;
      }
      default: break;
    }
  }
  return plan;
}

/// f_aug = lambda * f + (1 - lambda) * n, applied per row.
inline Tensor mix_rows(const Tensor& f, const Tensor& lam, const Tensor& n) {
  Tensor out = f;
  const std::size_t b = f.size(0), d = f.size(1);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.at(i, j) = lam.data[i] * f.at(i, j) + (1.0 - lam.data[i]) * n.at(i, j);
  out.quantize();
  return out;
}

/// Apply copy c of the plan to detached features.
inline Tensor apply_fa_raw(const FaPlan& plan, const Tensor& z, std::size_t c) {
  require(c < plan.k, "apply_fa_raw: copy index out of range");
  const std::size_t b = z.size(0), d = z.size(1);
  switch (plan.method) {
    case FaMethod::Mask: {
      Tensor out = z;
      for (std::size_t i = 0; i < b * d; ++i) out.data[i] *= plan.masks[c].data[i];
      return out;
    }
    case FaMethod::NN:
      return plan.noise[c];
    case FaMethod::NNNoise:
    case FaMethod::GaussianNoise:
      return mix_rows(z, plan.lambdas[c], plan.noise[c]);
    case FaMethod::BatchNoise: {
      Tensor n({b, d});
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) n.at(i, j) = z.at(plan.partner[c][i], j);
      return mix_rows(z, plan.lambdas[c], n);
    }
    default: throw std::logic_error("apply_fa_raw: no plan");
  }
}

/// Apply copy c of the plan on the live graph. Mask and mixup stay
/// differentiable; NN replacement is constant by nature.
inline Val apply_fa_node(const FaPlan& plan, const Val& z, std::size_t c) {
  require(c < plan.k, "apply_fa_node: copy index out of range");
  switch (plan.method) {
    case FaMethod::Mask:
      return mul(z, constant(plan.masks[c]));
    case FaMethod::NN:
      return constant(plan.noise[c]);
    case FaMethod::NNNoise:
    case FaMethod::GaussianNoise: {
      Tensor rest = plan.noise[c];
      const std::size_t b = rest.size(0), d = rest.size(1);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) rest.at(i, j) *= 1.0 - plan.lambdas[c].data[i];
      return add(mul_rows(z, plan.lambdas[c]), constant(rest));
    }
    case FaMethod::BatchNoise: {
      Tensor one_minus = plan.lambdas[c];
      for (double& v : one_minus.data) v = 1.0 - v;
      return add(mul_rows(z, plan.lambdas[c]),
                 mul_rows(gather_rows(z, plan.partner[c]), one_minus));
    }
    default: throw std::logic_error("apply_fa_node: no plan");
  }
}

}  // namespace facl
