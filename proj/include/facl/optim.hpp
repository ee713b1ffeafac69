#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "facl/layouts.hpp"
#include "facl/nets.hpp"

namespace facl {

struct OptimConfig {
  double base_lr = 0.4;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  bool lars = true;
  double lars_trust_coef = 0.02;
  double lars_eps = 1e-9;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::size_t accum_steps = 1;
  std::size_t warmup_epochs = 2;
  std::size_t total_epochs = 20;

  void validate() const {
    require(base_lr > 0.0, "OptimConfig: base_lr must be positive");
    require(accum_steps >= 1, "OptimConfig: accum_steps must be >= 1");
    require(momentum >= 0.0 && momentum < 1.0, "OptimConfig: momentum in [0,1)");
  }
};

struct EmaConfig {
  double m_base = 0.99;

  void validate() const { require(m_base > 0.0 && m_base <= 1.0, "EmaConfig: m_base in (0,1]"); }
};

/// Linear ramp to base_lr over the warmup span, cosine decay to zero after.
inline double cosine_warmup_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                               double base_lr) {
  require(warmup_steps < total_steps, "cosine_warmup_lr: warmup must end before total");
  require(step <= total_steps, "cosine_warmup_lr: step out of range");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / warmup_steps;
  const double t = static_cast<double>(step - warmup_steps) / (total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

inline bool lars_excluded(const std::string& name) { return is_bias_or_bn(name); }

inline double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s += v * v;
  return std::sqrt(s);
}

/// Trust-ratio multiplier. Bias and normalization parameters are excluded
/// from both the ratio and weight decay.
inline double lars_local_lr(const std::string& name, const Tensor& w, const Tensor& g,
                            const OptimConfig& cfg) {
  if (lars_excluded(name)) return 1.0;
  const double wn = l2_norm(w);
  const double gn = l2_norm(g);
  return cfg.lars_trust_coef * wn / (gn + cfg.weight_decay * wn + cfg.lars_eps);
}

/// Global gradient norm across all parameters; missing grads count as zero.
inline double global_grad_norm(const std::vector<std::pair<std::string, Val>>& params) {
  double s = 0.0;
  for (const auto& [name, p] : params) {
    if (p->g.numel() == 0) continue;
    for (double v : p->g.data) s += v * v;
  }
  return std::sqrt(s);
}

/// Rescales every gradient so their global norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(const std::vector<std::pair<std::string, Val>>& params,
                             double max_norm) {
  require(max_norm > 0.0, "clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& [name, p] : params) {
      if (p->g.numel() == 0) continue;
      for (double& v : p->g.data) v *= f;
    }
  }
  return norm;
}

/// SGD with momentum, optional weight decay and LARS trust scaling. Velocity
/// buffers are part of the checkpointed state.
class Optimizer {
 public:
  Optimizer(std::vector<std::pair<std::string, Val>> params, OptimConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    velocity_.reserve(params_.size());
    for (const auto& [name, p] : params_) velocity_.emplace_back(p->v.shape, 0.0);
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p->g = Tensor{};
  }

  /// v <- momentum*v + (g + wd*w); w <- w - lr*local*v
  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& [name, p] = params_[i];
      Tensor& v = velocity_[i];
      Tensor& w = p->v;
      const bool excl = lars_excluded(name);
      const double wd = excl ? 0.0 : cfg_.weight_decay;
      const Tensor g = p->g.numel() ? p->g : Tensor(w.shape, 0.0);
      const double local = cfg_.lars ? lars_local_lr(name, w, g, cfg_) : 1.0;
      for (std::size_t j = 0; j < w.numel(); ++j) {
        v.data[j] = stored(cfg_.momentum * v.data[j] + (g.data[j] + wd * w.data[j]));
        w.data[j] = stored(w.data[j] - lr * local * v.data[j]);
      }
    }
  }

  const std::vector<std::pair<std::string, Val>>& params() const { return params_; }

  std::vector<std::pair<std::string, Tensor>> state() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.emplace_back(params_[i].first, velocity_[i]);
    return out;
  }

  void restore(const std::vector<std::pair<std::string, Tensor>>& st) {
    require(st.size() == params_.size(), "Optimizer::restore: state size mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      require(st[i].first == params_[i].first, "Optimizer::restore: name mismatch " + st[i].first);
      require(st[i].second.same_shape(velocity_[i]), "Optimizer::restore: shape mismatch");
      velocity_[i] = st[i].second;
    }
  }

 private:
  std::vector<std::pair<std::string, Val>> params_;
  std::vector<Tensor> velocity_;
  OptimConfig cfg_;
};

/// Cosine ramp of the target momentum from m_base at step 0 to 1 at the end.
inline double ema_momentum(std::size_t step, std::size_t total, double m_base) {
  require(total > 0 && step <= total, "ema_momentum: step out of range");
  return 1.0 - (1.0 - m_base) * 0.5 * (std::cos(M_PI * static_cast<double>(step) / total) + 1.0);
}

inline void ema_blend(const Tensor& online, Tensor& target, double m) {
  for (std::size_t j = 0; j < target.numel(); ++j)
    target.data[j] = stored(m * target.data[j] + (1.0 - m) * online.data[j]);
}

/// target <- m*target + (1-m)*online over parameters and BN running stats.
inline void ema_update(Models& models, double m) {
  require(models.has_target, "ema_update: model has no target copies");
  auto blend_params = [m](const ModelParams& src, ModelParams& dst) {
    require(src.params.size() == dst.params.size(), "ema_update: parameter count mismatch");
    for (std::size_t i = 0; i < src.params.size(); ++i)
      ema_blend(src.params[i].second->v, dst.params[i].second->v, m);
    require(src.bn.size() == dst.bn.size(), "ema_update: BN state count mismatch");
    auto sit = src.bn.begin();
    for (auto dit = dst.bn.begin(); dit != dst.bn.end(); ++dit, ++sit) {
      ema_blend(sit->second->running_mean, dit->second->running_mean, m);
      ema_blend(sit->second->running_var, dit->second->running_var, m);
    }
  };
  blend_params(models.enc, models.enc_t);
  blend_params(models.proj, models.proj_t);
}

}  // namespace facl
