#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "facl/checkpoint.hpp"
#include "facl/config.hpp"
#include "facl/data.hpp"
#include "facl/dataaug.hpp"
#include "facl/layouts.hpp"
#include "facl/optim.hpp"
#include "facl/probe.hpp"

namespace facl {

constexpr std::array<double, 3> kCifarMean{0.4914, 0.4822, 0.4465};
constexpr std::array<double, 3> kCifarSd{0.2470, 0.2435, 0.2616};

struct MetricsRow {
  std::size_t step = 0, epoch = 0;
  double lr = 0.0, ema_m = 0.0;
  double loss_total = 0.0, loss_original = 0.0, loss_fa_mean = 0.0;
  double grad_norm = 0.0, wall_ms = 0.0;
};

inline std::string metrics_header() {
  return "step,epoch,lr,ema_m,loss_total,loss_original,loss_fa_mean,grad_norm,wall_ms";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
  char buf[320];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", r.step,
                r.epoch, r.lr, r.ema_m, r.loss_total, r.loss_original, r.loss_fa_mean, r.grad_norm,
                r.wall_ms);
  return buf;
}

/// Pre-training loop: two views per sample, layout forward, gradient
/// accumulation, clipping, LARS/SGD update, EMA target update, bank push,
/// one metrics row per optimizer step.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg) : cfg_(std::move(cfg)), train_rng_(0) {
    cfg_.validate();
    precision() = cfg_.run_precision;
    layout_ = cfg_.make_layout();

    Rng init_rng(cfg_.seed);
    models_ = build_models(cfg_.make_encoder(), cfg_.make_projector(), cfg_.make_predictor(),
                           layout_, init_rng);
    if (layout_.fa.needs_bank())
      bank_ = std::make_unique<FeatureBank>(layout_.fa.bank_capacity, cfg_.projector_dim);
    OptimConfig oc = cfg_.optim;
    opt_ = std::make_unique<Optimizer>(models_.trainable(), oc);
    train_rng_ = Rng(cfg_.seed ^ 0x6a09e667f3bcc909ull);

    view_anchor_ = view_pos_ = cfg_.vec_view;
    if (cfg_.data_source == "synthetic") {
      vec_data_ = gen_synthetic_split(cfg_.synthetic, cfg_.synthetic_data_seed);
      vec_sigma_ = column_std(vec_data_.train.x);
    } else {
      img_data_ = load_cifar10(cfg_.cifar_dir);
      auto [a, p] = make_pipeline(cfg_.da_setting);
      pipe_anchor_ = a;
      pipe_pos_ = p;
    }
  }

  const RunConfig& config() const { return cfg_; }
  const LayoutSpec& layout() const { return layout_; }
  Models& models() { return models_; }
  const Models& models() const { return models_; }
  const SplitVectors& vectors() const { return vec_data_; }
  const Cifar10& images() const { return img_data_; }
  const FeatureBank* bank() const { return bank_.get(); }
  std::size_t step() const { return global_step_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }

  /// Per-branch view strengths, used by the augmentation-setting ablation.
  void set_vector_views(const VectorViewCfg& anchor, const VectorViewCfg& positive) {
    view_anchor_ = anchor;
    view_pos_ = positive;
  }

  static std::vector<double> column_std(const Tensor& x) {
    const std::size_t n = x.size(0), d = x.size(1);
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += x.at(i, j);
    for (double& m : mean) m /= n;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x.at(i, j) - mean[j];
        var[j] += c * c;
      }
    std::vector<double> sd(d);
    for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(var[j] / n);
    return sd;
  }

  MetricsRow step_once() {
    precision() = cfg_.run_precision;
    const auto t0 = std::chrono::steady_clock::now();
    require(global_step_ < cfg_.total_steps(), "Trainer: all steps already taken");
    const double lr =
        cosine_warmup_lr(global_step_, cfg_.warmup_steps(), cfg_.total_steps(), cfg_.optim.base_lr);

    opt_->zero_grad();
    double loss_total = 0.0, loss_orig = 0.0, loss_fa = 0.0;
    std::size_t fa_terms = 0;
    std::vector<Tensor> push_rows;
    for (std::size_t micro = 0; micro < cfg_.optim.accum_steps; ++micro) {
      auto [va, vp] = next_views();
      StepOutput out;
      try {
        out = forward_step(layout_, models_, va, vp, bank_.get(), train_rng_);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("Trainer: step " + std::to_string(global_step_ + 1) + " (lr " +
                                 std::to_string(lr) + "): " + e.what());
      }
      const double total = out.total->v.data[0];
      if (!std::isfinite(total))
        throw std::runtime_error("Trainer: non-finite loss " + std::to_string(total) + " at step " +
                                 std::to_string(global_step_ + 1) + " (lr " + std::to_string(lr) +
                                 ")");
      loss_total += total;
      loss_orig += out.loss_original;
      for (double v : out.loss_fa) {
        loss_fa += v;
        ++fa_terms;
      }
      Val scaled = cfg_.optim.accum_steps == 1
                       ? out.total
                       : scale(out.total, 1.0 / static_cast<double>(cfg_.optim.accum_steps));
      backward(scaled);
      if (bank_) push_rows.push_back(out.bank_rows);
    }

    double grad_norm;
    if (cfg_.optim.clip_norm > 0.0)
      grad_norm = clip_grad_norm(opt_->params(), cfg_.optim.clip_norm);
    else
      grad_norm = global_grad_norm(opt_->params());
    opt_->step(lr);

    double m = 0.0;
    if (models_.has_target) {
      m = ema_momentum(global_step_, cfg_.total_steps(), cfg_.ema.m_base);
      ema_update(models_, m);
    }
    if (bank_)
      for (const Tensor& rows : push_rows) bank_->push(rows);
    ++global_step_;

    MetricsRow row;
    row.step = global_step_;
    row.epoch = (global_step_ - 1) / cfg_.steps_per_epoch + 1;
    row.lr = lr;
    row.ema_m = m;
    row.loss_total = loss_total / cfg_.optim.accum_steps;
    row.loss_original = loss_orig / cfg_.optim.accum_steps;
    row.loss_fa_mean = fa_terms ? loss_fa / fa_terms : 0.0;
    row.grad_norm = grad_norm;
    if (!cfg_.deterministic) {
      const auto t1 = std::chrono::steady_clock::now();
      row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    metrics_.push_back(row);
    return row;
  }

  /// Runs every remaining step, streaming metrics.csv and checkpoints into
  /// out_dir. Returns the final checkpoint path.
  std::string run(const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    std::ofstream mf(metrics_path, global_step_ == 0 ? std::ios::trunc : std::ios::app);
    if (!mf) throw std::runtime_error("Trainer: cannot write " + metrics_path);
    if (global_step_ == 0) mf << metrics_header() << "\n";
    while (global_step_ < cfg_.total_steps()) {
      const MetricsRow row = step_once();
      mf << metrics_csv_row(row) << "\n";
      if (cfg_.checkpoint_every && global_step_ % cfg_.checkpoint_every == 0 &&
          global_step_ != cfg_.total_steps()) {
        save_checkpoint(
            (fs::path(out_dir) / ("checkpoint_step" + std::to_string(global_step_) + ".facn"))
                .string(),
            snapshot());
      }
    }
    mf.flush();
    const std::string final_path = (fs::path(out_dir) / "checkpoint_final.facn").string();
    save_checkpoint(final_path, snapshot());
    return final_path;
  }

  CheckpointData snapshot() const {
    CheckpointData ck;
    ck.config_text = cfg_.text;
    ck.precision = cfg_.run_precision == Precision::f32 ? 0 : 1;
    auto add_params = [&ck](const ModelParams& mp) {
      for (const auto& [name, p] : mp.params) ck.params.emplace_back(name, p->v);
      for (const auto& [name, st] : mp.bn) {
        ck.bn_stats.emplace_back(name + ".running_mean", st->running_mean);
        ck.bn_stats.emplace_back(name + ".running_var", st->running_var);
      }
    };
    add_params(models_.enc);
    add_params(models_.proj);
    if (models_.has_pred) add_params(models_.pred);
    if (models_.has_target) {
      add_params(models_.enc_t);
      add_params(models_.proj_t);
    }
    ck.opt_state = opt_->state();
    if (bank_) {
      ck.has_bank = true;
      ck.bank_capacity = bank_->capacity();
      ck.bank_dim = bank_->dim();
      ck.bank_fill = bank_->fill();
      ck.bank_cursor = bank_->cursor();
      ck.bank_rows = bank_->storage();
    }
    ck.rng_state = train_rng_.serialize();
    ck.step = global_step_;
    return ck;
  }

  /// Restores parameters, optimizer, bank, rng, and step counter. The model
  /// layout must match the checkpoint blob for blob.
  void restore(const CheckpointData& ck) {
    std::size_t pi = 0;
    auto load_params = [&](ModelParams& mp) {
      for (auto& [name, p] : mp.params) {
        require(pi < ck.params.size(), "restore: checkpoint has too few parameter blobs");
        require(ck.params[pi].first == name, "restore: parameter order mismatch at " + name);
        require(ck.params[pi].second.same_shape(p->v), "restore: shape mismatch at " + name);
        p->v = ck.params[pi].second;
        ++pi;
      }
    };
    load_params(models_.enc);
    load_params(models_.proj);
    if (models_.has_pred) load_params(models_.pred);
    if (models_.has_target) {
      load_params(models_.enc_t);
      load_params(models_.proj_t);
    }
    require(pi == ck.params.size(), "restore: checkpoint has extra parameter blobs");

    std::size_t bi = 0;
    auto load_bn = [&](ModelParams& mp) {
      for (auto& [name, st] : mp.bn) {
        require(bi + 1 < ck.bn_stats.size() + 1, "restore: missing BN stats");
        require(ck.bn_stats[bi].first == name + ".running_mean", "restore: BN order mismatch");
        st->running_mean = ck.bn_stats[bi].second;
        st->running_var = ck.bn_stats[bi + 1].second;
        bi += 2;
      }
    };
    load_bn(models_.enc);
    load_bn(models_.proj);
    if (models_.has_pred) load_bn(models_.pred);
    if (models_.has_target) {
      load_bn(models_.enc_t);
      load_bn(models_.proj_t);
    }
    require(bi == ck.bn_stats.size(), "restore: BN stat count mismatch");

    opt_->restore(ck.opt_state);
    if (bank_) {
      require(ck.has_bank && ck.bank_capacity == bank_->capacity() && ck.bank_dim == bank_->dim(),
              "restore: bank geometry mismatch");
      bank_->load(ck.bank_rows, ck.bank_fill, ck.bank_cursor);
    } else {
      require(!ck.has_bank, "restore: checkpoint carries a bank this run does not use");
    }
    train_rng_.deserialize(ck.rng_state);
    global_step_ = ck.step;
  }

  /// Parameters and BN statistics only, for evaluation of a trained model.
  void load_model(const CheckpointData& ck) {
    std::size_t pi = 0, bi = 0;
    auto load_params = [&](ModelParams& mp) {
      for (auto& [name, p] : mp.params) {
        require(pi < ck.params.size() && ck.params[pi].first == name,
                "load_model: parameter mismatch at " + name);
        require(ck.params[pi].second.same_shape(p->v), "load_model: shape mismatch at " + name);
        p->v = ck.params[pi].second;
        ++pi;
      }
      for (auto& [name, st] : mp.bn) {
        require(bi + 1 < ck.bn_stats.size() + 1 && ck.bn_stats[bi].first == name + ".running_mean",
                "load_model: BN stat mismatch at " + name);
        st->running_mean = ck.bn_stats[bi].second;
        st->running_var = ck.bn_stats[bi + 1].second;
        bi += 2;
      }
    };
    load_params(models_.enc);
    load_params(models_.proj);
    if (models_.has_pred) load_params(models_.pred);
    if (models_.has_target) {
      load_params(models_.enc_t);
      load_params(models_.proj_t);
    }
    require(pi == ck.params.size() && bi == ck.bn_stats.size(),
            "load_model: checkpoint does not match this model layout");
  }

  /// Frozen-encoder features of the evaluation split's train and test halves.
  std::pair<Tensor, Tensor> probe_features() const {
    if (cfg_.data_source == "synthetic")
      return {encode_features(vec_data_.train.x), encode_features(vec_data_.test.x)};
    Tensor tr = encode_images_all(img_data_.train.images);
    Tensor te = encode_images_all(img_data_.test.images);
    return {tr, te};
  }

 private:
  Tensor encode_features(const Tensor& x) const {
    return encode_vectors(models_.enc_spec, models_.enc, x);
  }

  Tensor encode_images_all(const std::vector<Image>& images) const {
    return encode_images(models_.enc_spec, models_.enc, images, kCifarMean, kCifarSd);
  }

  std::pair<Tensor, Tensor> next_views() {
    const std::size_t b = cfg_.batch_size;
    if (cfg_.data_source == "synthetic") {
      const Tensor& x = vec_data_.train.x;
      const std::size_t d = x.size(1);
      std::vector<std::size_t> idx = train_rng_.sample_indices(x.size(0), b);
      Tensor va({b, d}), vp({b, d});
      for (std::size_t i = 0; i < b; ++i) {
        vector_view(&x.data[idx[i] * d], &va.data[i * d], d, vec_sigma_, view_anchor_, train_rng_);
        vector_view(&x.data[idx[i] * d], &vp.data[i * d], d, vec_sigma_, view_pos_, train_rng_);
      }
      return {va, vp};
    }
    std::vector<std::size_t> idx = train_rng_.sample_indices(img_data_.train.size(), b);
    std::vector<Image> ia, ip;
    ia.reserve(b);
    ip.reserve(b);
    for (std::size_t i : idx) {
      ia.push_back(apply_pipeline(pipe_anchor_, img_data_.train.images[i], train_rng_));
      ip.push_back(apply_pipeline(pipe_pos_, img_data_.train.images[i], train_rng_));
    }
    Tensor va, vp;
    image_to_rows(ia, va, kCifarMean, kCifarSd);
    image_to_rows(ip, vp, kCifarMean, kCifarSd);
    return {va, vp};
  }

  RunConfig cfg_;
  LayoutSpec layout_;
  Models models_;
  std::unique_ptr<FeatureBank> bank_;
  std::unique_ptr<Optimizer> opt_;
  Rng train_rng_;
  std::size_t global_step_ = 0;
  std::vector<MetricsRow> metrics_;

  SplitVectors vec_data_;
  Cifar10 img_data_;
  std::vector<double> vec_sigma_;
  VectorViewCfg view_anchor_, view_pos_;
  ImgPipelineCfg pipe_anchor_, pipe_pos_;
};

}  // namespace facl
