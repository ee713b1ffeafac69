#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "facl/data.hpp"
#include "facl/dataaug.hpp"
#include "facl/layouts.hpp"
#include "facl/optim.hpp"

namespace facl {

namespace detail_cfg {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail_cfg

/// Flat `section.key = value` store with `#` comments. Typed getters mark
/// keys consumed; finish() rejects anything left over.
class ConfigMap {
 public:
  static ConfigMap parse(const std::string& text) {
    ConfigMap cm;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = detail_cfg::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: line " + std::to_string(lineno) + " has no '='");
      const std::string key = detail_cfg::trim(line.substr(0, eq));
      const std::string value = detail_cfg::trim(line.substr(eq + 1));
      if (key.find('.') == std::string::npos)
        throw std::runtime_error("config: key '" + key + "' is missing its section prefix");
      if (cm.values_.count(key))
        throw std::runtime_error("config: duplicate key '" + key + "'");
      cm.values_[key] = value;
    }
    return cm;
  }

  std::string get_str(const std::string& key, const std::string& dflt) {
    auto v = take(key);
    return v ? *v : dflt;
  }

  double get_double(const std::string& key, double dflt) {
    auto v = take(key);
    if (!v) return dflt;
    try {
      std::size_t pos = 0;
      const double d = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("");
      return d;
    } catch (const std::exception&) {
      throw std::runtime_error("config: key '" + key + "' needs a number, got '" + *v + "'");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) {
    auto v = take(key);
    if (!v) return dflt;
    try {
      std::size_t pos = 0;
      const std::uint64_t u = std::stoull(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("");
      return u;
    } catch (const std::exception&) {
      throw std::runtime_error("config: key '" + key + "' needs an integer, got '" + *v + "'");
    }
  }

  std::size_t get_size(const std::string& key, std::size_t dflt) {
    return static_cast<std::size_t>(get_u64(key, dflt));
  }

  bool get_bool(const std::string& key, bool dflt) {
    auto v = take(key);
    if (!v) return dflt;
    if (*v == "true" || *v == "on" || *v == "1") return true;
    if (*v == "false" || *v == "off" || *v == "0") return false;
    throw std::runtime_error("config: key '" + key + "' needs a boolean, got '" + *v + "'");
  }

  std::vector<std::size_t> get_size_list(const std::string& key,
                                         const std::vector<std::size_t>& dflt) {
    auto v = take(key);
    if (!v) return dflt;
    std::vector<std::size_t> out;
    std::istringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail_cfg::trim(item);
      try {
        std::size_t pos = 0;
        out.push_back(std::stoull(item, &pos));
        if (pos != item.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw std::runtime_error("config: key '" + key + "' needs a comma list of integers");
      }
    }
    if (out.empty())
      throw std::runtime_error("config: key '" + key + "' needs a non-empty list");
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw std::runtime_error("config: unknown key '" + k + "'");
  }

 private:
  std::optional<std::string> take(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

struct ProbeConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 256;
  double lr = 0.5;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<std::size_t> milestones{10, 12, 14};
  double gamma = 0.1;

  void validate() const {
    require(epochs >= 1 && batch_size >= 1, "probe: epochs and batch_size must be positive");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      require(milestones[i] < epochs, "probe: milestone beyond last epoch");
      if (i) require(milestones[i] > milestones[i - 1], "probe: milestones must increase");
    }
  }
};

/// Every training knob, parsed and validated before any compute happens.
struct RunConfig {
  std::string text;  // raw config, embedded in checkpoints

  std::string data_source = "synthetic";
  std::string cifar_dir;
  SyntheticSpec synthetic;
  std::uint64_t synthetic_data_seed = 13;  // dataset draw, separate from train.seed

  std::string encoder_kind = "mlp";
  std::vector<std::size_t> encoder_hidden{256, 256};
  std::size_t embed_dim = 64;
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t image_hw = 32;
  std::string projector_kind = "strong";
  std::size_t projector_hidden = 256;
  std::size_t projector_dim = 64;
  bool projector_final_bn = true;
  std::size_t predictor_hidden = 128;

  Layout layout = Layout::ParallelPred;
  std::string stop_grad = "auto";  // auto | on | off
  PairMode pair_mode = PairMode::OrigVsFA;
  CombineMode combine = CombineMode::Average;
  bool symmetrize = true;
  double tau = 0.2;
  bool symmetric_negatives = false;
  FaConfig fa;

  std::string aug_mode;  // vector | image; defaults from the data source
  DaSetting da_setting = DaSetting::SymmStrong;
  VectorViewCfg vec_view;

  OptimConfig optim;
  std::string clip_norm_mode = "auto";  // auto | off | <number>
  EmaConfig ema;
  std::size_t batch_size = 128;
  std::size_t steps_per_epoch = 100;
  std::uint64_t seed = 1;
  bool deterministic = true;
  Precision run_precision = Precision::f32;
  std::size_t checkpoint_every = 0;  // steps; 0 writes only the final one

  ProbeConfig probe;
  std::size_t knn_k = 5;

  static RunConfig parse_text(const std::string& text);
  static RunConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
  }

  std::size_t input_dim() const {
    return data_source == "synthetic" ? synthetic.dim : 3 * image_hw * image_hw;
  }

  std::size_t total_steps() const { return optim.total_epochs * steps_per_epoch; }
  std::size_t warmup_steps() const { return optim.warmup_epochs * steps_per_epoch; }

  EncoderSpec make_encoder() const {
    if (encoder_kind == "mlp") return mlp_encoder(input_dim(), encoder_hidden, embed_dim);
    return smallconv_encoder(conv_channels, image_hw, embed_dim);
  }

  MlpSpec make_projector() const {
    return build_projector(projector_kind, embed_dim, projector_hidden, projector_dim,
                           projector_final_bn);
  }

  MlpSpec make_predictor() const {
    return build_predictor(projector_dim, predictor_hidden, projector_dim);
  }

  LayoutSpec make_layout() const {
    LayoutSpec s;
    s.layout = layout;
    s.stop_grad = stop_grad == "auto" ? default_stop_grad(layout) : stop_grad == "on";
    s.pair_mode = pair_mode;
    s.combine = combine;
    s.fa = fa;
    s.tau = tau;
    s.symmetric_negatives = symmetric_negatives;
    s.symmetrize = symmetrize;
    return s;
  }

  double resolved_clip_norm() const {
    if (clip_norm_mode == "auto") return layout == Layout::ByolFa ? 0.0 : 1.0;
    if (clip_norm_mode == "off") return 0.0;
    return std::stod(clip_norm_mode);
  }

  void validate() const {
    synthetic.validate();
    fa.validate();
    optim.validate();
    ema.validate();
    probe.validate();
    make_layout().validate();
    make_encoder();  // throws on bad dims
    make_projector();
    make_predictor();
    require(data_source == "synthetic" || data_source == "cifar10",
            "config: data.source must be synthetic or cifar10");
    require(stop_grad == "auto" || stop_grad == "on" || stop_grad == "off",
            "config: layout.stop_grad must be auto, on, or off");
    require(aug_mode == "vector" || aug_mode == "image",
            "config: aug.mode must be vector or image");
    if (data_source == "cifar10")
      require(!cifar_dir.empty(), "config: data.cifar_dir required for cifar10");
    if (aug_mode == "image")
      require(encoder_kind == "smallconv", "config: image views need the smallconv encoder");
    if (encoder_kind == "smallconv")
      require(aug_mode == "image", "config: smallconv encoder needs image views");
    require(batch_size >= 2, "config: train.batch_size must be at least 2");
    require(steps_per_epoch >= 1, "config: train.steps_per_epoch must be positive");
    require(optim.warmup_epochs < optim.total_epochs,
            "config: warmup must end before the last epoch");
    require(tau > 0.0, "config: loss.tau must be positive");
    require(knn_k >= 1, "config: eval.knn_k must be at least 1");
    if (clip_norm_mode != "auto" && clip_norm_mode != "off") {
      try {
        std::size_t pos = 0;
        const double c = std::stod(clip_norm_mode, &pos);
        require(pos == clip_norm_mode.size() && c > 0.0, "");
      } catch (const std::exception&) {
        throw std::runtime_error("config: optim.clip_norm must be auto, off, or a positive number");
      }
    }
  }
};

inline RunConfig RunConfig::parse_text(const std::string& text) {
  ConfigMap cm = ConfigMap::parse(text);
  RunConfig c;
  c.text = text;

  c.data_source = cm.get_str("data.source", c.data_source);
  c.cifar_dir = cm.get_str("data.cifar_dir", c.cifar_dir);
  c.synthetic.n_clusters = cm.get_size("synthetic.n_clusters", c.synthetic.n_clusters);
  c.synthetic.latent_dim = cm.get_size("synthetic.latent_dim", c.synthetic.latent_dim);
  c.synthetic.dim = cm.get_size("synthetic.dim", c.synthetic.dim);
  c.synthetic.per_cluster = cm.get_size("synthetic.per_cluster", c.synthetic.per_cluster);
  c.synthetic.spread = cm.get_double("synthetic.spread", c.synthetic.spread);
  c.synthetic.map_gain = cm.get_double("synthetic.map_gain", c.synthetic.map_gain);
  c.synthetic.projection_seed =
      cm.get_u64("synthetic.projection_seed", c.synthetic.projection_seed);
  c.synthetic_data_seed = cm.get_u64("synthetic.data_seed", c.synthetic_data_seed);

  c.encoder_kind = cm.get_str("model.encoder", c.encoder_kind);
  c.encoder_hidden = cm.get_size_list("model.hidden", c.encoder_hidden);
  c.embed_dim = cm.get_size("model.embed_dim", c.embed_dim);
  c.conv_channels = cm.get_size_list("model.conv_channels", c.conv_channels);
  c.image_hw = cm.get_size("model.image_hw", c.image_hw);
  c.projector_kind = cm.get_str("model.projector", c.projector_kind);
  c.projector_hidden = cm.get_size("model.projector_hidden", c.projector_hidden);
  c.projector_dim = cm.get_size("model.projector_dim", c.projector_dim);
  c.projector_final_bn = cm.get_bool("model.projector_final_bn", c.projector_final_bn);
  c.predictor_hidden = cm.get_size("model.predictor_hidden", c.predictor_hidden);

  c.layout = layout_from(cm.get_str("layout.kind", layout_name(c.layout)));
  c.stop_grad = cm.get_str("layout.stop_grad", c.stop_grad);
  const std::string pm = cm.get_str("layout.pair_mode", "orig_vs_fa");
  if (pm == "orig_vs_fa")
    c.pair_mode = PairMode::OrigVsFA;
  else if (pm == "fa_vs_fa")
    c.pair_mode = PairMode::FAvsFA;
  else
    throw std::runtime_error("config: layout.pair_mode must be orig_vs_fa or fa_vs_fa");
  const std::string comb = cm.get_str("layout.combine", "average");
  if (comb == "average")
    c.combine = CombineMode::Average;
  else if (comb == "free")
    c.combine = CombineMode::Free;
  else
    throw std::runtime_error("config: layout.combine must be average or free");
  c.symmetrize = cm.get_bool("layout.symmetrize", c.symmetrize);

  c.tau = cm.get_double("loss.tau", c.tau);
  c.symmetric_negatives = cm.get_bool("loss.symmetric_negatives", c.symmetric_negatives);

  c.fa.method = fa_method_from(cm.get_str("fa.method", "none"));
  c.fa.k = cm.get_size("fa.k", c.fa.k);
  c.fa.mask_rate = cm.get_double("fa.mask_rate", c.fa.mask_rate);
  c.fa.alpha = cm.get_double("fa.alpha", c.fa.alpha);
  c.fa.gaussian_sigma = cm.get_double("fa.gaussian_sigma", c.fa.gaussian_sigma);
  c.fa.bank_capacity = cm.get_size("fa.bank_capacity", c.fa.bank_capacity);

  c.aug_mode = cm.get_str("aug.mode", c.data_source == "cifar10" ? "image" : "vector");
  c.da_setting = da_setting_from(cm.get_str("aug.da_setting", "symm_strong"));
  c.vec_view.noise = cm.get_double("aug.vector_noise", c.vec_view.noise);
  c.vec_view.mask_rate = cm.get_double("aug.vector_mask_rate", c.vec_view.mask_rate);
  c.vec_view.scale_min = cm.get_double("aug.vector_scale_min", c.vec_view.scale_min);
  c.vec_view.scale_max = cm.get_double("aug.vector_scale_max", c.vec_view.scale_max);

  c.optim.base_lr = cm.get_double("optim.base_lr", c.optim.base_lr);
  c.optim.momentum = cm.get_double("optim.momentum", c.optim.momentum);
  c.optim.weight_decay = cm.get_double("optim.weight_decay", c.optim.weight_decay);
  c.optim.lars = cm.get_bool("optim.lars", c.optim.lars);
  c.optim.lars_trust_coef = cm.get_double("optim.lars_trust_coef", c.optim.lars_trust_coef);
  c.optim.lars_eps = cm.get_double("optim.lars_eps", c.optim.lars_eps);
  c.clip_norm_mode = cm.get_str("optim.clip_norm", c.clip_norm_mode);
  c.optim.accum_steps = cm.get_size("optim.accum_steps", c.optim.accum_steps);
  c.optim.warmup_epochs = cm.get_size("train.warmup_epochs", c.optim.warmup_epochs);
  c.optim.total_epochs = cm.get_size("train.epochs", c.optim.total_epochs);

  c.ema.m_base = cm.get_double("ema.m_base", c.ema.m_base);

  c.batch_size = cm.get_size("train.batch_size", c.batch_size);
  c.steps_per_epoch = cm.get_size("train.steps_per_epoch", c.steps_per_epoch);
  c.seed = cm.get_u64("train.seed", c.seed);
  c.deterministic = cm.get_bool("train.deterministic", c.deterministic);
  const std::string prec = cm.get_str("train.precision", "f32");
  if (prec == "f32")
    c.run_precision = Precision::f32;
  else if (prec == "f64")
    c.run_precision = Precision::f64;
  else
    throw std::runtime_error("config: train.precision must be f32 or f64");
  c.checkpoint_every = cm.get_size("train.checkpoint_every", c.checkpoint_every);

  c.probe.epochs = cm.get_size("probe.epochs", c.probe.epochs);
  c.probe.batch_size = cm.get_size("probe.batch_size", c.probe.batch_size);
  c.probe.lr = cm.get_double("probe.lr", c.probe.lr);
  c.probe.momentum = cm.get_double("probe.momentum", c.probe.momentum);
  c.probe.weight_decay = cm.get_double("probe.weight_decay", c.probe.weight_decay);
  c.probe.milestones = cm.get_size_list("probe.milestones", c.probe.milestones);
  c.probe.gamma = cm.get_double("probe.gamma", c.probe.gamma);
  c.knn_k = cm.get_size("eval.knn_k", c.knn_k);

  cm.finish();
  c.optim.clip_norm = c.resolved_clip_norm();
  c.validate();
  return c;
}

}  // namespace facl
