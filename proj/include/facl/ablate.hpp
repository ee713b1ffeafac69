#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "facl/probe.hpp"
#include "facl/train.hpp"

namespace facl {

struct AblateCell {
  std::string row_label, col_label;
  double probe_acc = 0.0;
  double final_loss = 0.0;
};

struct AblateResult {
  std::string suite;
  std::vector<std::string> rows, cols;
  std::vector<AblateCell> cells;  // row-major, complete grid

  std::string to_csv() const {
    std::ostringstream os;
    os << "suite,row,col,probe_acc,final_loss\n";
    for (const auto& c : cells) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.6f,%.6f\n", suite.c_str(), c.row_label.c_str(),
                    c.col_label.c_str(), c.probe_acc, c.final_loss);
      os << buf;
    }
    return os.str();
  }

  std::string to_markdown() const {
    std::ostringstream os;
    os << "## " << suite << "\n\n|  |";
    for (const auto& c : cols) os << " " << c << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < cols.size(); ++i) os << "---|";
    os << "\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      os << "| " << rows[r] << " |";
      for (std::size_t c = 0; c < cols.size(); ++c) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %.1f |", 100.0 * cells[r * cols.size() + c].probe_acc);
        os << buf;
      }
      os << "\n";
    }
    return os.str();
  }
};

inline const std::vector<std::string>& ablate_fa_columns() {
  static const std::vector<std::string> cols{"none",        "mask",          "nn",
                                             "nn_noise",    "batch_noise",   "gaussian_noise"};
  return cols;
}

namespace detail_ablate {

/// Weakened per-branch view analogs standing in for the image pipelines when
/// the run is on synthetic vectors: weak quarters the noise and drops the
/// mask, asymm keeps the anchor strong and weakens the positive.
inline std::pair<VectorViewCfg, VectorViewCfg> vector_da_analog(DaSetting setting,
                                                                const VectorViewCfg& base) {
  VectorViewCfg weak = base;
  weak.noise = 0.25 * base.noise;
  weak.mask_rate = 0.0;
  switch (setting) {
    case DaSetting::SymmWeak: return {weak, weak};
    case DaSetting::SymmStrong: return {base, base};
    case DaSetting::AsymmStrong: return {base, weak};
  }
  return {base, base};
}

inline AblateCell run_cell(const RunConfig& cfg, const std::string& row, const std::string& col) {
  Trainer t(cfg);
  if (cfg.data_source == "synthetic" && t.config().aug_mode == "vector") {
    auto [a, p] = vector_da_analog(cfg.da_setting, cfg.vec_view);
    t.set_vector_views(a, p);
  }
  MetricsRow last;
  while (t.step() < cfg.total_steps()) last = t.step_once();
  auto [ftr, fte] = t.probe_features();
  const auto& labels_tr =
      cfg.data_source == "synthetic" ? t.vectors().train.y : t.images().train.labels;
  const auto& labels_te =
      cfg.data_source == "synthetic" ? t.vectors().test.y : t.images().test.labels;
  std::size_t n_classes = 0;
  for (int y : labels_tr) n_classes = std::max<std::size_t>(n_classes, y + 1);
  AblateCell cell;
  cell.row_label = row;
  cell.col_label = col;
  cell.probe_acc =
      linear_probe_features(ftr, labels_tr, fte, labels_te, n_classes, cfg.probe, cfg.seed);
  cell.final_loss = last.loss_total;
  return cell;
}

inline RunConfig with_fa(RunConfig cfg, const std::string& method) {
  cfg.fa.method = fa_method_from(method);
  return cfg;
}

}  // namespace detail_ablate

/// Layout grid: each discrimination layout against every FA method.
inline AblateResult ablate_architectures(const RunConfig& base) {
  AblateResult res;
  res.suite = "architectures";
  res.rows = {"basic", "parallel_pred", "post_pred", "pre_pred"};
  res.cols = ablate_fa_columns();
  for (const auto& row : res.rows)
    for (const auto& col : res.cols) {
      RunConfig cfg = detail_ablate::with_fa(base, col);
      cfg.layout = layout_from(row);
      cfg.stop_grad = "auto";
      cfg.optim.clip_norm = cfg.resolved_clip_norm();
      res.cells.push_back(detail_ablate::run_cell(cfg, row, col));
    }
  return res;
}

/// Momentum-target layout against every FA method.
inline AblateResult ablate_byol_fa(const RunConfig& base) {
  AblateResult res;
  res.suite = "byol-fa";
  res.rows = {"byol_fa"};
  res.cols = ablate_fa_columns();
  for (const auto& col : res.cols) {
    RunConfig cfg = detail_ablate::with_fa(base, col);
    cfg.layout = Layout::ByolFa;
    cfg.stop_grad = "auto";
    cfg.optim.clip_norm = cfg.resolved_clip_norm();
    res.cells.push_back(detail_ablate::run_cell(cfg, "byol_fa", col));
  }
  return res;
}

/// Stop-gradient on/off for every discrimination layout and FA method.
inline AblateResult ablate_stopgrad(const RunConfig& base) {
  AblateResult res;
  res.suite = "stopgrad";
  for (const std::string layout : {"basic", "parallel_pred", "post_pred", "pre_pred"})
    for (const std::string sg : {"on", "off"}) res.rows.push_back(layout + "/sg_" + sg);
  res.cols = ablate_fa_columns();
  for (const auto& row : res.rows) {
    const auto slash = row.find("/sg_");
    for (const auto& col : res.cols) {
      RunConfig cfg = detail_ablate::with_fa(base, col);
      cfg.layout = layout_from(row.substr(0, slash));
      cfg.stop_grad = row.substr(slash + 4);
      cfg.optim.clip_norm = cfg.resolved_clip_norm();
      res.cells.push_back(detail_ablate::run_cell(cfg, row, col));
    }
  }
  return res;
}

/// Augmentation setting (symmetric weak/strong, asymmetric) rows against FA
/// methods.
inline AblateResult ablate_da_settings(const RunConfig& base) {
  AblateResult res;
  res.suite = "da-settings";
  res.rows = {"symm_weak", "symm_strong", "asymm_strong"};
  res.cols = ablate_fa_columns();
  for (const auto& row : res.rows)
    for (const auto& col : res.cols) {
      RunConfig cfg = detail_ablate::with_fa(base, col);
      cfg.da_setting = da_setting_from(row);
      res.cells.push_back(detail_ablate::run_cell(cfg, row, col));
    }
  return res;
}

inline AblateResult run_ablate(const std::string& suite, const RunConfig& base) {
  if (suite == "architectures") return ablate_architectures(base);
  if (suite == "byol-fa") return ablate_byol_fa(base);
  if (suite == "stopgrad") return ablate_stopgrad(base);
  if (suite == "da-settings") return ablate_da_settings(base);
  throw std::runtime_error(
      "ablate: unknown suite '" + suite +
      "' (expected architectures, stopgrad, da-settings, or byol-fa)");
}

}  // namespace facl
