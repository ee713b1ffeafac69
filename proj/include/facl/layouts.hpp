#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "facl/feataug.hpp"
#include "facl/losses.hpp"
#include "facl/nets.hpp"

namespace facl {

enum class Layout { Basic, ParallelPred, PostPred, PrePred, ByolFa };
enum class PairMode { OrigVsFA, FAvsFA };

inline Layout layout_from(const std::string& s) {
  if (s == "basic") return Layout::Basic;
  if (s == "parallel_pred") return Layout::ParallelPred;
  if (s == "post_pred") return Layout::PostPred;
  if (s == "pre_pred") return Layout::PrePred;
  if (s == "byol_fa") return Layout::ByolFa;
  throw std::invalid_argument("unknown layout: " + s);
}

inline std::string layout_name(Layout l) {
  switch (l) {
    case Layout::Basic: return "basic";
    case Layout::ParallelPred: return "parallel_pred";
    case Layout::PostPred: return "post_pred";
    case Layout::PrePred: return "pre_pred";
    case Layout::ByolFa: return "byol_fa";
  }
  return "?";
}

struct LayoutSpec {
  Layout layout = Layout::ParallelPred;
  bool stop_grad = true;
  PairMode pair_mode = PairMode::OrigVsFA;
  CombineMode combine = CombineMode::Average;
  FaConfig fa;
  double tau = 0.2;
  bool symmetric_negatives = false;
  bool symmetrize = true;  // ByolFa only

  bool uses_predictor() const { return layout != Layout::Basic; }
  bool uses_ema() const { return layout == Layout::ByolFa; }

  void validate() const {
    fa.validate();
    if (layout == Layout::ByolFa) require(uses_ema(), "LayoutSpec: byol_fa requires the ema target");
  }
};

/// Per-layout convention for the stop-gradient default: the plain two-branch
/// layout trains both branches, every predictor layout stops the positive
/// branch.
inline bool default_stop_grad(Layout l) { return l != Layout::Basic; }

/// Online networks plus the optional EMA target copies.
struct Models {
  EncoderSpec enc_spec;
  MlpSpec proj_spec;
  MlpSpec pred_spec;
  ModelParams enc, proj, pred;
  ModelParams enc_t, proj_t;
  bool has_pred = false;
  bool has_target = false;

  /// All trainable parameters in a fixed order.
  std::vector<std::pair<std::string, Val>> trainable() const {
    std::vector<std::pair<std::string, Val>> out = enc.params;
    out.insert(out.end(), proj.params.begin(), proj.params.end());
    if (has_pred) out.insert(out.end(), pred.params.begin(), pred.params.end());
    return out;
  }
};

inline ModelParams clone_as_constant(const ModelParams& src, const std::string& from_prefix,
                                     const std::string& to_prefix) {
  ModelParams out;
  for (const auto& [name, p] : src.params) {
    std::string renamed = to_prefix + name.substr(from_prefix.size());
    out.params.emplace_back(std::move(renamed), constant(p->v));
  }
  for (const auto& [name, st] : src.bn) {
    auto copy = std::make_shared<BnState>(*st);
    out.bn.emplace(to_prefix + name.substr(from_prefix.size()), copy);
  }
  return out;
}

inline Models build_models(const EncoderSpec& enc_spec, const MlpSpec& proj_spec,
                           const MlpSpec& pred_spec, const LayoutSpec& layout, Rng& rng) {
  Models m;
  m.enc_spec = enc_spec;
  m.proj_spec = proj_spec;
  m.pred_spec = pred_spec;
  m.enc = init_encoder("enc", enc_spec, rng);
  m.proj = init_mlp("proj", proj_spec, rng);
  if (layout.uses_predictor()) {
    m.pred = init_mlp("pred", pred_spec, rng);
    m.has_pred = true;
  }
  if (layout.uses_ema()) {
    m.enc_t = clone_as_constant(m.enc, "enc", "enc_t");
    m.proj_t = clone_as_constant(m.proj, "proj", "proj_t");
    m.has_target = true;
  }
  return m;
}

struct StepOutput {
  Val total;
  double loss_original = 0.0;
  std::vector<double> loss_fa;
  Tensor bank_rows;      // normalized positive features to push after the step
  Val positive;          // positive/target projection before any stop-gradient
  bool fa_applied = false;
};

namespace detail_layout {

inline Val online_embed(const Models& m, const Tensor& view, bool train) {
  Val x = constant(view);
  Val h = forward_encoder("enc", m.enc_spec, m.enc, x, train);
  return forward_mlp("proj", m.proj_spec, m.proj, h, train);
}

inline Val target_embed(const Models& m, const Tensor& view, bool train) {
  Val x = constant(view);
  Val h = forward_encoder("enc_t", m.enc_spec, m.enc_t, x, train, /*update_stats=*/false);
  return forward_mlp("proj_t", m.proj_spec, m.proj_t, h, train, /*update_stats=*/false);
}

/// One BYOL direction: online(view_a) predicted against target(view_p).
inline void byol_direction(const LayoutSpec& spec, const Models& m, const Tensor& view_a,
                           const Tensor& view_p, const FeatureBank* bank, Rng& rng, bool can_fa,
                           std::vector<Val>& terms, StepOutput& out, bool record_bank) {
  Val z = online_embed(m, view_a, true);
  Val p = forward_mlp("pred", m.pred_spec, m.pred, z, true);
  Val zt_raw = target_embed(m, view_p, true);
  Val zt = l2_normalize_rows(stop_gradient(zt_raw));

  terms.push_back(byol_similarity(p, zt));
  if (record_bank) {
    out.bank_rows = zt->v;
    out.positive = zt_raw;
  }
  if (!can_fa) return;
  FaPlan plan = plan_fa(spec.fa, zt->v, bank, rng);
  for (std::size_t j = 0; j < plan.k; ++j)
    terms.push_back(byol_similarity(p, constant(apply_fa_raw(plan, zt->v, j))));
}

}  // namespace detail_layout

/// Builds the layout's loss graph on two augmented views. The caller owns the
/// bank push (out.bank_rows) and the optimizer step.
inline StepOutput forward_step(const LayoutSpec& spec, const Models& m, const Tensor& view_a,
                               const Tensor& view_p, const FeatureBank* bank, Rng& rng) {
  spec.validate();
  const bool want_fa = spec.fa.method != FaMethod::None;
  const bool can_fa =
      want_fa && (!spec.fa.needs_bank() || (bank != nullptr && bank->fill() >= spec.fa.k));
  StepOutput out;

  if (spec.layout == Layout::ByolFa) {
    std::vector<Val> dir1, dir2;
    detail_layout::byol_direction(spec, m, view_a, view_p, bank, rng, can_fa, dir1, out, true);
    Val total;
    if (spec.symmetrize) {
      detail_layout::byol_direction(spec, m, view_p, view_a, bank, rng, can_fa, dir2, out, false);
      total = scale(add(combine(dir1, spec.combine), combine(dir2, spec.combine)), 0.5);
      out.loss_original = 0.5 * (dir1[0]->v.data[0] + dir2[0]->v.data[0]);
      for (std::size_t j = 1; j < dir1.size(); ++j)
        out.loss_fa.push_back(0.5 * (dir1[j]->v.data[0] + dir2[j]->v.data[0]));
    } else {
      total = combine(dir1, spec.combine);
      out.loss_original = dir1[0]->v.data[0];
      for (std::size_t j = 1; j < dir1.size(); ++j) out.loss_fa.push_back(dir1[j]->v.data[0]);
    }
    out.total = total;
    out.fa_applied = can_fa;
    return out;
  }

  Val z = detail_layout::online_embed(m, view_a, true);
  Val anchor = spec.uses_predictor() ? forward_mlp("pred", m.pred_spec, m.pred, z, true) : z;
  Val zp = detail_layout::online_embed(m, view_p, true);
  out.positive = zp;
  if (spec.stop_grad) zp = stop_gradient(zp);
  Val zp_n = l2_normalize_rows(zp);
  out.bank_rows = zp_n->v;

  std::vector<Val> terms{info_nce(anchor, zp_n, spec.tau, spec.symmetric_negatives)};
  if (can_fa) {
    // positive-side plan; the anchor-side layouts plan on their own features
    switch (spec.layout) {
      case Layout::Basic:
      case Layout::ParallelPred: {
        FaPlan plan = plan_fa(spec.fa, zp_n->v, bank, rng);
        for (std::size_t j = 0; j < plan.k; ++j) {
          Val pos = spec.stop_grad ? constant(apply_fa_raw(plan, zp_n->v, j))
                                   : apply_fa_node(plan, zp_n, j);
          Val anc = anchor;
          if (spec.pair_mode == PairMode::FAvsFA) {
            Val anchor_n = l2_normalize_rows(anchor);
            FaPlan aplan = plan_fa(spec.fa, anchor_n->v, bank, rng);
            anc = apply_fa_node(aplan, anchor_n, j % aplan.k);
          }
          terms.push_back(info_nce(anc, pos, spec.tau, spec.symmetric_negatives));
        }
        break;
      }
      case Layout::PostPred: {
        Val anchor_n = l2_normalize_rows(anchor);
        FaPlan plan = plan_fa(spec.fa, anchor_n->v, bank, rng);
        for (std::size_t j = 0; j < plan.k; ++j)
          terms.push_back(
              info_nce(apply_fa_node(plan, anchor_n, j), zp_n, spec.tau, spec.symmetric_negatives));
        break;
      }
      case Layout::PrePred: {
        Val z_n = l2_normalize_rows(z);
        FaPlan plan = plan_fa(spec.fa, z_n->v, bank, rng);
        for (std::size_t j = 0; j < plan.k; ++j) {
          Val p_fa = forward_mlp("pred", m.pred_spec, m.pred, apply_fa_node(plan, z_n, j), true);
          terms.push_back(info_nce(p_fa, zp_n, spec.tau, spec.symmetric_negatives));
        }
        break;
      }
      default: break;
    }
  }

  out.total = combine(terms, spec.combine);
  out.loss_original = terms[0]->v.data[0];
  for (std::size_t j = 1; j < terms.size(); ++j) out.loss_fa.push_back(terms[j]->v.data[0]);
  out.fa_applied = can_fa && terms.size() > 1;
  return out;
}

/// Symbolic wiring of the contrastive pairs a layout produces.
inline std::vector<std::tuple<std::string, std::string, std::string>> pair_table(
    const LayoutSpec& spec) {
  std::vector<std::tuple<std::string, std::string, std::string>> rows;
  const std::size_t k = spec.fa.method == FaMethod::None ? 0 : spec.fa.k;
  const bool fa_both = spec.pair_mode == PairMode::FAvsFA;
  switch (spec.layout) {
    case Layout::Basic:
      rows.emplace_back("z", "z+", "original");
      for (std::size_t j = 1; j <= k; ++j)
        rows.emplace_back(fa_both ? "FA_" + std::to_string(j) + "(z)" : "z",
                          "FA_" + std::to_string(j) + "(z+)", "fa");
      break;
    case Layout::ParallelPred:
      rows.emplace_back("p", "z+", "original");
      for (std::size_t j = 1; j <= k; ++j)
        rows.emplace_back(fa_both ? "FA_" + std::to_string(j) + "(p)" : "p",
                          "FA_" + std::to_string(j) + "(z+)", "fa");
      break;
    case Layout::PostPred:
      rows.emplace_back("p", "z+", "original");
      for (std::size_t j = 1; j <= k; ++j)
        rows.emplace_back("FA_" + std::to_string(j) + "(p)", "z+", "fa");
      break;
    case Layout::PrePred:
      rows.emplace_back("p", "z+", "original");
      for (std::size_t j = 1; j <= k; ++j)
        rows.emplace_back("pred(FA_" + std::to_string(j) + "(z))", "z+", "fa");
      break;
    case Layout::ByolFa:
      rows.emplace_back("p", "zt+", "original");
      for (std::size_t j = 1; j <= k; ++j)
        rows.emplace_back("p", "FA_" + std::to_string(j) + "(zt+)", "fa");
      break;
  }
  return rows;
}

}  // namespace facl
