#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "facl/ops.hpp"

namespace facl {

enum class CombineMode { Average, Free };

inline CombineMode combine_mode_from(const std::string& s) {
  if (s == "average") return CombineMode::Average;
  if (s == "free") return CombineMode::Free;
  throw std::invalid_argument("unknown combine mode: " + s);
}

/// Instance-discrimination loss. Both inputs are l2-normalized internally;
/// logits[i][k] = <a_i, p_k>/tau and the per-row target is the diagonal.
/// The candidate set is the positive-branch batch only; setting
/// symmetric_negatives additionally appends the other anchors as negatives.
inline Val info_nce(const Val& anchors, const Val& positives, double tau,
                    bool symmetric_negatives = false) {
  require(tau > 0.0, "info_nce: tau must be positive");
  require(anchors->v.ndim() == 2 && positives->v.ndim() == 2 &&
              anchors->v.same_shape(positives->v),
          "info_nce: expects matching [b x d]");
  const std::size_t b = anchors->v.size(0);
  Val a = l2_normalize_rows(anchors);
  Val p = l2_normalize_rows(positives);
  Val logits = scale(matmul_nt(a, p), 1.0 / tau);
  std::vector<std::size_t> targets(b);
  for (std::size_t i = 0; i < b; ++i) targets[i] = i;
  if (!symmetric_negatives) return cross_entropy_rows(logits, targets);

  // candidates = positives then anchors; an anchor's own row is masked out
  // by a large negative constant so it never competes with the true pair.
  Val self_logits = scale(matmul_nt(a, a), 1.0 / tau);
  Tensor mask({b, b});
  for (std::size_t i = 0; i < b; ++i) mask.at(i, i) = -1e9;
  Val masked = add(self_logits, constant(mask));
  Tensor joint_v({b, 2 * b});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      joint_v.at(i, j) = logits->v.at(i, j);
      joint_v.at(i, b + j) = masked->v.at(i, j);
    }
  Val joint = detail::make_op(std::move(joint_v), {logits, masked}, [logits, masked, b](Node& self) {
    const Tensor& g = self.grad();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        if (logits->needs_grad) logits->grad().at(i, j) += g.at(i, j);
        if (masked->needs_grad) masked->grad().at(i, j) += g.at(i, b + j);
      }
  });
  return cross_entropy_rows(joint, targets);
}

/// Prediction-similarity loss: mean over rows of 2 - 2*cos(p_i, t_i) after
/// l2-normalizing both sides. The target branch is gradient-stopped by the
/// caller.
inline Val byol_similarity(const Val& pred, const Val& target) {
  require(pred->v.ndim() == 2 && pred->v.same_shape(target->v),
          "byol_similarity: expects matching [b x d]");
  Val p = l2_normalize_rows(pred);
  Val t = l2_normalize_rows(target);
  return add_scalar(scale(mean_all(row_dot(p, t)), -2.0), 2.0);
}

/// Average mode keeps the magnitude of a single term; Free mode sums all
/// terms so k extra terms scale the objective by k+1.
inline Val combine(const std::vector<Val>& terms, CombineMode mode) {
  require(!terms.empty(), "combine: no loss terms");
  Val total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  if (mode == CombineMode::Average && terms.size() > 1)
    total = scale(total, 1.0 / static_cast<double>(terms.size()));
  return total;
}

}  // namespace facl
