#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mhsa/autodiff.hpp"

namespace mhsa {

struct LossWeights {
  double lambda1 = 1e-4;  // diversity term
  double lambda2 = 1.0;   // improved hard triplet
  double lambda3 = 1e-3;  // attention competition
  double gamma = 1e-3;    // competition threshold
  double margin = 3.0;

  void validate() const;
};

struct ClassifierVars {
  ad::Var weight;  // D' x N
  ad::Var bias;    // 1 x N
};

/// Everything the objectives need for one PK batch. Rows of the B x D'
/// matrices line up with `labels`.
struct BatchFeatures {
  std::vector<int> labels;
  ad::Var q_star;  // B x D
  ad::Var p_star;  // B x D' (fused local feature)
  ad::Var z;       // B x D, unset when RLM is disabled
  std::vector<ad::Var> heads;  // per image K x D
  std::vector<ad::Var> alpha;  // per image J x K
  ClassifierVars cls_q, cls_p, cls_z;
};

ad::Var ce_loss(ad::Var features, std::span<const int> labels, const ClassifierVars& classifier);

/// Batch-hard triplet: per anchor, farthest same-id and nearest other-id by
/// squared distance; mean over anchors of the hinge.
ad::Var hard_triplet(ad::Var features, std::span<const int> labels, double margin);

/// Improved hard triplet over K head embeddings per image: positives take the
/// max over head pairs, negatives the min, then batch-hard mining.
ad::Var ihtl(std::span<const ad::Var> heads, std::span<const int> labels, double margin);

/// ||G - I||_F / K^2 with G the Gram matrix of L2-normalized head rows.
ad::Var fdrt(ad::Var heads);

/// sum_ij min(alpha_ij, gamma)^2.
ad::Var acm_term(ad::Var alpha, double gamma);

// Unset Vars are terms the objective never evaluates (z terms without RLM,
// ce_q without the global CE). Regularizers with a zero weight are still
// evaluated for logging but excluded from `total`.
struct LossTerms {
  ad::Var ce_q, ce_p, ce_z, triplet_p, triplet_z, fdrt, ihtl, acm;
  ad::Var mhsab;
  ad::Var total;
};

LossTerms branch_loss(const BatchFeatures& batch, const LossWeights& w);
LossTerms total_loss(const BatchFeatures& batch, const LossWeights& w, bool train_gfb_ce);

/// Global-only baseline objective: CE on q* alone.
LossTerms baseline_loss(const BatchFeatures& batch);

}  // namespace mhsa
