#include "mhsa/losses.hpp"

#include <limits>
#include <map>

#include "mhsa/errors.hpp"

namespace mhsa {

void LossWeights::validate() const {
  if (!(gamma > 0.0)) throw ConfigError("loss.gamma must be > 0");
  if (!(margin > 0.0)) throw ConfigError("loss.margin must be > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0) throw ConfigError("loss lambdas must be >= 0");
}

ad::Var ce_loss(ad::Var features, std::span<const int> labels, const ClassifierVars& classifier) {
  if (features.rows() != labels.size()) {
    throw DimensionError("ce_loss: " + std::to_string(features.rows()) + " feature rows for " +
                         std::to_string(labels.size()) + " labels");
  }
  const ad::Var logits = ad::add_row(ad::matmul(features, classifier.weight), classifier.bias);
  const std::size_t classes = logits.cols();
  std::vector<std::size_t> picks;
  picks.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("ce_loss: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    picks.push_back(i * classes + static_cast<std::size_t>(labels[i]));
  }
  return ad::scale(ad::mean(ad::gather(ad::log_softmax_rows(logits), picks)), -1.0);
}

namespace {

void check_triplet_feasible(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  for (const auto& [label, n] : counts) {
    if (n < 2) {
      throw ContractError("triplet mining: identity " + std::to_string(label) +
                          " has a single sample in the batch (sampler contract violated)");
    }
  }
  if (counts.size() < 2) throw ContractError("triplet mining: batch needs at least two identities");
}

// Flat indices into the (B*K) x (B*K) distance matrix of each anchor image's
// hardest positive and hardest negative entries.
void mine_hardest(const Tensor& dist, std::span<const int> labels, std::size_t heads, std::vector<std::size_t>& pos,
                  std::vector<std::size_t>& neg) {
  const std::size_t b = labels.size();
  const std::size_t n = dist.cols();
  pos.assign(b, 0);
  neg.assign(b, 0);
  for (std::size_t a = 0; a < b; ++a) {
    double best_pos = -std::numeric_limits<double>::infinity();
    double best_neg = std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < b; ++o) {
      if (o == a) continue;
      const bool same = labels[o] == labels[a];
      for (std::size_t i = 0; i < heads; ++i)
        for (std::size_t j = 0; j < heads; ++j) {
          const std::size_t r = a * heads + i, c = o * heads + j;
          const double d = dist(r, c);
          if (same && d > best_pos) {
            best_pos = d;
            pos[a] = r * n + c;
          } else if (!same && d < best_neg) {
            best_neg = d;
            neg[a] = r * n + c;
          }
        }
    }
  }
}

ad::Var mined_hinge(ad::Var dist, std::span<const int> labels, std::size_t heads, double margin) {
  std::vector<std::size_t> pos, neg;
  mine_hardest(dist.value(), labels, heads, pos, neg);
  const ad::Var gap = ad::sub(ad::gather(dist, pos), ad::gather(dist, neg));
  return ad::mean(ad::relu(ad::shift(gap, margin)));
}

}  // namespace

ad::Var hard_triplet(ad::Var features, std::span<const int> labels, double margin) {
  if (features.rows() != labels.size()) throw DimensionError("hard_triplet: feature rows and labels differ");
  check_triplet_feasible(labels);
  return mined_hinge(ad::pairwise_sqdist(features, features), labels, 1, margin);
}

ad::Var ihtl(std::span<const ad::Var> heads, std::span<const int> labels, double margin) {
  if (heads.size() != labels.size()) throw DimensionError("ihtl: head sets and labels differ");
  check_triplet_feasible(labels);
  const std::size_t k = heads.front().rows();
  for (const ad::Var& h : heads) {
    if (h.rows() != k) throw DimensionError("ihtl: images disagree on head count");
  }
  const ad::Var stacked = ad::stack_rows(heads);
  return mined_hinge(ad::pairwise_sqdist(stacked, stacked), labels, k, margin);
}

ad::Var fdrt(ad::Var heads) {
  const std::size_t k = heads.rows();
  const ad::Var unit = ad::l2_normalize_rows(heads);
  const ad::Var gram = ad::matmul(unit, ad::transpose(unit));
  const ad::Var dev = ad::sub(gram, heads.tape()->constant(Tensor::eye(k)));
  return ad::scale(ad::frobenius_norm(dev), 1.0 / static_cast<double>(k * k));
}

ad::Var acm_term(ad::Var alpha, double gamma) {
  if (!(gamma > 0.0)) throw ContractError("acm_term: gamma must be > 0");
  return ad::sum(ad::square(ad::min_const(alpha, gamma)));
}

namespace {

ad::Var batch_mean(std::span<const ad::Var> per_image, ad::Var (*term)(ad::Var)) {
  std::vector<ad::Var> values;
  values.reserve(per_image.size());
  for (const ad::Var& v : per_image) values.push_back(term(v));
  return ad::mean(ad::stack_rows(values));
}

}  // namespace

LossTerms branch_loss(const BatchFeatures& batch, const LossWeights& w) {
  LossTerms t;
  t.ce_p = ce_loss(batch.p_star, batch.labels, batch.cls_p);
  t.triplet_p = hard_triplet(batch.p_star, batch.labels, w.margin);
  ad::Var total = ad::add(t.ce_p, t.triplet_p);
  // Regularizers are always evaluated so the metrics log shows them; a zero
  // weight keeps them out of the objective.
  t.fdrt = batch_mean(batch.heads, &fdrt);
  if (w.lambda1 > 0.0) total = ad::add(total, ad::scale(t.fdrt, w.lambda1));
  if (batch.z.valid()) {
    t.ce_z = ce_loss(batch.z, batch.labels, batch.cls_z);
    t.triplet_z = hard_triplet(batch.z, batch.labels, w.margin);
    total = ad::add(total, ad::add(t.ce_z, t.triplet_z));
  }
  t.ihtl = ihtl(batch.heads, batch.labels, w.margin);
  if (w.lambda2 > 0.0) total = ad::add(total, ad::scale(t.ihtl, w.lambda2));
  t.mhsab = total;
  t.total = total;
  return t;
}

LossTerms total_loss(const BatchFeatures& batch, const LossWeights& w, bool train_gfb_ce) {
  LossTerms t = branch_loss(batch, w);
  ad::Var total = t.mhsab;
  if (train_gfb_ce) {
    t.ce_q = ce_loss(batch.q_star, batch.labels, batch.cls_q);
    total = ad::add(total, t.ce_q);
  }
  std::vector<ad::Var> values;
  for (const ad::Var& a : batch.alpha) values.push_back(acm_term(a, w.gamma));
  t.acm = ad::mean(ad::stack_rows(values));
  if (w.lambda3 > 0.0) total = ad::add(total, ad::scale(t.acm, w.lambda3));
  t.total = total;
  return t;
}

LossTerms baseline_loss(const BatchFeatures& batch) {
  LossTerms t;
  t.ce_q = ce_loss(batch.q_star, batch.labels, batch.cls_q);
  t.total = t.ce_q;
  return t;
}

}  // namespace mhsa
