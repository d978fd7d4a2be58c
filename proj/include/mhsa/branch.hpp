#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "mhsa/autodiff.hpp"
#include "mhsa/random.hpp"
#include "mhsa/tensor.hpp"

namespace mhsa {

enum class FusionMode { saffm, concat, sum };

std::string to_string(FusionMode m);
FusionMode parse_fusion(const std::string& s);

struct BranchConfig {
  bool enabled = true;
  std::size_t heads = 8;   // K
  std::size_t hidden = 0;  // width of the first attention layer; 0 means channels / 4
  FusionMode fusion = FusionMode::saffm;
  bool rlm = true;

  std::size_t hidden_width(std::size_t channels) const;
};

/// Multi-head self-attention branch weights, stored in row-vector orientation:
/// every weight multiplies its input from the right.
struct BranchParams {
  Tensor w1;  // C x H'
  Tensor w2;  // H' x K
  Tensor w3;  // C x D
  Tensor b3;  // 1 x D
  Tensor w4;  // DK x DK/4
  Tensor w5;  // DK/4 x DK/8
  Tensor w6;  // DK/8 x K
  Tensor ln_p_gain, ln_p_bias;  // 1 x D, fused-feature layer norm
  Tensor ln_z_gain, ln_z_bias;  // 1 x D, residual layer norm

  std::size_t heads() const { return w2.cols(); }
  std::size_t embed_dim() const { return w3.cols(); }

  static BranchParams init(std::size_t channels, std::size_t embed_dim, const BranchConfig& cfg, Rng& rng);
  void for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn);
};

struct BranchVars {
  ad::Var w1, w2, w3, b3, w4, w5, w6;
  ad::Var ln_p_gain, ln_p_bias, ln_z_gain, ln_z_bias;
  double ln_eps = 1e-5;

  static BranchVars bind(ad::Tape& tape, const BranchParams& p, bool requires_grad, double ln_eps);
};

/// Pixel-wise softmax over heads of ReLU(Q w1) w2; J x K, rows sum to 1.
ad::Var attention_weights(ad::Var feature_map, const BranchVars& v);

/// P = (alpha^T Q) w3 + b3: K x D head embeddings.
ad::Var head_embeddings(ad::Var alpha, ad::Var feature_map, const BranchVars& v);

/// The regularization module keeps the data path unchanged; its effect comes
/// entirely from the diversity and improved triplet loss terms.
inline ad::Var frm_transform(ad::Var heads) { return heads; }

struct FusionOutput {
  ad::Var beta;    // 1 x K
  ad::Var p_star;  // 1 x D
};

/// beta = softmax(ReLU(P_flat w4 w5) w6); p* = LayerNorm(beta P).
FusionOutput saffm_fuse(ad::Var heads, const BranchVars& v);

struct ResidualOutput {
  ad::Var Z;  // K x D
  ad::Var z;  // 1 x D
};

/// Z = LayerNorm(broadcast(q*) + P) row-wise; z = column sum of Z.
ResidualOutput residual_learn(ad::Var q_star, ad::Var heads, const BranchVars& v);

struct BranchOutput {
  ad::Var alpha, P, P_perp, P_flat, beta, p_star;
  ad::Var Z, z;  // unset when RLM is disabled or no q* was supplied
};

BranchOutput forward_branch(ad::Var feature_map, ad::Var q_star, const BranchVars& v, bool rlm = true);

/// Feature used for matching under each fusion ablation:
/// saffm -> p* (1 x D), concat -> flattened heads (1 x KD), sum -> column sum (1 x D).
ad::Var fuse_variant(ad::Var heads, FusionMode mode, const BranchVars& v);

std::size_t fused_dim(FusionMode mode, std::size_t heads, std::size_t embed_dim);

}  // namespace mhsa
