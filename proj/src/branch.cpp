#include "mhsa/branch.hpp"

#include <algorithm>
#include <cmath>

#include "mhsa/errors.hpp"

namespace mhsa {

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::saffm: return "saffm";
    case FusionMode::concat: return "concat";
    case FusionMode::sum: return "sum";
  }
  return "?";
}

FusionMode parse_fusion(const std::string& s) {
  if (s == "saffm") return FusionMode::saffm;
  if (s == "concat") return FusionMode::concat;
  if (s == "sum") return FusionMode::sum;
  throw ConfigError("unknown fusion mode '" + s + "' (expected saffm, concat or sum)");
}

std::size_t BranchConfig::hidden_width(std::size_t channels) const {
  return hidden ? hidden : std::max<std::size_t>(1, channels / 4);
}

BranchParams BranchParams::init(std::size_t channels, std::size_t embed_dim, const BranchConfig& cfg, Rng& rng) {
  if (cfg.heads == 0) throw ConfigError("branch needs at least one head");
  const std::size_t c = channels, d = embed_dim, k = cfg.heads;
  const std::size_t h = cfg.hidden_width(c);
  const std::size_t dk = d * k;
  const std::size_t f1 = std::max<std::size_t>(1, dk / 4);
  const std::size_t f2 = std::max<std::size_t>(1, dk / 8);
  auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  auto lecun = [](std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); };

  BranchParams p;
  p.w1 = gaussian({c, h}, he(c), rng);
  p.w2 = gaussian({h, k}, lecun(h), rng);
  p.w3 = gaussian({c, d}, lecun(c), rng);
  p.b3 = Tensor({1, d}, 0.0);
  p.w4 = gaussian({dk, f1}, he(dk), rng);
  p.w5 = gaussian({f1, f2}, he(f1), rng);
  p.w6 = gaussian({f2, k}, lecun(f2), rng);
  p.ln_p_gain = Tensor({1, d}, 1.0);
  p.ln_p_bias = Tensor({1, d}, 0.0);
  p.ln_z_gain = Tensor({1, d}, 1.0);
  p.ln_z_bias = Tensor({1, d}, 0.0);
  return p;
}

void BranchParams::for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("branch.w1", w1);
  fn("branch.w2", w2);
  fn("branch.w3", w3);
  fn("branch.b3", b3);
  fn("branch.w4", w4);
  fn("branch.w5", w5);
  fn("branch.w6", w6);
  fn("branch.ln_p_gain", ln_p_gain);
  fn("branch.ln_p_bias", ln_p_bias);
  fn("branch.ln_z_gain", ln_z_gain);
  fn("branch.ln_z_bias", ln_z_bias);
}

BranchVars BranchVars::bind(ad::Tape& tape, const BranchParams& p, bool requires_grad, double ln_eps) {
  BranchVars v;
  v.w1 = tape.leaf(p.w1, requires_grad);
  v.w2 = tape.leaf(p.w2, requires_grad);
  v.w3 = tape.leaf(p.w3, requires_grad);
  v.b3 = tape.leaf(p.b3, requires_grad);
  v.w4 = tape.leaf(p.w4, requires_grad);
  v.w5 = tape.leaf(p.w5, requires_grad);
  v.w6 = tape.leaf(p.w6, requires_grad);
  v.ln_p_gain = tape.leaf(p.ln_p_gain, requires_grad);
  v.ln_p_bias = tape.leaf(p.ln_p_bias, requires_grad);
  v.ln_z_gain = tape.leaf(p.ln_z_gain, requires_grad);
  v.ln_z_bias = tape.leaf(p.ln_z_bias, requires_grad);
  v.ln_eps = ln_eps;
  return v;
}

ad::Var attention_weights(ad::Var feature_map, const BranchVars& v) {
  const std::size_t pixels = feature_map.rows();
  const std::size_t heads = v.w2.cols();
  if (heads > pixels) {
    throw ConfigError("attention: " + std::to_string(heads) + " heads exceed " + std::to_string(pixels) + " pixels");
  }
  const ad::Var hidden = ad::relu(ad::matmul(feature_map, v.w1));
  return ad::softmax_rows(ad::matmul(hidden, v.w2));
}

ad::Var head_embeddings(ad::Var alpha, ad::Var feature_map, const BranchVars& v) {
  if (alpha.rows() != feature_map.rows()) {
    throw DimensionError("head_embeddings: alpha " + shape_string(alpha.value().shape()) + " vs feature map " +
                         shape_string(feature_map.value().shape()));
  }
  const ad::Var pooled = ad::matmul(ad::transpose(alpha), feature_map);  // K x C
  return ad::add_row(ad::matmul(pooled, v.w3), v.b3);
}

FusionOutput saffm_fuse(ad::Var heads, const BranchVars& v) {
  const std::size_t k = heads.rows(), d = heads.cols();
  const ad::Var flat = ad::reshape(heads, 1, k * d);
  // w4 and w5 compose linearly; the nonlinearity sits after w5.
  const ad::Var hidden = ad::relu(ad::matmul(ad::matmul(flat, v.w4), v.w5));
  FusionOutput out;
  out.beta = ad::softmax_rows(ad::matmul(hidden, v.w6));
  out.p_star = ad::layer_norm(ad::matmul(out.beta, heads), v.ln_p_gain, v.ln_p_bias, v.ln_eps);
  return out;
}

ResidualOutput residual_learn(ad::Var q_star, ad::Var heads, const BranchVars& v) {
  if (q_star.rows() != 1 || q_star.cols() != heads.cols()) {
    throw DimensionError("residual_learn: q* " + shape_string(q_star.value().shape()) + " does not match heads " +
                         shape_string(heads.value().shape()));
  }
  ResidualOutput out;
  const ad::Var global = ad::repeat_row(q_star, heads.rows());
  out.Z = ad::layer_norm(ad::add(global, heads), v.ln_z_gain, v.ln_z_bias, v.ln_eps);
  out.z = ad::sum_rows(out.Z);
  return out;
}

BranchOutput forward_branch(ad::Var feature_map, ad::Var q_star, const BranchVars& v, bool rlm) {
  BranchOutput out;
  out.alpha = attention_weights(feature_map, v);
  out.P = head_embeddings(out.alpha, feature_map, v);
  out.P_perp = frm_transform(out.P);
  out.P_flat = ad::reshape(out.P_perp, 1, out.P_perp.rows() * out.P_perp.cols());
  FusionOutput fused = saffm_fuse(out.P_perp, v);
  out.beta = fused.beta;
  out.p_star = fused.p_star;
  if (rlm && q_star.valid()) {
    ResidualOutput res = residual_learn(q_star, out.P_perp, v);
    out.Z = res.Z;
    out.z = res.z;
  }
  return out;
}

ad::Var fuse_variant(ad::Var heads, FusionMode mode, const BranchVars& v) {
  switch (mode) {
    case FusionMode::saffm: return saffm_fuse(heads, v).p_star;
    case FusionMode::concat: return ad::reshape(heads, 1, heads.rows() * heads.cols());
    case FusionMode::sum: return ad::sum_rows(heads);
  }
  throw ConfigError("unknown fusion mode");
}

std::size_t fused_dim(FusionMode mode, std::size_t heads, std::size_t embed_dim) {
  return mode == FusionMode::concat ? heads * embed_dim : embed_dim;
}

}  // namespace mhsa
