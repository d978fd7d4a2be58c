#include "mhsa/model.hpp"

#include <cmath>

#include "mhsa/errors.hpp"

namespace mhsa {

Shape ModelConfig::input_shape() const {
  if (backbone.provider == Provider::tiny_encoder) {
    return {backbone.image_height() * backbone.image_width(), backbone.image_channels};
  }
  return {backbone.pixels(), backbone.channels};
}

void ModelConfig::validate() const {
  backbone.validate();
  if (branch.heads == 0) throw ConfigError("branch.heads must be >= 1");
  if (branch.heads > backbone.pixels()) {
    throw ConfigError("branch.heads (" + std::to_string(branch.heads) + ") exceeds feature-map pixels (" +
                      std::to_string(backbone.pixels()) + ")");
  }
  if (num_classes < 2) throw ConfigError("need at least 2 training identities");
  if (!branch.enabled && !backbone.train_gfb_ce) {
    throw ConfigError("branch disabled and global CE disabled: nothing to train");
  }
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be > 0");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must be in (0, 1]");
}

ClassifierParams ClassifierParams::init(std::size_t in_dim, std::size_t classes, Rng& rng) {
  ClassifierParams c;
  c.weight = gaussian({in_dim, classes}, std::sqrt(1.0 / static_cast<double>(in_dim)), rng);
  c.bias = Tensor({1, classes}, 0.0);
  return c;
}

Model Model::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.config = cfg;
  const std::size_t c = cfg.backbone.channels, d = cfg.backbone.embed_dim;
  m.backbone = BackboneParams::init(cfg.backbone, rng);
  m.branch = BranchParams::init(c, d, cfg.branch, rng);
  m.cls_q = ClassifierParams::init(d, cfg.num_classes, rng);
  m.cls_p = ClassifierParams::init(fused_dim(cfg.branch.fusion, cfg.branch.heads, d), cfg.num_classes, rng);
  m.cls_z = ClassifierParams::init(d, cfg.num_classes, rng);
  return m;
}

void Model::for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn) {
  backbone.for_each_parameter(fn);
  branch.for_each_parameter(fn);
  fn("cls_q.weight", cls_q.weight);
  fn("cls_q.bias", cls_q.bias);
  fn("cls_p.weight", cls_p.weight);
  fn("cls_p.bias", cls_p.bias);
  fn("cls_z.weight", cls_z.weight);
  fn("cls_z.bias", cls_z.bias);
}

void Model::for_each_buffer(const std::function<void(const std::string&, Tensor&)>& fn) {
  backbone.for_each_buffer(fn);
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for_each_parameter([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

ModelVars ModelVars::bind(ad::Tape& tape, const Model& model, bool requires_grad) {
  ModelVars v;
  v.backbone = BackboneVars::bind(tape, model.backbone, requires_grad);
  v.branch = BranchVars::bind(tape, model.branch, requires_grad, model.config.ln_eps);
  v.cls_q = {tape.leaf(model.cls_q.weight, requires_grad), tape.leaf(model.cls_q.bias, requires_grad)};
  v.cls_p = {tape.leaf(model.cls_p.weight, requires_grad), tape.leaf(model.cls_p.bias, requires_grad)};
  v.cls_z = {tape.leaf(model.cls_z.weight, requires_grad), tape.leaf(model.cls_z.bias, requires_grad)};
  return v;
}

ModelVars ModelVars::from_parameters(const Model& model, std::span<const ad::Var> params) {
  std::size_t next = 0;
  auto take = [&]() {
    if (next >= params.size()) throw ContractError("from_parameters: too few parameter Vars");
    return params[next++];
  };
  ModelVars v;
  v.backbone.proj_w = take();
  v.backbone.bn_gain = take();
  v.backbone.bn_bias = take();
  if (!model.backbone.conv1_w.empty()) {
    v.backbone.conv1_w = take();
    v.backbone.conv1_b = take();
    v.backbone.conv2_w = take();
    v.backbone.conv2_b = take();
  }
  v.backbone.running_mean = &model.backbone.running_mean;
  v.backbone.running_var = &model.backbone.running_var;
  for (ad::Var* slot : {&v.branch.w1, &v.branch.w2, &v.branch.w3, &v.branch.b3, &v.branch.w4, &v.branch.w5, &v.branch.w6,
                        &v.branch.ln_p_gain, &v.branch.ln_p_bias, &v.branch.ln_z_gain, &v.branch.ln_z_bias}) {
    *slot = take();
  }
  v.branch.ln_eps = model.config.ln_eps;
  for (ad::Var* slot : {&v.cls_q.weight, &v.cls_q.bias, &v.cls_p.weight, &v.cls_p.bias, &v.cls_z.weight, &v.cls_z.bias}) {
    *slot = take();
  }
  if (next != params.size()) throw ContractError("from_parameters: too many parameter Vars");
  return v;
}

std::vector<ad::Var> ModelVars::parameters() const {
  std::vector<ad::Var> out = {backbone.proj_w, backbone.bn_gain, backbone.bn_bias};
  if (backbone.conv1_w.valid()) {
    out.insert(out.end(), {backbone.conv1_w, backbone.conv1_b, backbone.conv2_w, backbone.conv2_b});
  }
  out.insert(out.end(), {branch.w1, branch.w2, branch.w3, branch.b3, branch.w4, branch.w5, branch.w6, branch.ln_p_gain,
                         branch.ln_p_bias, branch.ln_z_gain, branch.ln_z_bias});
  out.insert(out.end(), {cls_q.weight, cls_q.bias, cls_p.weight, cls_p.bias, cls_z.weight, cls_z.bias});
  return out;
}

BatchForward forward_batch(ad::Tape& tape, const ModelVars& vars, const ModelConfig& cfg,
                           std::span<const Tensor* const> inputs, Mode mode) {
  if (inputs.empty()) throw ContractError("forward_batch: empty batch");
  const Shape expected = cfg.input_shape();
  BatchForward out;
  out.images.resize(inputs.size());
  std::vector<ad::Var> pooled;
  pooled.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& input = *inputs[i];
    if (input.shape() != expected) {
      throw DimensionError("input " + std::to_string(i) + " has shape " + shape_string(input.shape()) +
                           ", model expects " + shape_string(expected));
    }
    ad::Var q_map;
    if (cfg.backbone.provider == Provider::tiny_encoder) {
      q_map = tiny_encode(tape.constant(input), cfg.backbone.image_height(), cfg.backbone.image_width(), vars.backbone);
    } else {
      q_map = tape.constant(synthetic_features(input));
    }
    out.images[i].feature_map = q_map;
    pooled.push_back(global_pool(q_map));
  }
  out.q_star = project_global(ad::stack_rows(pooled), vars.backbone, mode, cfg.ln_eps, &out.bn_stats);

  if (cfg.branch.enabled) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      ImageForward& img = out.images[i];
      const ad::Var q_i = cfg.branch.rlm ? ad::slice_rows(out.q_star, i, 1) : ad::Var{};
      img.branch = forward_branch(img.feature_map, q_i, vars.branch, cfg.branch.rlm);
      img.fused = cfg.branch.fusion == FusionMode::saffm ? img.branch.p_star
                                                          : fuse_variant(img.branch.P_perp, cfg.branch.fusion, vars.branch);
    }
  }
  return out;
}

BatchFeatures collect_features(const BatchForward& fwd, const ModelVars& vars, std::span<const int> labels) {
  BatchFeatures b;
  b.labels.assign(labels.begin(), labels.end());
  b.q_star = fwd.q_star;
  b.cls_q = vars.cls_q;
  b.cls_p = vars.cls_p;
  b.cls_z = vars.cls_z;
  if (!fwd.images.empty() && fwd.images.front().fused.valid()) {
    std::vector<ad::Var> fused, zs;
    for (const ImageForward& img : fwd.images) {
      fused.push_back(img.fused);
      b.heads.push_back(img.branch.P_perp);
      b.alpha.push_back(img.branch.alpha);
      if (img.branch.z.valid()) zs.push_back(img.branch.z);
    }
    b.p_star = ad::stack_rows(fused);
    if (!zs.empty()) b.z = ad::stack_rows(zs);
  }
  return b;
}

LossTerms model_loss(const ModelConfig& cfg, const BatchFeatures& batch, const LossWeights& w) {
  if (!cfg.branch.enabled) return baseline_loss(batch);
  return total_loss(batch, w, cfg.backbone.train_gfb_ce);
}

}  // namespace mhsa
