#include "mhsa/backbone.hpp"

#include <cmath>

#include "mhsa/errors.hpp"

namespace mhsa {

std::string to_string(Provider p) { return p == Provider::synthetic ? "synthetic" : "tiny_encoder"; }

Provider parse_provider(const std::string& s) {
  if (s == "synthetic") return Provider::synthetic;
  if (s == "tiny_encoder") return Provider::tiny_encoder;
  throw ConfigError("unknown backbone provider '" + s + "' (expected synthetic or tiny_encoder)");
}

void BackboneConfig::validate() const {
  if (hf == 0 || wf == 0 || channels == 0 || embed_dim == 0) throw ConfigError("backbone dims must all be >= 1");
  if (embed_dim < 2) throw ConfigError("embed_dim must be >= 2 for layer normalization");
  if (provider == Provider::tiny_encoder && (image_channels == 0 || encoder_width == 0)) {
    throw ConfigError("tiny_encoder needs image_channels and encoder_width >= 1");
  }
}

BackboneParams BackboneParams::init(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  BackboneParams p;
  const std::size_t c = cfg.channels, d = cfg.embed_dim;
  p.proj_w = gaussian({c, d}, std::sqrt(2.0 / static_cast<double>(c)), rng);
  p.bn_gain = Tensor({1, d}, 1.0);
  p.bn_bias = Tensor({1, d}, 0.0);
  p.running_mean = Tensor({1, d}, 0.0);
  p.running_var = Tensor({1, d}, 1.0);
  if (cfg.provider == Provider::tiny_encoder) {
    const std::size_t ci = cfg.image_channels, e = cfg.encoder_width;
    p.conv1_w = gaussian({9 * ci, e}, std::sqrt(2.0 / static_cast<double>(9 * ci)), rng);
    p.conv1_b = Tensor({1, e}, 0.0);
    p.conv2_w = gaussian({9 * e, c}, std::sqrt(2.0 / static_cast<double>(9 * e)), rng);
    p.conv2_b = Tensor({1, c}, 0.0);
  }
  return p;
}

void BackboneParams::for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("backbone.proj_w", proj_w);
  fn("backbone.bn_gain", bn_gain);
  fn("backbone.bn_bias", bn_bias);
  if (!conv1_w.empty()) {
    fn("backbone.conv1_w", conv1_w);
    fn("backbone.conv1_b", conv1_b);
    fn("backbone.conv2_w", conv2_w);
    fn("backbone.conv2_b", conv2_b);
  }
}

void BackboneParams::for_each_buffer(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("backbone.bn_running_mean", running_mean);
  fn("backbone.bn_running_var", running_var);
}

BackboneVars BackboneVars::bind(ad::Tape& tape, const BackboneParams& p, bool requires_grad) {
  BackboneVars v;
  v.proj_w = tape.leaf(p.proj_w, requires_grad);
  v.bn_gain = tape.leaf(p.bn_gain, requires_grad);
  v.bn_bias = tape.leaf(p.bn_bias, requires_grad);
  if (!p.conv1_w.empty()) {
    v.conv1_w = tape.leaf(p.conv1_w, requires_grad);
    v.conv1_b = tape.leaf(p.conv1_b, requires_grad);
    v.conv2_w = tape.leaf(p.conv2_w, requires_grad);
    v.conv2_b = tape.leaf(p.conv2_b, requires_grad);
  }
  v.running_mean = &p.running_mean;
  v.running_var = &p.running_var;
  return v;
}

ad::Var global_pool(ad::Var feature_map) { return ad::mean_rows(feature_map); }

ad::Var project_global(ad::Var pooled_batch, const BackboneVars& vars, Mode mode, double eps, BatchStats* stats) {
  const ad::Var y = ad::matmul(pooled_batch, vars.proj_w);
  ad::Var normalized;
  if (mode == Mode::train) {
    if (y.rows() < 2) throw ContractError("batch normalization in training mode needs a batch of at least 2");
    if (stats) {
      const Tensor& Y = y.value();
      const std::size_t b = Y.rows(), d = Y.cols();
      stats->mean = Tensor({1, d});
      stats->var = Tensor({1, d});
      stats->count = b;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) stats->mean[j] += Y(i, j) / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = Y(i, j) - stats->mean[j];
          stats->var[j] += diff * diff / static_cast<double>(b);
        }
    }
    normalized = ad::transpose(ad::normalize_rows(ad::transpose(y), eps));
  } else {
    ad::Tape& tape = *y.tape();
    Tensor neg_mean = *vars.running_mean;
    Tensor inv_std = *vars.running_var;
    for (double& v : neg_mean.values()) v = -v;
    for (double& v : inv_std.values()) v = 1.0 / std::sqrt(v + eps);
    normalized = ad::mul_row(ad::add_row(y, tape.constant(neg_mean)), tape.constant(inv_std));
  }
  return ad::relu(ad::add_row(ad::mul_row(normalized, vars.bn_gain), vars.bn_bias));
}

void update_running_stats(BackboneParams& params, const BatchStats& stats, double momentum) {
  if (stats.count < 2) return;
  const double unbias = static_cast<double>(stats.count) / static_cast<double>(stats.count - 1);
  for (std::size_t j = 0; j < params.running_mean.size(); ++j) {
    params.running_mean[j] = (1.0 - momentum) * params.running_mean[j] + momentum * stats.mean[j];
    params.running_var[j] = (1.0 - momentum) * params.running_var[j] + momentum * stats.var[j] * unbias;
  }
}

ad::Var tiny_encode(ad::Var image, std::size_t height, std::size_t width, const BackboneVars& vars) {
  if (height % 4 || width % 4) {
    throw ConfigError("tiny_encode: input " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by the downsampling factor 4");
  }
  if (!vars.conv1_w.valid()) throw ConfigError("tiny_encode: backbone has no encoder parameters");
  ad::Var h = ad::im2col_3x3_s2(image, height, width);
  h = ad::relu(ad::add_row(ad::matmul(h, vars.conv1_w), vars.conv1_b));
  h = ad::im2col_3x3_s2(h, height / 2, width / 2);
  return ad::relu(ad::add_row(ad::matmul(h, vars.conv2_w), vars.conv2_b));
}

}  // namespace mhsa
