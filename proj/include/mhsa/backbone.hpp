#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "mhsa/autodiff.hpp"
#include "mhsa/random.hpp"
#include "mhsa/tensor.hpp"

namespace mhsa {

enum class Provider { synthetic, tiny_encoder };

std::string to_string(Provider p);
Provider parse_provider(const std::string& s);

struct BackboneConfig {
  Provider provider = Provider::synthetic;
  std::size_t hf = 6;
  std::size_t wf = 4;
  std::size_t channels = 64;   // C
  std::size_t embed_dim = 32;  // D
  bool train_gfb_ce = true;    // false trains the dagger variant
  // tiny_encoder only: input is (4*hf) x (4*wf) x image_channels.
  std::size_t image_channels = 8;
  std::size_t encoder_width = 32;

  std::size_t pixels() const { return hf * wf; }
  std::size_t image_height() const { return 4 * hf; }
  std::size_t image_width() const { return 4 * wf; }
  void validate() const;
};

enum class Mode { train, eval };

struct BackboneParams {
  Tensor proj_w;   // C x D
  Tensor bn_gain;  // 1 x D
  Tensor bn_bias;  // 1 x D
  // tiny_encoder only; empty for the synthetic provider.
  Tensor conv1_w;  // 9*Ci x E
  Tensor conv1_b;  // 1 x E
  Tensor conv2_w;  // 9*E x C
  Tensor conv2_b;  // 1 x C

  // Batch-norm running statistics (not trained).
  Tensor running_mean;
  Tensor running_var;

  static BackboneParams init(const BackboneConfig& cfg, Rng& rng);
  void for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_buffer(const std::function<void(const std::string&, Tensor&)>& fn);
};

struct BackboneVars {
  ad::Var proj_w, bn_gain, bn_bias;
  ad::Var conv1_w, conv1_b, conv2_w, conv2_b;
  const Tensor* running_mean = nullptr;
  const Tensor* running_var = nullptr;

  static BackboneVars bind(ad::Tape& tape, const BackboneParams& p, bool requires_grad);
};

// Per-column batch statistics of the pre-normalization projection.
struct BatchStats {
  Tensor mean;
  Tensor var;  // biased
  std::size_t count = 0;
};

/// q = mean over pixels of Q (J x C) -> 1 x C.
ad::Var global_pool(ad::Var feature_map);

/// Linear map, batch normalization, ReLU over a B x C batch of pooled
/// vectors. Training mode normalizes with the batch's own statistics and
/// reports them through `stats`; eval mode uses the running averages.
ad::Var project_global(ad::Var pooled_batch, const BackboneVars& vars, Mode mode, double eps,
                       BatchStats* stats = nullptr);

void update_running_stats(BackboneParams& params, const BatchStats& stats, double momentum);

/// Two stride-2 3x3 conv + ReLU stages: image (Hi*Wi) x Ci -> (Hi/4 * Wi/4) x C.
ad::Var tiny_encode(ad::Var image, std::size_t height, std::size_t width, const BackboneVars& vars);

/// Identity provider for precomputed feature maps.
inline const Tensor& synthetic_features(const Tensor& stored_map) { return stored_map; }

}  // namespace mhsa
