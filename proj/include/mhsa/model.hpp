#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mhsa/autodiff.hpp"
#include "mhsa/backbone.hpp"
#include "mhsa/branch.hpp"
#include "mhsa/losses.hpp"
#include "mhsa/random.hpp"

namespace mhsa {

struct ModelConfig {
  BackboneConfig backbone;
  BranchConfig branch;
  std::size_t num_classes = 0;
  double ln_eps = 1e-5;
  double bn_momentum = 0.1;

  // Shape of one stored input: J x C feature map, or (Hi*Wi) x Ci image.
  Shape input_shape() const;
  void validate() const;
};

struct ClassifierParams {
  Tensor weight;  // D' x N
  Tensor bias;    // 1 x N

  static ClassifierParams init(std::size_t in_dim, std::size_t classes, Rng& rng);
};

/// All trainable state plus batch-norm buffers. Value type.
struct Model {
  ModelConfig config;
  BackboneParams backbone;
  BranchParams branch;
  ClassifierParams cls_q, cls_p, cls_z;

  static Model init(const ModelConfig& cfg, Rng& rng);

  // Deterministic order; names are the checkpoint entry names.
  void for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_buffer(const std::function<void(const std::string&, Tensor&)>& fn);
  std::size_t parameter_count();
};

struct ModelVars {
  BackboneVars backbone;
  BranchVars branch;
  ClassifierVars cls_q, cls_p, cls_z;

  static ModelVars bind(ad::Tape& tape, const Model& model, bool requires_grad);
  // Wraps already-recorded Vars given in parameters() order (gradient checks).
  static ModelVars from_parameters(const Model& model, std::span<const ad::Var> params);
  // Same order as Model::for_each_parameter.
  std::vector<ad::Var> parameters() const;
};

struct ImageForward {
  ad::Var feature_map;  // J x C
  BranchOutput branch;
  ad::Var fused;  // matching feature under the configured fusion mode
};

struct BatchForward {
  std::vector<ImageForward> images;
  ad::Var q_star;  // B x D
  BatchStats bn_stats;
};

/// Runs backbone + branch for a batch of stored inputs.
BatchForward forward_batch(ad::Tape& tape, const ModelVars& vars, const ModelConfig& cfg,
                           std::span<const Tensor* const> inputs, Mode mode);

/// Packs a forward pass into what the objectives consume.
BatchFeatures collect_features(const BatchForward& fwd, const ModelVars& vars, std::span<const int> labels);

/// Objective for the configured model: the full total loss, or CE on q* only
/// when the branch is disabled.
LossTerms model_loss(const ModelConfig& cfg, const BatchFeatures& batch, const LossWeights& w);

}  // namespace mhsa
