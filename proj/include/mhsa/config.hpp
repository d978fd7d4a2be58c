#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mhsa/dataset.hpp"
#include "mhsa/eval.hpp"
#include "mhsa/train.hpp"

namespace mhsa {

/// Everything a command needs, read from one YAML document. Defaults are the
/// reference operating point at desk scale.
struct RunConfig {
  std::uint64_t seed = 1;
  BackboneConfig backbone;
  BranchConfig branch;
  double ln_eps = 1e-5;
  double bn_momentum = 0.1;
  LossWeights loss;
  SamplerConfig sampler;
  LrSchedule schedule;
  SyntheticSpec data;  // grid and channel fields are taken from `backbone`
  Variant eval_variant = Variant::full;
  FusionMode eval_fusion = FusionMode::saffm;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;

  void validate() const;
  // Dataset spec with grid/channels synced to the backbone.
  SyntheticSpec data_spec() const;
  TrainConfig train_config() const;
};

/// Parses and validates; unknown keys and malformed values throw ConfigError.
RunConfig parse_run_config(const std::string& yaml_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& cfg);

bool is_sweep_parameter(const std::string& param);

/// Sets one sweepable hyper-parameter: K, lambda1, lambda2, lambda3 or gamma.
void apply_sweep_value(RunConfig& cfg, const std::string& param, double value);

}  // namespace mhsa
