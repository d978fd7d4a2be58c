#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mhsa/container.hpp"
#include "mhsa/model.hpp"

namespace mhsa {

/// Parameters, batch-norm buffers and `meta.*` entries describing the model
/// configuration (including the training-time flags eval needs).
std::vector<NamedTensor> model_to_entries(const Model& model);

/// Rebuilds a model; throws ConfigError when a stored tensor disagrees with the
/// dimensions recorded in the metadata.
Model model_from_entries(std::span<const NamedTensor> entries);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mhsa
