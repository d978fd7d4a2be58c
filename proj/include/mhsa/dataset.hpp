#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mhsa/container.hpp"
#include "mhsa/tensor.hpp"

namespace mhsa {

/// Parameters of the synthetic occluded re-identification world.
///
/// Each identity owns a prototype pixel field; samples add per-sample noise.
/// Occluded samples have one contiguous rectangle of pixels replaced by
/// occluder texture drawn from a small bank shared by all identities, so the
/// occluded region carries no identity information.
struct SyntheticSpec {
  std::size_t n_ids = 20;           // training identities
  std::size_t samples_per_id = 10;  // training samples per identity
  std::size_t test_ids = 10;        // identities shared by query and gallery
  std::size_t query_per_id = 4;
  std::size_t gallery_per_id = 6;

  std::size_t hf = 6;
  std::size_t wf = 4;
  std::size_t channels = 64;
  // When non-zero, samples are (4*hf) x (4*wf) x image_channels images
  // instead of hf*wf x channels feature maps.
  std::size_t image_channels = 0;

  double prototype_std = 1.0;
  double within_id_std = 0.5;
  double occlusion_prob = 0.5;  // training split
  double query_occlusion_prob = 1.0;
  double gallery_occlusion_prob = 0.0;
  double area_min = 0.2;
  double area_max = 0.4;
  double occluder_std = 2.0;
  std::size_t occluder_kinds = 4;
  std::size_t cameras = 2;
  std::uint64_t seed = 1;

  std::size_t pixels() const { return hf * wf; }
  void validate() const;
};

struct LabeledSample {
  Tensor input;  // J x C feature map or (Hi*Wi) x Ci image
  int id = 0;
  int cam = 0;
  std::vector<std::uint8_t> mask;  // per feature-map pixel, 1 = occluded

  bool occluded() const;
  double occluded_fraction() const;
};

struct Split {
  std::vector<LabeledSample> samples;

  std::vector<int> labels() const;
  std::size_t identity_count() const;
};

struct Dataset {
  Split train, query, gallery;
  std::size_t hf = 0, wf = 0;
};

Dataset generate_dataset(const SyntheticSpec& spec);

/// Rectangle of `round(area * J)` pixels (or the closest achievable area)
/// placed uniformly at random; exposed for tests.
std::vector<std::uint8_t> occlusion_block(std::size_t hf, std::size_t wf, double area_fraction, std::mt19937_64& rng);

std::vector<NamedTensor> split_to_entries(const Split& split, std::size_t hf, std::size_t wf);
Split split_from_entries(std::span<const NamedTensor> entries, std::size_t* hf = nullptr, std::size_t* wf = nullptr);

// train.mhsa / query.mhsa / gallery.mhsa under dir.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mhsa
