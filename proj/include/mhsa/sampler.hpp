#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mhsa/random.hpp"

namespace mhsa {

struct SamplerConfig {
  std::size_t ids_per_batch = 8;     // P
  std::size_t instances_per_id = 4;  // K

  std::size_t batch_size() const { return ids_per_batch * instances_per_id; }
  void validate() const;
};

/// P identities x K instances per batch. Identities are drawn without
/// replacement; instances without replacement when an identity has at least
/// K samples, with replacement otherwise.
class PkSampler {
 public:
  PkSampler(std::span<const int> labels, SamplerConfig cfg);

  std::vector<std::size_t> next_batch(Rng& rng) const;
  // Batches per epoch: ceil(N / (P*K)).
  std::size_t batches_per_epoch() const;

 private:
  SamplerConfig cfg_;
  std::size_t sample_count_ = 0;
  std::vector<int> ids_;
  std::vector<std::vector<std::size_t>> members_;
};

struct LrSchedule {
  double base_lr = 1e-3;
  std::size_t warmup_epochs = 4;
  double start_factor = 0.01;
  // (epoch, lr): from that epoch on (inclusive) the rate is lr. Sorted ascending.
  std::vector<std::pair<std::size_t, double>> decay = {{15, 1e-4}, {23, 1e-5}};
  std::size_t total_epochs = 30;

  void validate() const;
};

double lr_at(std::size_t epoch, const LrSchedule& s);

}  // namespace mhsa
