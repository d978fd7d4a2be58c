#include "mhsa/sampler.hpp"

#include <algorithm>
#include <map>

#include "mhsa/errors.hpp"

namespace mhsa {

void SamplerConfig::validate() const {
  if (ids_per_batch < 2) throw ConfigError("sampler.ids_per_batch must be >= 2");
  if (instances_per_id < 2) throw ConfigError("sampler.instances_per_id must be >= 2");
}

PkSampler::PkSampler(std::span<const int> labels, SamplerConfig cfg) : cfg_(cfg), sample_count_(labels.size()) {
  cfg_.validate();
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(i);
  for (auto& [id, members] : by_id) {
    ids_.push_back(id);
    members_.push_back(std::move(members));
  }
  if (ids_.size() < cfg_.ids_per_batch) {
    throw DataError("PK sampler: dataset has " + std::to_string(ids_.size()) + " identities, batch needs " +
                    std::to_string(cfg_.ids_per_batch));
  }
}

std::vector<std::size_t> PkSampler::next_batch(Rng& rng) const {
  std::vector<std::size_t> order(ids_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> batch;
  batch.reserve(cfg_.batch_size());
  for (std::size_t p = 0; p < cfg_.ids_per_batch; ++p) {
    const auto& members = members_[order[p]];
    if (members.size() >= cfg_.instances_per_id) {
      std::vector<std::size_t> pool = members;
      std::shuffle(pool.begin(), pool.end(), rng);
      batch.insert(batch.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg_.instances_per_id));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t k = 0; k < cfg_.instances_per_id; ++k) batch.push_back(members[pick(rng)]);
    }
  }
  return batch;
}

std::size_t PkSampler::batches_per_epoch() const {
  const std::size_t b = cfg_.batch_size();
  return (sample_count_ + b - 1) / b;
}

void LrSchedule::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("schedule.base_lr must be > 0");
  if (!(start_factor > 0.0 && start_factor <= 1.0)) throw ConfigError("schedule.start_factor must be in (0, 1]");
  std::size_t prev = 0;
  for (std::size_t i = 0; i < decay.size(); ++i) {
    if (!(decay[i].second > 0.0)) throw ConfigError("schedule decay rates must be > 0");
    if (i > 0 && decay[i].first <= prev) throw ConfigError("schedule decay epochs must be strictly increasing");
    if (decay[i].first < warmup_epochs) throw ConfigError("schedule decay point falls inside the warm-up");
    prev = decay[i].first;
  }
}

double lr_at(std::size_t epoch, const LrSchedule& s) {
  if (epoch >= s.total_epochs) {
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.total_epochs) +
                        ")");
  }
  if (epoch < s.warmup_epochs) {
    const double t = static_cast<double>(epoch) / static_cast<double>(s.warmup_epochs);
    return s.base_lr * (s.start_factor + (1.0 - s.start_factor) * t);
  }
  double lr = s.base_lr;
  for (const auto& [at, rate] : s.decay) {
    if (epoch >= at) lr = rate;
  }
  return lr;
}

}  // namespace mhsa
