#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mhsa/dataset.hpp"
#include "mhsa/losses.hpp"
#include "mhsa/model.hpp"
#include "mhsa/sampler.hpp"

namespace mhsa {

struct TrainConfig {
  ModelConfig model;  // num_classes is filled from the training split
  LossWeights loss;
  SamplerConfig sampler;
  LrSchedule schedule;
  std::uint64_t seed = 1;
};

// One CSV row. Terms absent from the objective are reported as 0.
struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double ce_q = 0, ce_p = 0, ce_z = 0, triplet_p = 0, triplet_z = 0, fdrt = 0, ihtl = 0, acm = 0, total = 0;
};

struct TrainResult {
  Model model;  // final model, or the last good one after a numeric failure
  std::vector<StepMetrics> metrics;
  std::optional<std::string> numeric_failure;
};

/// Training labels become contiguous class indices in ascending id order.
std::vector<int> class_indices(const Split& split, std::size_t* num_classes);

/// Seeds the generator, initializes the model and runs the PK/Adam loop.
/// A non-finite loss or gradient stops training and keeps the pre-step model.
TrainResult train(const TrainConfig& cfg, const Split& train_split,
                  const std::function<void(const StepMetrics&)>& on_step = {});

/// Continues from an existing model with its own generator (used by tests).
TrainResult train_from(Model model, const TrainConfig& cfg, const Split& train_split, Rng& rng,
                       const std::function<void(const StepMetrics&)>& on_step = {});

inline constexpr const char* kMetricsHeader = "step,epoch,lr,ce_q,ce_p,ce_z,triplet_p,triplet_z,fdrt,ihtl,acm,total";

std::string metrics_row(const StepMetrics& m);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& metrics);

}  // namespace mhsa
