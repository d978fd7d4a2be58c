#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mhsa/config.hpp"
#include "mhsa/eval.hpp"
#include "mhsa/train.hpp"

namespace mhsa {

struct ExperimentResult {
  TrainResult training;
  std::optional<EvalReport> report;  // absent when training failed numerically
  Variant evaluated_as = Variant::full;
  std::string warning;
};

/// Trains on data.train and evaluates query vs gallery with the configured
/// variant and fusion.
ExperimentResult run_experiment(const RunConfig& cfg, const Dataset& data);

struct SweepRow {
  double value = 0.0;
  std::optional<EvalReport> report;
  std::string error;  // set when this grid point failed
};

/// One train+eval per value; failures are recorded and the sweep continues.
std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& param, const std::vector<double>& values,
                                const Dataset& data);

/// `value,rank1,rank5,rank10,mAP`; failed points carry nan metrics.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

}  // namespace mhsa
