#include "mhsa/experiment.hpp"

#include <cstdio>
#include <fstream>

#include "mhsa/errors.hpp"

namespace mhsa {

ExperimentResult run_experiment(const RunConfig& cfg, const Dataset& data) {
  cfg.validate();
  ExperimentResult out;
  out.training = train(cfg.train_config(), data.train);
  if (out.training.numeric_failure) return out;
  const Variant requested = cfg.branch.enabled ? cfg.eval_variant : Variant::global;
  out.evaluated_as = resolve_variant(out.training.model, requested, &out.warning);
  out.report = evaluate(out.training.model, data, out.evaluated_as, cfg.eval_fusion);
  return out;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& param, const std::vector<double>& values,
                                const Dataset& data) {
  std::vector<SweepRow> rows;
  for (double v : values) {
    SweepRow row;
    row.value = v;
    try {
      RunConfig cfg = base;
      apply_sweep_value(cfg, param, v);
      ExperimentResult r = run_experiment(cfg, data);
      if (r.training.numeric_failure) {
        row.error = "numeric failure: " + *r.training.numeric_failure;
      } else {
        row.report = std::move(r.report);
      }
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << "value,rank1,rank5,rank10,mAP\n";
  char buf[256];
  for (const auto& r : rows) {
    if (r.report) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g", r.value, r.report->rank(1), r.report->rank(5),
                    r.report->rank(10), r.report->mAP);
    } else {
      std::snprintf(buf, sizeof buf, "%.17g,nan,nan,nan,nan", r.value);
    }
    f << buf << '\n';
  }
}

}  // namespace mhsa
