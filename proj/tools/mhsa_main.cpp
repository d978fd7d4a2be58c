#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mhsa/attention_io.hpp"
#include "mhsa/checkpoint.hpp"
#include "mhsa/config.hpp"
#include "mhsa/errors.hpp"
#include "mhsa/experiment.hpp"
#include "mhsa/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerification = 4;

void write_manifest(const fs::path& out, const std::string& command, json body) {
  body["command"] = command;
  body["version"] = "0.1.0";
  std::ofstream f(out / "manifest.json", std::ios::trunc);
  if (!f) throw mhsa::DataError("cannot write " + (out / "manifest.json").string());
  f << body.dump(2) << '\n';
}

json split_summary(const mhsa::Split& s) {
  return {{"samples", s.samples.size()}, {"identities", s.identity_count()}};
}

json report_json(const mhsa::EvalReport& r) {
  return {{"rank1", r.rank(1)}, {"rank5", r.rank(5)}, {"rank10", r.rank(10)}, {"mAP", r.mAP},
          {"valid_queries", r.valid_queries}, {"invalid_queries", r.invalid_queries}};
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw mhsa::ConfigError("--values: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw mhsa::ConfigError("--values is empty");
  return out;
}

int cmd_gen_data(const fs::path& config, const fs::path& out, bool force) {
  const mhsa::RunConfig cfg = mhsa::load_run_config(config);
  for (const char* name : {"train.mhsa", "query.mhsa", "gallery.mhsa", "manifest.json"}) {
    if (!force && fs::exists(out / name)) {
      throw mhsa::DataError((out / name).string() + " already exists (use --force to overwrite)");
    }
  }
  const mhsa::Dataset data = mhsa::generate_dataset(cfg.data_spec());
  mhsa::save_dataset(data, out);
  write_manifest(out, "gen-data",
                 {{"train", split_summary(data.train)},
                  {"query", split_summary(data.query)},
                  {"gallery", split_summary(data.gallery)},
                  {"grid", {data.hf, data.wf}},
                  {"config", mhsa::dump_run_config(cfg)}});
  std::cout << "wrote " << data.train.samples.size() << " train, " << data.query.samples.size() << " query, "
            << data.gallery.samples.size() << " gallery samples to " << out.string() << '\n';
  return kExitOk;
}

int cmd_train(const fs::path& config, const fs::path& data_dir, const fs::path& out) {
  const mhsa::RunConfig cfg = mhsa::load_run_config(config);
  const mhsa::Dataset data = mhsa::load_dataset(data_dir);
  fs::create_directories(out);
  const mhsa::TrainResult result = mhsa::train(cfg.train_config(), data.train);
  mhsa::save_checkpoint(out / "checkpoint.mhsa", result.model);
  mhsa::write_metrics_csv(out / "metrics.csv", result.metrics);
  json manifest = {{"checkpoint", "checkpoint.mhsa"},
                   {"metrics", "metrics.csv"},
                   {"steps", result.metrics.size()},
                   {"config", mhsa::dump_run_config(cfg)}};
  if (result.numeric_failure) {
    manifest["numeric_failure"] = *result.numeric_failure;
    write_manifest(out, "train", manifest);
    std::cerr << "error: training aborted, " << *result.numeric_failure << "; last good checkpoint kept\n";
    return kExitNumeric;
  }
  write_manifest(out, "train", manifest);
  if (result.metrics.empty()) {
    std::cout << "0 steps; checkpoint holds the initialization\n";
  } else {
    const auto& first = result.metrics.front();
    const auto& last = result.metrics.back();
    std::printf("%zu steps  loss %.4f -> %.4f  (ce_q %.4f ce_p %.4f ce_z %.4f tri_p %.4f tri_z %.4f ihtl %.4f fdrt %.4f acm %.3g)\n",
                result.metrics.size(), first.total, last.total, last.ce_q, last.ce_p, last.ce_z, last.triplet_p,
                last.triplet_z, last.ihtl, last.fdrt, last.acm);
  }
  return kExitOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const std::string& variant_name,
             const std::string& fusion_name, fs::path out) {
  const mhsa::Model model = mhsa::load_checkpoint(checkpoint);
  const mhsa::Dataset data = mhsa::load_dataset(data_dir);
  const mhsa::FusionMode fusion = fusion_name.empty() ? model.config.branch.fusion : mhsa::parse_fusion(fusion_name);
  std::string warning;
  const mhsa::Variant variant = mhsa::resolve_variant(model, mhsa::parse_variant(variant_name), &warning);
  if (!warning.empty()) std::cerr << "warning: " << warning << '\n';
  const mhsa::EvalReport report = mhsa::evaluate(model, data, variant, fusion);
  if (out.empty()) out = checkpoint.parent_path().empty() ? fs::path(".") : checkpoint.parent_path();
  fs::create_directories(out);
  const std::string csv = "eval_" + mhsa::to_string(variant) + "_" + mhsa::to_string(fusion) + ".csv";
  mhsa::write_report_csv(out / csv, report);
  json manifest = {{"report", csv}, {"variant", mhsa::to_string(variant)}, {"fusion", mhsa::to_string(fusion)},
                   {"checkpoint", checkpoint.string()}, {"data", data_dir.string()}, {"metrics", report_json(report)}};
  if (!warning.empty()) manifest["warning"] = warning;
  write_manifest(out, "eval", manifest);
  std::cout << mhsa::report_summary(report) << '\n';
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, bool corrupt) {
  mhsa::GradcheckOptions options;
  if (corrupt) {
    options.corrupt_analytic = [](std::vector<mhsa::Tensor>& grads) {
      if (!grads.empty()) grads.front()[0] = grads.front()[0] * 1.5 + 1.0;
    };
  }
  const auto results = mhsa::run_gradcheck_suite(seed, options);
  std::vector<std::string> failed;
  for (const auto& r : results) {
    std::printf("%-30s max_rel_err %.3e  checked %4zu  skipped %3zu  %s\n", r.component.c_str(), r.max_rel_error,
                r.checked, r.skipped, r.passed ? "ok" : "FAIL");
    if (!r.passed) failed.push_back(r.component);
  }
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    std::cerr << "error: gradient check failed for " << names << '\n';
    return kExitVerification;
  }
  std::cout << results.size() << " components passed\n";
  return kExitOk;
}

int cmd_sweep(const std::string& param, const std::string& values_text, const fs::path& config,
              const fs::path& data_dir, const fs::path& out) {
  const mhsa::RunConfig cfg = mhsa::load_run_config(config);
  const std::vector<double> values = parse_values(values_text);
  if (!mhsa::is_sweep_parameter(param)) {
    throw mhsa::ConfigError("unknown sweep parameter '" + param + "' (expected K, lambda1, lambda2, lambda3 or gamma)");
  }
  const mhsa::Dataset data = data_dir.empty() ? mhsa::generate_dataset(cfg.data_spec()) : mhsa::load_dataset(data_dir);
  fs::create_directories(out);
  const auto rows = mhsa::run_sweep(cfg, param, values, data);
  const std::string csv = "sweep_" + param + ".csv";
  mhsa::write_sweep_csv(out / csv, rows);
  json failures = json::array();
  for (const auto& r : rows) {
    if (r.report) {
      std::printf("%s=%-10g %s\n", param.c_str(), r.value, mhsa::report_summary(*r.report).c_str());
    } else {
      std::printf("%s=%-10g failed: %s\n", param.c_str(), r.value, r.error.c_str());
      failures.push_back({{"value", r.value}, {"error", r.error}});
    }
  }
  write_manifest(out, "sweep",
                 {{"param", param}, {"values", values}, {"csv", csv}, {"failures", failures},
                  {"config", mhsa::dump_run_config(cfg)}});
  return kExitOk;
}

int cmd_export_attn(const fs::path& checkpoint, const fs::path& data_dir, long long index, const std::string& split_name,
                    const fs::path& out) {
  const mhsa::Model model = mhsa::load_checkpoint(checkpoint);
  if (!model.config.branch.enabled) throw mhsa::ConfigError("checkpoint has no attention branch");
  const mhsa::Dataset data = mhsa::load_dataset(data_dir);
  const mhsa::Split* split = split_name == "train"   ? &data.train
                             : split_name == "query" ? &data.query
                             : split_name == "gallery" ? &data.gallery
                                                     : nullptr;
  if (!split) throw mhsa::ConfigError("--split must be train, query or gallery");
  if (index < 0 || static_cast<std::size_t>(index) >= split->samples.size()) {
    throw mhsa::DataError("--sample " + std::to_string(index) + " out of range (split has " +
                          std::to_string(split->samples.size()) + " samples)");
  }
  const mhsa::LabeledSample& sample = split->samples[static_cast<std::size_t>(index)];
  const mhsa::AttentionSnapshot snap = mhsa::attention_snapshot(model, sample.input);
  fs::create_directories(out);
  const auto files = mhsa::export_attention(snap.alpha, model.config.backbone.hf, model.config.backbone.wf,
                                            (out / "").string());
  const double plain = mhsa::attention_occlusion_score(snap.alpha, sample.mask);
  const double weighted = mhsa::attention_occlusion_score(snap.alpha, sample.mask, snap.beta);
  json listing = json::array();
  for (const auto& f : files) listing.push_back(f.filename().string());
  write_manifest(out, "export-attn",
                 {{"checkpoint", checkpoint.string()}, {"split", split_name}, {"sample", index}, {"files", listing},
                  {"occluded_fraction", sample.occluded_fraction()}, {"occlusion_score", plain},
                  {"occlusion_score_fused", weighted}});
  std::printf("wrote %zu heatmaps + attention.csv to %s\n", files.size() - 1, out.string().c_str());
  std::printf("occluded fraction %.4f  occlusion score %.4f  fused occlusion score %.4f\n", sample.occluded_fraction(),
              plain, weighted);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-head self-attention re-identification: data, training, evaluation and checks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mhsa 0.1.0");

  fs::path config, out, data_dir, checkpoint;
  bool force = false;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic occluded dataset");
  gen->add_option("--config", config, "Run configuration (YAML)")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_flag("--force", force, "Overwrite existing files");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Run configuration (YAML)")->required();
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out, "Output directory")->required();

  std::string variant = "full", fusion;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on query vs gallery");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--variant", variant, "full, local, dagger or global")->capture_default_str();
  ev->add_option("--fusion", fusion, "saffm, concat or sum (default: the checkpoint's)");
  ev->add_option("--out", out, "Output directory (default: next to the checkpoint)");

  std::uint64_t seed = 1;
  bool corrupt = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--seed", seed, "Seed")->capture_default_str();
  gc->add_flag("--corrupt-analytic", corrupt, "Test hook: perturb analytic gradients so every check must fail");

  std::string param, values;
  auto* sw = app.add_subcommand("sweep", "Train and evaluate over a hyper-parameter grid");
  sw->add_option("--param", param, "K, lambda1, lambda2, lambda3 or gamma")->required();
  sw->add_option("--values", values, "Comma-separated values")->required();
  sw->add_option("--config", config, "Run configuration (YAML)")->required();
  sw->add_option("--out", out, "Output directory")->required();
  sw->add_option("--data", data_dir, "Dataset directory (default: generate from the config)");

  long long sample = 0;
  std::string split = "query";
  auto* ex = app.add_subcommand("export-attn", "Export attention heatmaps for one sample");
  ex->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ex->add_option("--data", data_dir, "Dataset directory")->required();
  ex->add_option("--sample", sample, "Sample index")->required();
  ex->add_option("--split", split, "train, query or gallery")->capture_default_str();
  ex->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(config, out, force);
    if (*tr) return cmd_train(config, data_dir, out);
    if (*ev) return cmd_eval(checkpoint, data_dir, variant, fusion, out);
    if (*gc) return cmd_gradcheck(seed, corrupt);
    if (*sw) return cmd_sweep(param, values, config, data_dir, out);
    if (*ex) return cmd_export_attn(checkpoint, data_dir, sample, split, out);
  } catch (const mhsa::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const mhsa::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
