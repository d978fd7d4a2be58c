#include "mhsa/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "mhsa/adam.hpp"
#include "mhsa/errors.hpp"

namespace mhsa {

std::vector<int> class_indices(const Split& split, std::size_t* num_classes) {
  std::map<int, int> index;
  for (const auto& s : split.samples) index.emplace(s.id, 0);
  int next = 0;
  for (auto& [id, cls] : index) cls = next++;
  std::vector<int> out;
  out.reserve(split.samples.size());
  for (const auto& s : split.samples) out.push_back(index[s.id]);
  if (num_classes) *num_classes = index.size();
  return out;
}

namespace {

double value_or_zero(const ad::Var& v) { return v.valid() ? v.value().item() : 0.0; }

StepMetrics fill_metrics(const LossTerms& t) {
  StepMetrics m;
  m.ce_q = value_or_zero(t.ce_q);
  m.ce_p = value_or_zero(t.ce_p);
  m.ce_z = value_or_zero(t.ce_z);
  m.triplet_p = value_or_zero(t.triplet_p);
  m.triplet_z = value_or_zero(t.triplet_z);
  m.fdrt = value_or_zero(t.fdrt);
  m.ihtl = value_or_zero(t.ihtl);
  m.acm = value_or_zero(t.acm);
  m.total = value_or_zero(t.total);
  return m;
}

}  // namespace

TrainResult train_from(Model model, const TrainConfig& cfg, const Split& train_split, Rng& rng,
                       const std::function<void(const StepMetrics&)>& on_step) {
  cfg.loss.validate();
  cfg.sampler.validate();
  cfg.schedule.validate();
  std::size_t classes = 0;
  const std::vector<int> labels = class_indices(train_split, &classes);
  if (classes != model.config.num_classes) {
    throw ConfigError("model has " + std::to_string(model.config.num_classes) + " classes, training split has " +
                      std::to_string(classes) + " identities");
  }
  const PkSampler sampler(labels, cfg.sampler);

  std::vector<Tensor*> params;
  std::vector<std::string> names;
  model.for_each_parameter([&](const std::string& name, Tensor& t) {
    params.push_back(&t);
    names.push_back(name);
  });

  TrainResult result;
  AdamState adam;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.schedule);
    for (std::size_t b = 0; b < sampler.batches_per_epoch(); ++b, ++step) {
      const std::vector<std::size_t> idx = sampler.next_batch(rng);
      std::vector<const Tensor*> inputs;
      std::vector<int> batch_labels;
      for (std::size_t i : idx) {
        inputs.push_back(&train_split.samples[i].input);
        batch_labels.push_back(labels[i]);
      }
      try {
        ad::Tape tape;
        const ModelVars vars = ModelVars::bind(tape, model, true);
        const BatchForward fwd = forward_batch(tape, vars, model.config, inputs, Mode::train);
        const BatchFeatures batch = collect_features(fwd, vars, batch_labels);
        const LossTerms terms = model_loss(model.config, batch, cfg.loss);
        if (!std::isfinite(terms.total.value().item())) throw NumericError("non-finite loss");
        tape.backward(terms.total);

        std::vector<Tensor> grads;
        for (const ad::Var& v : vars.parameters()) grads.push_back(v.grad());
        adam_step(params, grads, names, adam, lr);
        update_running_stats(model.backbone, fwd.bn_stats, model.config.bn_momentum);

        StepMetrics m = fill_metrics(terms);
        m.step = step;
        m.epoch = epoch;
        m.lr = lr;
        result.metrics.push_back(m);
        if (on_step) on_step(m);
      } catch (const NumericError& e) {
        result.model = std::move(model);
        result.numeric_failure = "step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + "): " + e.what();
        return result;
      }
    }
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(const TrainConfig& cfg, const Split& train_split,
                  const std::function<void(const StepMetrics&)>& on_step) {
  ModelConfig mc = cfg.model;
  class_indices(train_split, &mc.num_classes);
  Rng rng(cfg.seed);
  Model model = Model::init(mc, rng);
  return train_from(std::move(model), cfg, train_split, rng, on_step);
}

std::string metrics_row(const StepMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", m.step, m.epoch,
                m.lr, m.ce_q, m.ce_p, m.ce_z, m.triplet_p, m.triplet_z, m.fdrt, m.ihtl, m.acm, m.total);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& metrics) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << kMetricsHeader << '\n';
  for (const auto& m : metrics) f << metrics_row(m) << '\n';
}

}  // namespace mhsa
