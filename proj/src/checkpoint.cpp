#include "mhsa/checkpoint.hpp"

#include <cmath>

#include "mhsa/errors.hpp"

namespace mhsa {

namespace {

double flag(bool b) { return b ? 1.0 : 0.0; }

std::size_t as_size(double v, const char* what) {
  if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError(std::string("checkpoint: bad ") + what);
  return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<NamedTensor> model_to_entries(const Model& model) {
  const ModelConfig& c = model.config;
  std::vector<NamedTensor> out;
  out.push_back({"meta.provider", Tensor::scalar(static_cast<double>(c.backbone.provider))});
  out.push_back({"meta.dims", Tensor({9}, {static_cast<double>(c.backbone.hf), static_cast<double>(c.backbone.wf),
                                           static_cast<double>(c.backbone.channels),
                                           static_cast<double>(c.backbone.embed_dim),
                                           static_cast<double>(c.backbone.image_channels),
                                           static_cast<double>(c.backbone.encoder_width),
                                           static_cast<double>(c.branch.heads), static_cast<double>(c.branch.hidden),
                                           static_cast<double>(c.num_classes)})});
  out.push_back({"meta.flags", Tensor({4}, {flag(c.backbone.train_gfb_ce), flag(c.branch.enabled), flag(c.branch.rlm),
                                            static_cast<double>(c.branch.fusion)})});
  out.push_back({"meta.eps", Tensor({2}, {c.ln_eps, c.bn_momentum})});
  Model m = model;
  m.for_each_parameter([&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
  m.for_each_buffer([&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
  return out;
}

Model model_from_entries(std::span<const NamedTensor> entries) {
  const Tensor* provider = find_entry_or_null(entries, "meta.provider");
  const Tensor* dims = find_entry_or_null(entries, "meta.dims");
  const Tensor* flags = find_entry_or_null(entries, "meta.flags");
  const Tensor* eps = find_entry_or_null(entries, "meta.eps");
  if (!provider || !dims || !flags || !eps) throw ConfigError("checkpoint: missing model metadata");
  if (dims->size() != 9 || flags->size() != 4 || eps->size() != 2) throw ConfigError("checkpoint: malformed metadata");

  ModelConfig c;
  const std::size_t prov = as_size(provider->item(), "provider");
  if (prov > 1) throw ConfigError("checkpoint: unknown provider");
  c.backbone.provider = static_cast<Provider>(prov);
  c.backbone.hf = as_size((*dims)[0], "hf");
  c.backbone.wf = as_size((*dims)[1], "wf");
  c.backbone.channels = as_size((*dims)[2], "channels");
  c.backbone.embed_dim = as_size((*dims)[3], "embed_dim");
  c.backbone.image_channels = as_size((*dims)[4], "image_channels");
  c.backbone.encoder_width = as_size((*dims)[5], "encoder_width");
  c.branch.heads = as_size((*dims)[6], "heads");
  c.branch.hidden = as_size((*dims)[7], "hidden");
  c.num_classes = as_size((*dims)[8], "num_classes");
  c.backbone.train_gfb_ce = (*flags)[0] != 0.0;
  c.branch.enabled = (*flags)[1] != 0.0;
  c.branch.rlm = (*flags)[2] != 0.0;
  const std::size_t fusion = as_size((*flags)[3], "fusion");
  if (fusion > 2) throw ConfigError("checkpoint: unknown fusion mode");
  c.branch.fusion = static_cast<FusionMode>(fusion);
  c.ln_eps = (*eps)[0];
  c.bn_momentum = (*eps)[1];

  // Initialize to get every tensor at its expected shape, then overwrite.
  Rng rng(0);
  Model m = Model::init(c, rng);
  auto restore = [&](const std::string& name, Tensor& t) {
    const Tensor* stored = find_entry_or_null(entries, name);
    if (!stored) throw ConfigError("checkpoint: missing tensor '" + name + "'");
    if (stored->shape() != t.shape()) {
      throw ConfigError("checkpoint: tensor '" + name + "' has shape " + shape_string(stored->shape()) +
                        ", configuration expects " + shape_string(t.shape()));
    }
    t = *stored;
  };
  m.for_each_parameter(restore);
  m.for_each_buffer(restore);
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  save_container(path, model_to_entries(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return model_from_entries(load_container(path)); }

}  // namespace mhsa
