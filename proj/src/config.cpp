#include "mhsa/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "mhsa/errors.hpp"

namespace mhsa {

void RunConfig::validate() const {
  backbone.validate();
  if (branch.heads == 0) throw ConfigError("branch.heads must be >= 1");
  if (branch.heads > backbone.pixels()) throw ConfigError("branch.heads exceeds the feature-map pixel count");
  if (!branch.enabled && !backbone.train_gfb_ce) {
    throw ConfigError("branch.enabled=false requires backbone.train_gfb_ce=true");
  }
  if (!(ln_eps > 0.0)) throw ConfigError("branch.ln_eps must be > 0");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("backbone.bn_momentum must be in (0, 1]");
  loss.validate();
  sampler.validate();
  schedule.validate();
  data_spec().validate();
  if (data.n_ids < sampler.ids_per_batch) throw ConfigError("data.n_ids is smaller than sampler.ids_per_batch");
}

SyntheticSpec RunConfig::data_spec() const {
  SyntheticSpec s = data;
  s.hf = backbone.hf;
  s.wf = backbone.wf;
  s.channels = backbone.channels;
  s.image_channels = backbone.provider == Provider::tiny_encoder ? backbone.image_channels : 0;
  return s;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.model.backbone = backbone;
  t.model.branch = branch;
  t.model.ln_eps = ln_eps;
  t.model.bn_momentum = bn_momentum;
  t.loss = loss;
  t.sampler = sampler;
  t.schedule = schedule;
  t.seed = seed;
  return t;
}

namespace {

class Section {
 public:
  Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (node_ && !node_.IsMap()) throw ConfigError("'" + name_ + "' must be a mapping");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0 || !node_) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError("unknown key '" + qualified(key) + "'");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const YAML::Node v = lookup(key);
    if (!v) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("bad value for '" + qualified(key) + "'");
    }
  }

  void get_size(const std::string& key, std::size_t& out) {
    long long v = static_cast<long long>(out);
    get(key, v);
    if (v < 0) throw ConfigError("'" + qualified(key) + "' must be >= 0");
    out = static_cast<std::size_t>(v);
  }

  YAML::Node child(const std::string& key) {
    seen_.insert(key);
    return lookup(key);
  }

  std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  // Const access so missing keys are not inserted; explicit nulls count as absent.
  YAML::Node lookup(const std::string& key) const {
    if (!node_ || !node_.IsMap()) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node v = node_[key];
    return v && !v.IsNull() ? v : YAML::Node(YAML::NodeType::Undefined);
  }

  YAML::Node node_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);

  RunConfig c;
  {
    Section top(root, "");
    long long seed = static_cast<long long>(c.seed);
    top.get("seed", seed);
    if (seed < 0) throw ConfigError("seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);

    {
      Section s(top.child("backbone"), "backbone");
      std::string provider = to_string(c.backbone.provider);
      s.get("provider", provider);
      c.backbone.provider = parse_provider(provider);
      s.get_size("hf", c.backbone.hf);
      s.get_size("wf", c.backbone.wf);
      s.get_size("channels", c.backbone.channels);
      s.get_size("embed_dim", c.backbone.embed_dim);
      s.get("train_gfb_ce", c.backbone.train_gfb_ce);
      s.get_size("image_channels", c.backbone.image_channels);
      s.get_size("encoder_width", c.backbone.encoder_width);
      s.get("bn_momentum", c.bn_momentum);
    }
    {
      Section s(top.child("branch"), "branch");
      s.get("enabled", c.branch.enabled);
      s.get_size("heads", c.branch.heads);
      s.get_size("hidden", c.branch.hidden);
      std::string fusion = to_string(c.branch.fusion);
      s.get("fusion", fusion);
      c.branch.fusion = parse_fusion(fusion);
      s.get("rlm", c.branch.rlm);
      s.get("ln_eps", c.ln_eps);
    }
    {
      Section s(top.child("loss"), "loss");
      s.get("lambda1", c.loss.lambda1);
      s.get("lambda2", c.loss.lambda2);
      s.get("lambda3", c.loss.lambda3);
      s.get("gamma", c.loss.gamma);
      s.get("margin", c.loss.margin);
    }
    {
      Section s(top.child("sampler"), "sampler");
      s.get_size("ids_per_batch", c.sampler.ids_per_batch);
      s.get_size("instances_per_id", c.sampler.instances_per_id);
    }
    {
      Section s(top.child("schedule"), "schedule");
      s.get("base_lr", c.schedule.base_lr);
      s.get_size("warmup_epochs", c.schedule.warmup_epochs);
      s.get("start_factor", c.schedule.start_factor);
      s.get_size("epochs", c.schedule.total_epochs);
      const YAML::Node decay = s.child("decay");
      if (decay) {
        if (!decay.IsSequence()) throw ConfigError("schedule.decay must be a list of [epoch, lr] pairs");
        c.schedule.decay.clear();
        for (const auto& item : decay) {
          if (!item.IsSequence() || item.size() != 2) throw ConfigError("schedule.decay entries must be [epoch, lr]");
          try {
            const long long epoch = item[0].as<long long>();
            if (epoch < 0) throw ConfigError("schedule.decay epochs must be >= 0");
            c.schedule.decay.emplace_back(static_cast<std::size_t>(epoch), item[1].as<double>());
          } catch (const YAML::Exception&) {
            throw ConfigError("schedule.decay entries must be [epoch, lr] numbers");
          }
        }
      }
    }
    {
      Section s(top.child("data"), "data");
      s.get_size("n_ids", c.data.n_ids);
      s.get_size("samples_per_id", c.data.samples_per_id);
      s.get_size("test_ids", c.data.test_ids);
      s.get_size("query_per_id", c.data.query_per_id);
      s.get_size("gallery_per_id", c.data.gallery_per_id);
      s.get("prototype_std", c.data.prototype_std);
      s.get("within_id_std", c.data.within_id_std);
      s.get("occlusion_prob", c.data.occlusion_prob);
      s.get("query_occlusion_prob", c.data.query_occlusion_prob);
      s.get("gallery_occlusion_prob", c.data.gallery_occlusion_prob);
      s.get("area_min", c.data.area_min);
      s.get("area_max", c.data.area_max);
      s.get("occluder_std", c.data.occluder_std);
      s.get_size("occluder_kinds", c.data.occluder_kinds);
      s.get_size("cameras", c.data.cameras);
      long long dseed = static_cast<long long>(c.data.seed);
      s.get("seed", dseed);
      if (dseed < 0) throw ConfigError("data.seed must be >= 0");
      c.data.seed = static_cast<std::uint64_t>(dseed);
    }
    {
      Section s(top.child("eval"), "eval");
      std::string variant = to_string(c.eval_variant);
      s.get("variant", variant);
      c.eval_variant = parse_variant(variant);
      std::string fusion = to_string(c.branch.fusion);
      s.get("fusion", fusion);
      c.eval_fusion = parse_fusion(fusion);
    }
    {
      Section s(top.child("paths"), "paths");
      std::string data_dir, out_dir;
      s.get("data", data_dir);
      s.get("out", out_dir);
      c.data_dir = data_dir;
      c.out_dir = out_dir;
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "backbone" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "provider" << YAML::Value << to_string(c.backbone.provider);
  e << YAML::Key << "hf" << YAML::Value << c.backbone.hf;
  e << YAML::Key << "wf" << YAML::Value << c.backbone.wf;
  e << YAML::Key << "channels" << YAML::Value << c.backbone.channels;
  e << YAML::Key << "embed_dim" << YAML::Value << c.backbone.embed_dim;
  e << YAML::Key << "train_gfb_ce" << YAML::Value << c.backbone.train_gfb_ce;
  e << YAML::Key << "image_channels" << YAML::Value << c.backbone.image_channels;
  e << YAML::Key << "encoder_width" << YAML::Value << c.backbone.encoder_width;
  e << YAML::Key << "bn_momentum" << YAML::Value << c.bn_momentum;
  e << YAML::EndMap;
  e << YAML::Key << "branch" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "enabled" << YAML::Value << c.branch.enabled;
  e << YAML::Key << "heads" << YAML::Value << c.branch.heads;
  e << YAML::Key << "hidden" << YAML::Value << c.branch.hidden;
  e << YAML::Key << "fusion" << YAML::Value << to_string(c.branch.fusion);
  e << YAML::Key << "rlm" << YAML::Value << c.branch.rlm;
  e << YAML::Key << "ln_eps" << YAML::Value << c.ln_eps;
  e << YAML::EndMap;
  e << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "lambda1" << YAML::Value << c.loss.lambda1;
  e << YAML::Key << "lambda2" << YAML::Value << c.loss.lambda2;
  e << YAML::Key << "lambda3" << YAML::Value << c.loss.lambda3;
  e << YAML::Key << "gamma" << YAML::Value << c.loss.gamma;
  e << YAML::Key << "margin" << YAML::Value << c.loss.margin;
  e << YAML::EndMap;
  e << YAML::Key << "sampler" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "ids_per_batch" << YAML::Value << c.sampler.ids_per_batch;
  e << YAML::Key << "instances_per_id" << YAML::Value << c.sampler.instances_per_id;
  e << YAML::EndMap;
  e << YAML::Key << "schedule" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "base_lr" << YAML::Value << c.schedule.base_lr;
  e << YAML::Key << "warmup_epochs" << YAML::Value << c.schedule.warmup_epochs;
  e << YAML::Key << "start_factor" << YAML::Value << c.schedule.start_factor;
  e << YAML::Key << "epochs" << YAML::Value << c.schedule.total_epochs;
  e << YAML::Key << "decay" << YAML::Value << YAML::BeginSeq;
  for (const auto& [epoch, lr] : c.schedule.decay) {
    e << YAML::Flow << YAML::BeginSeq << epoch << lr << YAML::EndSeq;
  }
  e << YAML::EndSeq;
  e << YAML::EndMap;
  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "n_ids" << YAML::Value << c.data.n_ids;
  e << YAML::Key << "samples_per_id" << YAML::Value << c.data.samples_per_id;
  e << YAML::Key << "test_ids" << YAML::Value << c.data.test_ids;
  e << YAML::Key << "query_per_id" << YAML::Value << c.data.query_per_id;
  e << YAML::Key << "gallery_per_id" << YAML::Value << c.data.gallery_per_id;
  e << YAML::Key << "prototype_std" << YAML::Value << c.data.prototype_std;
  e << YAML::Key << "within_id_std" << YAML::Value << c.data.within_id_std;
  e << YAML::Key << "occlusion_prob" << YAML::Value << c.data.occlusion_prob;
  e << YAML::Key << "query_occlusion_prob" << YAML::Value << c.data.query_occlusion_prob;
  e << YAML::Key << "gallery_occlusion_prob" << YAML::Value << c.data.gallery_occlusion_prob;
  e << YAML::Key << "area_min" << YAML::Value << c.data.area_min;
  e << YAML::Key << "area_max" << YAML::Value << c.data.area_max;
  e << YAML::Key << "occluder_std" << YAML::Value << c.data.occluder_std;
  e << YAML::Key << "occluder_kinds" << YAML::Value << c.data.occluder_kinds;
  e << YAML::Key << "cameras" << YAML::Value << c.data.cameras;
  e << YAML::Key << "seed" << YAML::Value << c.data.seed;
  e << YAML::EndMap;
  e << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "variant" << YAML::Value << to_string(c.eval_variant);
  e << YAML::Key << "fusion" << YAML::Value << to_string(c.eval_fusion);
  e << YAML::EndMap;
  e << YAML::Key << "paths" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "data" << YAML::Value << c.data_dir.string();
  e << YAML::Key << "out" << YAML::Value << c.out_dir.string();
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

bool is_sweep_parameter(const std::string& param) {
  return param == "K" || param == "lambda1" || param == "lambda2" || param == "lambda3" || param == "gamma";
}

void apply_sweep_value(RunConfig& cfg, const std::string& param, double value) {
  if (param == "K") {
    if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError("K must be a positive integer");
    cfg.branch.heads = static_cast<std::size_t>(value);
  } else if (param == "lambda1") {
    cfg.loss.lambda1 = value;
  } else if (param == "lambda2") {
    cfg.loss.lambda2 = value;
  } else if (param == "lambda3") {
    cfg.loss.lambda3 = value;
  } else if (param == "gamma") {
    cfg.loss.gamma = value;
  } else {
    throw ConfigError("unknown sweep parameter '" + param + "' (expected K, lambda1, lambda2, lambda3 or gamma)");
  }
  cfg.validate();
}

}  // namespace mhsa
