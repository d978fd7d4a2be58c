#include "mhsa/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mhsa/errors.hpp"

namespace mhsa {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::local: return "local";
    case Variant::dagger: return "dagger";
    case Variant::global: return "global";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "local") return Variant::local;
  if (s == "dagger") return Variant::dagger;
  if (s == "global") return Variant::global;
  throw ConfigError("unknown variant '" + s + "' (expected full, local, dagger or global)");
}

double EvalReport::rank(std::size_t r) const {
  if (cmc.empty()) return 0.0;
  return cmc[std::min(std::max<std::size_t>(r, 1), cmc.size()) - 1];
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("feature lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::vector<std::size_t> rank_gallery(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery) {
  std::vector<std::size_t> order;
  std::vector<double> dist(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    if (gallery[g].id == query.id && gallery[g].cam == query.cam) continue;
    dist[g] = squared_distance(query.feature, gallery[g].feature);
    order.push_back(g);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

double average_precision(std::span<const std::uint8_t> relevant_in_rank_order) {
  // Extended precision so short lists land on the nearest double (5/6, not 5/6 - 1ulp).
  std::size_t hits = 0;
  long double sum = 0.0L;
  for (std::size_t k = 0; k < relevant_in_rank_order.size(); ++k) {
    if (!relevant_in_rank_order[k]) continue;
    ++hits;
    sum += static_cast<long double>(hits) / static_cast<long double>(k + 1);
  }
  return hits ? static_cast<double>(sum / static_cast<long double>(hits)) : 0.0;
}

EvalReport cmc_map(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery) {
  EvalReport report;
  std::vector<std::size_t> first_hit_counts(gallery.size() + 1, 0);
  for (const auto& q : queries) {
    const auto order = rank_gallery(q, gallery);
    std::vector<std::uint8_t> relevant;
    relevant.reserve(order.size());
    for (std::size_t g : order) relevant.push_back(gallery[g].id == q.id ? 1 : 0);
    const auto first = std::find(relevant.begin(), relevant.end(), std::uint8_t{1});
    if (order.empty() || first == relevant.end()) {
      ++report.invalid_queries;
      continue;
    }
    ++report.valid_queries;
    ++first_hit_counts[static_cast<std::size_t>(first - relevant.begin())];
    report.ap.push_back(average_precision(relevant));
  }
  if (report.valid_queries == 0) throw DataError("evaluation: no valid queries");
  report.cmc.assign(gallery.size(), 0.0);
  std::size_t running = 0;
  for (std::size_t r = 0; r < gallery.size(); ++r) {
    running += first_hit_counts[r];
    report.cmc[r] = static_cast<double>(running) / static_cast<double>(report.valid_queries);
  }
  report.mAP = std::accumulate(report.ap.begin(), report.ap.end(), 0.0) / static_cast<double>(report.valid_queries);
  return report;
}

FeatureBuilder::FeatureBuilder(const Model& model, Variant variant, FusionMode fusion)
    : model_(model), variant_(variant), fusion_(fusion) {
  if (variant != Variant::global && !model.config.branch.enabled) {
    throw ConfigError("variant '" + to_string(variant) + "' needs the attention branch, which this model lacks");
  }
}

std::size_t FeatureBuilder::feature_dim() const {
  const std::size_t d = model_.config.backbone.embed_dim;
  const std::size_t local = fused_dim(fusion_, model_.config.branch.heads, d);
  switch (variant_) {
    case Variant::local: return local;
    case Variant::global: return d;
    default: return local + d;
  }
}

namespace {

ad::Var feature_map(ad::Tape& tape, const ModelVars& vars, const ModelConfig& cfg, const Tensor& input) {
  if (input.shape() != cfg.input_shape()) {
    throw ConfigError("sample shape " + shape_string(input.shape()) + " does not match checkpoint input " +
                      shape_string(cfg.input_shape()));
  }
  if (cfg.backbone.provider == Provider::tiny_encoder) {
    return tiny_encode(tape.constant(input), cfg.backbone.image_height(), cfg.backbone.image_width(), vars.backbone);
  }
  return tape.constant(synthetic_features(input));
}

}  // namespace

std::vector<double> FeatureBuilder::build(const Tensor& input) const {
  const ModelConfig& cfg = model_.config;
  ad::Tape tape;
  const ModelVars vars = ModelVars::bind(tape, model_, false);
  const ad::Var q_map = feature_map(tape, vars, cfg, input);

  std::vector<double> out;
  if (variant_ != Variant::global) {
    const ad::Var alpha = attention_weights(q_map, vars.branch);
    const ad::Var heads = frm_transform(head_embeddings(alpha, q_map, vars.branch));
    const ad::Var local = fuse_variant(heads, fusion_, vars.branch);
    out.assign(local.value().values().begin(), local.value().values().end());
  }
  if (variant_ != Variant::local) {
    if (on_global_read) on_global_read();
    const ad::Var q_star = project_global(global_pool(q_map), vars.backbone, Mode::eval, cfg.ln_eps);
    out.insert(out.end(), q_star.value().values().begin(), q_star.value().values().end());
  }
  return out;
}

Variant resolve_variant(const Model& model, Variant requested, std::string* warning) {
  if (requested == Variant::dagger && model.config.backbone.train_gfb_ce) {
    if (warning) {
      *warning = "variant 'dagger' requested but the checkpoint was trained with the global CE loss; evaluating as 'full'";
    }
    return Variant::full;
  }
  return requested;
}

AttentionSnapshot attention_snapshot(const Model& model, const Tensor& input) {
  if (!model.config.branch.enabled) throw ConfigError("model has no attention branch");
  ad::Tape tape;
  const ModelVars vars = ModelVars::bind(tape, model, false);
  const ad::Var q_map = feature_map(tape, vars, model.config, input);
  const ad::Var alpha = attention_weights(q_map, vars.branch);
  const FusionOutput fused = saffm_fuse(frm_transform(head_embeddings(alpha, q_map, vars.branch)), vars.branch);
  AttentionSnapshot snap;
  snap.alpha = alpha.value();
  snap.beta.assign(fused.beta.value().values().begin(), fused.beta.value().values().end());
  return snap;
}

std::vector<EmbeddingRecord> embed_split(const FeatureBuilder& builder, const Split& split) {
  std::vector<EmbeddingRecord> out;
  out.reserve(split.samples.size());
  for (const auto& s : split.samples) out.push_back({s.id, s.cam, builder.build(s.input)});
  return out;
}

EvalReport evaluate(const Model& model, const Dataset& data, Variant variant, FusionMode fusion) {
  const FeatureBuilder builder(model, variant, fusion);
  const auto queries = embed_split(builder, data.query);
  const auto gallery = embed_split(builder, data.gallery);
  return cmc_map(queries, gallery);
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  char buf[64];
  f << "rank,accuracy\n";
  for (std::size_t r = 0; r < report.cmc.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%.17g", report.cmc[r]);
    f << r + 1 << ',' << buf << '\n';
  }
  std::snprintf(buf, sizeof buf, "%.17g", report.mAP);
  f << "mAP," << buf << '\n';
}

std::string report_summary(const EvalReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "Rank-1 %.1f%%  Rank-5 %.1f%%  Rank-10 %.1f%%  mAP %.1f%%  (%zu valid queries, %zu skipped)",
                100.0 * report.rank(1), 100.0 * report.rank(5), 100.0 * report.rank(10), 100.0 * report.mAP,
                report.valid_queries, report.invalid_queries);
  return buf;
}

}  // namespace mhsa
