#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mhsa/branch.hpp"
#include "mhsa/dataset.hpp"
#include "mhsa/model.hpp"

namespace mhsa {

// full: p* ++ q*; local: p* alone; dagger: p* ++ q* from a model trained
// without the global CE; global: q* alone (branch-free baseline).
enum class Variant { full, local, dagger, global };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct EmbeddingRecord {
  int id = 0;
  int cam = 0;
  std::vector<double> feature;
};

struct EvalReport {
  std::vector<double> cmc;  // cmc[r-1] = rank-r accuracy
  double mAP = 0.0;
  std::vector<double> ap;  // per valid query, in query order
  std::size_t valid_queries = 0;
  std::size_t invalid_queries = 0;

  double rank(std::size_t r) const;  // clamps r to the curve length
};

double squared_distance(std::span<const double> a, std::span<const double> b);

/// Gallery indices by ascending squared distance (ties by index), with
/// same-identity same-camera entries removed.
std::vector<std::size_t> rank_gallery(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery);

/// Mean over relevant positions k of (relevant in top k) / k.
double average_precision(std::span<const std::uint8_t> relevant_in_rank_order);

/// Queries with an empty filtered gallery or no relevant match are invalid
/// and excluded; throws DataError when none are valid.
EvalReport cmc_map(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery);

/// Produces matching features for single samples under a fixed variant.
class FeatureBuilder {
 public:
  FeatureBuilder(const Model& model, Variant variant, FusionMode fusion);

  std::vector<double> build(const Tensor& input) const;
  std::size_t feature_dim() const;
  Variant variant() const { return variant_; }

  // Called whenever q* is computed; lets tests prove local features never touch it.
  std::function<void()> on_global_read;

 private:
  const Model& model_;
  Variant variant_;
  FusionMode fusion_;
};

/// Applies the dagger rule: a dagger request on a model trained with the
/// global CE evaluates as full and reports a warning.
Variant resolve_variant(const Model& model, Variant requested, std::string* warning);

struct AttentionSnapshot {
  Tensor alpha;              // J x K
  std::vector<double> beta;  // K fusion weights
};

/// Attention and fusion weights of one sample under eval-mode weights.
AttentionSnapshot attention_snapshot(const Model& model, const Tensor& input);

std::vector<EmbeddingRecord> embed_split(const FeatureBuilder& builder, const Split& split);

EvalReport evaluate(const Model& model, const Dataset& data, Variant variant, FusionMode fusion);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
std::string report_summary(const EvalReport& report);

}  // namespace mhsa
