#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protood/features.hpp"
#include "protood/manifest.hpp"
#include "protood/prototypes.hpp"

namespace protood {

enum class WeightKind { kUniform, kShallowHeavy, kMiddleHeavy, kTopHeavy, kCustom };

// Magnitudes used by the named non-uniform schemes.
inline constexpr double kHeavyWeight = 2.0;
inline constexpr double kLightWeight = 1.0;

struct WeightScheme {
  WeightKind kind = WeightKind::kUniform;
  std::vector<double> custom_weights;

  static WeightScheme uniform() { return {}; }
  static WeightScheme custom(std::vector<double> w) {
    return {WeightKind::kCustom, std::move(w)};
  }
  /// Parses "uniform", "shallow_heavy", "middle_heavy", "top_heavy" or
  /// "custom" (which needs `weights`, a comma-separated list).
  static WeightScheme parse(std::string_view name, std::string_view weights = {});

  std::string name() const;
};

/// The four fixed schemes compared by the weighting ablation.
std::vector<WeightScheme> ablation_schemes();

std::vector<double> resolve_weights(const WeightScheme& scheme, std::size_t num_layers);

/// Inner products of unit-norm features with unit-norm prototypes, (N, K).
Matrix<double> layer_similarities(const PooledBatch& normalized,
                                  const Matrix<float>& prototypes,
                                  unsigned threads = 1);

struct LayerMax {
  std::vector<double> value;
  std::vector<std::size_t> argmax;  // lowest class index on ties
};

LayerMax layer_max(const Matrix<double>& sims);

struct FusedScores {
  std::vector<double> affinity;
  std::vector<double> ood;  // 1 - affinity
};

/// Weighted average across layers of an (N, L) matrix of per-layer maxima.
FusedScores fuse(const Matrix<double>& per_layer_max, std::span<const double> weights);

struct ScoreRecord {
  std::size_t sample_index = 0;
  std::vector<double> per_layer_max;
  std::vector<std::size_t> per_layer_argmax;
  double affinity = 0.0;
  double ood_score = 0.0;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

struct ScoreTable {
  std::vector<std::string> layer_names;
  std::vector<ScoreRecord> records;

  std::vector<double> affinities() const;
  std::vector<double> ood_scores() const;
};

/// Scores pre-normalized features, given in bank layer order.
ScoreTable score_features(std::span<const PooledBatch> normalized,
                          const PrototypeBank& bank, std::span<const double> weights,
                          unsigned threads = 1);

/// Full pipeline over a manifest: prepare each bank layer, take per-layer
/// best-class similarity, fuse. Records follow manifest sample order.
ScoreTable score_dataset(const DatasetManifest& manifest, const PrototypeBank& bank,
                         const WeightScheme& scheme, unsigned threads = 1);

/// Loads and prepares the bank's layers from a manifest, checking widths.
std::vector<PooledBatch> prepare_bank_layers(const DatasetManifest& manifest,
                                             const PrototypeBank& bank,
                                             unsigned threads = 1);

/// CSV with `sample_index,affinity,ood_score,m_<layer>...,argmax_<layer>...`.
void write_score_csv(const ScoreTable& table, std::ostream& out);

}  // namespace protood
