#include "protood/fusion.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "protood/format.hpp"
#include "protood/parallel.hpp"

namespace protood {

WeightScheme WeightScheme::parse(std::string_view name, std::string_view weights) {
  WeightScheme s;
  if (name == "uniform") {
    s.kind = WeightKind::kUniform;
  } else if (name == "shallow_heavy") {
    s.kind = WeightKind::kShallowHeavy;
  } else if (name == "middle_heavy") {
    s.kind = WeightKind::kMiddleHeavy;
  } else if (name == "top_heavy") {
    s.kind = WeightKind::kTopHeavy;
  } else if (name == "custom") {
    s.kind = WeightKind::kCustom;
    s.custom_weights = parse_double_list(weights);
    if (s.custom_weights.empty()) {
      throw ConfigError("custom scheme needs a weight list");
    }
  } else {
    throw ConfigError("unknown weighting scheme '" + std::string(name) + "'");
  }
  if (s.kind != WeightKind::kCustom && !weights.empty()) {
    throw ConfigError("weights are only accepted with the custom scheme");
  }
  return s;
}

std::string WeightScheme::name() const {
  switch (kind) {
    case WeightKind::kUniform: return "uniform";
    case WeightKind::kShallowHeavy: return "shallow_heavy";
    case WeightKind::kMiddleHeavy: return "middle_heavy";
    case WeightKind::kTopHeavy: return "top_heavy";
    case WeightKind::kCustom: return "custom";
  }
  return "?";
}

std::vector<WeightScheme> ablation_schemes() {
  return {{WeightKind::kUniform, {}},
          {WeightKind::kShallowHeavy, {}},
          {WeightKind::kMiddleHeavy, {}},
          {WeightKind::kTopHeavy, {}}};
}

std::vector<double> resolve_weights(const WeightScheme& scheme,
                                    std::size_t num_layers) {
  if (num_layers < 1) throw ConfigError("need at least one layer");
  std::vector<double> w(num_layers, kLightWeight);
  switch (scheme.kind) {
    case WeightKind::kUniform:
      break;
    case WeightKind::kShallowHeavy:
      w.front() = kHeavyWeight;
      break;
    case WeightKind::kMiddleHeavy:
      w[num_layers / 2] = kHeavyWeight;
      break;
    case WeightKind::kTopHeavy:
      w.back() = kHeavyWeight;
      break;
    case WeightKind::kCustom:
      if (scheme.custom_weights.size() != num_layers) {
        throw ConfigError("custom scheme has " +
                          std::to_string(scheme.custom_weights.size()) +
                          " weights for " + std::to_string(num_layers) +
                          " layers");
      }
      for (double v : scheme.custom_weights) {
        if (!(v > 0.0) || !std::isfinite(v)) {
          throw ConfigError("layer weights must be finite and > 0");
        }
      }
      w = scheme.custom_weights;
      break;
  }
  return w;
}

Matrix<double> layer_similarities(const PooledBatch& normalized,
                                  const Matrix<float>& prototypes,
                                  unsigned threads) {
  const auto& f = normalized.features;
  if (f.cols() != prototypes.cols()) {
    throw ShapeError("layer '" + normalized.layer_name + "' has width " +
                     std::to_string(f.cols()) + " but its prototypes have " +
                     std::to_string(prototypes.cols()));
  }
  Matrix<double> sims(f.rows(), prototypes.rows());
  parallel_for(f.rows(), threads, [&](std::size_t n) {
    const auto z = f.row(n);
    for (std::size_t c = 0; c < prototypes.rows(); ++c) {
      const auto p = prototypes.row(c);
      double dot = 0.0;
      for (std::size_t k = 0; k < z.size(); ++k) {
        dot += static_cast<double>(z[k]) * static_cast<double>(p[k]);
      }
      sims(n, c) = dot;
    }
  });
  return sims;
}

LayerMax layer_max(const Matrix<double>& sims) {
  if (sims.cols() < 1) throw ConfigError("layer_max needs at least one class");
  LayerMax out{std::vector<double>(sims.rows()),
               std::vector<std::size_t>(sims.rows())};
  for (std::size_t n = 0; n < sims.rows(); ++n) {
    const auto row = sims.row(n);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out.value[n] = row[best];
    out.argmax[n] = best;
  }
  return out;
}

FusedScores fuse(const Matrix<double>& per_layer_max,
                 std::span<const double> weights) {
  if (weights.size() != per_layer_max.cols()) {
    throw ConfigError("got " + std::to_string(weights.size()) +
                      " weights for " + std::to_string(per_layer_max.cols()) +
                      " layers");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw ConfigError("layer weights must be finite and > 0");
    }
    total += w;
  }
  // Normalizing the weights up front keeps a lone layer's weight at exactly 1.
  std::vector<double> share(weights.size());
  for (std::size_t l = 0; l < weights.size(); ++l) share[l] = weights[l] / total;
  FusedScores out{std::vector<double>(per_layer_max.rows()),
                  std::vector<double>(per_layer_max.rows())};
  for (std::size_t n = 0; n < per_layer_max.rows(); ++n) {
    const auto m = per_layer_max.row(n);
    double acc = 0.0;
    for (std::size_t l = 0; l < m.size(); ++l) acc += share[l] * m[l];
    out.affinity[n] = acc;
    out.ood[n] = 1.0 - out.affinity[n];
  }
  return out;
}

std::vector<double> ScoreTable::affinities() const {
  std::vector<double> v;
  v.reserve(records.size());
  for (const auto& r : records) v.push_back(r.affinity);
  return v;
}

std::vector<double> ScoreTable::ood_scores() const {
  std::vector<double> v;
  v.reserve(records.size());
  for (const auto& r : records) v.push_back(r.ood_score);
  return v;
}

ScoreTable score_features(std::span<const PooledBatch> normalized,
                          const PrototypeBank& bank,
                          std::span<const double> weights, unsigned threads) {
  const std::size_t num_layers = bank.num_layers();
  if (normalized.size() != num_layers) {
    throw ShapeError("expected features for " + std::to_string(num_layers) +
                     " layers, got " + std::to_string(normalized.size()));
  }
  const std::size_t n = normalized.front().features.rows();
  Matrix<double> maxima(n, num_layers);
  Matrix<std::size_t> argmax(n, num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto& batch = normalized[l];
    if (!batch.normalized) {
      throw ConfigError("layer '" + batch.layer_name + "' is not normalized");
    }
    if (batch.features.rows() != n) {
      throw ShapeError("layer '" + batch.layer_name + "' has " +
                       std::to_string(batch.features.rows()) + " samples, expected " +
                       std::to_string(n));
    }
    const auto best = layer_max(layer_similarities(batch, bank.prototypes[l], threads));
    for (std::size_t i = 0; i < n; ++i) {
      maxima(i, l) = best.value[i];
      argmax(i, l) = best.argmax[i];
    }
  }
  const auto fused = fuse(maxima, weights);

  ScoreTable table{bank.layer_names, std::vector<ScoreRecord>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = table.records[i];
    r.sample_index = i;
    const auto m = maxima.row(i);
    const auto a = argmax.row(i);
    r.per_layer_max.assign(m.begin(), m.end());
    r.per_layer_argmax.assign(a.begin(), a.end());
    r.affinity = fused.affinity[i];
    r.ood_score = fused.ood[i];
  }
  return table;
}

std::vector<PooledBatch> prepare_bank_layers(const DatasetManifest& manifest,
                                             const PrototypeBank& bank,
                                             unsigned threads) {
  std::vector<PooledBatch> out;
  out.reserve(bank.num_layers());
  for (std::size_t l = 0; l < bank.num_layers(); ++l) {
    const auto& name = bank.layer_names[l];
    const auto idx = manifest.find_layer(name);
    if (!idx) {
      throw ShapeError("layer '" + name + "' required by the bank is missing from manifest '" +
                       manifest.dataset_name + "'");
    }
    const auto& entry = manifest.layers[*idx];
    if (entry.channels != bank.prototypes[l].cols()) {
      throw ShapeError("layer '" + name + "' has " + std::to_string(entry.channels) +
                       " channels in the manifest but " +
                       std::to_string(bank.prototypes[l].cols()) + " in the bank");
    }
    out.push_back(prepare_layer(entry, load_layer_tensor(manifest, *idx), threads));
  }
  return out;
}

ScoreTable score_dataset(const DatasetManifest& manifest, const PrototypeBank& bank,
                         const WeightScheme& scheme, unsigned threads) {
  const auto weights = resolve_weights(scheme, bank.num_layers());
  const auto layers = prepare_bank_layers(manifest, bank, threads);
  return score_features(layers, bank, weights, threads);
}

void write_score_csv(const ScoreTable& table, std::ostream& out) {
  out << "sample_index,affinity,ood_score";
  for (const auto& name : table.layer_names) out << ",m_" << name;
  for (const auto& name : table.layer_names) out << ",argmax_" << name;
  out << '\n';
  for (const auto& r : table.records) {
    out << r.sample_index << ',' << format_g9(r.affinity) << ','
        << format_g9(r.ood_score);
    for (double m : r.per_layer_max) out << ',' << format_g9(m);
    for (auto a : r.per_layer_argmax) out << ',' << a;
    out << '\n';
  }
}

}  // namespace protood
