#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

namespace protood {

enum class OodMode { kRandomDirections, kShiftedClusters };

/// Directional class clusters on the unit sphere, one independent draw per
/// layer. Samples are normalize(mu_c + sigma * g) with sigma = 1/sqrt(kappa);
/// kappa = 0 gives pure noise and kappa = inf gives the means themselves.
struct SynthConfig {
  std::size_t num_classes = 10;
  std::vector<std::size_t> dims_per_layer = {64, 64, 64};
  std::size_t n_id_train = 2000;
  std::size_t n_id_test = 2000;
  std::size_t n_ood = 2000;
  double kappa = 50.0;
  OodMode ood_mode = OodMode::kRandomDirections;
  std::uint64_t seed = 42;
  /// Logits are this scale times the cosine to each true class mean of the
  /// last layer; they feed the logit baselines.
  double logit_scale = 10.0;

  double sigma() const;
  void validate() const;

  static SynthConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SynthManifests {
  std::filesystem::path train;
  std::filesystem::path test_id;
  std::filesystem::path ood;
};

/// Writes train/, test_id/ and ood/ under out_dir, each holding pooled2d
/// layer files, labels/logits and a manifest.json. Output bytes depend only
/// on the config.
SynthManifests generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// Monte Carlo estimate of E[cos(sample, true mean)] per layer, from a
/// sampler independent of generate().
std::vector<double> expected_separation_per_layer(const SynthConfig& cfg,
                                                  std::size_t draws = 10000);

/// Uniform average of the per-layer estimates: the predicted mean ID
/// affinity under uniform fusion.
double expected_separation(const SynthConfig& cfg, std::size_t draws = 10000);

}  // namespace protood
