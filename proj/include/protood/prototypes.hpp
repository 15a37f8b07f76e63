#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protood/features.hpp"
#include "protood/manifest.hpp"

namespace protood {

/// How the labelled calibration subset is drawn from ID training data.
struct CalibrationConfig {
  double alpha = 0.10;          // fraction of each class, in (0, 1]
  std::uint64_t seed = 0;
  std::size_t min_per_class = 1;

  void validate() const;
};

/// Stratified draw: for every class c with n_c members, picks
/// max(min_per_class, round(alpha * n_c)) of them uniformly without
/// replacement. Returns sorted sample indices.
std::vector<std::size_t> sample_calibration(std::span<const std::int64_t> labels,
                                            std::size_t num_classes,
                                            const CalibrationConfig& cfg);

struct BankProvenance {
  std::string source_manifest_sha256;
  double alpha = 1.0;
  std::uint64_t seed = 0;
};

/// Unit-norm class prototypes for each tapped layer, plus fusion weights.
struct PrototypeBank {
  std::vector<std::string> layer_names;
  std::vector<Matrix<float>> prototypes;  // per layer, (K, C_l)
  std::vector<double> layer_weights;
  std::vector<std::vector<std::int64_t>> class_counts;  // per layer, per class
  std::size_t num_classes = 0;
  BankProvenance provenance;

  std::size_t num_layers() const { return layer_names.size(); }

  /// Throws BankFormatError when any structural invariant is broken.
  void validate() const;
};

/// Resolves a layer selection against a manifest. Accepted forms: "all",
/// "last<N>" (e.g. "last3"), "penultimate" (the last layer alone) or a
/// comma-separated list of layer names.
std::vector<std::string> select_layers(const DatasetManifest& manifest,
                                       std::string_view selection);

/// The last three layers, or all of them when the manifest has fewer.
std::vector<std::string> default_layers(const DatasetManifest& manifest);

/// Class means of already-normalized features, renormalized to unit length.
/// `indices` picks the calibration rows; order does not matter.
Matrix<float> class_prototypes(const PooledBatch& normalized,
                               std::span<const std::int64_t> labels,
                               std::size_t num_classes,
                               std::span<const std::size_t> indices,
                               std::vector<std::int64_t>* counts = nullptr);

/// Builds a bank from prepared (normalized) per-layer features; layer names
/// are taken from the batches.
PrototypeBank build_prototypes(std::span<const PooledBatch> normalized,
                               std::span<const std::int64_t> labels,
                               std::size_t num_classes,
                               std::span<const std::size_t> indices,
                               unsigned threads = 1);

/// Loads and prepares the named layers of a manifest, in the given order.
std::vector<PooledBatch> prepare_layers(const DatasetManifest& manifest,
                                        std::span<const std::string> layers,
                                        unsigned threads = 1);

/// Builds a bank over `layers` (default_layers when empty) from the
/// calibration rows `indices` of a labelled manifest.
PrototypeBank build_prototypes(const DatasetManifest& manifest,
                               std::span<const std::size_t> indices,
                               std::span<const std::string> layers = {},
                               unsigned threads = 1);

void save_bank(const PrototypeBank& bank, const std::filesystem::path& dir);
PrototypeBank load_bank(const std::filesystem::path& dir);

/// Returns a warning when the manifest is not the one the bank was built from.
std::optional<std::string> provenance_warning(const PrototypeBank& bank,
                                              const DatasetManifest& manifest);

}  // namespace protood
