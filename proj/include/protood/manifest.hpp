#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "protood/tensor.hpp"

namespace protood {

enum class LayerKind { kRaw4d, kPooled2d };

struct SpatialExtent {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const SpatialExtent&, const SpatialExtent&) = default;
};

/// One tapped layer of a feature dump. `file` is kept exactly as written in
/// the manifest (relative to the manifest directory).
struct LayerEntry {
  std::string name;
  std::string file;
  LayerKind kind = LayerKind::kPooled2d;
  std::size_t channels = 0;
  std::optional<SpatialExtent> spatial;

  Shape expected_shape(std::size_t num_samples) const;
};

/// Declarative description of one dataset split. The order of `layers`
/// defines the layer index used everywhere else.
struct DatasetManifest {
  std::string dataset_name;
  std::string split;
  std::size_t num_samples = 0;
  std::size_t num_classes = 0;  // 0 for unlabeled (OOD) sets
  std::vector<LayerEntry> layers;
  std::optional<std::string> labels_file;
  std::optional<std::string> logits_file;

  /// Keys not covered above (e.g. exporter provenance), carried verbatim.
  nlohmann::json extra = nlohmann::json::object();

  /// Directory that relative file entries are resolved against.
  std::filesystem::path base_dir;
  /// Hex SHA-256 of the manifest bytes it was loaded from; empty otherwise.
  std::string sha256;

  std::filesystem::path resolve(const std::string& file) const {
    return base_dir / file;
  }
  std::optional<std::size_t> find_layer(const std::string& name) const;
  const LayerEntry& layer(const std::string& name) const;  // ShapeError if absent
};

std::string_view layer_kind_name(LayerKind kind);

/// Loads and fully validates a manifest, including the header of every
/// referenced tensor file and the range of the labels.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Validates an in-memory manifest against the files under `m.base_dir`.
void validate_manifest(const DatasetManifest& m);

nlohmann::json manifest_to_json(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

std::vector<std::int64_t> load_labels(const DatasetManifest& m);
Tensor load_layer_tensor(const DatasetManifest& m, std::size_t layer_index);
Matrix<double> load_logits(const DatasetManifest& m);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace protood
