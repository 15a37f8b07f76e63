#include "protood/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "protood/npy.hpp"

namespace protood {

namespace fs = std::filesystem;
using nlohmann::json;

Shape LayerEntry::expected_shape(std::size_t num_samples) const {
  if (kind == LayerKind::kRaw4d) {
    return {num_samples, channels, spatial->height, spatial->width};
  }
  return {num_samples, channels};
}

std::optional<std::size_t> DatasetManifest::find_layer(
    const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  return std::nullopt;
}

const LayerEntry& DatasetManifest::layer(const std::string& name) const {
  auto idx = find_layer(name);
  if (!idx) {
    throw ShapeError("layer '" + name + "' not present in manifest '" +
                     dataset_name + "'");
  }
  return layers[*idx];
}

std::string_view layer_kind_name(LayerKind kind) {
  return kind == LayerKind::kRaw4d ? "raw4d" : "pooled2d";
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw ManifestError(std::string("manifest is missing key '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ManifestError(std::string("manifest key '") + key +
                        "' has the wrong type");
  }
}

std::size_t count_field(const json& j, const char* key) {
  const auto v = field<std::int64_t>(j, key);
  if (v < 0) {
    throw ManifestError(std::string("manifest key '") + key +
                        "' must be non-negative");
  }
  return static_cast<std::size_t>(v);
}

LayerEntry parse_layer(const json& j) {
  if (!j.is_object()) throw ManifestError("layer entry must be an object");
  LayerEntry e;
  e.name = field<std::string>(j, "name");
  e.file = field<std::string>(j, "file");
  const auto kind = field<std::string>(j, "kind");
  if (kind == "raw4d") {
    e.kind = LayerKind::kRaw4d;
  } else if (kind == "pooled2d") {
    e.kind = LayerKind::kPooled2d;
  } else {
    throw ManifestError("layer '" + e.name + "' has unknown kind '" + kind +
                        "'");
  }
  e.channels = count_field(j, "channels");
  if (j.contains("spatial") && !j.at("spatial").is_null()) {
    const auto hw = field<std::vector<std::int64_t>>(j, "spatial");
    if (hw.size() != 2 || hw[0] < 1 || hw[1] < 1) {
      throw ManifestError("layer '" + e.name +
                          "' spatial must be two positive integers [H, W]");
    }
    e.spatial = SpatialExtent{static_cast<std::size_t>(hw[0]),
                              static_cast<std::size_t>(hw[1])};
  }
  return e;
}

void check_file(const DatasetManifest& m, const std::string& file,
                const std::string& what) {
  if (!fs::is_regular_file(m.resolve(file))) {
    throw ManifestError(what + " file '" + file + "' does not exist under " +
                        m.base_dir.string());
  }
}

}  // namespace

void validate_manifest(const DatasetManifest& m) {
  if (m.num_samples < 1) throw ManifestError("num_samples must be >= 1");
  if (m.layers.empty()) throw ManifestError("manifest lists no layers");

  std::set<std::string> names;
  for (const auto& e : m.layers) {
    if (e.name.empty()) throw ManifestError("layer with empty name");
    if (!names.insert(e.name).second) {
      throw ManifestError("duplicate layer name '" + e.name + "'");
    }
    if (e.channels < 1) {
      throw ManifestError("layer '" + e.name + "' must have channels >= 1");
    }
    if (e.kind == LayerKind::kRaw4d && !e.spatial) {
      throw ManifestError("raw4d layer '" + e.name + "' requires spatial");
    }
    if (e.kind == LayerKind::kPooled2d && e.spatial) {
      throw ManifestError("pooled2d layer '" + e.name +
                          "' must not declare spatial");
    }
    check_file(m, e.file, "layer '" + e.name + "'");
    const NpyHeader h = read_npy_header(m.resolve(e.file));
    if (h.dtype == DType::kInt64) {
      throw ManifestError("layer '" + e.name + "' must hold floating data");
    }
    if (!h.shape.empty() && h.shape[0] != m.num_samples) {
      throw ShapeError("layer '" + e.name + "' has " +
                       std::to_string(h.shape[0]) + " samples, manifest says " +
                       std::to_string(m.num_samples));
    }
    if (h.shape != e.expected_shape(m.num_samples)) {
      throw ShapeError("layer '" + e.name + "' file shape " +
                       shape_string(h.shape) + " does not match declared " +
                       shape_string(e.expected_shape(m.num_samples)));
    }
  }

  if (m.labels_file) {
    if (m.num_classes < 1) {
      throw ManifestError("labels_file given but num_classes is 0");
    }
    check_file(m, *m.labels_file, "labels");
    const NpyHeader h = read_npy_header(m.resolve(*m.labels_file));
    if (h.dtype != DType::kInt64) {
      throw ManifestError("labels must be stored as int64");
    }
    if (h.shape != Shape{m.num_samples}) {
      throw ShapeError("labels file has shape " + shape_string(h.shape) +
                       ", expected (" + std::to_string(m.num_samples) + ",)");
    }
    const auto labels = load_tensor(m.resolve(*m.labels_file));
    for (auto y : labels.values<std::int64_t>()) {
      if (y < 0 || static_cast<std::size_t>(y) >= m.num_classes) {
        throw ManifestError("label " + std::to_string(y) +
                            " outside [0, " + std::to_string(m.num_classes - 1) +
                            "]");
      }
    }
  }

  if (m.logits_file) {
    check_file(m, *m.logits_file, "logits");
    const NpyHeader h = read_npy_header(m.resolve(*m.logits_file));
    if (h.dtype == DType::kInt64) {
      throw ManifestError("logits must hold floating data");
    }
    if (h.shape.size() != 2 || h.shape[0] != m.num_samples) {
      throw ShapeError("logits file has shape " + shape_string(h.shape) +
                       ", expected (" + std::to_string(m.num_samples) + ", K)");
    }
    if (m.num_classes > 0 && h.shape[1] != m.num_classes) {
      throw ShapeError("logits have " + std::to_string(h.shape[1]) +
                       " columns, manifest has " +
                       std::to_string(m.num_classes) + " classes");
    }
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ManifestError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw ManifestError("manifest must be a JSON object");

  DatasetManifest m;
  m.dataset_name = field<std::string>(j, "dataset_name");
  m.split = field<std::string>(j, "split");
  m.num_samples = count_field(j, "num_samples");
  m.num_classes = count_field(j, "num_classes");
  const auto& layers = j.contains("layers") ? j.at("layers") : json();
  if (!layers.is_array()) throw ManifestError("'layers' must be an array");
  for (const auto& l : layers) m.layers.push_back(parse_layer(l));
  if (j.contains("labels_file") && !j.at("labels_file").is_null()) {
    m.labels_file = field<std::string>(j, "labels_file");
  }
  if (j.contains("logits_file") && !j.at("logits_file").is_null()) {
    m.logits_file = field<std::string>(j, "logits_file");
  }
  for (const auto& [key, value] : j.items()) {
    static const std::set<std::string> known = {
        "dataset_name", "split",       "num_samples", "num_classes",
        "layers",       "labels_file", "logits_file"};
    if (!known.contains(key)) m.extra[key] = value;
  }
  m.base_dir = path.parent_path();
  m.sha256 = sha256_hex(text);
  validate_manifest(m);
  return m;
}

json manifest_to_json(const DatasetManifest& m) {
  json j = m.extra;
  j["dataset_name"] = m.dataset_name;
  j["split"] = m.split;
  j["num_samples"] = m.num_samples;
  j["num_classes"] = m.num_classes;
  json layers = json::array();
  for (const auto& e : m.layers) {
    json l = {{"name", e.name},
              {"file", e.file},
              {"kind", layer_kind_name(e.kind)},
              {"channels", e.channels}};
    if (e.spatial) l["spatial"] = {e.spatial->height, e.spatial->width};
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  if (m.labels_file) j["labels_file"] = *m.labels_file;
  if (m.logits_file) j["logits_file"] = *m.logits_file;
  return j;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_to_json(m).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::int64_t> load_labels(const DatasetManifest& m) {
  if (!m.labels_file) {
    throw ConfigError("manifest '" + m.dataset_name + "' has no labels");
  }
  const auto t = load_tensor(m.resolve(*m.labels_file));
  const auto v = t.values<std::int64_t>();
  return {v.begin(), v.end()};
}

Tensor load_layer_tensor(const DatasetManifest& m, std::size_t layer_index) {
  const auto& e = m.layers.at(layer_index);
  Tensor t = load_tensor(m.resolve(e.file));
  if (t.shape() != e.expected_shape(m.num_samples)) {
    throw ShapeError("layer '" + e.name + "' file changed shape since load");
  }
  return t;
}

Matrix<double> load_logits(const DatasetManifest& m) {
  if (!m.logits_file) {
    throw ConfigError("manifest '" + m.dataset_name + "' has no logits");
  }
  return to_matrix<double>(load_tensor(m.resolve(*m.logits_file)));
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw IoError("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace protood
