#include "protood/prototypes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "protood/npy.hpp"
#include "protood/parallel.hpp"
#include "protood/random.hpp"

namespace protood {

namespace fs = std::filesystem;
using nlohmann::json;

void CalibrationConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
  if (min_per_class < 1) throw ConfigError("min_per_class must be >= 1");
}

std::vector<std::size_t> sample_calibration(std::span<const std::int64_t> labels,
                                            std::size_t num_classes,
                                            const CalibrationConfig& cfg) {
  cfg.validate();
  if (labels.empty()) throw ConfigError("cannot calibrate on an empty label set");
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("label " + std::to_string(y) + " at index " +
                      std::to_string(i) + " is outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    members[static_cast<std::size_t>(y)].push_back(i);
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> selected;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& pool = members[c];
    if (pool.empty()) {
      throw EmptyClassError("class " + std::to_string(c) +
                            " has no calibration candidates");
    }
    const auto want = std::max<std::size_t>(
        cfg.min_per_class,
        static_cast<std::size_t>(
            std::llround(cfg.alpha * static_cast<double>(pool.size()))));
    if (want > pool.size()) {
      throw InsufficientCalibration(
          "class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
          " samples, fewer than min_per_class=" +
          std::to_string(cfg.min_per_class));
    }
    // Partial Fisher-Yates over the class members.
    for (std::size_t k = 0; k < want; ++k) {
      const std::size_t j = k + rng.below(pool.size() - k);
      std::swap(pool[k], pool[j]);
      selected.push_back(pool[k]);
    }
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

void PrototypeBank::validate() const {
  const std::size_t l = layer_names.size();
  if (l == 0) throw BankFormatError("bank has no layers");
  if (prototypes.size() != l || layer_weights.size() != l ||
      class_counts.size() != l) {
    throw BankFormatError("bank layer tables have inconsistent lengths");
  }
  if (num_classes < 1) throw BankFormatError("bank has no classes");
  for (std::size_t i = 0; i < l; ++i) {
    const auto& p = prototypes[i];
    if (p.rows() != num_classes || p.cols() < 1) {
      throw BankFormatError("prototype matrix of layer '" + layer_names[i] +
                            "' is not (K, C)");
    }
    if (!(layer_weights[i] > 0.0) || !std::isfinite(layer_weights[i])) {
      throw BankFormatError("layer weight of '" + layer_names[i] +
                            "' must be positive");
    }
    if (class_counts[i].size() != num_classes) {
      throw BankFormatError("class_counts of '" + layer_names[i] +
                            "' must have K entries");
    }
    for (auto n : class_counts[i]) {
      if (n < 1) throw BankFormatError("class_counts entries must be >= 1");
    }
    for (std::size_t c = 0; c < p.rows(); ++c) {
      double sq = 0.0;
      for (float v : p.row(c)) sq += static_cast<double>(v) * v;
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-5) {
        throw BankFormatError("prototype " + std::to_string(c) + " of layer '" +
                              layer_names[i] + "' is not unit norm");
      }
    }
  }
}

std::vector<std::string> select_layers(const DatasetManifest& manifest,
                                       std::string_view selection) {
  std::vector<std::string> all;
  for (const auto& e : manifest.layers) all.push_back(e.name);
  if (selection.empty() || selection == "last3") return default_layers(manifest);
  if (selection == "all") return all;
  if (selection == "penultimate") return {all.back()};
  if (selection.starts_with("last")) {
    std::size_t n = 0;
    auto digits = selection.substr(4);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || n == 0) {
      throw ConfigError("bad layer selection '" + std::string(selection) + "'");
    }
    n = std::min(n, all.size());
    return {all.end() - static_cast<std::ptrdiff_t>(n), all.end()};
  }
  std::vector<std::string> out;
  std::stringstream ss{std::string(selection)};
  for (std::string name; std::getline(ss, name, ',');) {
    if (!manifest.find_layer(name)) {
      throw ShapeError("layer '" + name + "' not present in manifest '" +
                       manifest.dataset_name + "'");
    }
    if (std::find(out.begin(), out.end(), name) != out.end()) {
      throw ConfigError("layer '" + name + "' selected twice");
    }
    out.push_back(name);
  }
  if (out.empty()) throw ConfigError("empty layer selection");
  return out;
}

std::vector<std::string> default_layers(const DatasetManifest& manifest) {
  const std::size_t n = manifest.layers.size();
  std::vector<std::string> out;
  for (std::size_t i = n > 3 ? n - 3 : 0; i < n; ++i) {
    out.push_back(manifest.layers[i].name);
  }
  return out;
}

Matrix<float> class_prototypes(const PooledBatch& normalized,
                               std::span<const std::int64_t> labels,
                               std::size_t num_classes,
                               std::span<const std::size_t> indices,
                               std::vector<std::int64_t>* counts) {
  if (!normalized.normalized) {
    throw ConfigError("prototypes need L2-normalized features");
  }
  const auto& f = normalized.features;
  if (labels.size() != f.rows()) {
    throw ShapeError("labels (" + std::to_string(labels.size()) +
                     ") and features (" + std::to_string(f.rows()) +
                     ") disagree on sample count");
  }
  // Accumulating in sorted order makes the result independent of the order
  // the caller listed the indices in.
  std::vector<std::size_t> order(indices.begin(), indices.end());
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) {
    throw ConfigError("calibration indices contain duplicates");
  }
  if (!order.empty() && order.back() >= f.rows()) {
    throw ConfigError("calibration index " + std::to_string(order.back()) +
                      " out of range");
  }

  Matrix<double> sums(num_classes, f.cols(), 0.0);
  std::vector<std::int64_t> n(num_classes, 0);
  for (auto i : order) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= num_classes) throw DataError("label out of range");
    auto dst = sums.row(y);
    auto src = f.row(i);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    ++n[y];
  }

  Matrix<float> protos(num_classes, f.cols());
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (n[c] == 0) {
      throw EmptyClassError("class " + std::to_string(c) +
                            " has no calibration samples in layer '" +
                            normalized.layer_name + "'");
    }
    auto mean = sums.row(c);
    double sq = 0.0;
    for (double& v : mean) {
      v /= static_cast<double>(n[c]);
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm < kDegenerateNorm) {
      throw DegeneratePrototypeError("class " + std::to_string(c) +
                                     " in layer '" + normalized.layer_name +
                                     "' has a zero mean feature");
    }
    for (std::size_t k = 0; k < mean.size(); ++k) {
      protos(c, k) = static_cast<float>(mean[k] / norm);
    }
  }
  if (counts) *counts = std::move(n);
  return protos;
}

PrototypeBank build_prototypes(std::span<const PooledBatch> normalized,
                               std::span<const std::int64_t> labels,
                               std::size_t num_classes,
                               std::span<const std::size_t> indices,
                               unsigned threads) {
  if (normalized.empty()) throw ConfigError("no layers to build prototypes for");
  if (num_classes < 1) throw ConfigError("prototypes need num_classes >= 1");
  PrototypeBank bank;
  bank.num_classes = num_classes;
  bank.prototypes.resize(normalized.size());
  bank.class_counts.resize(normalized.size());
  bank.layer_weights.assign(normalized.size(), 1.0);
  for (const auto& b : normalized) bank.layer_names.push_back(b.layer_name);
  parallel_for(normalized.size(), threads, [&](std::size_t l) {
    bank.prototypes[l] = class_prototypes(normalized[l], labels, num_classes,
                                          indices, &bank.class_counts[l]);
  });
  return bank;
}

std::vector<PooledBatch> prepare_layers(const DatasetManifest& manifest,
                                        std::span<const std::string> layers,
                                        unsigned threads) {
  std::vector<PooledBatch> out;
  out.reserve(layers.size());
  for (const auto& name : layers) {
    const auto idx = manifest.find_layer(name);
    if (!idx) {
      throw ShapeError("layer '" + name + "' not present in manifest '" +
                       manifest.dataset_name + "'");
    }
    out.push_back(prepare_layer(manifest.layers[*idx],
                                load_layer_tensor(manifest, *idx), threads));
  }
  return out;
}

PrototypeBank build_prototypes(const DatasetManifest& manifest,
                               std::span<const std::size_t> indices,
                               std::span<const std::string> layers,
                               unsigned threads) {
  if (!manifest.labels_file || manifest.num_classes < 1) {
    throw ConfigError("manifest '" + manifest.dataset_name +
                      "' has no labels to build prototypes from");
  }
  const std::vector<std::string> names =
      layers.empty() ? default_layers(manifest)
                     : std::vector<std::string>(layers.begin(), layers.end());
  const auto labels = load_labels(manifest);
  const auto features = prepare_layers(manifest, names, threads);
  PrototypeBank bank =
      build_prototypes(features, labels, manifest.num_classes, indices, threads);
  bank.provenance.source_manifest_sha256 = manifest.sha256;
  return bank;
}

namespace {

fs::path prototype_file(const fs::path& dir, const std::string& layer) {
  if (layer.empty() || layer.find_first_of("/\\") != std::string::npos ||
      layer == "." || layer == "..") {
    throw BankFormatError("layer name '" + layer +
                          "' cannot be used as a file name");
  }
  return dir / ("P_" + layer + ".npy");
}

}  // namespace

void save_bank(const PrototypeBank& bank, const fs::path& dir) {
  bank.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t l = 0; l < bank.num_layers(); ++l) {
    const auto& p = bank.prototypes[l];
    const auto data = p.data();
    save_tensor(Tensor(Shape{p.rows(), p.cols()},
                       std::vector<float>(data.begin(), data.end())),
                prototype_file(dir, bank.layer_names[l]));
  }
  json j = {{"layer_names", bank.layer_names},
            {"layer_weights", bank.layer_weights},
            {"class_counts", bank.class_counts},
            {"num_classes", bank.num_classes},
            {"source_manifest_sha256", bank.provenance.source_manifest_sha256},
            {"alpha", bank.provenance.alpha},
            {"seed", bank.provenance.seed}};
  std::ofstream out(dir / "bank.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "bank.json").string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + (dir / "bank.json").string());
}

PrototypeBank load_bank(const fs::path& dir) {
  const fs::path meta = dir / "bank.json";
  std::ifstream in(meta);
  if (!in) throw IoError("cannot open " + meta.string());
  PrototypeBank bank;
  try {
    const json j = json::parse(in);
    bank.layer_names = j.at("layer_names").get<std::vector<std::string>>();
    bank.layer_weights = j.at("layer_weights").get<std::vector<double>>();
    bank.class_counts =
        j.at("class_counts").get<std::vector<std::vector<std::int64_t>>>();
    bank.num_classes = j.at("num_classes").get<std::size_t>();
    bank.provenance.source_manifest_sha256 =
        j.at("source_manifest_sha256").get<std::string>();
    bank.provenance.alpha = j.at("alpha").get<double>();
    bank.provenance.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw BankFormatError(meta.string() + ": " + e.what());
  }
  for (const auto& name : bank.layer_names) {
    try {
      const auto path = prototype_file(dir, name);
      if (!fs::is_regular_file(path)) {
        throw BankFormatError("missing prototype file " + path.string());
      }
      const Tensor t = load_tensor(path);
      if (t.rank() != 2 || t.dtype() != DType::kFloat32) {
        throw BankFormatError(path.string() + " must be a float32 matrix");
      }
      const auto v = t.values<float>();
      bank.prototypes.emplace_back(t.dim(0), t.dim(1),
                                   std::vector<float>(v.begin(), v.end()));
    } catch (const BankFormatError&) {
      throw;
    } catch (const Error& e) {
      throw BankFormatError(e.what());
    }
  }
  bank.validate();
  return bank;
}

std::optional<std::string> provenance_warning(const PrototypeBank& bank,
                                              const DatasetManifest& manifest) {
  if (bank.provenance.source_manifest_sha256 == manifest.sha256) {
    return std::nullopt;
  }
  return "manifest '" + manifest.dataset_name + "' (sha256 " +
         (manifest.sha256.empty() ? std::string("unknown")
                                  : manifest.sha256.substr(0, 12)) +
         ") is not the manifest this bank was built from (sha256 " +
         bank.provenance.source_manifest_sha256.substr(0, 12) + ")";
}

}  // namespace protood
