#include "protood/synth.hpp"

#include <cmath>
#include <limits>

#include "protood/error.hpp"
#include "protood/manifest.hpp"
#include "protood/npy.hpp"
#include "protood/random.hpp"

namespace protood {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream ids passed to mix_seed; every (purpose, layer) pair draws from its
// own generator so that changing one count leaves the other splits intact.
constexpr std::uint64_t kMeanStream = 0;
constexpr std::uint64_t kShiftedMeanStream = 1000;
constexpr std::uint64_t kSplitStream = 10000;
constexpr std::uint64_t kSeparationStream = 99999;

enum class Split { kTrain = 0, kTestId = 1, kOod = 2 };

std::vector<double> gaussian_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  return v;
}

void normalize_in_place(std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm == 0.0) throw DataError("synthetic draw produced a zero vector");
  for (double& x : v) x /= norm;
}

std::vector<std::vector<double>> unit_means(std::uint64_t seed,
                                            std::uint64_t stream,
                                            std::size_t k, std::size_t dim) {
  Rng rng(mix_seed(seed, stream));
  std::vector<std::vector<double>> means(k);
  for (auto& m : means) {
    m = gaussian_vector(rng, dim);
    normalize_in_place(m);
  }
  return means;
}

// One sample around `center`, or an isotropic direction when there is no
// center or the noise is infinite (kappa = 0).
std::vector<double> draw(Rng& rng, const std::vector<double>* center,
                         double sigma, std::size_t dim) {
  std::vector<double> v;
  if (center == nullptr || std::isinf(sigma)) {
    v = gaussian_vector(rng, dim);
  } else {
    v = *center;
    if (sigma > 0.0) {
      for (double& x : v) x += sigma * rng.normal();
    }
  }
  normalize_in_place(v);
  return v;
}

struct SplitPlan {
  Split split;
  const char* dir;
  const char* split_name;
  std::size_t count;
  bool labelled;
};

}  // namespace

double SynthConfig::sigma() const {
  if (std::isinf(kappa)) return 0.0;
  if (kappa == 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / std::sqrt(kappa);
}

void SynthConfig::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (dims_per_layer.empty()) throw ConfigError("need at least one layer");
  for (auto d : dims_per_layer) {
    if (d < 2) throw ConfigError("every layer needs dimension >= 2");
  }
  if (n_id_train < num_classes || n_id_test < num_classes) {
    throw ConfigError("labelled splits need at least num_classes samples");
  }
  if (n_ood < 1) throw ConfigError("n_ood must be >= 1");
  if (!(kappa >= 0.0)) throw ConfigError("kappa must be >= 0");
  if (!std::isfinite(logit_scale)) throw ConfigError("logit_scale must be finite");
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  try {
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<std::size_t>();
    if (j.contains("dims_per_layer")) {
      c.dims_per_layer = j.at("dims_per_layer").get<std::vector<std::size_t>>();
    }
    if (j.contains("n_id_train")) c.n_id_train = j.at("n_id_train").get<std::size_t>();
    if (j.contains("n_id_test")) c.n_id_test = j.at("n_id_test").get<std::size_t>();
    if (j.contains("n_ood")) c.n_ood = j.at("n_ood").get<std::size_t>();
    if (j.contains("kappa")) {
      const auto& k = j.at("kappa");
      if (k.is_string()) {
        if (k.get<std::string>() != "inf") throw ConfigError("kappa must be a number or \"inf\"");
        c.kappa = std::numeric_limits<double>::infinity();
      } else {
        c.kappa = k.get<double>();
      }
    }
    if (j.contains("ood_mode")) {
      const auto mode = j.at("ood_mode").get<std::string>();
      if (mode == "random_directions") {
        c.ood_mode = OodMode::kRandomDirections;
      } else if (mode == "shifted_clusters") {
        c.ood_mode = OodMode::kShiftedClusters;
      } else {
        throw ConfigError("unknown ood_mode '" + mode + "'");
      }
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("logit_scale")) c.logit_scale = j.at("logit_scale").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad synth config: ") + e.what());
  }
  c.validate();
  return c;
}

json SynthConfig::to_json() const {
  json j = {{"num_classes", num_classes},
            {"dims_per_layer", dims_per_layer},
            {"n_id_train", n_id_train},
            {"n_id_test", n_id_test},
            {"n_ood", n_ood},
            {"ood_mode", ood_mode == OodMode::kRandomDirections ? "random_directions"
                                                                : "shifted_clusters"},
            {"seed", seed},
            {"logit_scale", logit_scale}};
  if (std::isinf(kappa)) {
    j["kappa"] = "inf";
  } else {
    j["kappa"] = kappa;
  }
  return j;
}

SynthManifests generate(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const std::size_t num_layers = cfg.dims_per_layer.size();
  const double sigma = cfg.sigma();

  std::vector<std::vector<std::vector<double>>> means(num_layers), shifted(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    means[l] = unit_means(cfg.seed, kMeanStream + l, cfg.num_classes,
                          cfg.dims_per_layer[l]);
    shifted[l] = unit_means(cfg.seed, kShiftedMeanStream + l, cfg.num_classes,
                            cfg.dims_per_layer[l]);
  }

  const SplitPlan splits[] = {
      {Split::kTrain, "train", "train", cfg.n_id_train, true},
      {Split::kTestId, "test_id", "test", cfg.n_id_test, true},
      {Split::kOod, "ood", "test", cfg.n_ood, false},
  };

  SynthManifests paths;
  for (const auto& plan : splits) {
    const fs::path dir = out_dir / plan.dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    DatasetManifest m;
    m.dataset_name = plan.split == Split::kOod
                         ? (cfg.ood_mode == OodMode::kRandomDirections
                                ? "synth_ood_random_directions"
                                : "synth_ood_shifted_clusters")
                         : "synth_id";
    m.split = plan.split_name;
    m.num_samples = plan.count;
    m.num_classes = plan.labelled ? cfg.num_classes : 0;
    m.base_dir = dir;
    m.extra["synth_config"] = cfg.to_json();

    std::vector<std::int64_t> labels(plan.count);
    for (std::size_t i = 0; i < plan.count; ++i) {
      labels[i] = static_cast<std::int64_t>(i % cfg.num_classes);
    }

    std::vector<std::vector<double>> last_layer;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const std::size_t dim = cfg.dims_per_layer[l];
      Rng rng(mix_seed(cfg.seed, kSplitStream * (static_cast<std::uint64_t>(plan.split) + 1) + l));
      std::vector<float> values;
      values.reserve(plan.count * dim);
      const bool keep = l + 1 == num_layers;
      if (keep) last_layer.reserve(plan.count);
      for (std::size_t i = 0; i < plan.count; ++i) {
        const std::vector<double>* center = nullptr;
        if (plan.split != Split::kOod) {
          center = &means[l][static_cast<std::size_t>(labels[i])];
        } else if (cfg.ood_mode == OodMode::kShiftedClusters) {
          center = &shifted[l][i % cfg.num_classes];
        }
        auto v = draw(rng, center, sigma, dim);
        for (double x : v) values.push_back(static_cast<float>(x));
        if (keep) last_layer.push_back(std::move(v));
      }
      LayerEntry e;
      e.name = "layer" + std::to_string(l + 1);
      e.file = e.name + ".npy";
      e.kind = LayerKind::kPooled2d;
      e.channels = dim;
      save_tensor(Tensor({plan.count, dim}, std::move(values)), dir / e.file);
      m.layers.push_back(std::move(e));
    }

    std::vector<float> logits(plan.count * cfg.num_classes);
    const auto& top = means.back();
    for (std::size_t i = 0; i < plan.count; ++i) {
      for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        double dot = 0.0;
        for (std::size_t k = 0; k < top[c].size(); ++k) dot += last_layer[i][k] * top[c][k];
        logits[i * cfg.num_classes + c] = static_cast<float>(cfg.logit_scale * dot);
      }
    }
    save_tensor(Tensor({plan.count, cfg.num_classes}, std::move(logits)), dir / "logits.npy");
    m.logits_file = "logits.npy";
    if (plan.labelled) {
      save_tensor(Tensor({plan.count}, std::move(labels)), dir / "labels.npy");
      m.labels_file = "labels.npy";
    }
    validate_manifest(m);
    const fs::path manifest_path = dir / "manifest.json";
    save_manifest(m, manifest_path);
    switch (plan.split) {
      case Split::kTrain: paths.train = manifest_path; break;
      case Split::kTestId: paths.test_id = manifest_path; break;
      case Split::kOod: paths.ood = manifest_path; break;
    }
  }
  return paths;
}

std::vector<double> expected_separation_per_layer(const SynthConfig& cfg,
                                                  std::size_t draws) {
  if (!(cfg.kappa > 0.0)) {
    throw ConfigError("expected_separation needs kappa > 0");
  }
  if (draws < 1) throw ConfigError("need at least one draw");
  const double sigma = cfg.sigma();
  std::vector<double> out;
  for (std::size_t l = 0; l < cfg.dims_per_layer.size(); ++l) {
    if (sigma == 0.0) {
      out.push_back(1.0);
      continue;
    }
    // By rotational symmetry the true mean can be taken as e_1.
    const std::size_t dim = cfg.dims_per_layer[l];
    Rng rng(mix_seed(cfg.seed, kSeparationStream + l));
    double total = 0.0;
    for (std::size_t d = 0; d < draws; ++d) {
      double first = 1.0 + sigma * rng.normal();
      double sq = first * first;
      for (std::size_t k = 1; k < dim; ++k) {
        const double x = sigma * rng.normal();
        sq += x * x;
      }
      total += first / std::sqrt(sq);
    }
    out.push_back(total / static_cast<double>(draws));
  }
  return out;
}

double expected_separation(const SynthConfig& cfg, std::size_t draws) {
  const auto per_layer = expected_separation_per_layer(cfg, draws);
  double sum = 0.0;
  for (double v : per_layer) sum += v;
  return sum / static_cast<double>(per_layer.size());
}

}  // namespace protood
