#include "protood/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "protood/baselines.hpp"
#include "protood/format.hpp"
#include "protood/fusion.hpp"
#include "protood/manifest.hpp"
#include "protood/metrics.hpp"
#include "protood/prototypes.hpp"
#include "protood/synth.hpp"

namespace protood::cli {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void emit(const std::string& out_path, const std::string& text, std::ostream& out) {
  if (out_path.empty() || out_path == "-") {
    out << text;
  } else {
    write_file(out_path, text);
  }
}

// Lists may be given comma-separated, repeated, or both.
std::vector<std::string> flatten(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    for (auto& part : split(item, ',')) {
      if (!part.empty()) out.push_back(std::move(part));
    }
  }
  return out;
}

struct MeanMetrics {
  double auroc = 0.0;
  double fpr = 0.0;
};

MeanMetrics mean_over_ood(std::span<const double> id_scores,
                          const std::vector<std::vector<double>>& ood_scores) {
  MeanMetrics m;
  for (const auto& ood : ood_scores) {
    m.auroc += auroc(id_scores, ood);
    m.fpr += fpr_at_tpr(id_scores, ood, 0.95).fpr;
  }
  m.auroc /= static_cast<double>(ood_scores.size());
  m.fpr /= static_cast<double>(ood_scores.size());
  return m;
}

std::string metrics_cells(const MeanMetrics& m) {
  return format_fixed(100.0 * m.auroc, 2) + "," + format_fixed(100.0 * m.fpr, 2);
}

// Prepared features of a labelled set plus the scoring sets, loaded once and
// reused across an ablation sweep.
struct SweepData {
  std::vector<PooledBatch> train;
  std::vector<std::int64_t> labels;
  std::size_t num_classes = 0;
  std::vector<PooledBatch> test;
  std::vector<std::vector<PooledBatch>> ood;
};

SweepData load_sweep(const std::string& train_path, const std::string& test_path,
                     const std::vector<std::string>& ood_paths,
                     const std::string& layer_selection, unsigned threads) {
  if (ood_paths.empty()) throw ConfigError("at least one OOD manifest is required");
  const auto train = load_manifest(train_path);
  const auto layers = select_layers(train, layer_selection);
  SweepData d;
  d.train = prepare_layers(train, layers, threads);
  d.labels = load_labels(train);
  d.num_classes = train.num_classes;
  d.test = prepare_layers(load_manifest(test_path), layers, threads);
  for (const auto& p : ood_paths) {
    d.ood.push_back(prepare_layers(load_manifest(p), layers, threads));
  }
  return d;
}

MeanMetrics sweep_point(const SweepData& d, const PrototypeBank& bank,
                        std::span<const double> weights, unsigned threads) {
  const auto id = score_features(d.test, bank, weights, threads).affinities();
  std::vector<std::vector<double>> ood;
  for (const auto& set : d.ood) {
    ood.push_back(score_features(set, bank, weights, threads).affinities());
  }
  return mean_over_ood(id, ood);
}

struct Options {
  unsigned threads = 1;

  std::string manifest, out, layers = "last3";
  double alpha = 0.10;
  std::uint64_t seed = 0;
  std::size_t min_per_class = 1;

  std::string bank, scheme = "uniform", weights;

  std::string id_scores, column = "affinity", method_name = "protood";
  std::string id_name, ood_name;
  std::vector<std::string> ood_scores;

  std::string train_manifest, test_manifest;
  std::vector<std::string> ood_manifests, alphas, schemes, selections;

  std::string method;
  double temperature = 1.0;
  std::string layer;

  std::string config, out_dir;
};

int cmd_build(const Options& o, std::ostream& out) {
  const auto manifest = load_manifest(o.manifest);
  const auto layers = select_layers(manifest, o.layers);
  const CalibrationConfig cfg{o.alpha, o.seed, o.min_per_class};
  const auto labels = load_labels(manifest);
  const auto indices = sample_calibration(labels, manifest.num_classes, cfg);
  auto bank = build_prototypes(manifest, indices, layers, o.threads);
  bank.provenance.alpha = o.alpha;
  bank.provenance.seed = o.seed;
  save_bank(bank, o.out);
  out << "class,count\n";
  for (std::size_t c = 0; c < bank.num_classes; ++c) {
    out << c << ',' << bank.class_counts.front()[c] << '\n';
  }
  return 0;
}

int cmd_score(const Options& o, std::ostream& out, std::ostream& err) {
  const auto bank = load_bank(o.bank);
  const auto manifest = load_manifest(o.manifest);
  if (auto warning = provenance_warning(bank, manifest)) {
    err << "note: " << *warning << '\n';
  }
  const auto table =
      score_dataset(manifest, bank, WeightScheme::parse(o.scheme, o.weights), o.threads);
  std::ostringstream csv;
  write_score_csv(table, csv);
  emit(o.out, csv.str(), out);
  return 0;
}

std::vector<double> oriented_column(const std::string& path, const std::string& column) {
  const auto table = read_csv(path);
  if (table.rows.empty()) throw DataError(path + " holds no scores");
  auto values = table.numeric_column(column);
  // ood_score is the only column where larger means more OOD.
  return column == "ood_score" ? negated(values) : values;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

int cmd_eval(const Options& o, std::ostream& out) {
  const auto ood_paths = flatten(o.ood_scores);
  if (ood_paths.empty()) throw ConfigError("--ood-scores is required");
  if (!o.ood_name.empty() && ood_paths.size() > 1) {
    throw ConfigError("--ood-name needs exactly one --ood-scores file");
  }
  const auto id = oriented_column(o.id_scores, o.column);
  std::ostringstream rows;
  for (const auto& p : ood_paths) {
    const auto ood = oriented_column(p, o.column);
    const auto report =
        evaluate(o.method_name, o.id_name.empty() ? stem_of(o.id_scores) : o.id_name,
                 o.ood_name.empty() ? stem_of(p) : o.ood_name, id, ood);
    write_report_row(report, rows);
  }
  if (o.out.empty() || o.out == "-") {
    out << kReportHeader << '\n' << rows.str();
    return 0;
  }
  const fs::path report(o.out);
  if (report.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(report.parent_path(), ec);
  }
  const bool fresh = !fs::exists(report) || fs::file_size(report) == 0;
  std::ofstream f(report, std::ios::app);
  if (!f) throw IoError("cannot append to " + o.out);
  if (fresh) f << kReportHeader << '\n';
  f << rows.str();
  if (!f) throw IoError("write failed for " + o.out);
  return 0;
}

int cmd_ablate_alpha(const Options& o, std::ostream& out) {
  std::vector<double> alphas;
  for (const auto& a : flatten(o.alphas)) alphas.push_back(parse_double_list(a).front());
  if (alphas.empty()) throw ConfigError("--alphas is required");
  const auto data = load_sweep(o.train_manifest, o.test_manifest, flatten(o.ood_manifests),
                               o.layers, o.threads);
  const auto weights = resolve_weights(WeightScheme::parse(o.scheme, o.weights), data.train.size());
  std::ostringstream csv;
  csv << "alpha,auroc_mean,fpr_mean\n";
  for (double a : alphas) {
    const auto idx = sample_calibration(data.labels, data.num_classes,
                                        CalibrationConfig{a, o.seed, o.min_per_class});
    const auto bank = build_prototypes(data.train, data.labels, data.num_classes, idx, o.threads);
    csv << format_g9(a) << ',' << metrics_cells(sweep_point(data, bank, weights, o.threads))
        << '\n';
  }
  emit(o.out, csv.str(), out);
  return 0;
}

int cmd_ablate_layers(const Options& o, std::ostream& out) {
  auto selections = o.selections;
  if (selections.empty()) selections = {"penultimate", "last3"};
  const auto train = load_manifest(o.train_manifest);
  const auto test = load_manifest(o.test_manifest);
  std::vector<DatasetManifest> oods;
  for (const auto& p : flatten(o.ood_manifests)) oods.push_back(load_manifest(p));
  if (oods.empty()) throw ConfigError("at least one OOD manifest is required");
  const auto labels = load_labels(train);
  const auto idx = sample_calibration(labels, train.num_classes,
                                      CalibrationConfig{o.alpha, o.seed, o.min_per_class});
  std::ostringstream csv;
  csv << "layers,auroc_mean,fpr_mean\n";
  for (const auto& sel : selections) {
    const auto layers = select_layers(train, sel);
    SweepData d;
    d.test = prepare_layers(test, layers, o.threads);
    for (const auto& m : oods) d.ood.push_back(prepare_layers(m, layers, o.threads));
    const auto bank = build_prototypes(prepare_layers(train, layers, o.threads), labels,
                                       train.num_classes, idx, o.threads);
    const auto weights = resolve_weights(WeightScheme::uniform(), layers.size());
    std::string label;
    for (const auto& l : layers) label += (label.empty() ? "" : "+") + l;
    csv << label << ',' << metrics_cells(sweep_point(d, bank, weights, o.threads)) << '\n';
  }
  emit(o.out, csv.str(), out);
  return 0;
}

int cmd_ablate_weights(const Options& o, std::ostream& out) {
  std::vector<WeightScheme> schemes;
  for (const auto& name : flatten(o.schemes)) {
    if (name == "custom") {
      throw ConfigError("the weighting ablation only runs the four named schemes");
    }
    schemes.push_back(WeightScheme::parse(name));
  }
  if (schemes.empty()) schemes = ablation_schemes();
  const auto bank = load_bank(o.bank);
  const auto test = load_manifest(o.test_manifest);
  SweepData d;
  d.test = prepare_bank_layers(test, bank, o.threads);
  for (const auto& p : flatten(o.ood_manifests)) {
    d.ood.push_back(prepare_bank_layers(load_manifest(p), bank, o.threads));
  }
  if (d.ood.empty()) throw ConfigError("at least one OOD manifest is required");
  std::ostringstream csv;
  csv << "scheme,auroc_mean,fpr_mean\n";
  for (const auto& s : schemes) {
    const auto weights = resolve_weights(s, bank.num_layers());
    csv << s.name() << ',' << metrics_cells(sweep_point(d, bank, weights, o.threads)) << '\n';
  }
  emit(o.out, csv.str(), out);
  return 0;
}

PooledBatch penultimate_features(const DatasetManifest& m, const std::string& layer,
                                 unsigned threads) {
  std::size_t idx = m.layers.size() - 1;
  if (!layer.empty()) {
    const auto found = m.find_layer(layer);
    if (!found) {
      throw ShapeError("layer '" + layer + "' not present in manifest '" +
                       m.dataset_name + "'");
    }
    idx = *found;
  }
  return pool_layer(m.layers[idx], load_layer_tensor(m, idx), threads);
}

int cmd_baseline(const Options& o, std::ostream& out) {
  const auto manifest = load_manifest(o.manifest);
  std::vector<double> scores;
  if (o.method == "msp") {
    scores = msp(load_logits(manifest));
  } else if (o.method == "maxlogit") {
    scores = max_logit(load_logits(manifest));
  } else if (o.method == "energy") {
    scores = energy(load_logits(manifest), o.temperature);
  } else if (o.method == "mahalanobis") {
    if (o.train_manifest.empty()) {
      throw ConfigError("mahalanobis needs --train-manifest");
    }
    const auto train = load_manifest(o.train_manifest);
    const auto model = fit_mahalanobis(penultimate_features(train, o.layer, o.threads),
                                       load_labels(train), train.num_classes);
    scores = mahalanobis_score(model, penultimate_features(manifest, o.layer, o.threads),
                               o.threads);
  } else {
    throw ConfigError("unknown baseline '" + o.method + "'");
  }
  std::ostringstream csv;
  write_baseline_csv(scores, csv);
  emit(o.out, csv.str(), out);
  return 0;
}

int cmd_synth(const Options& o, std::ostream& out) {
  SynthConfig cfg;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw IoError("cannot open " + o.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
    cfg = SynthConfig::from_json(j);
  }
  const auto paths = generate(cfg, o.out_dir);
  out << "train," << paths.train.string() << '\n'
      << "test_id," << paths.test_id.string() << '\n'
      << "ood," << paths.ood.string() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-layer prototype OOD scoring toolkit", "protood"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--threads", o.threads, "Worker threads (outputs do not depend on it)")
      ->check(CLI::Range(1u, 1024u));

  auto* build = app.add_subcommand("build", "Build a prototype bank from an ID train manifest");
  build->add_option("--manifest", o.manifest)->required();
  build->add_option("--alpha", o.alpha, "Calibration fraction per class")->capture_default_str();
  build->add_option("--seed", o.seed)->capture_default_str();
  build->add_option("--min-per-class", o.min_per_class)->capture_default_str();
  build->add_option("--layers", o.layers, "all | lastN | penultimate | name,name,...")
      ->capture_default_str();
  build->add_option("--out", o.out, "Bank directory")->required();

  auto* score = app.add_subcommand("score", "Score a manifest against a bank");
  score->add_option("--bank", o.bank)->required();
  score->add_option("--manifest", o.manifest)->required();
  score->add_option("--scheme", o.scheme)->capture_default_str();
  score->add_option("--weights", o.weights, "Comma list for --scheme custom");
  score->add_option("--out", o.out, "Score CSV (stdout when omitted)");

  auto* eval = app.add_subcommand("eval", "AUROC / FPR@95%TPR from score CSVs");
  eval->add_option("--id-scores", o.id_scores)->required();
  eval->add_option("--ood-scores", o.ood_scores)->required();
  eval->add_option("--column", o.column, "affinity | ood_score | score | m_<layer>")
      ->capture_default_str();
  eval->add_option("--method-name", o.method_name)->capture_default_str();
  eval->add_option("--id-name", o.id_name);
  eval->add_option("--ood-name", o.ood_name);
  eval->add_option("--out", o.out, "Report CSV to append to (stdout when omitted)");

  auto* ablate_alpha = app.add_subcommand("ablate-alpha", "Sweep the calibration fraction");
  ablate_alpha->add_option("--train-manifest", o.train_manifest)->required();
  ablate_alpha->add_option("--test-manifest", o.test_manifest)->required();
  ablate_alpha->add_option("--ood-manifests", o.ood_manifests)->required();
  ablate_alpha->add_option("--alphas", o.alphas)->required();
  ablate_alpha->add_option("--seed", o.seed)->capture_default_str();
  ablate_alpha->add_option("--min-per-class", o.min_per_class)->capture_default_str();
  ablate_alpha->add_option("--layers", o.layers)->capture_default_str();
  ablate_alpha->add_option("--scheme", o.scheme)->capture_default_str();
  ablate_alpha->add_option("--weights", o.weights);
  ablate_alpha->add_option("--out", o.out);

  auto* ablate_weights = app.add_subcommand("ablate-weights", "Compare the four layer weightings");
  ablate_weights->add_option("--bank", o.bank)->required();
  ablate_weights->add_option("--test-manifest", o.test_manifest)->required();
  ablate_weights->add_option("--ood-manifests", o.ood_manifests)->required();
  ablate_weights->add_option("--schemes", o.schemes, "Subset of the four named schemes");
  ablate_weights->add_option("--out", o.out);

  auto* ablate_layers = app.add_subcommand("ablate-layers", "Compare feature sources");
  ablate_layers->add_option("--train-manifest", o.train_manifest)->required();
  ablate_layers->add_option("--test-manifest", o.test_manifest)->required();
  ablate_layers->add_option("--ood-manifests", o.ood_manifests)->required();
  ablate_layers->add_option("--selection", o.selections,
                            "Layer selection, repeatable (default: penultimate, last3)");
  ablate_layers->add_option("--alpha", o.alpha)->capture_default_str();
  ablate_layers->add_option("--seed", o.seed)->capture_default_str();
  ablate_layers->add_option("--min-per-class", o.min_per_class)->capture_default_str();
  ablate_layers->add_option("--out", o.out);

  auto* baseline = app.add_subcommand("baseline", "Run a reference scorer");
  baseline->add_option("--method", o.method)
      ->required()
      ->check(CLI::IsMember({"msp", "maxlogit", "energy", "mahalanobis"}));
  baseline->add_option("--manifest", o.manifest)->required();
  baseline->add_option("--train-manifest", o.train_manifest, "Fit set for mahalanobis");
  baseline->add_option("--layer", o.layer, "Feature layer for mahalanobis (default: last)");
  baseline->add_option("--temperature", o.temperature)->capture_default_str();
  baseline->add_option("--out", o.out);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic benchmark");
  synth->add_option("--config", o.config, "JSON config (defaults when omitted)");
  synth->add_option("--out-dir", o.out_dir)->required();

  std::vector<const char*> argv{"protood"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*build) return cmd_build(o, out);
    if (*score) return cmd_score(o, out, err);
    if (*eval) return cmd_eval(o, out);
    if (*ablate_alpha) return cmd_ablate_alpha(o, out);
    if (*ablate_weights) return cmd_ablate_weights(o, out);
    if (*ablate_layers) return cmd_ablate_layers(o, out);
    if (*baseline) return cmd_baseline(o, out);
    if (*synth) return cmd_synth(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kIo);
  }
  return static_cast<int>(ExitCode::kConfig);
}

}  // namespace protood::cli
