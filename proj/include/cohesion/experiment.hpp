#pragma once

// Experiment-matrix runner: for every dataset variant, train one SVR per
// modality, fuse, and score each requested method on each evaluation split.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cohesion/dataset.hpp"
#include "cohesion/detail/text.hpp"
#include "cohesion/error.hpp"
#include "cohesion/feature_store.hpp"
#include "cohesion/fusion.hpp"
#include "cohesion/metrics.hpp"
#include "cohesion/svr.hpp"

namespace cohesion {

enum class DatasetVariant { train, balanced_train, train_plus_val, balanced_train_plus_val };

inline std::string_view to_string(DatasetVariant v) {
  switch (v) {
    case DatasetVariant::train: return "train";
    case DatasetVariant::balanced_train: return "balanced_train";
    case DatasetVariant::train_plus_val: return "train_plus_val";
    case DatasetVariant::balanced_train_plus_val: return "balanced_train_plus_val";
  }
  return "?";
}

inline std::optional<DatasetVariant> parse_variant(std::string_view s) {
  if (s == "train") return DatasetVariant::train;
  if (s == "balanced_train") return DatasetVariant::balanced_train;
  if (s == "train_plus_val") return DatasetVariant::train_plus_val;
  if (s == "balanced_train_plus_val") return DatasetVariant::balanced_train_plus_val;
  return std::nullopt;
}

inline bool is_balanced(DatasetVariant v) {
  return v == DatasetVariant::balanced_train || v == DatasetVariant::balanced_train_plus_val;
}

inline bool merges_val(DatasetVariant v) {
  return v == DatasetVariant::train_plus_val || v == DatasetVariant::balanced_train_plus_val;
}

inline constexpr std::string_view kMethodBaseline = "baseline";
inline constexpr std::string_view kMethodFusionAverage = "fusion_average";
inline constexpr std::string_view kMethodFusionGrid = "fusion_grid";

/// Per-image feature vectors of one modality (multi-instance already averaged).
struct ModalityInput {
  std::string name;
  FeatureMap vectors;
};

struct ExperimentConfig {
  std::vector<ModalityInput> modalities;  // order fixes the fusion weight order
  LabeledDataset dataset;
  std::uint64_t seed = 42;
  KernelChoice kernel;
  SvrHyperparams svr;
  double grid_step = 0.05;
  double balance_ratio = 0.3;
  int balance_level = 2;
  double holdout_fraction = 0.1;
  std::vector<DatasetVariant> variants;
  std::vector<Split> eval_splits;
  std::vector<std::string> methods;  // baseline, modality names, fusion_average, fusion_grid

  /// All methods available for the configured modalities.
  std::vector<std::string> all_methods() const {
    std::vector<std::string> out{std::string(kMethodBaseline)};
    for (const auto& m : modalities) out.push_back(m.name);
    out.emplace_back(kMethodFusionAverage);
    out.emplace_back(kMethodFusionGrid);
    return out;
  }
};

/// Everything produced while training one dataset variant.
struct VariantRun {
  DatasetVariant variant = DatasetVariant::train;
  std::vector<std::string> fit_ids;     // images the SVRs were trained on
  std::vector<std::string> select_ids;  // images the grid weights were chosen on
  std::map<std::string, SvrModel> models;
  ModalityPredictions predictions;
  FusionWeights grid_weights;
  double grid_select_mse = 0.0;
  double baseline_level = 0.0;  // mean raw training level
};

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

inline VariantRun train_variant(const ExperimentConfig& cfg, DatasetVariant variant) {
  if (cfg.modalities.empty()) throw Error(ErrorCode::ModalityMismatch, "experiment needs at least one modality");
  cfg.dataset.validate();

  VariantRun run;
  run.variant = variant;
  const LabeledDataset ds = is_balanced(variant)
                                ? balance_downsample(cfg.dataset, cfg.balance_level, cfg.balance_ratio, cfg.seed)
                                : cfg.dataset;
  if (merges_val(variant)) {
    std::vector<std::string> merged = ds.labeled_ids_in(Split::train);
    const auto val = ds.labeled_ids_in(Split::val);
    merged.insert(merged.end(), val.begin(), val.end());
    std::sort(merged.begin(), merged.end());
    std::mt19937_64 rng(detail::derive_seed(cfg.seed, 1));
    std::shuffle(merged.begin(), merged.end(), rng);
    auto hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(merged.size())));
    hold = std::clamp<std::size_t>(hold, merged.empty() ? 0 : 1, merged.size() > 1 ? merged.size() - 1 : merged.size());
    run.select_ids.assign(merged.begin(), merged.begin() + static_cast<std::ptrdiff_t>(hold));
    run.fit_ids.assign(merged.begin() + static_cast<std::ptrdiff_t>(hold), merged.end());
    std::sort(run.select_ids.begin(), run.select_ids.end());
    std::sort(run.fit_ids.begin(), run.fit_ids.end());
  } else {
    run.fit_ids = ds.labeled_ids_in(Split::train);
    run.select_ids = ds.labeled_ids_in(Split::val);
  }
  if (run.fit_ids.empty()) throw Error(ErrorCode::EmptyTrainingSet, "variant " + std::string(to_string(variant)) + " has no training images");

  double level_sum = 0.0;
  for (const auto& id : run.fit_ids) level_sum += ds.labels.at(id).level();
  run.baseline_level = level_sum / static_cast<double>(run.fit_ids.size());

  std::vector<std::string> names;
  std::map<std::string, FeatureMap> features;
  for (const auto& mod : cfg.modalities) {
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    for (const auto& id : run.fit_ids) {
      auto it = mod.vectors.find(id);
      if (it == mod.vectors.end()) continue;
      X.push_back(it->second);
      y.push_back(normalize_label(ds.labels.at(id)));
    }
    if (X.empty()) throw Error(ErrorCode::NoFeaturesForModality, mod.name + " has no training-split features");
    run.models.emplace(mod.name, train_svr_raw(X, y, cfg.kernel, cfg.svr));
    names.push_back(mod.name);
    features.emplace(mod.name, mod.vectors);
  }

  // Predictions cover every image of the original dataset, including any
  // removed by balancing, so that val/test rows are unaffected by the variant.
  run.predictions = build_predictions(names, run.models, features, cfg.dataset.all_ids(), run.fit_ids);
  auto search = grid_search(run.predictions, select_labels(ds.labels, run.select_ids), cfg.grid_step);
  run.grid_weights = search.weights;
  run.grid_select_mse = search.best_mse;
  return run;
}

struct ReportRow {
  std::string method;
  DatasetVariant dataset = DatasetVariant::train;
  Split split = Split::val;
  std::size_t n = 0;
  double mse = 0.0;
  std::array<std::optional<double>, kNumLevels> mse_level;
  std::array<std::size_t, kNumLevels> n_level{};
};

struct EvaluationReport {
  std::uint64_t seed = 0;
  std::string hyperparams;
  std::vector<ReportRow> rows;
};

inline std::string hyperparam_summary(const ExperimentConfig& cfg) {
  std::string s = "kernel=" + std::string(to_string(cfg.kernel.kind));
  if (cfg.kernel.kind == KernelKind::rbf) {
    s += " gamma=" + (cfg.kernel.gamma ? detail::format_double(*cfg.kernel.gamma) : std::string("auto"));
  }
  s += " C=" + detail::format_double(cfg.svr.C);
  s += " epsilon=" + detail::format_double(cfg.svr.epsilon);
  s += " tol=" + detail::format_double(cfg.svr.tol);
  s += " grid_step=" + detail::format_double(cfg.grid_step);
  s += " balance_ratio=" + detail::format_double(cfg.balance_ratio);
  s += " balance_level=" + std::to_string(cfg.balance_level);
  return s;
}

/// Raw-scale predictions of one method for every image of the run.
inline PredictionMap method_predictions(const VariantRun& run, const std::string& method) {
  PredictionMap out;
  if (method == kMethodBaseline) {
    for (const auto& [id, v] : run.predictions.predictions.front()) out.emplace(id, run.baseline_level);
    return out;
  }
  PredictionMap normalized;
  if (method == kMethodFusionAverage) {
    normalized = fuse_average(run.predictions);
  } else if (method == kMethodFusionGrid) {
    normalized = fuse_weighted(run.predictions, run.grid_weights);
  } else {
    normalized = run.predictions.of(method);
  }
  for (const auto& [id, v] : normalized) out.emplace(id, denormalize_prediction(v));
  return out;
}

inline ReportRow score_row(const PredictionMap& raw, const LabelMap& truth, std::string method,
                           DatasetVariant variant, Split split) {
  ReportRow row;
  row.method = std::move(method);
  row.dataset = variant;
  row.split = split;
  row.n = truth.size();
  row.mse = mse(raw, truth);
  const auto levels = per_level_mse(raw, truth);
  row.mse_level = levels.mse;
  row.n_level = levels.count;
  return row;
}

/// Rows come out variant-major, then evaluation split, then method, in the
/// order configured.
inline EvaluationReport run_experiment_matrix(const ExperimentConfig& cfg, std::vector<VariantRun>* runs = nullptr) {
  EvaluationReport report;
  report.seed = cfg.seed;
  report.hyperparams = hyperparam_summary(cfg);
  if (cfg.variants.empty() || cfg.eval_splits.empty() || cfg.methods.empty()) return report;

  const auto known = cfg.all_methods();
  for (const auto& m : cfg.methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw Error(ErrorCode::ModalityMismatch, "unknown method " + m);
    }
  }

  for (auto variant : cfg.variants) {
    VariantRun run = train_variant(cfg, variant);
    for (auto split : cfg.eval_splits) {
      const LabelMap truth = select_labels(cfg.dataset.labels, cfg.dataset.labeled_ids_in(split));
      if (truth.empty()) {
        throw Error(ErrorCode::EmptyTruth, "split " + std::string(to_string(split)) + " has no labels to evaluate");
      }
      for (const auto& method : cfg.methods) {
        report.rows.push_back(score_row(method_predictions(run, method), truth, method, variant, split));
      }
    }
    if (runs) runs->push_back(std::move(run));
  }
  return report;
}

inline constexpr std::string_view kReportMagic = "#cohesion-report";
inline constexpr std::string_view kReportColumns = "method\tdataset\tsplit\tn\tmse\tmse_l0\tmse_l1\tmse_l2\tmse_l3";

inline void render_report(std::ostream& out, const EvaluationReport& r) {
  std::string buf(kReportMagic);
  buf += " v1 seed=" + std::to_string(r.seed) + " scale=raw";
  if (!r.hyperparams.empty()) buf += " " + r.hyperparams;
  buf += '\n';
  buf += kReportColumns;
  buf += '\n';
  for (const auto& row : r.rows) {
    buf += row.method;
    buf += '\t';
    buf += to_string(row.dataset);
    buf += '\t';
    buf += to_string(row.split);
    buf += '\t' + std::to_string(row.n) + '\t' + detail::format_fixed(row.mse, 6);
    for (const auto& l : row.mse_level) buf += '\t' + (l ? detail::format_fixed(*l, 6) : std::string("-"));
    buf += '\n';
  }
  out << buf;
}

inline std::string render_report(const EvaluationReport& r) {
  std::ostringstream os;
  render_report(os, r);
  return os.str();
}

/// Reads a rendered report back. Per-level counts are not part of the file
/// and come back as zero.
inline EvaluationReport parse_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || !detail::starts_with_token(line, kReportMagic)) {
    throw Error(ErrorCode::EmptyFile, "missing #cohesion-report header");
  }
  EvaluationReport r;
  auto seed = detail::header_value(line, "seed");
  auto seed_value = seed ? detail::parse_uint(*seed) : std::nullopt;
  if (!seed_value) throw Error(ErrorCode::HeaderMismatch, "report header lacks seed");
  r.seed = *seed_value;
  const auto scale_pos = line.find(" scale=raw");
  if (scale_pos == std::string::npos) throw Error(ErrorCode::HeaderMismatch, "report is not on the raw scale");
  const auto rest = scale_pos + std::string_view(" scale=raw").size();
  if (rest < line.size()) r.hyperparams = line.substr(rest + 1);

  if (!std::getline(in, line) || line != kReportColumns) throw Error(ErrorCode::HeaderMismatch, "bad report column header");
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    auto f = detail::split_exact(line, '\t');
    auto bad = [&] { return Error(ErrorCode::MalformedRecord, "report line " + std::to_string(line_no)); };
    if (f.size() != 9) throw bad();
    ReportRow row;
    row.method = std::string(f[0]);
    auto variant = parse_variant(f[1]);
    auto split = parse_split(f[2]);
    auto n = detail::parse_uint(f[3]);
    auto m = detail::parse_double(f[4]);
    if (!variant || !split || !n || !m) throw bad();
    row.dataset = *variant;
    row.split = *split;
    row.n = *n;
    row.mse = *m;
    for (int l = 0; l < kNumLevels; ++l) {
      if (f[5 + l] == "-") continue;
      auto v = detail::parse_double(f[5 + l]);
      if (!v) throw bad();
      row.mse_level[l] = *v;
    }
    r.rows.push_back(std::move(row));
  }
  return r;
}

}  // namespace cohesion
