#pragma once

// Late fusion of per-modality predictions: uniform averaging or an
// exhaustive search over a lattice on the weight simplex.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <future>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "cohesion/dataset.hpp"
#include "cohesion/detail/text.hpp"
#include "cohesion/error.hpp"
#include "cohesion/feature_store.hpp"
#include "cohesion/metrics.hpp"
#include "cohesion/svr.hpp"

namespace cohesion {

/// Normalized-scale predictions for every modality over one common image
/// set, with missing entries already imputed.
struct ModalityPredictions {
  std::vector<std::string> modalities;
  std::vector<PredictionMap> predictions;
  std::vector<double> imputation;
  std::vector<std::size_t> imputed_count;

  std::size_t size() const noexcept { return modalities.size(); }

  const PredictionMap& of(const std::string& name) const {
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      if (modalities[m] == name) return predictions[m];
    }
    throw Error(ErrorCode::ModalityMismatch, "no predictions for modality " + name);
  }

  std::size_t total_imputed() const {
    std::size_t n = 0;
    for (auto c : imputed_count) n += c;
    return n;
  }
};

/// Completes partial per-modality predictions over `image_ids`. The fill-in
/// value of each modality is its mean prediction over `train_ids`.
inline ModalityPredictions impute_predictions(const std::vector<std::string>& modalities,
                                              const std::vector<PredictionMap>& partial,
                                              const std::vector<std::string>& image_ids,
                                              const std::vector<std::string>& train_ids) {
  if (modalities.size() != partial.size()) throw Error(ErrorCode::ModalityMismatch, "modality/prediction count differ");
  ModalityPredictions out;
  out.modalities = modalities;
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    const auto& raw = partial[m];
    if (raw.empty()) throw Error(ErrorCode::NoFeaturesForModality, modalities[m] + " has no predictions at all");
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& id : train_ids) {
      auto it = raw.find(id);
      if (it != raw.end()) {
        sum += it->second;
        ++count;
      }
    }
    if (count == 0) {
      throw Error(ErrorCode::NoFeaturesForModality, modalities[m] + " has no training-split predictions");
    }
    const double fill = sum / static_cast<double>(count);
    PredictionMap full;
    std::size_t imputed = 0;
    for (const auto& id : image_ids) {
      auto it = raw.find(id);
      if (it != raw.end()) {
        full.emplace(id, it->second);
      } else {
        full.emplace(id, fill);
        ++imputed;
      }
    }
    out.predictions.push_back(std::move(full));
    out.imputation.push_back(fill);
    out.imputed_count.push_back(imputed);
  }
  return out;
}

/// Runs each modality's model over its per-image feature vectors and imputes
/// images without an instance of that modality.
inline ModalityPredictions build_predictions(const std::vector<std::string>& modalities,
                                             const std::map<std::string, SvrModel>& models,
                                             const std::map<std::string, FeatureMap>& features,
                                             const std::vector<std::string>& image_ids,
                                             const std::vector<std::string>& train_ids) {
  std::vector<PredictionMap> partial;
  for (const auto& name : modalities) {
    auto mit = models.find(name);
    if (mit == models.end()) throw Error(ErrorCode::ModalityMismatch, "no model for modality " + name);
    auto fit = features.find(name);
    if (fit == features.end() || fit->second.empty()) {
      throw Error(ErrorCode::NoFeaturesForModality, "no features for modality " + name);
    }
    PredictionMap p;
    for (const auto& id : image_ids) {
      auto v = fit->second.find(id);
      if (v != fit->second.end()) p.emplace(id, predict_svr(mit->second, v->second));
    }
    partial.push_back(std::move(p));
  }
  return impute_predictions(modalities, partial, image_ids, train_ids);
}

enum class FusionStrategy { average, grid_search };

inline std::string_view to_string(FusionStrategy s) { return s == FusionStrategy::average ? "average" : "grid_search"; }

struct FusionWeights {
  std::vector<std::string> modalities;
  std::vector<double> weights;
  FusionStrategy strategy = FusionStrategy::average;
  double step = 0.0;  // grid step that produced the weights; 0 for averaging
};

inline constexpr double kSimplexTol = 1e-9;

namespace detail {

// Convex combination written as an offset from the smallest contributing
// value: equal inputs give that value back exactly, and a vertex weight
// reproduces its modality bit for bit.
inline double combine(const std::vector<double>& w, const std::vector<double>& v) {
  double base = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < w.size(); ++m) {
    if (w[m] > 0.0) base = std::min(base, v[m]);
  }
  if (base == std::numeric_limits<double>::infinity()) return 0.0;
  double acc = base;
  for (std::size_t m = 0; m < w.size(); ++m) {
    if (w[m] > 0.0) acc += w[m] * (v[m] - base);
  }
  return acc;
}

}  // namespace detail

inline void check_simplex(const std::vector<double>& w) {
  double sum = 0.0;
  for (double x : w) {
    if (!(x >= 0.0)) throw Error(ErrorCode::InvariantViolation, "negative fusion weight");
    sum += x;
  }
  if (std::abs(sum - 1.0) > kSimplexTol) throw Error(ErrorCode::InvariantViolation, "fusion weights do not sum to 1");
}

inline PredictionMap fuse_weighted(const ModalityPredictions& p, const FusionWeights& w) {
  if (w.modalities != p.modalities || w.weights.size() != p.size()) {
    throw Error(ErrorCode::ModalityMismatch, "weights and predictions cover different modalities");
  }
  if (p.size() == 0) return {};
  PredictionMap out;
  std::vector<double> values(p.size());
  for (const auto& [id, first] : p.predictions.front()) {
    for (std::size_t m = 0; m < p.size(); ++m) {
      auto it = p.predictions[m].find(id);
      if (it == p.predictions[m].end()) {
        throw Error(ErrorCode::ModalityMismatch, p.modalities[m] + " lacks a prediction for " + id);
      }
      values[m] = it->second;
    }
    out.emplace(id, detail::combine(w.weights, values));
  }
  return out;
}

inline FusionWeights uniform_weights(const std::vector<std::string>& modalities) {
  FusionWeights w;
  w.modalities = modalities;
  w.weights.assign(modalities.size(), 1.0 / static_cast<double>(modalities.size()));
  w.strategy = FusionStrategy::average;
  return w;
}

inline PredictionMap fuse_average(const ModalityPredictions& p) {
  if (p.size() == 0) throw Error(ErrorCode::ModalityMismatch, "averaging needs at least one modality");
  return fuse_weighted(p, uniform_weights(p.modalities));
}

/// Number of lattice subdivisions for a grid step, validating that the step
/// divides 1.
inline std::size_t grid_divisions(double step) {
  if (!(step > 0.0) || step > 1.0 + kSimplexTol || !std::isfinite(step)) {
    throw Error(ErrorCode::BadStep, "grid step must lie in (0, 1]");
  }
  const double k = std::round(1.0 / step);
  if (std::abs(k * step - 1.0) > kSimplexTol) {
    throw Error(ErrorCode::BadStep, "grid step " + detail::format_double(step) + " does not divide 1");
  }
  return static_cast<std::size_t>(k);
}

/// Lattice points of the simplex with spacing `step`, plus the exact uniform
/// vector, sorted lexicographically.
inline std::vector<std::vector<double>> grid_candidates(std::size_t M, double step) {
  if (M == 0) throw Error(ErrorCode::ModalityMismatch, "grid search needs at least one modality");
  const std::size_t K = grid_divisions(step);
  const double Kd = static_cast<double>(K);

  std::vector<std::vector<double>> out;
  std::vector<std::size_t> counts(M, 0);
  // Enumerate compositions of K into M non-negative parts.
  auto recurse = [&](auto&& self, std::size_t pos, std::size_t remaining) -> void {
    if (pos + 1 == M) {
      counts[pos] = remaining;
      std::vector<double> w(M);
      for (std::size_t m = 0; m < M; ++m) w[m] = static_cast<double>(counts[m]) / Kd;
      out.push_back(std::move(w));
      return;
    }
    for (std::size_t c = 0; c <= remaining; ++c) {
      counts[pos] = c;
      self(self, pos + 1, remaining - c);
    }
  };
  recurse(recurse, 0, K);

  const std::vector<double> uniform(M, 1.0 / static_cast<double>(M));
  const bool has_uniform = std::any_of(out.begin(), out.end(), [&](const std::vector<double>& w) {
    for (std::size_t m = 0; m < M; ++m) {
      if (std::abs(w[m] - uniform[m]) > 1e-12) return false;
    }
    return true;
  });
  if (!has_uniform) out.push_back(uniform);
  std::sort(out.begin(), out.end());
  return out;
}

struct GridSearchResult {
  FusionWeights weights;
  double best_mse = 0.0;
  std::vector<std::vector<double>> candidates;
  std::vector<double> candidate_mse;
};

/// Raw-scale MSE of a fused prediction over the truth set.
inline double fused_mse(const ModalityPredictions& p, const std::vector<double>& w, const LabelMap& truth) {
  PredictionMap raw;
  std::vector<double> values(p.size());
  for (const auto& [id, label] : truth) {
    for (std::size_t m = 0; m < p.size(); ++m) {
      auto it = p.predictions[m].find(id);
      if (it == p.predictions[m].end()) throw Error(ErrorCode::MissingPrediction, "no prediction for " + id);
      values[m] = it->second;
    }
    raw.emplace(id, denormalize_prediction(detail::combine(w, values)));
  }
  return mse(raw, truth);
}

/// Evaluates every candidate on `truth` (raw-scale MSE) and keeps the first
/// minimum in candidate order. Work is split over `threads` workers; the
/// reduction runs in candidate order so the answer does not depend on it.
inline GridSearchResult grid_search(const ModalityPredictions& p, const LabelMap& truth, double step,
                                    unsigned threads = 1) {
  if (truth.empty()) throw Error(ErrorCode::EmptyValidationSet, "grid search needs validation labels");
  GridSearchResult r;
  r.candidates = grid_candidates(p.size(), step);
  r.candidate_mse.assign(r.candidates.size(), 0.0);

  auto eval_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t c = lo; c < hi; ++c) r.candidate_mse[c] = fused_mse(p, r.candidates[c], truth);
  };
  if (threads <= 1) {
    eval_range(0, r.candidates.size());
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (r.candidates.size() + threads - 1) / threads;
    for (std::size_t lo = 0; lo < r.candidates.size(); lo += chunk) {
      jobs.push_back(std::async(std::launch::async, eval_range, lo, std::min(lo + chunk, r.candidates.size())));
    }
    for (auto& j : jobs) j.get();
  }

  std::size_t best = 0;
  for (std::size_t c = 1; c < r.candidates.size(); ++c) {
    if (r.candidate_mse[c] < r.candidate_mse[best]) best = c;
  }
  r.best_mse = r.candidate_mse[best];
  r.weights.modalities = p.modalities;
  r.weights.weights = r.candidates[best];
  r.weights.strategy = FusionStrategy::grid_search;
  r.weights.step = step;
  return r;
}

inline FusionWeights grid_search_weights(const ModalityPredictions& p, const LabelMap& truth, double step) {
  return grid_search(p, truth, step).weights;
}

/// Same, with truth given on the normalized [0, 1] scale.
inline FusionWeights grid_search_weights(const ModalityPredictions& p, const std::map<std::string, double>& truth,
                                         double step) {
  LabelMap levels;
  for (const auto& [id, t] : truth) {
    const double scaled = t * 3.0;
    const double rounded = std::round(scaled);
    if (std::abs(scaled - rounded) > 1e-9) {
      throw Error(ErrorCode::InvariantViolation, id + ": normalized truth is not a cohesion level");
    }
    levels.emplace(id, CohesionLabel(static_cast<std::int64_t>(rounded)));
  }
  return grid_search_weights(p, levels, step);
}

inline constexpr std::string_view kWeightsMagic = "#cohesion-weights";

inline void write_weights(std::ostream& out, const FusionWeights& w) {
  check_simplex(w.weights);
  std::string buf(kWeightsMagic);
  buf += " v1 strategy=";
  buf += to_string(w.strategy);
  buf += " step=";
  detail::append_double(buf, w.step);
  buf += '\n';
  for (std::size_t m = 0; m < w.modalities.size(); ++m) {
    buf += w.modalities[m];
    buf += '\t';
    detail::append_double(buf, w.weights[m]);
    buf += '\n';
  }
  out << buf;
}

inline FusionWeights parse_weights(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyFile, "empty weights file");
  if (!detail::starts_with_token(line, kWeightsMagic)) throw Error(ErrorCode::EmptyFile, "missing #cohesion-weights header");
  FusionWeights w;
  auto strategy = detail::header_value(line, "strategy");
  auto step_text = detail::header_value(line, "step");
  if (strategy == "average") {
    w.strategy = FusionStrategy::average;
  } else if (strategy == "grid_search") {
    w.strategy = FusionStrategy::grid_search;
  } else {
    throw Error(ErrorCode::HeaderMismatch, "weights header needs strategy=<average|grid_search>");
  }
  std::optional<double> step;
  if (step_text) step = detail::parse_double(*step_text);
  if (!step) throw Error(ErrorCode::HeaderMismatch, "weights header needs step=<s>");
  w.step = *step;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') continue;
    auto fields = detail::split_exact(line, '\t');
    auto v = fields.size() == 2 ? detail::parse_double(fields[1]) : std::nullopt;
    if (!v || fields[0].empty()) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": expected <modality>\\t<weight>");
    }
    std::string name(fields[0]);
    if (std::find(w.modalities.begin(), w.modalities.end(), name) != w.modalities.end()) {
      throw Error(ErrorCode::DuplicateId, "modality " + name + " listed twice");
    }
    w.modalities.push_back(std::move(name));
    w.weights.push_back(*v);
  }
  check_simplex(w.weights);
  return w;
}

}  // namespace cohesion
