#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>

#include "cohesion/dataset.hpp"
#include "cohesion/error.hpp"

namespace cohesion {

using PredictionMap = std::map<std::string, double>;

struct LevelBreakdown {
  std::array<std::optional<double>, kNumLevels> mse;  // absent when the level is empty
  std::array<std::size_t, kNumLevels> count{};
};

/// Mean of (pred - level)^2 over the truth keys, on the raw [0, 3] scale.
inline double mse(const PredictionMap& pred, const LabelMap& truth) {
  if (truth.empty()) throw Error(ErrorCode::EmptyTruth, "no ground-truth labels to score against");
  double sum = 0.0;
  for (const auto& [id, label] : truth) {
    auto it = pred.find(id);
    if (it == pred.end()) throw Error(ErrorCode::MissingPrediction, "no prediction for " + id);
    const double d = it->second - static_cast<double>(label.level());
    sum += d * d;
  }
  return sum / static_cast<double>(truth.size());
}

inline LevelBreakdown per_level_mse(const PredictionMap& pred, const LabelMap& truth) {
  if (truth.empty()) throw Error(ErrorCode::EmptyTruth, "no ground-truth labels to score against");
  std::array<double, kNumLevels> sums{};
  LevelBreakdown out;
  for (const auto& [id, label] : truth) {
    auto it = pred.find(id);
    if (it == pred.end()) throw Error(ErrorCode::MissingPrediction, "no prediction for " + id);
    const double d = it->second - static_cast<double>(label.level());
    sums[label.level()] += d * d;
    ++out.count[label.level()];
  }
  for (int l = 0; l < kNumLevels; ++l) {
    if (out.count[l] > 0) out.mse[l] = sums[l] / static_cast<double>(out.count[l]);
  }
  return out;
}

/// Restricts a label map to the given ids (ids without labels are skipped).
template <typename Ids>
LabelMap select_labels(const LabelMap& labels, const Ids& ids) {
  LabelMap out;
  for (const auto& id : ids) {
    auto it = labels.find(id);
    if (it != labels.end()) out.emplace(id, it->second);
  }
  return out;
}

}  // namespace cohesion
