#pragma once

// Seeded synthetic multi-modal dataset. Each image has a latent cohesion
// z = level/3 + N(0, 0.02); every instance vector of modality m is
// z * a_m + sigma_m * noise, with a_m a fixed random unit direction.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "cohesion/dataset.hpp"
#include "cohesion/error.hpp"
#include "cohesion/feature_store.hpp"

namespace cohesion {

/// Modality slots, in generation order.
enum class SynthModality : std::size_t { face = 0, skeleton = 1, scene = 2 };

struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t n_train = 600;
  std::size_t n_val = 200;
  std::size_t n_test = 200;
  std::array<std::size_t, 3> dims{kFaceDim, kSkeletonDim, kSceneDim};
  std::array<double, 3> noise_sigma{0.05, 0.10, 0.15};
  std::size_t max_faces = 4;
  double p_zero_faces = 0.05;
  double latent_sigma = 0.02;

  void validate() const {
    if (n_train == 0 || n_val == 0 || n_test == 0) {
      throw Error(ErrorCode::InvariantViolation, "split sizes must be positive");
    }
    for (std::size_t d : dims) {
      if (d == 0) throw Error(ErrorCode::InvariantViolation, "modality dims must be >= 1");
    }
    for (double s : noise_sigma) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvariantViolation, "noise sigma must be >= 0");
    }
    if (!(p_zero_faces >= 0.0 && p_zero_faces <= 1.0)) {
      throw Error(ErrorCode::InvariantViolation, "p_zero_faces must lie in [0, 1]");
    }
  }
};

struct SynthModalityData {
  ModalitySpec spec;
  std::vector<FeatureRecord> records;
};

struct SynthDataset {
  LabeledDataset dataset;
  /// face, skeleton, scene
  std::vector<SynthModalityData> modalities;
};

/// Built-in spec when the configured dim matches the built-in one, otherwise
/// a custom spec under the same role name.
inline ModalitySpec synth_spec(SynthModality m, std::size_t dim) {
  switch (m) {
    case SynthModality::face:
      return dim == kFaceDim ? ModalitySpec::face() : ModalitySpec::custom("face", dim, true);
    case SynthModality::skeleton:
      return dim == kSkeletonDim ? ModalitySpec::skeleton() : ModalitySpec::custom("skeleton", dim);
    case SynthModality::scene:
      return dim == kSceneDim ? ModalitySpec::scene() : ModalitySpec::custom("scene", dim);
  }
  throw Error(ErrorCode::InvariantViolation, "unknown synthetic modality");
}

inline SynthDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::array<std::vector<double>, 3> directions;
  for (std::size_t m = 0; m < 3; ++m) {
    auto& a = directions[m];
    a.resize(cfg.dims[m]);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& v : a) {
        v = gauss(rng);
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : a) v *= inv;
  }

  SynthDataset out;
  for (std::size_t m = 0; m < 3; ++m) {
    out.modalities.push_back({synth_spec(static_cast<SynthModality>(m), cfg.dims[m]), {}});
  }

  std::uniform_int_distribution<int> level_dist(0, kNumLevels - 1);
  std::bernoulli_distribution zero_faces(cfg.p_zero_faces);
  std::uniform_int_distribution<std::size_t> face_count(1, cfg.max_faces == 0 ? 1 : cfg.max_faces);

  auto instance = [&](std::size_t m, double z) {
    std::vector<double> v(cfg.dims[m]);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = z * directions[m][j] + cfg.noise_sigma[m] * gauss(rng);
    return v;
  };

  const std::array<std::pair<Split, std::size_t>, 3> plan{
      {{Split::train, cfg.n_train}, {Split::val, cfg.n_val}, {Split::test, cfg.n_test}}};
  std::size_t serial = 0;
  for (const auto& [split, count] : plan) {
    for (std::size_t i = 0; i < count; ++i, ++serial) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "img%06zu", serial);
      const std::string id(buf);

      const int level = level_dist(rng);
      const double z = static_cast<double>(level) / 3.0 + cfg.latent_sigma * gauss(rng);
      out.dataset.labels.emplace(id, CohesionLabel(level));
      out.dataset.splits.emplace(id, split);

      const bool none = zero_faces(rng);
      std::size_t k = 0;
      if (!none && cfg.max_faces > 0) k = face_count(rng);
      for (std::size_t f = 0; f < k; ++f) out.modalities[0].records.push_back({id, f, instance(0, z)});
      out.modalities[1].records.push_back({id, 0, instance(1, z)});
      out.modalities[2].records.push_back({id, 0, instance(2, z)});
    }
  }
  return out;
}

}  // namespace cohesion
