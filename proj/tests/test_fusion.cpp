#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "cohesion/fusion.hpp"

using namespace cohesion;

namespace {

ModalityPredictions make_predictions(const std::vector<std::string>& names, const std::vector<PredictionMap>& maps) {
  ModalityPredictions p;
  p.modalities = names;
  p.predictions = maps;
  p.imputation.assign(names.size(), 0.0);
  p.imputed_count.assign(names.size(), 0);
  return p;
}

// Random truth plus three modalities of differing noise; the first one is
// exact when `exact_first` is set.
std::pair<ModalityPredictions, LabelMap> noisy_problem(std::uint64_t seed, std::size_t n, bool exact_first) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 3);
  std::normal_distribution<double> g(0.0, 1.0);
  LabelMap truth;
  std::vector<PredictionMap> maps(3);
  const double sigma[3] = {exact_first ? 0.0 : 0.05, 0.15, 0.3};
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "v" + std::to_string(i);
    const int l = level(rng);
    truth.emplace(id, CohesionLabel(l));
    for (int m = 0; m < 3; ++m) maps[m][id] = l / 3.0 + sigma[m] * g(rng);
  }
  return {make_predictions({"face", "skeleton", "scene"}, maps), truth};
}

double raw_mse_of(const PredictionMap& normalized, const LabelMap& truth) {
  double s = 0.0;
  for (const auto& [id, l] : truth) {
    const double p = std::min(1.0, std::max(0.0, normalized.at(id))) * 3.0;
    s += (p - l.level()) * (p - l.level());
  }
  return s / truth.size();
}

}  // namespace

TEST(FuseWeighted, VertexSelectsModality) {
  const auto p = make_predictions({"a", "b", "c"}, {{{"x", 0.3}}, {{"x", 0.6}}, {{"x", 0.9}}});
  FusionWeights w{{"a", "b", "c"}, {0, 1, 0}, FusionStrategy::grid_search, 0.5};
  EXPECT_EQ(fuse_weighted(p, w).at("x"), 0.6);
}

TEST(FuseWeighted, UniformOfEqualPredictions) {
  const auto p = make_predictions({"a", "b", "c"}, {{{"x", 0.4}}, {{"x", 0.4}}, {{"x", 0.4}}});
  EXPECT_NEAR(fuse_average(p).at("x"), 0.4, 1e-15);
}

TEST(FuseWeighted, MixedWeights) {
  const auto p = make_predictions({"a", "b", "c"}, {{{"x", 0.3}}, {{"x", 0.6}}, {{"x", 0.9}}});
  FusionWeights w{{"a", "b", "c"}, {0.5, 0.25, 0.25}, FusionStrategy::grid_search, 0.25};
  EXPECT_NEAR(fuse_weighted(p, w).at("x"), 0.525, 1e-15);
}

TEST(FuseWeighted, ModalityMismatch) {
  const auto p = make_predictions({"a", "b"}, {{{"x", 0.3}}, {{"x", 0.6}}});
  try {
    fuse_weighted(p, FusionWeights{{"a", "c"}, {0.5, 0.5}, FusionStrategy::average, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModalityMismatch);
  }
  EXPECT_THROW(fuse_weighted(p, FusionWeights{{"a", "b", "c"}, {0.2, 0.4, 0.4}, FusionStrategy::average, 0}), Error);
}

TEST(FuseWeighted, AffineInWeights) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PredictionMap> maps(3);
  for (int i = 0; i < 10; ++i) {
    for (auto& m : maps) m["i" + std::to_string(i)] = u(rng);
  }
  const auto p = make_predictions({"a", "b", "c"}, maps);
  for (int trial = 0; trial < 20; ++trial) {
    double a = u(rng), b = u(rng) * (1 - a);
    FusionWeights w1{{"a", "b", "c"}, {a, b, 1 - a - b}, FusionStrategy::grid_search, 0};
    a = u(rng);
    b = u(rng) * (1 - a);
    FusionWeights w2{{"a", "b", "c"}, {a, b, 1 - a - b}, FusionStrategy::grid_search, 0};
    const double t = u(rng);
    FusionWeights mix = w1;
    for (int m = 0; m < 3; ++m) mix.weights[m] = t * w1.weights[m] + (1 - t) * w2.weights[m];
    const auto f1 = fuse_weighted(p, w1), f2 = fuse_weighted(p, w2), fm = fuse_weighted(p, mix);
    for (const auto& [id, v] : fm) EXPECT_NEAR(v, t * f1.at(id) + (1 - t) * f2.at(id), 1e-12);
  }
}

TEST(GridCandidates, Counts) {
  EXPECT_EQ(grid_candidates(1, 0.05), (std::vector<std::vector<double>>{{1.0}}));
  EXPECT_EQ(grid_candidates(2, 0.5), (std::vector<std::vector<double>>{{0, 1}, {0.5, 0.5}, {1, 0}}));
  EXPECT_EQ(grid_candidates(3, 0.05).size(), 232u);
  EXPECT_EQ(grid_candidates(3, 0.5).size(), 7u);
  EXPECT_EQ(grid_candidates(4, 0.25).size(), 35u);  // uniform already on the lattice
}

TEST(GridCandidates, CountMatchesCombinatorics) {
  // Compositions of K into M parts: C(K + M - 1, M - 1), plus uniform when off-lattice.
  auto choose = [](std::size_t n, std::size_t k) {
    double r = 1;
    for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return static_cast<std::size_t>(std::llround(r));
  };
  for (std::size_t M = 1; M <= 4; ++M) {
    for (std::size_t K : {1u, 2u, 3u, 4u, 5u, 10u, 20u}) {
      const bool uniform_on_lattice = K % M == 0;
      EXPECT_EQ(grid_candidates(M, 1.0 / K).size(), choose(K + M - 1, M - 1) + (uniform_on_lattice ? 0 : 1))
          << M << " " << K;
    }
  }
}

TEST(GridCandidates, AllOnSimplex) {
  for (const auto& w : grid_candidates(3, 0.05)) {
    EXPECT_NO_THROW(check_simplex(w));
  }
}

TEST(GridCandidates, BadStep) {
  for (double s : {0.3, 0.0, -0.1, 1.5}) {
    try {
      grid_candidates(3, s);
      FAIL() << s;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BadStep);
    }
  }
}

TEST(GridSearch, ExactModalityWinsAtVertex) {
  const auto [p, truth] = noisy_problem(11, 80, true);
  const auto w = grid_search_weights(p, truth, 0.05);
  EXPECT_EQ(w.weights, (std::vector<double>{1.0, 0.0, 0.0}));
  EXPECT_EQ(w.strategy, FusionStrategy::grid_search);
}

TEST(GridSearch, IdenticalPredictionsTieBreakToFirstCandidate) {
  PredictionMap same{{"a", 0.2}, {"b", 0.9}};
  const auto p = make_predictions({"x", "y", "z"}, {same, same, same});
  LabelMap truth{{"a", CohesionLabel(1)}, {"b", CohesionLabel(2)}};
  EXPECT_EQ(grid_search_weights(p, truth, 0.05).weights, (std::vector<double>{0, 0, 1}));
}

TEST(GridSearch, SingleModality) {
  const auto p = make_predictions({"x"}, {{{"a", 0.5}}});
  EXPECT_EQ(grid_search_weights(p, LabelMap{{"a", CohesionLabel(1)}}, 0.05).weights, (std::vector<double>{1.0}));
}

TEST(GridSearch, EmptyValidation) {
  const auto p = make_predictions({"x"}, {{{"a", 0.5}}});
  try {
    grid_search(p, LabelMap{}, 0.05);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyValidationSet);
  }
}

// Independent check: brute-force the lattice with integer loops and compare
// the minimum against every single modality and the uniform average.
TEST(GridSearch, MatchesBruteForceAndDominates) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const auto [p, truth] = noisy_problem(seed, 60, false);
    const auto r = grid_search(p, truth, 0.05);

    double brute = INFINITY;
    for (int i = 0; i <= 20; ++i) {
      for (int j = 0; i + j <= 20; ++j) {
        PredictionMap f;
        for (const auto& [id, l] : truth) {
          f[id] = (i * p.predictions[0].at(id) + j * p.predictions[1].at(id) + (20 - i - j) * p.predictions[2].at(id)) / 20.0;
        }
        brute = std::min(brute, raw_mse_of(f, truth));
      }
    }
    PredictionMap avg;
    for (const auto& [id, l] : truth) {
      avg[id] = (p.predictions[0].at(id) + p.predictions[1].at(id) + p.predictions[2].at(id)) / 3.0;
    }
    brute = std::min(brute, raw_mse_of(avg, truth));
    EXPECT_NEAR(r.best_mse, brute, 1e-12);

    for (std::size_t m = 0; m < 3; ++m) {
      std::vector<double> vertex(3, 0.0);
      vertex[m] = 1.0;
      EXPECT_LE(r.best_mse, fused_mse(p, vertex, truth));
    }
    EXPECT_LE(r.best_mse, fused_mse(p, uniform_weights(p.modalities).weights, truth));
  }
}

TEST(GridSearch, ParallelMatchesSequential) {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const auto [p, truth] = noisy_problem(seed, 50, false);
    const auto a = grid_search(p, truth, 0.05, 1);
    const auto b = grid_search(p, truth, 0.05, 4);
    EXPECT_EQ(a.weights.weights, b.weights.weights);
    EXPECT_EQ(a.candidate_mse, b.candidate_mse);
  }
}

TEST(GridSearch, NormalizedTruthOverload) {
  const auto [p, truth] = noisy_problem(3, 40, false);
  std::map<std::string, double> norm;
  for (const auto& [id, l] : truth) norm[id] = l.level() / 3.0;
  EXPECT_EQ(grid_search_weights(p, norm, 0.05).weights, grid_search_weights(p, truth, 0.05).weights);
}

TEST(Imputation, FillsWithTrainMean) {
  std::vector<PredictionMap> partial{{{"t1", 0.2}, {"t2", 0.4}, {"v1", 0.9}}, {{"t1", 0.5}, {"t2", 0.5}, {"v1", 0.5}}};
  const auto p = impute_predictions({"face", "scene"}, partial, {"t1", "t2", "v1", "v2"}, {"t1", "t2"});
  EXPECT_NEAR(p.of("face").at("v2"), 0.3, 1e-15);
  EXPECT_EQ(p.of("face").at("v1"), 0.9);
  EXPECT_EQ(p.imputed_count, (std::vector<std::size_t>{1, 1}));
  EXPECT_EQ(p.total_imputed(), 2u);
}

TEST(Imputation, NothingToImpute) {
  std::vector<PredictionMap> partial{{{"t1", 0.2}, {"v1", 0.9}}};
  const auto p = impute_predictions({"scene"}, partial, {"t1", "v1"}, {"t1"});
  EXPECT_EQ(p.total_imputed(), 0u);
  EXPECT_EQ(p.of("scene"), partial[0]);
}

TEST(Imputation, EmptyModality) {
  try {
    impute_predictions({"face"}, {PredictionMap{}}, {"a"}, {"a"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoFeaturesForModality);
  }
  EXPECT_THROW(impute_predictions({"face"}, {PredictionMap{{"v", 0.1}}}, {"v", "t"}, {"t"}), Error);
}

TEST(WeightsFile, RoundTrip) {
  for (const auto& w : {FusionWeights{{"face", "skeleton", "scene"}, {0.15, 0.35, 0.5}, FusionStrategy::grid_search, 0.05},
                        uniform_weights({"face", "skeleton", "scene"})}) {
    std::ostringstream os;
    write_weights(os, w);
    std::istringstream in(os.str());
    const auto back = parse_weights(in);
    EXPECT_EQ(back.modalities, w.modalities);
    EXPECT_EQ(back.weights, w.weights);
    EXPECT_EQ(back.strategy, w.strategy);
    EXPECT_EQ(back.step, w.step);
  }
}

TEST(WeightsFile, Layout) {
  std::ostringstream os;
  write_weights(os, FusionWeights{{"face", "scene"}, {0.25, 0.75}, FusionStrategy::grid_search, 0.05});
  EXPECT_EQ(os.str(), "#cohesion-weights v1 strategy=grid_search step=0.05\nface\t0.25\nscene\t0.75\n");
}

TEST(WeightsFile, RejectsOffSimplex) {
  std::istringstream in("#cohesion-weights v1 strategy=average step=0\na\t0.5\nb\t0.6\n");
  EXPECT_THROW(parse_weights(in), Error);
}
