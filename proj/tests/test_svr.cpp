#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "cohesion/svr.hpp"
#include "oracle/qp_oracle.hpp"

using namespace cohesion;

namespace {

struct Instance {
  std::vector<std::vector<double>> X;
  std::vector<double> y;
  KernelSpec kernel;
  SvrHyperparams h;
};

Instance random_instance(std::uint64_t seed, KernelKind kind) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> n_dist(2, 12), d_dist(1, 4);
  std::uniform_real_distribution<double> u(-1.0, 1.0), t(0.0, 1.0);
  const int n = n_dist(rng), d = d_dist(rng);
  Instance inst;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(d);
    for (double& v : x) v = u(rng);
    inst.X.push_back(x);
    inst.y.push_back(t(rng));
  }
  const double Cs[] = {0.5, 1.0, 10.0};
  inst.h.C = Cs[seed % 3];
  inst.h.epsilon = 0.05;
  inst.h.tol = 1e-6;
  inst.kernel = kind == KernelKind::linear ? KernelSpec::linear() : KernelSpec::rbf(0.5 + t(rng) * 2.0);
  return inst;
}

// KKT checks on a trained fit, as stated for the model invariants.
void expect_kkt(const SvrFit& fit, const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                const SvrHyperparams& h) {
  double sum = 0.0;
  for (double b : fit.betas) {
    EXPECT_LE(std::abs(b), h.C + 1e-12);
    sum += b;
  }
  EXPECT_LE(std::abs(sum), 1e-6 * h.C * static_cast<double>(X.size()));
  const double slack = 10.0 * h.tol;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double r = y[i] - decision_value(fit.model, X[i]);
    const double b = fit.betas[i];
    if (std::abs(b) <= kSupportThreshold) {
      EXPECT_LE(std::abs(r), h.epsilon + slack) << "point " << i;
    } else if (std::abs(b) < h.C) {
      EXPECT_NEAR(std::abs(r), h.epsilon, slack) << "point " << i;
      EXPECT_GT(r * b, -slack) << "point " << i;
    } else {
      EXPECT_GE(b > 0 ? r : -r, h.epsilon - slack) << "point " << i;
    }
  }
}

}  // namespace

TEST(Kernel, RbfOfIdenticalPointsIsOne) {
  const std::vector<double> x{0.3, -2.0, 5.0};
  EXPECT_DOUBLE_EQ(kernel_eval(KernelSpec::rbf(3.0), x, x), 1.0);
}

TEST(Kernel, LinearIsDotProduct) {
  EXPECT_DOUBLE_EQ(kernel_eval(KernelSpec::linear(), std::vector<double>{1, 2}, std::vector<double>{3, 4}), 11.0);
}

TEST(Kernel, RbfUnitDistance) {
  EXPECT_NEAR(kernel_eval(KernelSpec::rbf(1.0), std::vector<double>{0, 0}, std::vector<double>{1, 0}),
              0.367879441, 1e-9);
}

TEST(Kernel, DimMismatch) {
  try {
    kernel_eval(KernelSpec::linear(), std::vector<double>{1}, std::vector<double>{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
  }
}

TEST(Kernel, RbfGammaMustBePositive) { EXPECT_THROW(KernelSpec::rbf(0.0), Error); }

TEST(KernelCache, EvictsLeastRecentlyUsedRow) {
  std::vector<std::vector<double>> X{{0.0}, {1.0}, {2.0}, {3.0}};
  PointMatrix pts(X);
  KernelRowCache cache(pts, KernelSpec::linear(), 2);
  auto r0 = cache.row(0);
  EXPECT_DOUBLE_EQ(r0[3], 0.0);
  cache.row(1);
  cache.row(0);  // hit, 1 is now the oldest
  cache.row(2);  // evicts 1
  EXPECT_EQ(cache.misses(), 3u);
  cache.row(0);
  EXPECT_EQ(cache.hits(), 2u);
  auto r1 = cache.row(1);
  EXPECT_EQ(cache.misses(), 4u);
  EXPECT_DOUBLE_EQ(r1[3], 3.0);
}

TEST(Svr, ConstantTargetsGiveZeroBetas) {
  std::vector<std::vector<double>> X{{0.0}, {0.4}, {1.0}, {2.5}};
  std::vector<double> y(4, 0.7);
  SvrHyperparams h;
  h.epsilon = 0.1;
  const auto fit = fit_svr(X, y, KernelSpec::rbf(1.0), h);
  for (double b : fit.betas) EXPECT_EQ(b, 0.0);
  EXPECT_TRUE(fit.model.support_vectors.empty());
  EXPECT_DOUBLE_EQ(fit.model.bias, 0.7);
  EXPECT_DOUBLE_EQ(predict_svr(fit.model, {-3.0}), 0.7);
}

TEST(Svr, EmptyTrainingSet) {
  try {
    train_svr({}, {}, KernelSpec::linear(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTrainingSet);
  }
}

TEST(Svr, SinglePointPredictsItsTarget) {
  const auto m = train_svr({{1.0, 2.0}}, {0.25}, KernelSpec::rbf(1.0), {});
  EXPECT_DOUBLE_EQ(predict_svr(m, {5.0, 5.0}), 0.25);
}

TEST(Svr, LinearLineMatchesOracle) {
  std::vector<std::vector<double>> X{{-1.0}, {-0.5}, {0.0}, {0.5}, {1.0}};
  std::vector<double> y{-2.0, -1.0, 0.0, 1.0, 2.0};
  SvrHyperparams h;
  h.C = 10.0;
  h.epsilon = 0.01;
  h.tol = 1e-6;
  const auto fit = fit_svr(X, y, KernelSpec::linear(), h);
  const auto ref = oracle::solve(X, y, KernelSpec::linear(), h.C, h.epsilon);
  EXPECT_NEAR(dual_objective(X, y, KernelSpec::linear(), h, fit.betas), ref.objective, 1e-4);
  for (std::size_t i = 0; i < X.size(); ++i) {
    EXPECT_NEAR(decision_value(fit.model, X[i]), 2.0 * X[i][0], h.epsilon + 1e-3);
  }
  EXPECT_NEAR(predict_svr(fit.model, {0.25}), 0.5, h.epsilon + 1e-3);
  expect_kkt(fit, X, y, h);
}

TEST(Svr, SineFitHasSmallTrainingError) {
  std::vector<std::vector<double>> X;
  std::vector<double> y;
  for (int i = 0; i < 20; ++i) {
    const double x = i / 19.0;
    X.push_back({x});
    y.push_back((std::sin(3.0 * x) + 1.0) / 2.0);
  }
  SvrHyperparams h;
  h.C = 10.0;
  h.epsilon = 0.01;
  const auto fit = fit_svr(X, y, KernelSpec::rbf(10.0), h);
  double se = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double d = decision_value(fit.model, X[i]) - y[i];
    se += d * d;
  }
  EXPECT_LT(se / 20.0, 1e-3);
  expect_kkt(fit, X, y, h);
}

TEST(Svr, MatchesBruteForceOracleOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    for (auto kind : {KernelKind::linear, KernelKind::rbf}) {
      const auto inst = random_instance(seed, kind);
      const auto fit = fit_svr(inst.X, inst.y, inst.kernel, inst.h);
      const auto ref = oracle::solve(inst.X, inst.y, inst.kernel, inst.h.C, inst.h.epsilon);
      const double ours = dual_objective(inst.X, inst.y, inst.kernel, inst.h, fit.betas);
      EXPECT_NEAR(ours, ref.objective, 1e-4) << "seed " << seed;
      EXPECT_GE(ours, ref.objective - 1e-4) << "seed " << seed;
      for (const auto& x : inst.X) {
        EXPECT_NEAR(decision_value(fit.model, x), oracle::predict(ref, inst.X, inst.kernel, x), 1e-3)
            << "seed " << seed;
      }
      expect_kkt(fit, inst.X, inst.y, inst.h);
    }
  }
}

TEST(Svr, TrainedObjectiveDominatesRandomFeasiblePoints) {
  const auto inst = random_instance(7, KernelKind::rbf);
  const auto fit = fit_svr(inst.X, inst.y, inst.kernel, inst.h);
  const double best = dual_objective(inst.X, inst.y, inst.kernel, inst.h, fit.betas);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    // Pairs of opposite-signed coefficients keep the sum at zero.
    std::vector<double> b(inst.X.size(), 0.0);
    for (std::size_t i = 0; i + 1 < b.size(); i += 2) {
      const double v = u(rng) * inst.h.C;
      b[i] = v;
      b[i + 1] = -v;
    }
    EXPECT_LE(dual_objective(inst.X, inst.y, inst.kernel, inst.h, b), best + 1e-4);
  }
}

TEST(Svr, DualObjectiveOfZeroIsZero) {
  std::vector<std::vector<double>> X{{1.0}, {2.0}};
  EXPECT_EQ(dual_objective(X, {0.1, 0.9}, KernelSpec::linear(), {}, {0.0, 0.0}), 0.0);
}

TEST(Svr, DualObjectiveRejectsInfeasiblePoints) {
  std::vector<std::vector<double>> X{{1.0}, {2.0}};
  SvrHyperparams h;
  h.C = 1.0;
  for (auto betas : {std::vector<double>{0.5, 0.4}, std::vector<double>{1.5, -1.5}}) {
    try {
      dual_objective(X, {0.1, 0.9}, KernelSpec::linear(), h, betas);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InfeasiblePoint);
    }
  }
}

TEST(Svr, DidNotConvergeCarriesBestIterate) {
  const auto inst = random_instance(3, KernelKind::rbf);
  auto h = inst.h;
  h.max_iter = 1;
  try {
    fit_svr(inst.X, inst.y, inst.kernel, h);
    FAIL();
  } catch (const DidNotConverge& e) {
    EXPECT_EQ(e.code(), ErrorCode::DidNotConverge);
    EXPECT_EQ(e.best().iterations, 1u);
    EXPECT_EQ(e.best().betas.size(), inst.X.size());
  }
}

TEST(Svr, DeterministicTraining) {
  const auto inst = random_instance(11, KernelKind::rbf);
  const auto a = fit_svr(inst.X, inst.y, inst.kernel, inst.h);
  const auto b = fit_svr(inst.X, inst.y, inst.kernel, inst.h);
  EXPECT_EQ(a.betas, b.betas);
  EXPECT_EQ(a.model.bias, b.model.bias);
}

TEST(Svr, SmallCacheGivesSameModel) {
  const auto inst = random_instance(5, KernelKind::rbf);
  auto h = inst.h;
  const auto full = fit_svr(inst.X, inst.y, inst.kernel, h);
  h.cache_rows = 2;
  const auto tiny = fit_svr(inst.X, inst.y, inst.kernel, h);
  EXPECT_EQ(full.betas, tiny.betas);
}

TEST(Svr, PredictionIsContinuousForRbf) {
  const auto inst = random_instance(13, KernelKind::rbf);
  const auto m = train_svr(inst.X, inst.y, inst.kernel, inst.h);
  std::vector<double> x(inst.X.front().size(), 0.1);
  const double f0 = predict_svr(m, x);
  double prev = std::numeric_limits<double>::infinity();
  for (double delta : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
    auto xp = x;
    xp[0] += delta;
    const double diff = std::abs(predict_svr(m, xp) - f0);
    EXPECT_LE(diff, prev + 1e-15);
    prev = diff;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(Svr, ZeroSupportVectorsPredictsBias) {
  SvrModel m;
  m.kernel = KernelSpec::rbf(1.0);
  m.bias = 0.42;
  m.standardizer = Standardizer::identity(2);
  EXPECT_EQ(predict_svr(m, {1.0, 2.0}), 0.42);
  EXPECT_THROW(predict_svr(m, {1.0}), Error);
}

TEST(Svr, RawTrainingStandardizesAndDefaultsGamma) {
  std::vector<std::vector<double>> X{{100.0, 1.0}, {200.0, 1.0}, {300.0, 1.0}};
  const auto m = train_svr_raw(X, {0.0, 0.5, 1.0}, KernelChoice{}, {});
  EXPECT_DOUBLE_EQ(m.kernel.gamma, 0.5);
  EXPECT_DOUBLE_EQ(m.standardizer.mean[0], 200.0);
  EXPECT_DOUBLE_EQ(m.standardizer.scale[1], 1.0);
}

TEST(SvrModelFile, RoundTripPredictsIdentically) {
  const auto inst = random_instance(21, KernelKind::rbf);
  auto raw = inst.X;
  for (auto& x : raw) x[0] = x[0] * 7.0 + 3.0;
  const auto m = train_svr_raw(raw, inst.y, KernelChoice{KernelKind::rbf, 0.7}, inst.h);
  std::stringstream ss;
  save_model(ss, m);
  const auto loaded = load_model(ss);
  ASSERT_EQ(loaded.support_vectors.size(), m.support_vectors.size());
  for (const auto& x : raw) EXPECT_NEAR(predict_svr(loaded, x), predict_svr(m, x), 1e-12);
  EXPECT_EQ(loaded.kernel, m.kernel);
}

TEST(SvrModelFile, HeaderLayout) {
  SvrModel m;
  m.kernel = KernelSpec::linear();
  m.bias = 0.5;
  m.standardizer = Standardizer::identity(2);
  m.support_vectors = {{1.0, 2.0}};
  m.dual_coefs = {0.25};
  std::stringstream ss;
  save_model(ss, m);
  EXPECT_EQ(ss.str(), "#cohesion-svr v1 kernel=linear gamma=0 bias=0.5 dim=2 nsv=1\n0 0\n1 1\n0.25\t1 2\n");
}

TEST(SvrModelFile, TruncatedFileIsMalformed) {
  std::stringstream ss("#cohesion-svr v1 kernel=linear gamma=0 bias=0.5 dim=2 nsv=1\n0 0\n1 1\n");
  try {
    load_model(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
  }
}
