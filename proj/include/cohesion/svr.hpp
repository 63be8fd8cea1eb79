#pragma once

// Epsilon-insensitive support vector regression solved in the dual by
// sequential minimal optimization.
//
// The solver works on the usual 2n-variable form: alpha_t for t < n and
// alpha*_t for t >= n, with beta_i = alpha_i - alpha*_i. It minimizes
//   1/2 a'Qa + p'a,  s'a = 0,  0 <= a <= C
// where s_t = +1 / -1, Q_tu = s_t s_u K(x_t, x_u) and p_t = eps -/+ y_t,
// which is the negated dual objective in beta.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cohesion/detail/text.hpp"
#include "cohesion/error.hpp"
#include "cohesion/feature_store.hpp"
#include "cohesion/kernel.hpp"

namespace cohesion {

struct SvrHyperparams {
  double C = 1.0;
  double epsilon = 0.1;
  double tol = 1e-3;
  std::size_t max_iter = 1'000'000;
  std::size_t cache_rows = 512;

  void validate() const {
    if (!(C > 0.0) || !std::isfinite(C)) throw Error(ErrorCode::InvariantViolation, "C must be positive");
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw Error(ErrorCode::InvariantViolation, "epsilon must be >= 0");
    if (!(tol > 0.0)) throw Error(ErrorCode::InvariantViolation, "tol must be positive");
    if (max_iter == 0) throw Error(ErrorCode::InvariantViolation, "max_iter must be positive");
  }
};

struct SvrModel {
  KernelSpec kernel;
  std::vector<std::vector<double>> support_vectors;  // standardized space
  std::vector<double> dual_coefs;                    // beta_i
  double bias = 0.0;
  Standardizer standardizer;

  std::size_t dim() const noexcept { return standardizer.dim(); }
};

/// Everything the solver knows at exit. `betas` covers all training points.
struct SvrFit {
  SvrModel model;
  std::vector<double> betas;
  std::vector<std::size_t> support_indices;
  std::size_t iterations = 0;
  double max_violation = 0.0;
  bool converged = false;
};

/// Thrown when max_iter is exhausted; carries the last iterate.
class DidNotConverge : public Error {
 public:
  DidNotConverge(SvrFit best, double violation)
      : Error(ErrorCode::DidNotConverge,
              "max_iter " + std::to_string(best.iterations) + " reached with KKT violation " +
                  detail::format_double(violation, 6)),
        best_(std::move(best)) {}

  const SvrFit& best() const noexcept { return best_; }

 private:
  SvrFit best_;
};

inline constexpr double kSupportThreshold = 1e-12;

/// Solves the dual on already-standardized points. The returned model has an
/// identity standardizer; see `train_svr_raw` for the standardizing wrapper.
inline SvrFit fit_svr(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                      const KernelSpec& kernel, const SvrHyperparams& h) {
  if (X.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training points");
  if (X.size() != y.size()) throw Error(ErrorCode::DimMismatch, "X and y differ in length");
  h.validate();
  for (double v : y) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "non-finite training target");
  }

  const PointMatrix points(X);
  const std::size_t n = points.rows();
  const std::size_t m = 2 * n;
  const double C = h.C;
  KernelRowCache cache(points, kernel, h.cache_rows);

  auto sign = [n](std::size_t t) { return t < n ? 1.0 : -1.0; };
  auto point = [n](std::size_t t) { return t < n ? t : t - n; };

  std::vector<double> alpha(m, 0.0);
  std::vector<double> grad(m);
  for (std::size_t i = 0; i < n; ++i) {
    grad[i] = h.epsilon - y[i];
    grad[i + n] = h.epsilon + y[i];
  }

  auto in_up = [&](std::size_t t) { return t < n ? alpha[t] < C : alpha[t] > 0.0; };
  auto in_low = [&](std::size_t t) { return t < n ? alpha[t] > 0.0 : alpha[t] < C; };

  std::size_t iter = 0;
  double violation = 0.0;
  bool converged = false;
  for (;;) {
    // Maximal violating pair.
    double g_max = -std::numeric_limits<double>::infinity();
    double g_min = std::numeric_limits<double>::infinity();
    std::size_t i = m, j = m;
    for (std::size_t t = 0; t < m; ++t) {
      const double v = -sign(t) * grad[t];
      if (in_up(t) && v > g_max) {
        g_max = v;
        i = t;
      }
      if (in_low(t) && v < g_min) {
        g_min = v;
        j = t;
      }
    }
    violation = (i == m || j == m) ? 0.0 : g_max - g_min;
    if (violation < h.tol) {
      converged = true;
      break;
    }
    if (iter >= h.max_iter) break;
    ++iter;

    const std::size_t pi = point(i), pj = point(j);
    const double si = sign(i), sj = sign(j);
    const auto Ki = cache.row(pi);
    const auto Kj = cache.row(pj);
    const double Qii = cache.diag(pi);
    const double Qjj = cache.diag(pj);
    const double Qij = si * sj * Ki[pj];
    constexpr double kTau = 1e-12;

    const double old_ai = alpha[i], old_aj = alpha[j];
    double& ai = alpha[i];
    double& aj = alpha[j];
    if (si != sj) {
      double quad = Qii + Qjj + 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0.0) {
        if (aj < 0.0) { aj = 0.0; ai = diff; }
        if (ai > C) { ai = C; aj = C - diff; }
      } else {
        if (ai < 0.0) { ai = 0.0; aj = -diff; }
        if (aj > C) { aj = C; ai = C + diff; }
      }
    } else {
      double quad = Qii + Qjj - 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > C) {
        if (ai > C) { ai = C; aj = sum - C; }
        if (aj > C) { aj = C; ai = sum - C; }
      } else {
        if (aj < 0.0) { aj = 0.0; ai = sum; }
        if (ai < 0.0) { ai = 0.0; aj = sum; }
      }
    }

    // Values within rounding of a bound are placed on it so that the bias
    // step classifies them as bounded.
    const double snap = C * 1e-12;
    for (double* a : {&ai, &aj}) {
      if (*a < snap) *a = 0.0;
      else if (*a > C - snap) *a = C;
    }

    const double dai = ai - old_ai, daj = aj - old_aj;
    const double ci = si * dai, cj = sj * daj;
    for (std::size_t t = 0; t < m; ++t) {
      const std::size_t p = point(t);
      grad[t] += sign(t) * (ci * Ki[p] + cj * Kj[p]);
    }
  }

  SvrFit fit;
  fit.iterations = iter;
  fit.max_violation = violation;
  fit.converged = converged;
  fit.betas.resize(n);
  for (std::size_t k = 0; k < n; ++k) fit.betas[k] = alpha[k] - alpha[k + n];

  // Bias: average over free variables, else midpoint of the KKT interval.
  // grad[k] = (K beta)_k + eps - y_k for k < n.
  double free_sum = 0.0;
  std::size_t free_count = 0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < m; ++t) {
    const std::size_t p = point(t);
    const double kb = grad[p] - h.epsilon + y[p];
    const double b = t < n ? y[p] - h.epsilon - kb : y[p] + h.epsilon - kb;
    const double a = alpha[t];
    if (a > 0.0 && a < C) {
      free_sum += b;
      ++free_count;
    } else if (t < n) {
      if (a >= C) upper = std::min(upper, b);
      else lower = std::max(lower, b);
    } else {
      if (a >= C) lower = std::max(lower, b);
      else upper = std::min(upper, b);
    }
  }
  double bias;
  if (free_count > 0) {
    bias = free_sum / static_cast<double>(free_count);
  } else if (std::isfinite(lower) && std::isfinite(upper)) {
    bias = 0.5 * (lower + upper);
  } else {
    bias = std::isfinite(lower) ? lower : upper;
  }

  fit.model.kernel = kernel;
  fit.model.bias = bias;
  fit.model.standardizer = Standardizer::identity(points.cols());
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(fit.betas[k]) > kSupportThreshold) {
      fit.support_indices.push_back(k);
      fit.model.dual_coefs.push_back(fit.betas[k]);
      fit.model.support_vectors.push_back(X[k]);
    }
  }

  if (!converged) throw DidNotConverge(std::move(fit), violation);
  return fit;
}

inline SvrModel train_svr(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                          const KernelSpec& kernel, const SvrHyperparams& h) {
  return fit_svr(X, y, kernel, h).model;
}

/// Fits a standardizer on raw vectors, trains on the standardized points and
/// attaches the standardizer to the model. An unset rbf gamma becomes 1/dim.
inline SvrModel train_svr_raw(const std::vector<std::vector<double>>& raw, const std::vector<double>& y,
                              const KernelChoice& kernel, const SvrHyperparams& h) {
  if (raw.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training points");
  Standardizer s = fit_standardizer(raw);
  std::vector<std::vector<double>> X;
  X.reserve(raw.size());
  for (const auto& v : raw) X.push_back(apply_standardizer(s, v));
  SvrModel model = train_svr(X, y, kernel.resolve(s.dim()), h);
  model.standardizer = std::move(s);
  return model;
}

/// Decision value for a standardized point.
inline double decision_value(const SvrModel& m, std::span<const double> x) {
  double f = m.bias;
  for (std::size_t k = 0; k < m.support_vectors.size(); ++k) {
    f += m.dual_coefs[k] * kernel_eval(m.kernel, m.support_vectors[k], x);
  }
  return f;
}

/// Prediction on the normalized target scale; not clamped.
inline double predict_svr(const SvrModel& m, const std::vector<double>& x_raw) {
  const auto x = apply_standardizer(m.standardizer, x_raw);
  return decision_value(m, x);
}

/// -1/2 b'Kb - eps * sum|b| + y'b for a feasible beta.
inline double dual_objective(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                             const KernelSpec& kernel, const SvrHyperparams& h, const std::vector<double>& betas) {
  if (betas.size() != X.size() || y.size() != X.size()) {
    throw Error(ErrorCode::DimMismatch, "X, y and betas must have equal length");
  }
  double sum = 0.0;
  for (double b : betas) {
    if (std::abs(b) > h.C + 1e-12) throw Error(ErrorCode::InfeasiblePoint, "|beta| exceeds C");
    sum += b;
  }
  if (std::abs(sum) > 1e-9) throw Error(ErrorCode::InfeasiblePoint, "betas do not sum to zero");

  const std::size_t n = X.size();
  double quad = 0.0, lin = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (betas[i] == 0.0) continue;
    for (std::size_t k = 0; k < n; ++k) {
      if (betas[k] != 0.0) quad += betas[i] * betas[k] * kernel_eval(kernel, X[i], X[k]);
    }
    lin += y[i] * betas[i];
    l1 += std::abs(betas[i]);
  }
  return -0.5 * quad - h.epsilon * l1 + lin;
}

inline constexpr std::string_view kModelMagic = "#cohesion-svr";

inline void save_model(std::ostream& out, const SvrModel& m) {
  std::string buf;
  buf += kModelMagic;
  buf += " v1 kernel=";
  buf += to_string(m.kernel.kind);
  buf += " gamma=";
  detail::append_double(buf, m.kernel.kind == KernelKind::rbf ? m.kernel.gamma : 0.0);
  buf += " bias=";
  detail::append_double(buf, m.bias);
  buf += " dim=" + std::to_string(m.dim()) + " nsv=" + std::to_string(m.support_vectors.size()) + "\n";
  auto append_vec = [&buf](const std::vector<double>& v) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (j) buf += ' ';
      detail::append_double(buf, v[j]);
    }
  };
  append_vec(m.standardizer.mean);
  buf += '\n';
  append_vec(m.standardizer.scale);
  buf += '\n';
  out << buf;
  for (std::size_t k = 0; k < m.support_vectors.size(); ++k) {
    buf.clear();
    detail::append_double(buf, m.dual_coefs[k]);
    buf += '\t';
    append_vec(m.support_vectors[k]);
    buf += '\n';
    out << buf;
  }
}

inline SvrModel load_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyFile, "empty model file");
  if (!detail::starts_with_token(line, kModelMagic)) throw Error(ErrorCode::EmptyFile, "missing #cohesion-svr header");
  auto field = [&line](std::string_view key) {
    auto v = detail::header_value(line, key);
    if (!v) throw Error(ErrorCode::MalformedRecord, "model header lacks " + std::string(key));
    return *v;
  };
  auto kind = parse_kernel_kind(field("kernel"));
  auto gamma = detail::parse_double(field("gamma"));
  auto bias = detail::parse_double(field("bias"));
  auto dim = detail::parse_uint(field("dim"));
  auto nsv = detail::parse_uint(field("nsv"));
  if (!kind || !gamma || !bias || !dim || !nsv) throw Error(ErrorCode::MalformedRecord, "bad model header");

  SvrModel m;
  m.kernel = *kind == KernelKind::linear ? KernelSpec::linear() : KernelSpec::rbf(*gamma);
  m.bias = *bias;
  auto read_vec = [&](std::string_view text, const char* what) {
    std::vector<double> v;
    v.reserve(*dim);
    for (auto tok : detail::split_fields(text, ' ')) {
      auto x = detail::parse_double(tok);
      if (!x || !std::isfinite(*x)) throw Error(ErrorCode::MalformedRecord, std::string("bad value in ") + what);
      v.push_back(*x);
    }
    if (v.size() != *dim) throw Error(ErrorCode::MalformedRecord, std::string(what) + " has wrong length");
    return v;
  };
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedRecord, "missing standardizer mean");
  m.standardizer.mean = read_vec(line, "standardizer mean");
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedRecord, "missing standardizer scale");
  m.standardizer.scale = read_vec(line, "standardizer scale");
  for (std::uint64_t k = 0; k < *nsv; ++k) {
    if (!std::getline(in, line)) throw Error(ErrorCode::MalformedRecord, "truncated support vector list");
    auto fields = detail::split_exact(line, '\t');
    if (fields.size() != 2) throw Error(ErrorCode::MalformedRecord, "support vector line needs <beta>\\t<values>");
    auto beta = detail::parse_double(fields[0]);
    if (!beta) throw Error(ErrorCode::MalformedRecord, "bad dual coefficient");
    m.dual_coefs.push_back(*beta);
    m.support_vectors.push_back(read_vec(fields[1], "support vector"));
  }
  return m;
}

}  // namespace cohesion
