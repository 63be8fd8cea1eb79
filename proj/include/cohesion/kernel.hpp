#pragma once

#include <cmath>
#include <cstddef>
#include <list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cohesion/error.hpp"

namespace cohesion {

enum class KernelKind { linear, rbf };

inline std::string_view to_string(KernelKind k) { return k == KernelKind::linear ? "linear" : "rbf"; }

inline std::optional<KernelKind> parse_kernel_kind(std::string_view s) {
  if (s == "linear") return KernelKind::linear;
  if (s == "rbf") return KernelKind::rbf;
  return std::nullopt;
}

struct KernelSpec {
  KernelKind kind = KernelKind::rbf;
  double gamma = 1.0;  // rbf only

  static KernelSpec linear() { return {KernelKind::linear, 0.0}; }
  static KernelSpec rbf(double gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
      throw Error(ErrorCode::InvariantViolation, "rbf gamma must be positive");
    }
    return {KernelKind::rbf, gamma};
  }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

/// Kernel choice before the feature dimension is known; an unset rbf gamma
/// resolves to 1/dim.
struct KernelChoice {
  KernelKind kind = KernelKind::rbf;
  std::optional<double> gamma;

  KernelSpec resolve(std::size_t dim) const {
    if (kind == KernelKind::linear) return KernelSpec::linear();
    return KernelSpec::rbf(gamma ? *gamma : 1.0 / static_cast<double>(dim == 0 ? 1 : dim));
  }
};

inline double kernel_eval(const KernelSpec& k, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::DimMismatch, "kernel arguments have lengths " + std::to_string(x.size()) + " and " +
                                            std::to_string(y.size()));
  }
  if (k.kind == KernelKind::linear) {
    double dot = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) dot += x[j] * y[j];
    return dot;
  }
  double d2 = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - y[j];
    d2 += d * d;
  }
  return std::exp(-k.gamma * d2);
}

/// Row-major dense matrix of training points.
class PointMatrix {
 public:
  PointMatrix() = default;
  explicit PointMatrix(const std::vector<std::vector<double>>& rows) {
    rows_ = rows.size();
    cols_ = rows.empty() ? 0 : rows.front().size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw Error(ErrorCode::DimMismatch, "training points have differing lengths");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// LRU cache of full kernel-matrix rows K(i, .), computed on demand.
/// A returned span stays valid until `capacity` further distinct rows
/// have been requested.
class KernelRowCache {
 public:
  KernelRowCache(const PointMatrix& points, KernelSpec kernel, std::size_t capacity)
      : points_(points), kernel_(kernel), capacity_(capacity < 2 ? 2 : capacity),
        slot_of_(points.rows(), kNone), owner_(), lru_pos_(points.rows()) {
    if (capacity_ > points.rows()) capacity_ = points.rows() < 2 ? 2 : points.rows();
    diag_.resize(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) diag_[i] = kernel_eval(kernel_, points.row(i), points.row(i));
  }

  std::span<const double> row(std::size_t i) {
    const std::size_t n = points_.rows();
    if (slot_of_[i] != kNone) {
      ++hits_;
      lru_.splice(lru_.end(), lru_, lru_pos_[i]);
      return {storage_[slot_of_[i]].data(), n};
    }
    ++misses_;
    std::size_t slot;
    if (storage_.size() < capacity_) {
      slot = storage_.size();
      storage_.emplace_back(n);
      owner_.push_back(i);
    } else {
      const std::size_t victim = lru_.front();
      lru_.pop_front();
      slot = slot_of_[victim];
      slot_of_[victim] = kNone;
      owner_[slot] = i;
    }
    auto& buf = storage_[slot];
    const auto xi = points_.row(i);
    for (std::size_t j = 0; j < n; ++j) buf[j] = kernel_eval(kernel_, xi, points_.row(j));
    slot_of_[i] = slot;
    lru_pos_[i] = lru_.insert(lru_.end(), i);
    return {buf.data(), n};
  }

  double diag(std::size_t i) const { return diag_[i]; }
  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }
  std::size_t capacity() const noexcept { return capacity_; }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  const PointMatrix& points_;
  KernelSpec kernel_;
  std::size_t capacity_;
  std::vector<std::vector<double>> storage_;
  std::vector<std::size_t> slot_of_;
  std::vector<std::size_t> owner_;
  std::list<std::size_t> lru_;
  std::vector<std::list<std::size_t>::iterator> lru_pos_;
  std::vector<double> diag_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

}  // namespace cohesion
