#pragma once

// Canonical per-modality feature files: parsing, writing, multi-face
// averaging and z-score standardization.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cohesion/detail/text.hpp"
#include "cohesion/error.hpp"

namespace cohesion {

inline constexpr std::size_t kSceneDim = 2208;
inline constexpr std::size_t kFaceDim = 4096;
inline constexpr std::size_t kSkeletonDim = 1536;

/// Describes one feature source. Built-in modalities fix their dimension;
/// `custom:<name>` modalities carry whatever dimension they declare.
class ModalitySpec {
 public:
  static ModalitySpec scene() { return ModalitySpec("scene", kSceneDim, false); }
  static ModalitySpec face() { return ModalitySpec("face", kFaceDim, true); }
  static ModalitySpec skeleton() { return ModalitySpec("skeleton", kSkeletonDim, false); }

  /// `name` is the bare name; the stored identifier becomes `custom:<name>`.
  /// multi_instance is only meant for a custom stand-in of the face role.
  static ModalitySpec custom(const std::string& name, std::size_t dim, bool multi_instance = false) {
    if (name.empty() || dim == 0 || name.find_first_of(" \t\n\r") != std::string::npos) {
      throw Error(ErrorCode::InvariantViolation, "bad custom modality '" + name + "'");
    }
    return ModalitySpec("custom:" + name, dim, multi_instance);
  }

  /// Resolves a header identifier. Built-in names yield built-in specs; for
  /// custom identifiers the caller supplies the dimension.
  static ModalitySpec from_identifier(const std::string& id, std::size_t custom_dim,
                                      bool multi_instance = false) {
    if (id == "scene") return scene();
    if (id == "face") return face();
    if (id == "skeleton") return skeleton();
    if (id.rfind("custom:", 0) == 0) return custom(id.substr(7), custom_dim, multi_instance);
    throw Error(ErrorCode::HeaderMismatch, "unknown modality '" + id + "'");
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t dim() const noexcept { return dim_; }
  bool multi_instance() const noexcept { return multi_instance_; }

  /// Role name without the `custom:` prefix.
  std::string role() const { return name_.rfind("custom:", 0) == 0 ? name_.substr(7) : name_; }

  friend bool operator==(const ModalitySpec&, const ModalitySpec&) = default;

 private:
  ModalitySpec(std::string name, std::size_t dim, bool multi)
      : name_(std::move(name)), dim_(dim), multi_instance_(multi) {}

  std::string name_;
  std::size_t dim_;
  bool multi_instance_;
};

struct FeatureRecord {
  std::string image_id;
  std::size_t instance_index = 0;
  std::vector<double> values;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

using FeatureMap = std::map<std::string, std::vector<double>>;

inline constexpr std::string_view kFeatureMagic = "#cohesion-features";
inline constexpr int kFeatureDigits = 10;

namespace detail {

inline void check_record(const FeatureRecord& r, const ModalitySpec& spec,
                         std::set<std::pair<std::string, std::size_t>>& seen, ErrorCode code) {
  if (r.image_id.empty() || r.image_id.find_first_of(" \t\n\r\v\f") != std::string::npos) {
    throw Error(code, "bad image id '" + r.image_id + "'");
  }
  if (r.values.size() != spec.dim()) {
    throw Error(code, r.image_id + ": expected " + std::to_string(spec.dim()) + " values, got " +
                          std::to_string(r.values.size()));
  }
  if (!spec.multi_instance() && r.instance_index != 0) {
    throw Error(code, r.image_id + ": instance index must be 0 for " + spec.name());
  }
  if (!all_finite(r.values)) throw Error(code, r.image_id + ": non-finite value");
  if (!seen.emplace(r.image_id, r.instance_index).second) {
    throw Error(code, "duplicate key (" + r.image_id + ", " + std::to_string(r.instance_index) + ")");
  }
}

}  // namespace detail

/// Reads the modality identifier and dimension from a feature-file header
/// without consuming records.
inline std::pair<std::string, std::size_t> read_feature_header(std::string_view line) {
  if (!detail::starts_with_token(line, kFeatureMagic)) {
    throw Error(ErrorCode::EmptyFile, "missing #cohesion-features header");
  }
  auto fields = detail::split_fields(line, ' ');
  if (fields.size() < 2 || fields[1] != "v1") {
    throw Error(ErrorCode::HeaderMismatch, "unsupported feature-file version");
  }
  auto modality = detail::header_value(line, "modality");
  auto dim_text = detail::header_value(line, "dim");
  std::optional<std::uint64_t> dim;
  if (dim_text) dim = detail::parse_uint(*dim_text);
  if (!modality || !dim || *dim == 0) {
    throw Error(ErrorCode::HeaderMismatch, "header lacks modality=<m> dim=<D>");
  }
  return {std::string(*modality), static_cast<std::size_t>(*dim)};
}

inline std::vector<FeatureRecord> parse_feature_file(std::istream& in, const ModalitySpec& expected) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyFile, "no header line");
  auto [modality, dim] = read_feature_header(line);
  if (modality != expected.name() || dim != expected.dim()) {
    throw Error(ErrorCode::HeaderMismatch, "file is " + modality + "/" + std::to_string(dim) +
                                               ", expected " + expected.name() + "/" +
                                               std::to_string(expected.dim()));
  }

  std::vector<FeatureRecord> records;
  std::set<std::pair<std::string, std::size_t>> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') continue;
    auto fields = detail::split_exact(line, '\t');
    if (fields.size() != 3) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    auto index = detail::parse_uint(fields[1]);
    if (!index) throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": bad instance index");

    FeatureRecord rec;
    rec.image_id = std::string(fields[0]);
    rec.instance_index = static_cast<std::size_t>(*index);
    rec.values.reserve(expected.dim());
    for (auto tok : detail::split_fields(fields[2], ' ')) {
      auto v = detail::parse_double(tok);
      if (!v) throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": bad value '" + std::string(tok) + "'");
      rec.values.push_back(*v);
    }
    try {
      detail::check_record(rec, expected, seen, ErrorCode::MalformedRecord);
    } catch (const Error& e) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline void write_feature_file(std::ostream& out, const std::vector<FeatureRecord>& records,
                               const ModalitySpec& spec) {
  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& r : records) detail::check_record(r, spec, seen, ErrorCode::InvariantViolation);

  out << kFeatureMagic << " v1 modality=" << spec.name() << " dim=" << spec.dim() << '\n';
  std::string buf;
  for (const auto& r : records) {
    buf.clear();
    buf += r.image_id;
    buf += '\t';
    buf += std::to_string(r.instance_index);
    buf += '\t';
    for (std::size_t j = 0; j < r.values.size(); ++j) {
      if (j) buf += ' ';
      detail::append_double(buf, r.values[j], kFeatureDigits);
    }
    buf += '\n';
    out << buf;
  }
}

inline std::string write_feature_file(const std::vector<FeatureRecord>& records, const ModalitySpec& spec) {
  std::ostringstream os;
  write_feature_file(os, records, spec);
  return os.str();
}

/// Collapses every image's instances to their arithmetic mean. Instances are
/// summed in instance_index order so the result does not depend on record order.
inline FeatureMap average_face_vectors(const std::vector<FeatureRecord>& records) {
  std::map<std::string, std::vector<const FeatureRecord*>> groups;
  std::size_t dim = records.empty() ? 0 : records.front().values.size();
  for (const auto& r : records) {
    if (r.values.size() != dim) {
      throw Error(ErrorCode::DimMismatch, r.image_id + " has " + std::to_string(r.values.size()) +
                                              " values, expected " + std::to_string(dim));
    }
    groups[r.image_id].push_back(&r);
  }

  FeatureMap out;
  for (auto& [id, group] : groups) {
    std::sort(group.begin(), group.end(),
              [](const FeatureRecord* a, const FeatureRecord* b) { return a->instance_index < b->instance_index; });
    std::vector<double> mean(dim, 0.0);
    for (const auto* r : group) {
      for (std::size_t j = 0; j < dim; ++j) mean[j] += r->values[j];
    }
    const double n = static_cast<double>(group.size());
    for (double& v : mean) v /= n;
    out.emplace(id, std::move(mean));
  }
  return out;
}

/// One vector per image regardless of modality: multi-instance modalities are
/// averaged, single-instance ones are taken as-is.
inline FeatureMap per_image_vectors(const std::vector<FeatureRecord>& records, const ModalitySpec& spec) {
  if (spec.multi_instance()) return average_face_vectors(records);
  FeatureMap out;
  for (const auto& r : records) out.emplace(r.image_id, r.values);
  return out;
}

inline constexpr double kScaleFloor = 1e-12;

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  std::size_t dim() const noexcept { return mean.size(); }

  static Standardizer identity(std::size_t dim) {
    return Standardizer{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  }
};

inline Standardizer fit_standardizer(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw Error(ErrorCode::EmptyInput, "cannot fit a standardizer on zero vectors");
  const std::size_t dim = vectors.front().size();
  Standardizer s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (const auto& v : vectors) {
    if (v.size() != dim) throw Error(ErrorCode::DimMismatch, "ragged input to fit_standardizer");
    for (std::size_t j = 0; j < dim; ++j) s.mean[j] += v[j];
  }
  const double n = static_cast<double>(vectors.size());
  for (double& m : s.mean) m /= n;
  for (const auto& v : vectors) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = v[j] - s.mean[j];
      s.scale[j] += d * d;
    }
  }
  for (double& sc : s.scale) {
    sc = std::sqrt(sc / n);
    if (!(sc >= kScaleFloor)) sc = 1.0;
  }
  return s;
}

inline std::vector<double> apply_standardizer(const Standardizer& s, const std::vector<double>& v) {
  if (v.size() != s.dim()) {
    throw Error(ErrorCode::DimMismatch, "vector has " + std::to_string(v.size()) + " values, standardizer expects " +
                                            std::to_string(s.dim()));
  }
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = (v[j] - s.mean[j]) / s.scale[j];
  return out;
}

}  // namespace cohesion
