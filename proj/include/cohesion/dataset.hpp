#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cohesion/detail/text.hpp"
#include "cohesion/error.hpp"

namespace cohesion {

inline constexpr int kNumLevels = 4;

/// Group cohesion level, 0 (least) to 3 (most cohesive).
class CohesionLabel {
 public:
  explicit CohesionLabel(std::int64_t level) : level_(static_cast<int>(level)) {
    if (level < 0 || level >= kNumLevels) {
      throw Error(ErrorCode::LevelOutOfRange, "level " + std::to_string(level) + " is outside 0..3");
    }
  }
  int level() const noexcept { return level_; }
  friend auto operator<=>(const CohesionLabel&, const CohesionLabel&) = default;

 private:
  int level_;
};

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

using LabelMap = std::map<std::string, CohesionLabel>;

/// Labels plus split membership. Test labels may be missing.
struct LabeledDataset {
  LabelMap labels;
  std::map<std::string, Split> splits;

  std::vector<std::string> ids_in(Split s) const {
    std::vector<std::string> out;
    for (const auto& [id, sp] : splits) {
      if (sp == s) out.push_back(id);
    }
    return out;
  }

  std::vector<std::string> labeled_ids_in(Split s) const {
    std::vector<std::string> out;
    for (const auto& [id, sp] : splits) {
      if (sp == s && labels.count(id)) out.push_back(id);
    }
    return out;
  }

  std::vector<std::string> all_ids() const {
    std::vector<std::string> out;
    out.reserve(splits.size());
    for (const auto& kv : splits) out.push_back(kv.first);
    return out;
  }

  /// Every labeled image has a split; train and val members have labels.
  void validate() const {
    for (const auto& kv : labels) {
      if (!splits.count(kv.first)) {
        throw Error(ErrorCode::InvariantViolation, "labeled image " + kv.first + " has no split");
      }
    }
    for (const auto& [id, sp] : splits) {
      if (sp != Split::test && !labels.count(id)) {
        throw Error(ErrorCode::InvariantViolation, std::string(to_string(sp)) + " image " + id + " has no label");
      }
    }
  }
};

inline constexpr std::string_view kLabelsMagic = "#cohesion-labels";
inline constexpr std::string_view kSplitsMagic = "#cohesion-splits";
inline constexpr std::string_view kPredictionsMagic = "#cohesion-predictions";

namespace detail {

inline void expect_magic(std::istream& in, std::string_view magic, std::string& header) {
  if (!std::getline(in, header)) throw Error(ErrorCode::EmptyFile, "no header line");
  if (!starts_with_token(header, magic)) {
    throw Error(ErrorCode::EmptyFile, "missing " + std::string(magic) + " header");
  }
  auto fields = split_fields(header, ' ');
  if (fields.size() < 2 || fields[1] != "v1") {
    throw Error(ErrorCode::HeaderMismatch, "unsupported version in '" + header + "'");
  }
}

// Calls fn(line_no, id, value_field) for every two-column record, enforcing unique ids.
template <typename Fn>
void for_each_pair(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 1;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') continue;
    auto fields = split_exact(line, '\t');
    if (fields.size() != 2 || fields[0].empty() ||
        fields[0].find_first_of(" \r\v\f") != std::string_view::npos) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": expected <image_id>\\t<value>");
    }
    std::string id(fields[0]);
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::DuplicateId, "line " + std::to_string(line_no) + ": duplicate id " + id);
    }
    fn(line_no, id, fields[1]);
  }
}

}  // namespace detail

inline LabelMap parse_labels(std::istream& in) {
  std::string header;
  detail::expect_magic(in, kLabelsMagic, header);
  LabelMap out;
  detail::for_each_pair(in, [&](std::size_t line_no, const std::string& id, std::string_view field) {
    auto level = detail::parse_int(field);
    if (!level) throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": bad level");
    out.emplace(id, CohesionLabel(*level));
  });
  return out;
}

inline void write_labels(std::ostream& out, const LabelMap& labels) {
  out << kLabelsMagic << " v1\n";
  for (const auto& [id, l] : labels) out << id << '\t' << l.level() << '\n';
}

inline std::map<std::string, Split> parse_splits(std::istream& in) {
  std::string header;
  detail::expect_magic(in, kSplitsMagic, header);
  std::map<std::string, Split> out;
  detail::for_each_pair(in, [&](std::size_t line_no, const std::string& id, std::string_view field) {
    auto s = parse_split(field);
    if (!s) throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": bad split");
    out.emplace(id, *s);
  });
  return out;
}

inline void write_splits(std::ostream& out, const std::map<std::string, Split>& splits) {
  out << kSplitsMagic << " v1\n";
  for (const auto& [id, s] : splits) out << id << '\t' << to_string(s) << '\n';
}

enum class PredictionScale { normalized, raw };

struct PredictionFile {
  PredictionScale scale = PredictionScale::normalized;
  std::map<std::string, double> values;
};

inline PredictionFile parse_predictions(std::istream& in) {
  std::string header;
  detail::expect_magic(in, kPredictionsMagic, header);
  PredictionFile pf;
  auto scale = detail::header_value(header, "scale");
  if (scale == "normalized") {
    pf.scale = PredictionScale::normalized;
  } else if (scale == "raw") {
    pf.scale = PredictionScale::raw;
  } else {
    throw Error(ErrorCode::HeaderMismatch, "predictions header needs scale=<normalized|raw>");
  }
  detail::for_each_pair(in, [&](std::size_t line_no, const std::string& id, std::string_view field) {
    auto v = detail::parse_double(field);
    if (!v || !std::isfinite(*v)) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": bad prediction");
    }
    pf.values.emplace(id, *v);
  });
  return pf;
}

inline void write_predictions(std::ostream& out, const PredictionFile& pf) {
  out << kPredictionsMagic << " v1 scale=" << (pf.scale == PredictionScale::raw ? "raw" : "normalized") << '\n';
  std::string buf;
  for (const auto& [id, v] : pf.values) {
    buf.assign(id);
    buf += '\t';
    detail::append_double(buf, v);
    buf += '\n';
    out << buf;
  }
}

/// Maps a level in {0..3} to [0, 1].
inline double normalize_label(std::int64_t level) {
  return static_cast<double>(CohesionLabel(level).level()) / 3.0;
}

inline double normalize_label(CohesionLabel l) { return static_cast<double>(l.level()) / 3.0; }

/// Clamps a normalized prediction to [0, 1] and maps it back to [0, 3].
inline double denormalize_prediction(double y) {
  if (!std::isfinite(y)) throw Error(ErrorCode::NonFiniteInput, "prediction is not finite");
  return std::clamp(y, 0.0, 1.0) * 3.0;
}

/// Removes floor(ratio * n) training images of `level`, sampled uniformly
/// without replacement. Val/test entries and other levels are untouched.
inline LabeledDataset balance_downsample(const LabeledDataset& ds, int level, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw Error(ErrorCode::InvariantViolation, "balance ratio must lie in [0, 1]");
  }
  CohesionLabel target(level);

  std::vector<std::string> candidates;
  for (const auto& [id, sp] : ds.splits) {
    if (sp != Split::train) continue;
    auto it = ds.labels.find(id);
    if (it != ds.labels.end() && it->second == target) candidates.push_back(id);
  }
  const auto remove_count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(candidates.size())));

  std::mt19937_64 rng(seed);
  std::vector<std::string> removed;
  removed.reserve(remove_count);
  std::sample(candidates.begin(), candidates.end(), std::back_inserter(removed), remove_count, rng);

  LabeledDataset out = ds;
  for (const auto& id : removed) {
    out.labels.erase(id);
    out.splits.erase(id);
  }
  return out;
}

}  // namespace cohesion
