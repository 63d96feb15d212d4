#pragma once

// Image retrieval: raw dot-product ranking over a feature store, ground-truth
// ranking by pose metric, and fixed-interval viewpoint sets.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relocnet/error.hpp"
#include "relocnet/pose.hpp"
#include "relocnet/scene.hpp"

namespace relocnet {

/// Row-per-image descriptor matrix. Vectors are used as stored (no
/// re-normalization); normalize before writing if cosine similarity is wanted.
class FeatureStore {
 public:
  FeatureStore() = default;

  FeatureStore(std::size_t dim, std::vector<std::string> ids, std::vector<float> data)
      : dim_(dim), ids_(std::move(ids)), data_(std::move(data)) {
    if (dim_ == 0) {
      throw Error(ErrorCode::MalformedHeader, "feature dimension must be positive");
    }
    if (data_.size() != ids_.size() * dim_) {
      throw Error(ErrorCode::CountMismatch, std::to_string(ids_.size()) + " ids but " +
                                                std::to_string(data_.size() / dim_) + " rows");
    }
    for (float v : data_) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::MalformedHeader, "non-finite feature entry");
      }
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!index_.emplace(ids_[i], i).second) {
        throw Error(ErrorCode::DuplicateKey, "feature id " + ids_[i]);
      }
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<float>& data() const { return data_; }

  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  std::span<const float> row(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw Error(ErrorCode::UnknownId, "no feature vector for " + id);
    }
    return row(it->second);
  }

  bool contains(const std::string& id) const { return index_.contains(id); }

  /// Row index of `id`, or size() when absent.
  std::size_t row_index(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? ids_.size() : it->second;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct RankedList {
  std::string query_id;
  std::vector<std::string> ranked_ids;
  std::vector<double> scores;  ///< parallel to ranked_ids
};

namespace detail {

struct Scored {
  double score;
  const std::string* id;
};

}  // namespace detail

/// Top-n store rows by descending dot product with `query`; ties go to the
/// lexicographically smaller id. `exclude_id` drops the query's own row.
/// `allowed`, when non-empty, restricts candidates to that id set.
inline RankedList rank_by_dot(std::span<const float> query, const FeatureStore& store, std::size_t n,
                              const std::string& exclude_id = {},
                              const std::vector<std::string>& allowed = {}) {
  if (query.size() != store.dim()) {
    throw Error(ErrorCode::DimMismatch,
                "query has " + std::to_string(query.size()) + " dims, store has " + std::to_string(store.dim()));
  }
  std::vector<detail::Scored> scored;
  auto consider = [&](std::size_t i) {
    const std::string& id = store.ids()[i];
    if (!exclude_id.empty() && id == exclude_id) {
      return;
    }
    const auto r = store.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      s += static_cast<double>(query[k]) * static_cast<double>(r[k]);
    }
    scored.push_back({s, &id});
  };
  if (allowed.empty()) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      consider(i);
    }
  } else {
    std::vector<std::size_t> rows;
    for (const auto& id : allowed) {
      if (const std::size_t i = store.row_index(id); i < store.size()) {
        rows.push_back(i);
      }
    }
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    for (std::size_t i : rows) {
      consider(i);
    }
  }
  if (n > scored.size()) {
    throw Error(ErrorCode::NTooLarge,
                "requested " + std::to_string(n) + " of " + std::to_string(scored.size()) + " candidates");
  }
  auto better = [](const detail::Scored& a, const detail::Scored& b) {
    return a.score != b.score ? a.score > b.score : *a.id < *b.id;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
  RankedList out;
  for (std::size_t i = 0; i < n; ++i) {
    out.ranked_ids.push_back(*scored[i].id);
    out.scores.push_back(scored[i].score);
  }
  return out;
}

/// Every candidate ordered by ascending pose_metric to `query_pose`, ties by id.
/// Scores are the metric values (non-decreasing).
inline RankedList rank_by_pose_metric(const Pose& query_pose, std::span<const ImageRecord* const> candidates,
                                      double beta = 1.0, const std::string& exclude_id = {}) {
  std::vector<detail::Scored> scored;
  scored.reserve(candidates.size());
  for (const ImageRecord* r : candidates) {
    if (!exclude_id.empty() && r->id == exclude_id) {
      continue;
    }
    scored.push_back({pose_metric(query_pose, r->pose, beta), &r->id});
  }
  std::sort(scored.begin(), scored.end(), [](const detail::Scored& a, const detail::Scored& b) {
    return a.score != b.score ? a.score < b.score : *a.id < *b.id;
  });
  RankedList out;
  for (const auto& s : scored) {
    out.ranked_ids.push_back(*s.id);
    out.scores.push_back(s.score);
  }
  return out;
}

/// Overload ranking the whole database.
inline RankedList rank_by_pose_metric(const Pose& query_pose, const SceneDatabase& db, double beta = 1.0,
                                      const std::string& exclude_id = {}) {
  std::vector<const ImageRecord*> all;
  for (const auto& r : db.records()) {
    all.push_back(&r);
  }
  return rank_by_pose_metric(query_pose, std::span<const ImageRecord* const>(all), beta, exclude_id);
}

struct ViewpointSetSpec {
  std::size_t set_size = 5;
  std::size_t interval = 50;
  std::size_t count = 8;

  std::size_t required_rank() const { return (count - 1) * interval + set_size; }
};

struct ViewpointSet {
  std::size_t first_rank = 0;  ///< 1-based
  std::size_t last_rank = 0;   ///< 1-based, inclusive
  std::vector<std::string> ids;
};

/// Set k holds ranks [k*interval + 1, k*interval + set_size] (1-based).
inline std::vector<ViewpointSet> viewpoint_sets(const RankedList& ranked, const ViewpointSetSpec& spec = {}) {
  if (spec.set_size == 0 || spec.count == 0) {
    throw Error(ErrorCode::InvalidConfig, "viewpoint set_size and count must be positive");
  }
  if (spec.interval < spec.set_size && spec.count > 1) {
    throw Error(ErrorCode::InvalidConfig, "viewpoint interval smaller than set size makes sets overlap");
  }
  if (ranked.ranked_ids.size() < spec.required_rank()) {
    throw Error(ErrorCode::InsufficientRanking, "need " + std::to_string(spec.required_rank()) +
                                                    " ranked images, have " +
                                                    std::to_string(ranked.ranked_ids.size()));
  }
  std::vector<ViewpointSet> out;
  for (std::size_t k = 0; k < spec.count; ++k) {
    ViewpointSet s;
    s.first_rank = k * spec.interval + 1;
    s.last_rank = k * spec.interval + spec.set_size;
    for (std::size_t r = s.first_rank; r <= s.last_rank; ++r) {
      s.ids.push_back(ranked.ranked_ids[r - 1]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature files: "RPF1", u32 LE dim, u32 LE rows, rows of dim f32 LE.

namespace detail {

inline std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw Error(ErrorCode::MalformedHeader, "truncated header");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

}  // namespace detail

inline FeatureStore load_features(const std::filesystem::path& matrix_path, const std::filesystem::path& ids_path) {
  std::ifstream in(matrix_path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open " + matrix_path.string());
  }
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "RPF1", 4) != 0) {
    throw Error(ErrorCode::MalformedHeader, matrix_path.string() + ": missing RPF1 magic");
  }
  const std::uint32_t dim = detail::read_u32_le(in);
  const std::uint32_t rows = detail::read_u32_le(in);
  if (dim == 0) {
    throw Error(ErrorCode::MalformedHeader, matrix_path.string() + ": zero dimension");
  }
  std::vector<float> data(static_cast<std::size_t>(dim) * rows);
  for (float& v : data) {
    const std::uint32_t bits = detail::read_u32_le(in);
    v = std::bit_cast<float>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::MalformedHeader, matrix_path.string() + ": trailing bytes after " +
                                                std::to_string(rows) + " rows");
  }

  std::ifstream ids_in(ids_path);
  if (!ids_in) {
    throw Error(ErrorCode::IoError, "cannot open " + ids_path.string());
  }
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(ids_in, line)) {
    line = detail::trim(line);
    if (!line.empty()) {
      ids.push_back(line);
    }
  }
  if (ids.size() != rows) {
    throw Error(ErrorCode::CountMismatch,
                std::to_string(ids.size()) + " ids but " + std::to_string(rows) + " matrix rows");
  }
  return FeatureStore(dim, std::move(ids), std::move(data));
}

inline void write_features(const std::filesystem::path& matrix_path, const std::filesystem::path& ids_path,
                           const FeatureStore& store) {
  std::ofstream out(matrix_path, std::ios::binary);
  std::ofstream ids_out(ids_path);
  if (!out || !ids_out) {
    throw Error(ErrorCode::IoError, "cannot write feature files");
  }
  out.write("RPF1", 4);
  detail::write_u32_le(out, static_cast<std::uint32_t>(store.dim()));
  detail::write_u32_le(out, static_cast<std::uint32_t>(store.size()));
  for (float v : store.data()) {
    detail::write_u32_le(out, std::bit_cast<std::uint32_t>(v));
  }
  for (const auto& id : store.ids()) {
    ids_out << id << '\n';
  }
}

}  // namespace relocnet
