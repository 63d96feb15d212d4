#pragma once

// Evaluation harness: per-query pose errors, per-scene medians, the standard
// retrieve-then-localize pipeline and the fixed-rank viewpoint experiment.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "relocnet/error.hpp"
#include "relocnet/fusion.hpp"
#include "relocnet/relpose.hpp"
#include "relocnet/retrieval.hpp"
#include "relocnet/scene.hpp"

namespace relocnet {

struct PoseError {
  double position_m = 0.0;
  double orientation_deg = 0.0;
};

inline PoseError pose_error(const Pose& est, const Pose& gt) {
  return PoseError{(est.center - gt.center).norm(), quat_angle(est.rotation, gt.rotation)};
}

/// Middle element, or the mean of the two middle elements for even sizes.
inline double median(std::vector<double> values) {
  if (values.empty()) {
    throw Error(ErrorCode::EmptyInput, "median of an empty list");
  }
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) {
    return upper;
  }
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

struct QueryRecord {
  std::string id;
  std::string scene;
  bool failed = false;
  std::string failure;  ///< error text when failed
  PoseError error;
  Pose estimate;
  int translation_inliers = 0;
  int rotation_inliers = 0;
  bool tie_translation = false;
  bool tie_rotation = false;
  std::vector<std::string> neighbors;
};

struct SceneReport {
  std::string scene;
  std::size_t n_queries = 0;
  std::size_t n_failures = 0;
  std::optional<double> median_position_m;  ///< empty when every query failed
  std::optional<double> median_orientation_deg;
  std::vector<QueryRecord> queries;  ///< sorted by id
};

/// Groups records by scene (sorted) and computes medians over the
/// non-failed queries.
inline std::vector<SceneReport> aggregate(std::vector<QueryRecord> records) {
  std::sort(records.begin(), records.end(), [](const QueryRecord& a, const QueryRecord& b) {
    return a.scene != b.scene ? a.scene < b.scene : a.id < b.id;
  });
  std::vector<SceneReport> out;
  for (auto& r : records) {
    if (out.empty() || out.back().scene != r.scene) {
      out.push_back(SceneReport{r.scene, 0, 0, std::nullopt, std::nullopt, {}});
    }
    out.back().queries.push_back(std::move(r));
  }
  for (auto& rep : out) {
    std::vector<double> pos, ori;
    for (const auto& q : rep.queries) {
      if (q.failed) {
        ++rep.n_failures;
      } else {
        pos.push_back(q.error.position_m);
        ori.push_back(q.error.orientation_deg);
      }
    }
    rep.n_queries = rep.queries.size();
    if (!pos.empty()) {
      rep.median_position_m = median(pos);
      rep.median_orientation_deg = median(ori);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sources

enum class RetrievalMode { Features, PoseOracle };

struct RetrievalSource {
  RetrievalMode mode = RetrievalMode::PoseOracle;
  const FeatureStore* features = nullptr;  ///< required for Features
  double beta = 1.0;                       ///< pose-metric weight for PoseOracle

  static RetrievalSource oracle(double beta = 1.0) { return {RetrievalMode::PoseOracle, nullptr, beta}; }
  static RetrievalSource from_features(const FeatureStore& store) { return {RetrievalMode::Features, &store, 1.0}; }
};

enum class RelposeMode { Predictions, Synthetic };

struct RelposeSource {
  RelposeMode mode = RelposeMode::Synthetic;
  const PredictionSet* predictions = nullptr;  ///< required for Predictions
  NoiseConfig noise;

  static RelposeSource synthetic(const NoiseConfig& noise) { return {RelposeMode::Synthetic, nullptr, noise}; }
  static RelposeSource from_predictions(const PredictionSet& set) { return {RelposeMode::Predictions, &set, {}}; }
};

namespace detail {

/// Fatal errors abort the run; everything else is a per-query failure.
inline bool is_fatal(ErrorCode code) {
  return code == ErrorCode::MissingPrediction || code == ErrorCode::NTooLarge ||
         code == ErrorCode::DimMismatch || code == ErrorCode::UnknownId || code == ErrorCode::InvalidConfig;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Rethrows the exception
/// of the smallest failing index so the surfaced error is deterministic.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t workers = std::clamp<std::size_t>(jobs <= 0 ? 1 : static_cast<std::size_t>(jobs), 1, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(work);
    }
  }
  for (auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

inline RelativePoseEstimate obtain_estimate(const ImageRecord& query, const ImageRecord& db_rec,
                                            const RelposeSource& src) {
  if (src.mode == RelposeMode::Predictions) {
    const RelativePoseEstimate* est = src.predictions->find(query.id, db_rec.id);
    if (est == nullptr) {
      throw Error(ErrorCode::MissingPrediction, "no prediction for (" + query.id + ", " + db_rec.id + ")");
    }
    return *est;
  }
  return synth_predict(relative_pose(db_rec.pose, query.pose), src.noise, query.id, db_rec.id);
}

inline QueryRecord localize_with(const ImageRecord& query, const std::vector<const ImageRecord*>& neighbors,
                                 const RelposeSource& relpose, const FusionConfig& cfg) {
  QueryRecord rec;
  rec.id = query.id;
  rec.scene = query.scene;
  for (const ImageRecord* nb : neighbors) {
    rec.neighbors.push_back(nb->id);
  }
  try {
    std::vector<Neighbor> input;
    for (const ImageRecord* nb : neighbors) {
      input.push_back(Neighbor{nb, obtain_estimate(query, *nb, relpose)});
    }
    const LocalizationResult res = localize(query.id, input, cfg);
    rec.estimate = res.pose;
    rec.error = pose_error(res.pose, query.pose);
    rec.translation_inliers = res.translation_inliers;
    rec.rotation_inliers = res.rotation_inliers;
    rec.tie_translation = res.tie_translation;
    rec.tie_rotation = res.tie_rotation;
  } catch (const Error& e) {
    if (is_fatal(e.code())) {
      throw;
    }
    rec.failed = true;
    rec.failure = e.what();
  }
  return rec;
}

}  // namespace detail

struct PipelineOptions {
  int jobs = 1;
};

/// Retrieve top-N neighbors, obtain relative poses, localize and score every
/// query. Feature retrieval searches all train images in `db`; pose-oracle
/// retrieval searches the train images of the query's own scene.
inline std::vector<SceneReport> run_pipeline(const SceneDatabase& db, const std::vector<const ImageRecord*>& queries,
                                             const RetrievalSource& retrieval, const RelposeSource& relpose,
                                             const FusionConfig& cfg, const PipelineOptions& opts = {}) {
  cfg.validate();
  if (retrieval.mode == RetrievalMode::Features && retrieval.features == nullptr) {
    throw Error(ErrorCode::InvalidConfig, "feature retrieval without a feature store");
  }
  if (relpose.mode == RelposeMode::Predictions && relpose.predictions == nullptr) {
    throw Error(ErrorCode::InvalidConfig, "prediction relpose without a prediction set");
  }
  const auto n = static_cast<std::size_t>(cfg.n_neighbors);
  std::vector<std::string> train_ids;
  for (const ImageRecord* r : db.select(Split::Train)) {
    train_ids.push_back(r->id);
  }
  std::map<std::string, std::vector<const ImageRecord*>> train_by_scene;
  for (const auto& scene : db.scenes()) {
    train_by_scene[scene] = db.select(Split::Train, scene);
  }

  std::vector<QueryRecord> records(queries.size());
  detail::parallel_for(queries.size(), opts.jobs, [&](std::size_t i) {
    const ImageRecord& q = *queries[i];
    std::vector<const ImageRecord*> neighbors;
    if (retrieval.mode == RetrievalMode::Features) {
      const RankedList ranked = rank_by_dot(retrieval.features->row(q.id), *retrieval.features, n, q.id, train_ids);
      for (const auto& id : ranked.ranked_ids) {
        neighbors.push_back(&db.at(id));
      }
    } else {
      const auto found = train_by_scene.find(q.scene);
      if (found == train_by_scene.end()) {
        throw Error(ErrorCode::UnknownId, "query scene " + q.scene + " is not in the database");
      }
      const auto& pool = found->second;
      const RankedList ranked =
          rank_by_pose_metric(q.pose, std::span<const ImageRecord* const>(pool), retrieval.beta, q.id);
      if (ranked.ranked_ids.size() < n) {
        throw Error(ErrorCode::NTooLarge, "scene " + q.scene + " has " + std::to_string(ranked.ranked_ids.size()) +
                                              " train images, need " + std::to_string(n));
      }
      for (std::size_t k = 0; k < n; ++k) {
        neighbors.push_back(&db.at(ranked.ranked_ids[k]));
      }
    }
    records[i] = detail::localize_with(q, neighbors, relpose, cfg);
  });
  return aggregate(std::move(records));
}

struct ViewpointColumn {
  std::size_t index = 0;
  std::size_t first_rank = 0;
  std::size_t last_rank = 0;
  SceneReport report;
};

struct ViewpointSceneResult {
  std::string scene;
  bool skipped = false;
  std::string reason;  ///< why the scene was skipped
  std::vector<ViewpointColumn> columns;
};

/// For every query, rank its scene's train images by pose_metric and localize
/// once per viewpoint set. Scenes too small for the requested sets are skipped
/// with an InsufficientRanking reason.
inline std::vector<ViewpointSceneResult> run_viewpoint_experiment(const SceneDatabase& db,
                                                                  const std::vector<const ImageRecord*>& queries,
                                                                  const RelposeSource& relpose,
                                                                  const FusionConfig& cfg,
                                                                  const ViewpointSetSpec& spec = {},
                                                                  double beta = 1.0,
                                                                  const PipelineOptions& opts = {}) {
  cfg.validate();
  if (relpose.mode == RelposeMode::Predictions && relpose.predictions == nullptr) {
    throw Error(ErrorCode::InvalidConfig, "prediction relpose without a prediction set");
  }
  std::map<std::string, std::vector<const ImageRecord*>> by_scene;
  for (const ImageRecord* q : queries) {
    by_scene[q->scene].push_back(q);
  }
  std::vector<ViewpointSceneResult> out;
  for (auto& [scene, scene_queries] : by_scene) {
    ViewpointSceneResult result;
    result.scene = scene;
    const auto pool = db.select(Split::Train, scene);
    if (pool.size() < spec.required_rank()) {
      result.skipped = true;
      result.reason = Error(ErrorCode::InsufficientRanking,
                            "scene " + scene + " has " + std::to_string(pool.size()) + " train images, need " +
                                std::to_string(spec.required_rank()))
                          .what();
      out.push_back(std::move(result));
      continue;
    }
    // per_query[i][k]: query i localized with viewpoint set k
    std::vector<std::vector<QueryRecord>> per_query(scene_queries.size());
    std::vector<std::vector<ViewpointSet>> sets(scene_queries.size());
    detail::parallel_for(scene_queries.size(), opts.jobs, [&](std::size_t i) {
      const ImageRecord& q = *scene_queries[i];
      const RankedList ranked = rank_by_pose_metric(q.pose, std::span<const ImageRecord* const>(pool), beta, q.id);
      sets[i] = viewpoint_sets(ranked, spec);
      for (const ViewpointSet& s : sets[i]) {
        std::vector<const ImageRecord*> neighbors;
        for (const auto& id : s.ids) {
          neighbors.push_back(&db.at(id));
        }
        per_query[i].push_back(detail::localize_with(q, neighbors, relpose, cfg));
      }
    });
    for (std::size_t k = 0; k < spec.count; ++k) {
      std::vector<QueryRecord> column;
      for (auto& recs : per_query) {
        column.push_back(std::move(recs[k]));
      }
      auto reports = aggregate(std::move(column));
      ViewpointColumn col;
      col.index = k;
      col.first_rank = k * spec.interval + 1;
      col.last_rank = k * spec.interval + spec.set_size;
      col.report = std::move(reports.front());
      result.columns.push_back(std::move(col));
    }
    out.push_back(std::move(result));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline nlohmann::ordered_json query_to_json(const QueryRecord& q) {
  nlohmann::ordered_json j;
  j["id"] = q.id;
  if (q.failed) {
    j["pos_err_m"] = nullptr;
    j["ori_err_deg"] = nullptr;
    j["failure"] = q.failure;
  } else {
    j["pos_err_m"] = q.error.position_m;
    j["ori_err_deg"] = q.error.orientation_deg;
  }
  j["translation_inliers"] = q.translation_inliers;
  j["rotation_inliers"] = q.rotation_inliers;
  j["ties"] = {{"translation", q.tie_translation}, {"rotation", q.tie_rotation}};
  j["neighbors"] = q.neighbors;
  return j;
}

inline nlohmann::ordered_json report_to_json(const SceneReport& r) {
  nlohmann::ordered_json j;
  j["scene"] = r.scene;
  j["n_queries"] = r.n_queries;
  j["n_failures"] = r.n_failures;
  j["median_position_m"] = detail::optional_json(r.median_position_m);
  j["median_orientation_deg"] = detail::optional_json(r.median_orientation_deg);
  j["queries"] = nlohmann::ordered_json::array();
  for (const auto& q : r.queries) {
    j["queries"].push_back(query_to_json(q));
  }
  return j;
}

inline nlohmann::ordered_json reports_to_json(const std::vector<SceneReport>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    j.push_back(report_to_json(r));
  }
  return j;
}

inline std::string format_real(const std::optional<double>& v) {
  if (!v) {
    return "nan";
  }
  std::ostringstream s;
  s << std::setprecision(10) << *v;
  return s.str();
}

/// "scene,median_m,median_deg" rows.
inline void write_summary_csv(std::ostream& out, const std::vector<SceneReport>& reports) {
  out << "scene,median_m,median_deg\n";
  for (const auto& r : reports) {
    out << r.scene << ',' << format_real(r.median_position_m) << ',' << format_real(r.median_orientation_deg) << '\n';
  }
}

inline nlohmann::ordered_json viewpoint_to_json(const std::vector<ViewpointSceneResult>& results) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& s : results) {
    nlohmann::ordered_json js;
    js["scene"] = s.scene;
    js["skipped"] = s.skipped;
    if (s.skipped) {
      js["reason"] = s.reason;
    }
    js["viewpoints"] = nlohmann::ordered_json::array();
    for (const auto& c : s.columns) {
      nlohmann::ordered_json jc;
      jc["index"] = c.index;
      jc["ranks"] = {c.first_rank, c.last_rank};
      jc["report"] = report_to_json(c.report);
      js["viewpoints"].push_back(jc);
    }
    j.push_back(js);
  }
  return j;
}

/// "scene,viewpoint,first_rank,last_rank,median_m,median_deg" rows; skipped
/// scenes are omitted.
inline void write_viewpoint_csv(std::ostream& out, const std::vector<ViewpointSceneResult>& results) {
  out << "scene,viewpoint,first_rank,last_rank,median_m,median_deg\n";
  for (const auto& s : results) {
    for (const auto& c : s.columns) {
      out << s.scene << ',' << c.index << ',' << c.first_rank << ',' << c.last_rank << ','
          << format_real(c.report.median_position_m) << ',' << format_real(c.report.median_orientation_deg) << '\n';
    }
  }
}

}  // namespace relocnet
