#pragma once

// Pose-hypothesis filtering: query translation triangulated from every pair of
// retrieved neighbors and scored by angular inliers, query orientation picked
// by consensus among per-neighbor rotation hypotheses.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "relocnet/error.hpp"
#include "relocnet/geom.hpp"
#include "relocnet/pose.hpp"
#include "relocnet/relpose.hpp"
#include "relocnet/rotation_averaging.hpp"
#include "relocnet/scene.hpp"

namespace relocnet {

struct FusionConfig {
  int n_neighbors = 5;
  double angle_thresh_deg = 20.0;  ///< inlier threshold, both stages
  double parallel_eps = kParallelEps;
  int min_usable_pairs = 1;

  /// Throws InvalidConfig on out-of-range values.
  void validate() const {
    if (n_neighbors < 2) {
      throw Error(ErrorCode::InvalidConfig, "n_neighbors must be >= 2");
    }
    if (!(angle_thresh_deg > 0.0 && angle_thresh_deg < 180.0)) {
      throw Error(ErrorCode::InvalidConfig, "angle threshold must be in (0, 180) degrees");
    }
    if (!(parallel_eps > 0.0 && parallel_eps < 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "parallel_eps must be in (0, 1)");
    }
    if (min_usable_pairs < 1) {
      throw Error(ErrorCode::InvalidConfig, "min_usable_pairs must be >= 1");
    }
  }
};

struct NeighborObservation {
  std::string db_id;
  Pose db_pose;
  RelativePoseEstimate estimate;
  Vec3 world_dir;  ///< db rotation applied to estimate.dt_dir

  static NeighborObservation make(std::string db_id, const Pose& db_pose, const RelativePoseEstimate& est) {
    return NeighborObservation{std::move(db_id), db_pose, est,
                               normalize_dir(quat_rotate(db_pose.rotation, est.dt_dir))};
  }
};

struct TranslationHypothesis {
  std::size_t first = 0;   ///< index k of the generating pair
  std::size_t second = 0;  ///< index m of the generating pair
  Vec3 point = Vec3::Zero();
  double gap = 0.0;
  std::vector<std::string> inliers;  ///< ids of supporting observations outside the pair
};

struct TranslationDiagnostics {
  std::vector<TranslationHypothesis> hypotheses;  ///< surviving hypotheses in pair order
  std::size_t pairs_total = 0;
  std::size_t pairs_discarded = 0;
  int best_inliers = 0;
  bool tie = false;
  std::size_t tie_size = 1;
  double gap = 0.0;  ///< gap of the winner (mean over a tie)
};

/// Is observation `o` consistent with the query sitting at `point`?
inline bool translation_inlier(const NeighborObservation& o, const Vec3& point, double thresh_deg) {
  const Vec3 to_point = point - o.db_pose.center;
  if (to_point.norm() < 1e-12) {
    return false;
  }
  return vec_angle(o.world_dir, to_point) <= thresh_deg;
}

/// Triangulates all C(N,2) pairs, keeps those in front of both cameras, and
/// returns the point with most angular inliers (mean point over ties).
inline std::pair<Vec3, TranslationDiagnostics> fuse_translation(const std::vector<NeighborObservation>& obs,
                                                                const FusionConfig& cfg) {
  if (obs.size() < 2) {
    throw Error(ErrorCode::TooFewNeighbors, "translation fusion needs at least 2 observations");
  }
  TranslationDiagnostics diag;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    for (std::size_t m = k + 1; m < obs.size(); ++m) {
      ++diag.pairs_total;
      Triangulation tri;
      try {
        tri = triangulate_midpoint(Ray{obs[k].db_pose.center, obs[k].world_dir},
                                   Ray{obs[m].db_pose.center, obs[m].world_dir}, cfg.parallel_eps);
      } catch (const Error&) {
        ++diag.pairs_discarded;
        continue;
      }
      if (!(tri.s1 > 0.0 && tri.s2 > 0.0)) {
        ++diag.pairs_discarded;
        continue;
      }
      TranslationHypothesis h{k, m, tri.point, tri.gap, {}};
      for (std::size_t r = 0; r < obs.size(); ++r) {
        if (r != k && r != m && translation_inlier(obs[r], tri.point, cfg.angle_thresh_deg)) {
          h.inliers.push_back(obs[r].db_id);
        }
      }
      diag.hypotheses.push_back(std::move(h));
    }
  }
  if (diag.hypotheses.size() < static_cast<std::size_t>(cfg.min_usable_pairs) || diag.hypotheses.empty()) {
    throw Error(ErrorCode::NoValidHypothesis, std::to_string(diag.pairs_discarded) + " of " +
                                                  std::to_string(diag.pairs_total) +
                                                  " neighbor pairs are degenerate or behind a camera");
  }

  std::size_t best = 0;
  for (const auto& h : diag.hypotheses) {
    best = std::max(best, h.inliers.size());
  }
  Vec3 sum = Vec3::Zero();
  double gap_sum = 0.0;
  std::size_t n_tied = 0;
  for (const auto& h : diag.hypotheses) {
    if (h.inliers.size() == best) {
      sum += h.point;
      gap_sum += h.gap;
      ++n_tied;
    }
  }
  diag.best_inliers = static_cast<int>(best);
  diag.tie = n_tied > 1;
  diag.tie_size = n_tied;
  diag.gap = gap_sum / static_cast<double>(n_tied);
  return {sum / static_cast<double>(n_tied), std::move(diag)};
}

struct RotationHypothesis {
  std::size_t source = 0;  ///< observation index
  Quat quat;
  int inlier_count = 0;
};

/// One absolute orientation per observation: R_db * dq.
inline std::vector<RotationHypothesis> rotation_hypotheses(const std::vector<NeighborObservation>& obs) {
  std::vector<RotationHypothesis> out;
  out.reserve(obs.size());
  for (std::size_t j = 0; j < obs.size(); ++j) {
    out.push_back(RotationHypothesis{j, quat_mul(obs[j].db_pose.rotation, obs[j].estimate.dq), 0});
  }
  return out;
}

struct RotationDiagnostics {
  std::vector<RotationHypothesis> hypotheses;  ///< with inlier counts filled in
  int best_inliers = 0;
  bool tie = false;
  std::size_t averaged = 1;  ///< hypotheses fed to the L1 median (1 without a tie)
};

/// Consensus over rotation hypotheses. A unique best count wins outright;
/// a tie at the best count is resolved by the L1 geodesic median over the
/// tied hypotheses and their consensus sets.
inline std::pair<Quat, RotationDiagnostics> fuse_rotation(std::vector<RotationHypothesis> hyps,
                                                          const FusionConfig& cfg) {
  if (hyps.empty()) {
    throw Error(ErrorCode::EmptyInput, "rotation fusion needs at least one hypothesis");
  }
  const std::size_t n = hyps.size();
  std::vector<std::vector<char>> within(n, std::vector<char>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool in = quat_angle(hyps[i].quat, hyps[j].quat) <= cfg.angle_thresh_deg;
      within[i][j] = within[j][i] = in;
    }
  }
  int best = 0;
  for (std::size_t i = 0; i < n; ++i) {
    hyps[i].inlier_count = static_cast<int>(std::count(within[i].begin(), within[i].end(), 1));
    best = std::max(best, hyps[i].inlier_count);
  }
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < n; ++i) {
    if (hyps[i].inlier_count == best) {
      tied.push_back(i);
    }
  }

  RotationDiagnostics diag;
  diag.best_inliers = best;
  Quat result = hyps[tied.front()].quat;
  if (tied.size() > 1) {
    std::vector<char> member(n, 0);
    for (std::size_t t : tied) {
      member[t] = 1;
      for (std::size_t j = 0; j < n; ++j) {
        if (within[t][j]) {
          member[j] = 1;
        }
      }
    }
    std::vector<Quat> pool;
    for (std::size_t j = 0; j < n; ++j) {
      if (member[j]) {
        pool.push_back(hyps[j].quat);
      }
    }
    result = l1_geodesic_median(pool);
    diag.tie = true;
    diag.averaged = pool.size();
  }
  diag.hypotheses = std::move(hyps);
  return {result, std::move(diag)};
}

struct LocalizationResult {
  std::string query_id;
  Pose pose;
  int translation_inliers = 0;
  int rotation_inliers = 0;
  bool tie_translation = false;
  bool tie_rotation = false;
  double translation_gap = 0.0;
  std::vector<std::string> neighbor_ids;  ///< in the order given
};

struct Neighbor {
  const ImageRecord* record = nullptr;
  RelativePoseEstimate estimate;
};

/// Full 6-DoF query pose from retrieved neighbors and their relative-pose
/// estimates. Observations are processed in id order, so the result does not
/// depend on the order of `neighbors`.
inline LocalizationResult localize(const std::string& query_id, const std::vector<Neighbor>& neighbors,
                                   const FusionConfig& cfg) {
  if (neighbors.size() < 2) {
    throw Error(ErrorCode::TooFewNeighbors,
                query_id + ": " + std::to_string(neighbors.size()) + " neighbor(s), need at least 2");
  }
  std::vector<NeighborObservation> obs;
  obs.reserve(neighbors.size());
  LocalizationResult res;
  res.query_id = query_id;
  for (const auto& nb : neighbors) {
    res.neighbor_ids.push_back(nb.record->id);
    obs.push_back(NeighborObservation::make(nb.record->id, nb.record->pose, nb.estimate));
  }
  std::sort(obs.begin(), obs.end(),
            [](const NeighborObservation& a, const NeighborObservation& b) { return a.db_id < b.db_id; });

  auto [center, tdiag] = fuse_translation(obs, cfg);
  auto [rotation, rdiag] = fuse_rotation(rotation_hypotheses(obs), cfg);
  res.pose = Pose{rotation, center};
  res.translation_inliers = tdiag.best_inliers;
  res.rotation_inliers = rdiag.best_inliers;
  res.tie_translation = tdiag.tie;
  res.tie_rotation = rdiag.tie;
  res.translation_gap = tdiag.gap;
  return res;
}

}  // namespace relocnet
