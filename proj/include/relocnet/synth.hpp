#pragma once

// Seeded synthetic scenes: 3-D random-walk camera trajectories inside a room
// sized box, plus optional descriptor vectors whose dot product falls off
// with camera distance. Lets the whole pipeline run without a real dataset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "relocnet/geom.hpp"
#include "relocnet/relpose.hpp"
#include "relocnet/retrieval.hpp"
#include "relocnet/scene.hpp"

namespace relocnet {

struct SynthSceneConfig {
  std::string name = "synth";
  std::size_t n_train = 400;
  std::size_t n_test = 100;
  std::size_t train_sequences = 2;
  std::size_t test_sequences = 1;
  Vec3 box_min = Vec3(0.0, 0.0, 0.0);
  Vec3 box_max = Vec3(4.0, 3.0, 2.5);
  double step_m = 0.05;        ///< per-axis std-dev of a trajectory step
  double turn_deg = 3.0;       ///< per-axis std-dev of an orientation step
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string frame_name(std::size_t i) {
  std::ostringstream s;
  s << "frame-" << std::setw(6) << std::setfill('0') << i;
  return s.str();
}

inline double reflect(double v, double lo, double hi) {
  while (v < lo || v > hi) {
    v = v < lo ? 2 * lo - v : 2 * hi - v;
  }
  return v;
}

}  // namespace detail

/// Splits `total` frames over `sequences` sequences (earlier ones get the
/// remainder) and walks each one.
inline SceneDatabase generate_synthetic_scene(const SynthSceneConfig& cfg) {
  if (cfg.train_sequences == 0 || (cfg.n_test > 0 && cfg.test_sequences == 0)) {
    throw Error(ErrorCode::InvalidConfig, "sequence counts must be positive");
  }
  if (!(cfg.box_max.array() > cfg.box_min.array()).all()) {
    throw Error(ErrorCode::InvalidConfig, "box_max must exceed box_min on every axis");
  }
  std::mt19937_64 rng(detail::splitmix64(cfg.seed ^ detail::fnv1a64(cfg.name)));
  SceneDatabase db;
  int seq_no = 1;
  auto walk = [&](std::size_t total, std::size_t sequences, Split split) {
    for (std::size_t s = 0; s < sequences; ++s) {
      const std::size_t frames = total / sequences + (s < total % sequences ? 1 : 0);
      const std::string seq = detail::sequence_dir_name(seq_no++);
      Vec3 c;
      for (int a = 0; a < 3; ++a) {
        c[a] = cfg.box_min[a] + detail::uniform01(rng) * (cfg.box_max[a] - cfg.box_min[a]);
      }
      Quat rot = detail::uniform_rotation(rng);
      for (std::size_t f = 0; f < frames; ++f) {
        ImageRecord r;
        r.scene = cfg.name;
        r.id = cfg.name + "/" + seq + "/" + detail::frame_name(f);
        r.split = split;
        r.pose = Pose{rot, c};
        db.add(std::move(r));
        for (int a = 0; a < 3; ++a) {
          c[a] = detail::reflect(c[a] + cfg.step_m * detail::std_normal(rng), cfg.box_min[a], cfg.box_max[a]);
        }
        const Vec3 turn(detail::std_normal(rng), detail::std_normal(rng), detail::std_normal(rng));
        rot = quat_mul(rot, Quat::exp(deg2rad(cfg.turn_deg) * turn));
      }
    }
  };
  walk(cfg.n_train, cfg.train_sequences, Split::Train);
  walk(cfg.n_test, cfg.test_sequences, Split::Test);
  return db;
}

/// Unit descriptors from Gaussian bumps at `dim` random anchor points in the
/// bounding box of `db`'s centers: nearby cameras get large dot products.
inline FeatureStore synthesize_features(const SceneDatabase& db, std::size_t dim, double bandwidth_m,
                                        std::uint64_t seed) {
  if (dim == 0 || !(bandwidth_m > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "feature dim and bandwidth must be positive");
  }
  Vec3 lo = Vec3::Constant(0.0), hi = Vec3::Constant(1.0);
  if (!db.empty()) {
    lo = hi = db.records().front().pose.center;
    for (const auto& r : db.records()) {
      lo = lo.cwiseMin(r.pose.center);
      hi = hi.cwiseMax(r.pose.center);
    }
  }
  std::mt19937_64 rng(detail::splitmix64(seed ^ 0x5eed));
  std::vector<Vec3> anchors(dim);
  for (auto& a : anchors) {
    for (int k = 0; k < 3; ++k) {
      a[k] = lo[k] + detail::uniform01(rng) * (hi[k] - lo[k]);
    }
  }
  std::vector<const ImageRecord*> sorted;
  for (const auto& r : db.records()) {
    sorted.push_back(&r);
  }
  std::sort(sorted.begin(), sorted.end(), [](const ImageRecord* a, const ImageRecord* b) { return a->id < b->id; });

  std::vector<std::string> ids;
  std::vector<float> data;
  data.reserve(sorted.size() * dim);
  std::vector<double> row(dim);
  for (const ImageRecord* r : sorted) {
    double norm2 = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double d2 = (r->pose.center - anchors[k]).squaredNorm();
      row[k] = std::exp(-d2 / (2.0 * bandwidth_m * bandwidth_m));
      norm2 += row[k] * row[k];
    }
    const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
    for (double v : row) {
      data.push_back(static_cast<float>(v * inv));
    }
    ids.push_back(r->id);
  }
  return FeatureStore(dim, std::move(ids), std::move(data));
}

}  // namespace relocnet
