#pragma once

// Relative pose between a database camera and a query camera, plus the two
// sources of estimates: JSON-lines prediction files and a seeded noisy oracle.

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>

#include "relocnet/error.hpp"
#include "relocnet/geom.hpp"
#include "relocnet/pose.hpp"

namespace relocnet {

/// dq takes the database camera frame to the query camera frame
/// (R_query = R_db * dq). dt_dir points from the database camera center
/// toward the query center, expressed in the database camera frame.
struct RelativePoseEstimate {
  Quat dq;
  Vec3 dt_dir = Vec3::UnitX();

  friend bool operator==(const RelativePoseEstimate& a, const RelativePoseEstimate& b) {
    return a.dq == b.dq && a.dt_dir == b.dt_dir;
  }
};

inline constexpr double kCoincidentCenterEps = 1e-9;

inline RelativePoseEstimate relative_pose(const Pose& db_pose, const Pose& query_pose) {
  const Vec3 offset = query_pose.center - db_pose.center;
  if (offset.norm() < kCoincidentCenterEps) {
    throw Error(ErrorCode::CoincidentCenters, "query and database centers coincide");
  }
  const Quat db_inv = db_pose.rotation.conj();
  return RelativePoseEstimate{quat_mul(db_inv, query_pose.rotation),
                              normalize_dir(quat_rotate(db_inv, offset))};
}

struct NoiseConfig {
  double sigma_rot_deg = 0.0;
  double sigma_dir_deg = 0.0;
  double outlier_prob = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed derived only from (seed, query_id, db_id), never from call order.
inline std::uint64_t keyed_seed(std::uint64_t seed, std::string_view query_id, std::string_view db_id) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ fnv1a64(query_id));
  // Separator so ("ab","c") and ("a","bc") differ.
  h = splitmix64(h ^ 0x1f);
  return splitmix64(h ^ fnv1a64(db_id));
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline double std_normal(std::mt19937_64& rng) {
  // Box-Muller on our own uniforms: std::normal_distribution is not
  // specified bit-for-bit across standard libraries.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) {
    u1 = uniform01(rng);
  }
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline Vec3 uniform_unit_vector(std::mt19937_64& rng) {
  for (;;) {
    const Vec3 v(std_normal(rng), std_normal(rng), std_normal(rng));
    const double n = v.norm();
    if (n > 1e-9) {
      return v / n;
    }
  }
}

/// Uniform rotation (Shoemake's subgroup algorithm).
inline Quat uniform_rotation(std::mt19937_64& rng) {
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  const double u3 = uniform01(rng);
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  const double t2 = 2.0 * std::numbers::pi * u2;
  const double t3 = 2.0 * std::numbers::pi * u3;
  return Quat::normalized(b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3));
}

/// Uniform unit vector orthogonal to unit `d`.
inline Vec3 orthogonal_unit_vector(const Vec3& d, std::mt19937_64& rng) {
  for (;;) {
    const Vec3 v = uniform_unit_vector(rng);
    const Vec3 p = v - v.dot(d) * d;
    const double n = p.norm();
    if (n > 1e-6) {
      return p / n;
    }
  }
}

}  // namespace detail

/// Noisy stand-in for a learned relative-pose regressor.
///
/// With probability outlier_prob the estimate is replaced by a uniform
/// rotation and a uniform direction. Otherwise dq is composed with a rotation
/// by |N(0, sigma_rot)| about a random axis, and dt_dir is tilted by
/// |N(0, sigma_dir)| about a random axis orthogonal to it.
inline RelativePoseEstimate synth_predict(const RelativePoseEstimate& gt, const NoiseConfig& cfg,
                                          std::string_view query_id, std::string_view db_id) {
  std::mt19937_64 rng(detail::keyed_seed(cfg.seed, query_id, db_id));
  const double u = detail::uniform01(rng);
  if (u < cfg.outlier_prob) {
    const Quat dq = detail::uniform_rotation(rng);
    const Vec3 dir = detail::uniform_unit_vector(rng);
    return RelativePoseEstimate{dq, dir};
  }
  RelativePoseEstimate out = gt;
  const Vec3 rot_axis = detail::uniform_unit_vector(rng);
  const double rot_angle = std::abs(detail::std_normal(rng)) * cfg.sigma_rot_deg;
  if (rot_angle > 0.0) {
    out.dq = quat_mul(gt.dq, Quat::from_axis_angle(rot_axis, deg2rad(rot_angle)));
  }
  const Vec3 tilt_axis = detail::orthogonal_unit_vector(gt.dt_dir, rng);
  const double tilt_angle = std::abs(detail::std_normal(rng)) * cfg.sigma_dir_deg;
  if (tilt_angle > 0.0) {
    const Quat tilt = Quat::from_axis_angle(tilt_axis, deg2rad(tilt_angle));
    out.dt_dir = normalize_dir(quat_rotate(tilt, gt.dt_dir));
  }
  return out;
}

/// Relative-pose estimates keyed by (query_id, db_id).
class PredictionSet {
 public:
  using Key = std::pair<std::string, std::string>;

  /// Throws DuplicateKey if the pair is already present.
  void insert(const std::string& query_id, const std::string& db_id, const RelativePoseEstimate& est) {
    auto [it, inserted] = map_.emplace(Key{query_id, db_id}, est);
    if (!inserted) {
      throw Error(ErrorCode::DuplicateKey, "(" + query_id + ", " + db_id + ")");
    }
  }

  const RelativePoseEstimate* find(const std::string& query_id, const std::string& db_id) const {
    auto it = map_.find(Key{query_id, db_id});
    return it == map_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return map_.size(); }
  bool empty() const { return map_.empty(); }
  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }

 private:
  std::map<Key, RelativePoseEstimate> map_;
};

namespace detail {

inline std::array<double, 4> json_quat(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) {
    throw std::invalid_argument("expected 4-element array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline Vec3 json_vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw std::invalid_argument("expected 3-element array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

/// Parses one prediction line {"query","db","dq":[w,x,y,z],"dt":[x,y,z]} and
/// normalizes dq and dt to unit length.
inline std::pair<PredictionSet::Key, RelativePoseEstimate> parse_prediction_line(const std::string& line,
                                                                                 std::size_t line_no = 0) {
  const std::string where = "line " + std::to_string(line_no);
  nlohmann::json j;
  std::array<double, 4> q{};
  Vec3 dt;
  std::string query, db;
  try {
    j = nlohmann::json::parse(line);
    query = j.at("query").get<std::string>();
    db = j.at("db").get<std::string>();
    q = detail::json_quat(j.at("dq"));
    dt = detail::json_vec3(j.at("dt"));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::MalformedLine, where + ": " + e.what());
  }
  if (!dt.allFinite() || dt.norm() < 1e-12) {
    throw Error(ErrorCode::ZeroVector, where + ": dt has zero norm");
  }
  RelativePoseEstimate est;
  try {
    est.dq = Quat::normalized(q[0], q[1], q[2], q[3]);
  } catch (const Error&) {
    throw Error(ErrorCode::MalformedLine, where + ": dq has zero or non-finite norm");
  }
  est.dt_dir = dt / dt.norm();
  return {PredictionSet::Key{std::move(query), std::move(db)}, est};
}

inline PredictionSet load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open predictions file " + path.string());
  }
  PredictionSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    auto [key, est] = parse_prediction_line(line, line_no);
    set.insert(key.first, key.second, est);
  }
  return set;
}

inline nlohmann::json estimate_to_json(const RelativePoseEstimate& est) {
  return {{"dq", {est.dq.w(), est.dq.x(), est.dq.y(), est.dq.z()}},
          {"dt", {est.dt_dir.x(), est.dt_dir.y(), est.dt_dir.z()}}};
}

inline void write_predictions(const std::filesystem::path& path, const PredictionSet& set) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }
  for (const auto& [key, est] : set) {
    nlohmann::ordered_json j;
    j["query"] = key.first;
    j["db"] = key.second;
    const auto e = estimate_to_json(est);
    j["dq"] = e["dq"];
    j["dt"] = e["dt"];
    out << j.dump() << '\n';
  }
}

}  // namespace relocnet
