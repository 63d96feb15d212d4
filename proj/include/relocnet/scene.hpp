#pragma once

// Scene data model and 7-Scenes style dataset I/O.
//
// Layout on disk:
//   <root>/<scene>/TrainSplit.txt, TestSplit.txt
//   <root>/<scene>/seq-NN/frame-XXXXXX.pose.txt
// Split files list either "sequenceN" (every frame of seq-0N) or explicit
// frame ids "seq-NN/frame-XXXXXX", one per line. Pose files hold 16 reals,
// the row-major camera-to-world 4x4 matrix.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "relocnet/error.hpp"
#include "relocnet/geom.hpp"
#include "relocnet/pose.hpp"
#include "relocnet/relpose.hpp"

namespace relocnet {

enum class Split { Train, Test };

inline std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct ImageRecord {
  std::string id;  ///< "<scene>/<seq>/<frame>"
  std::string scene;
  Pose pose;
  Split split = Split::Train;
};

/// Indexed, immutable-after-build collection of image records.
class SceneDatabase {
 public:
  SceneDatabase() = default;

  explicit SceneDatabase(std::vector<ImageRecord> records) {
    for (auto& r : records) {
      add(std::move(r));
    }
  }

  /// Throws DuplicateKey on a repeated id.
  void add(ImageRecord record) {
    if (index_.contains(record.id)) {
      throw Error(ErrorCode::DuplicateKey, "image id " + record.id);
    }
    index_.emplace(record.id, records_.size());
    records_.push_back(std::move(record));
  }

  /// Appends every record of `other`.
  void merge(const SceneDatabase& other) {
    for (const auto& r : other.records()) {
      add(r);
    }
  }

  const std::vector<ImageRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const ImageRecord* find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  const ImageRecord& at(const std::string& id) const {
    const ImageRecord* r = find(id);
    if (r == nullptr) {
      throw Error(ErrorCode::UnknownId, id);
    }
    return *r;
  }

  /// Sorted, de-duplicated scene labels.
  std::vector<std::string> scenes() const {
    std::vector<std::string> out;
    for (const auto& r : records_) {
      out.push_back(r.scene);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Records of one split (optionally one scene), sorted by id.
  std::vector<const ImageRecord*> select(Split split, const std::string& scene = {}) const {
    std::vector<const ImageRecord*> out;
    for (const auto& r : records_) {
      if (r.split == split && (scene.empty() || r.scene == scene)) {
        out.push_back(&r);
      }
    }
    std::sort(out.begin(), out.end(), [](const ImageRecord* a, const ImageRecord* b) { return a->id < b->id; });
    return out;
  }

 private:
  std::vector<ImageRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Pose files

/// Parses the 16-token camera-to-world matrix text.
inline Pose parse_pose_text(const std::string& text, const std::string& origin = "<memory>") {
  std::istringstream in(text);
  std::vector<double> values;
  std::string token;
  while (in >> token) {
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(token, &used);
      if (used != token.size()) {
        throw std::invalid_argument(token);
      }
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedPoseFile, origin + ": bad token '" + token + "'");
    }
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::MalformedPoseFile, origin + ": non-finite value");
    }
    values.push_back(v);
  }
  if (values.size() != 16) {
    throw Error(ErrorCode::MalformedPoseFile,
                origin + ": expected 16 values, found " + std::to_string(values.size()));
  }
  Mat3 rot;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      rot(r, c) = values[r * 4 + c];
    }
  }
  Pose p;
  try {
    p.rotation = quat_from_matrix(rot);
  } catch (const Error& e) {
    throw Error(ErrorCode::NonRotationMatrix, origin + ": " + e.what());
  }
  p.center = Vec3(values[3], values[7], values[11]);
  return p;
}

inline Pose read_pose_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::MalformedPoseFile, "cannot open " + path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_pose_text(buf.str(), path.string());
}

/// Row-major 4x4 text, tab separated, 17 significant digits.
inline std::string format_pose_text(const Pose& p) {
  const Eigen::Matrix4d m = pose_to_matrix(p);
  std::ostringstream out;
  out << std::setprecision(17);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      out << m(r, c) << (c == 3 ? '\n' : '\t');
    }
  }
  return out.str();
}

inline void write_pose_file(const std::filesystem::path& path, const Pose& p) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }
  out << format_pose_text(p);
}

// ---------------------------------------------------------------------------
// Scene loading

struct SplitSpec {
  std::string train_file = "TrainSplit.txt";
  std::string test_file = "TestSplit.txt";
};

namespace detail {

inline std::string sequence_dir_name(int n) {
  std::ostringstream s;
  s << "seq-" << std::setw(2) << std::setfill('0') << n;
  return s.str();
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline constexpr std::string_view kPoseSuffix = ".pose.txt";

/// Frame ids ("seq-NN/frame-XXXXXX") in a split file, sorted.
inline std::vector<std::string> read_split(const std::filesystem::path& scene_dir, const std::string& file) {
  namespace fs = std::filesystem;
  const fs::path split_path = scene_dir / file;
  std::ifstream in(split_path);
  if (!in) {
    throw Error(ErrorCode::MissingSplit, split_path.string());
  }
  std::vector<std::string> frames;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    if (line.rfind("sequence", 0) == 0) {
      int n = 0;
      try {
        n = std::stoi(line.substr(8));
      } catch (const std::exception&) {
        throw Error(ErrorCode::MissingSplit, split_path.string() + ": bad entry '" + line + "'");
      }
      const std::string seq = sequence_dir_name(n);
      const fs::path seq_dir = scene_dir / seq;
      if (!fs::is_directory(seq_dir)) {
        throw Error(ErrorCode::MissingSplit, seq_dir.string() + " listed in " + file + " does not exist");
      }
      for (const auto& entry : fs::directory_iterator(seq_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > kPoseSuffix.size() && name.ends_with(kPoseSuffix)) {
          frames.push_back(seq + "/" + name.substr(0, name.size() - kPoseSuffix.size()));
        }
      }
    } else {
      frames.push_back(line);
    }
  }
  std::sort(frames.begin(), frames.end());
  return frames;
}

}  // namespace detail

inline SceneDatabase load_scene(const std::filesystem::path& root, const std::string& scene_name,
                                const SplitSpec& splits = {}) {
  namespace fs = std::filesystem;
  const fs::path scene_dir = root / scene_name;
  if (!fs::is_directory(scene_dir)) {
    throw Error(ErrorCode::MissingSplit, "scene directory " + scene_dir.string() + " not found");
  }
  const auto train = detail::read_split(scene_dir, splits.train_file);
  const auto test = detail::read_split(scene_dir, splits.test_file);

  SceneDatabase db;
  auto add_all = [&](const std::vector<std::string>& frames, Split split) {
    for (const auto& frame : frames) {
      ImageRecord r;
      r.id = scene_name + "/" + frame;
      r.scene = scene_name;
      r.split = split;
      r.pose = read_pose_file(scene_dir / (frame + std::string(detail::kPoseSuffix)));
      db.add(std::move(r));  // throws DuplicateKey if a frame is in both splits
    }
  };
  add_all(train, Split::Train);
  add_all(test, Split::Test);
  return db;
}

/// Scene directories under `root` that carry a train split file.
inline std::vector<std::string> discover_scenes(const std::filesystem::path& root, const SplitSpec& splits = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw Error(ErrorCode::MissingSplit, "dataset root " + root.string() + " not found");
  }
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / splits.train_file)) {
      out.push_back(entry.path().filename().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Loads the named scenes (all discovered scenes when `scenes` is empty).
inline SceneDatabase load_dataset(const std::filesystem::path& root, std::vector<std::string> scenes,
                                  const SplitSpec& splits = {}) {
  if (scenes.empty()) {
    scenes = discover_scenes(root, splits);
    if (scenes.empty()) {
      throw Error(ErrorCode::MissingSplit, "no scene with " + splits.train_file + " under " + root.string());
    }
  }
  SceneDatabase db;
  for (const auto& s : scenes) {
    db.merge(load_scene(root, s, splits));
  }
  return db;
}

/// Writes one scene of `db` in the on-disk layout above, with explicit frame
/// ids in the split files. Record ids must be "<scene>/<seq>/<frame>".
inline void write_scene(const std::filesystem::path& root, const SceneDatabase& db, const std::string& scene) {
  namespace fs = std::filesystem;
  const fs::path scene_dir = root / scene;
  fs::create_directories(scene_dir);
  std::ofstream train(scene_dir / "TrainSplit.txt");
  std::ofstream test(scene_dir / "TestSplit.txt");
  if (!train || !test) {
    throw Error(ErrorCode::IoError, "cannot write split files in " + scene_dir.string());
  }
  const std::string prefix = scene + "/";
  for (Split split : {Split::Train, Split::Test}) {
    for (const ImageRecord* r : db.select(split, scene)) {
      if (r->id.rfind(prefix, 0) != 0) {
        throw Error(ErrorCode::InvalidConfig, "record id " + r->id + " does not start with " + prefix);
      }
      const std::string frame = r->id.substr(prefix.size());
      fs::create_directories((scene_dir / frame).parent_path());
      write_pose_file(scene_dir / (frame + std::string(detail::kPoseSuffix)), r->pose);
      (split == Split::Train ? train : test) << frame << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Rigid transforms and training pairs

inline SceneDatabase apply_rigid_transform(const SceneDatabase& db, const Quat& g_rot, const Vec3& g_t) {
  SceneDatabase out;
  for (ImageRecord r : db.records()) {
    r.pose = transform_pose(g_rot, g_t, r.pose);
    out.add(std::move(r));
  }
  return out;
}

struct TrainingPair {
  std::string id_a;
  std::string id_b;
  RelativePoseEstimate gt_relative;  ///< relative_pose(pose_a, pose_b)

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

struct PairThresholds {
  double max_dist_m = 0.5;
  double max_angle_deg = 40.0;
};

/// One training pair per train image: a partner drawn uniformly (seeded) from
/// the same scene's train images within both thresholds, or the nearest image
/// under pose_metric (beta = 1) when none qualifies.
inline std::vector<TrainingPair> generate_pairs(const SceneDatabase& db, const PairThresholds& thresholds,
                                                std::uint64_t seed) {
  std::vector<TrainingPair> pairs;
  std::mt19937_64 rng(detail::splitmix64(seed));
  for (const auto& scene : db.scenes()) {
    const auto train = db.select(Split::Train, scene);
    if (train.empty()) {
      continue;
    }
    if (train.size() < 2) {
      throw Error(ErrorCode::SingletonScene, "scene " + scene + " has fewer than 2 train images");
    }
    for (const ImageRecord* a : train) {
      std::vector<const ImageRecord*> candidates;
      const ImageRecord* nearest = nullptr;
      double nearest_metric = 0.0;
      for (const ImageRecord* b : train) {
        if (b == a) {
          continue;
        }
        const double dist = (a->pose.center - b->pose.center).norm();
        if (dist < kCoincidentCenterEps) {
          continue;
        }
        if (dist <= thresholds.max_dist_m && quat_angle(a->pose.rotation, b->pose.rotation) <= thresholds.max_angle_deg) {
          candidates.push_back(b);
        }
        const double m = pose_metric(a->pose, b->pose, 1.0);
        if (nearest == nullptr || m < nearest_metric) {  // train is id-sorted: first wins ties
          nearest = b;
          nearest_metric = m;
        }
      }
      const ImageRecord* partner = nearest;
      if (!candidates.empty()) {
        const auto k = static_cast<std::size_t>(detail::uniform01(rng) * static_cast<double>(candidates.size()));
        partner = candidates[std::min(k, candidates.size() - 1)];
      }
      if (partner == nullptr) {
        throw Error(ErrorCode::CoincidentCenters, "every other train image of " + scene + " shares the center of " + a->id);
      }
      pairs.push_back(TrainingPair{a->id, partner->id, relative_pose(a->pose, partner->pose)});
    }
  }
  if (pairs.empty()) {
    throw Error(ErrorCode::SingletonScene, "train split is empty");
  }
  return pairs;
}

/// JSON lines {"a", "b", "dq": [w,x,y,z], "dt": [x,y,z]}.
inline void write_pairs(std::ostream& out, const std::vector<TrainingPair>& pairs) {
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["a"] = p.id_a;
    j["b"] = p.id_b;
    const auto e = estimate_to_json(p.gt_relative);
    j["dq"] = e["dq"];
    j["dt"] = e["dt"];
    out << j.dump() << '\n';
  }
}

}  // namespace relocnet
