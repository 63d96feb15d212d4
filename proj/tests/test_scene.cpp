#include <gtest/gtest.h>

#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

#include "relocnet/scene.hpp"
#include "support/test_support.hpp"

namespace relocnet {
namespace {

using testing::Rng;
using testing::TempDir;
using testing::write_file;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no Error thrown";
  return ErrorCode::IoError;
}

TEST(PoseText, IdentityMatrix) {
  const Pose p = parse_pose_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n");
  EXPECT_EQ(p.rotation, Quat{});
  EXPECT_EQ(p.center, Vec3::Zero());
}

TEST(PoseText, RotationAndTranslation) {
  // Rz(90) written out by hand, t = (1, 2, 3).
  const Pose p = parse_pose_text("0 -1 0 1\n1 0 0 2\n0 0 1 3\n0 0 0 1\n");
  EXPECT_LT(quat_angle(p.rotation, Quat::rz(90)), 1e-6);
  EXPECT_EQ(p.center, Vec3(1, 2, 3));
}

TEST(PoseText, Errors) {
  EXPECT_EQ(code_of([] { parse_pose_text("1 0 0 0 0 1 0 0 0 0 1 0 0 0 0"); }), ErrorCode::MalformedPoseFile);
  EXPECT_EQ(code_of([] { parse_pose_text("1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1 1"); }), ErrorCode::MalformedPoseFile);
  EXPECT_EQ(code_of([] { parse_pose_text("1 0 0 nan 0 1 0 0 0 0 1 0 0 0 0 1"); }), ErrorCode::MalformedPoseFile);
  EXPECT_EQ(code_of([] { parse_pose_text("1 0 0 x 0 1 0 0 0 0 1 0 0 0 0 1"); }), ErrorCode::MalformedPoseFile);
  EXPECT_EQ(code_of([] { parse_pose_text("2 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1"); }), ErrorCode::NonRotationMatrix);
}

TEST(PoseText, FormatRoundTripWithinTolerance) {
  Rng rng(21);
  for (int i = 0; i < 500; ++i) {
    const Pose p = rng.pose();
    const Eigen::Matrix4d m = pose_to_matrix(p);
    const Pose back = parse_pose_text(format_pose_text(p));
    EXPECT_LT((pose_to_matrix(back) - m).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(quat_angle_rad(back.rotation, p.rotation), 1e-9);
  }
}

// Original dataset layout: "sequenceN" split lines, padded matrices, and
// non-pose files next to the pose files.
void write_sequence_scene(const std::filesystem::path& root) {
  write_file(root / "chess/TrainSplit.txt", "sequence1\n");
  write_file(root / "chess/TestSplit.txt", "sequence2\n\n");
  write_file(root / "chess/seq-01/frame-000000.pose.txt", "1.0e+00 0 0 0.5  \n0 1 0 0  \n0 0 1 0  \n0 0 0 1  \n");
  write_file(root / "chess/seq-01/frame-000001.pose.txt", "1 0 0 1\n0 1 0 0\n0 0 1 0\n0 0 0 1\n");
  write_file(root / "chess/seq-01/frame-000001.color.png", "not a pose");
  write_file(root / "chess/seq-02/frame-000000.pose.txt", "0 -1 0 1\n1 0 0 2\n0 0 1 3\n0 0 0 1\n");
}

TEST(LoadScene, SequenceSplitFiles) {
  TempDir dir;
  write_sequence_scene(dir.path());
  const SceneDatabase db = load_scene(dir.path(), "chess");
  ASSERT_EQ(db.size(), 3u);
  const auto train = db.select(Split::Train);
  ASSERT_EQ(train.size(), 2u);
  EXPECT_EQ(train[0]->id, "chess/seq-01/frame-000000");
  EXPECT_EQ(train[0]->pose.center, Vec3(0.5, 0, 0));
  EXPECT_EQ(train[1]->id, "chess/seq-01/frame-000001");
  const ImageRecord& test = db.at("chess/seq-02/frame-000000");
  EXPECT_EQ(test.split, Split::Test);
  EXPECT_EQ(test.scene, "chess");
  EXPECT_EQ(test.pose.center, Vec3(1, 2, 3));
  EXPECT_LT(quat_angle(test.pose.rotation, Quat::rz(90)), 1e-6);
}

TEST(LoadScene, ExplicitFrameSplits) {
  TempDir dir;
  write_file(dir.path() / "s/TrainSplit.txt", "seq-01/frame-000003\r\n");
  write_file(dir.path() / "s/TestSplit.txt", "");
  write_file(dir.path() / "s/seq-01/frame-000003.pose.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n");
  const SceneDatabase db = load_scene(dir.path(), "s");
  ASSERT_EQ(db.size(), 1u);
  EXPECT_EQ(db.records()[0].id, "s/seq-01/frame-000003");
}

TEST(LoadScene, Errors) {
  TempDir dir;
  write_sequence_scene(dir.path());
  EXPECT_EQ(code_of([&] { load_scene(dir.path(), "missing"); }), ErrorCode::MissingSplit);

  std::filesystem::remove(dir.path() / "chess/TestSplit.txt");
  EXPECT_EQ(code_of([&] { load_scene(dir.path(), "chess"); }), ErrorCode::MissingSplit);

  write_file(dir.path() / "chess/TestSplit.txt", "sequence9\n");
  EXPECT_EQ(code_of([&] { load_scene(dir.path(), "chess"); }), ErrorCode::MissingSplit);

  write_file(dir.path() / "chess/TestSplit.txt", "sequence2\n");
  write_file(dir.path() / "chess/seq-02/frame-000000.pose.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n");
  EXPECT_EQ(code_of([&] { load_scene(dir.path(), "chess"); }), ErrorCode::MalformedPoseFile);

  // The same frame in both splits breaks disjointness.
  write_file(dir.path() / "chess/TestSplit.txt", "sequence1\n");
  EXPECT_EQ(code_of([&] { load_scene(dir.path(), "chess"); }), ErrorCode::DuplicateKey);
}

SceneDatabase random_database(Rng& rng, const std::string& scene, int n_train, int n_test, double extent = 2.0) {
  SceneDatabase db;
  for (int i = 0; i < n_train + n_test; ++i) {
    ImageRecord r;
    r.scene = scene;
    r.split = i < n_train ? Split::Train : Split::Test;
    std::ostringstream id;
    id << scene << (i < n_train ? "/seq-01/frame-" : "/seq-02/frame-") << std::setw(6) << std::setfill('0') << i;
    r.id = id.str();
    r.pose = rng.pose(extent);
    db.add(std::move(r));
  }
  return db;
}

TEST(WriteScene, RoundTripReproducesMatrices) {
  Rng rng(22);
  const SceneDatabase db = random_database(rng, "office", 20, 7);
  TempDir dir;
  write_scene(dir.path(), db, "office");
  EXPECT_EQ(discover_scenes(dir.path()), std::vector<std::string>{"office"});
  const SceneDatabase back = load_dataset(dir.path(), {});
  ASSERT_EQ(back.size(), db.size());
  for (const auto& r : db.records()) {
    const ImageRecord& b = back.at(r.id);
    EXPECT_EQ(b.split, r.split);
    EXPECT_LT((pose_to_matrix(b.pose) - pose_to_matrix(r.pose)).cwiseAbs().maxCoeff(), 1e-6) << r.id;
  }
}

TEST(SceneDatabase, IndexAndSelect) {
  Rng rng(23);
  SceneDatabase db = random_database(rng, "b", 3, 1);
  db.merge(random_database(rng, "a", 2, 2));
  EXPECT_EQ(db.scenes(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(db.select(Split::Train).size(), 5u);
  EXPECT_EQ(db.select(Split::Test, "a").size(), 2u);
  EXPECT_EQ(db.find("nope"), nullptr);
  EXPECT_EQ(code_of([&] { db.at("nope"); }), ErrorCode::UnknownId);
  EXPECT_EQ(code_of([&] { db.add(db.records()[0]); }), ErrorCode::DuplicateKey);
}

TEST(RigidTransform, IdentityAndTranslation) {
  Rng rng(24);
  const SceneDatabase db = random_database(rng, "s", 10, 0);
  const SceneDatabase same = apply_rigid_transform(db, Quat{}, Vec3::Zero());
  const SceneDatabase shifted = apply_rigid_transform(db, Quat{}, Vec3(0, 0, 1));
  for (std::size_t i = 0; i < db.size(); ++i) {
    // Composition renormalizes, so "unchanged" means equal to the last ulp or so.
    EXPECT_LT((same.records()[i].pose.rotation.coeffs() - db.records()[i].pose.rotation.coeffs()).norm(), 1e-15);
    EXPECT_EQ(same.records()[i].pose.center, db.records()[i].pose.center);
    EXPECT_LT((shifted.records()[i].pose.rotation.coeffs() - db.records()[i].pose.rotation.coeffs()).norm(), 1e-15);
    EXPECT_LT((shifted.records()[i].pose.center - db.records()[i].pose.center - Vec3(0, 0, 1)).norm(), 1e-15);
  }
}

TEST(RigidTransform, RelativePosesInvariant) {
  Rng rng(25);
  for (int trial = 0; trial < 50; ++trial) {
    const SceneDatabase db = random_database(rng, "s", 8, 0);
    const Quat g = rng.rotation();
    const Vec3 t = rng.point(10);
    const SceneDatabase moved = apply_rigid_transform(db, g, t);
    for (std::size_t i = 0; i < db.size(); ++i) {
      for (std::size_t j = 0; j < db.size(); ++j) {
        if (i == j) continue;
        const auto a = relative_pose(db.records()[i].pose, db.records()[j].pose);
        const auto b = relative_pose(moved.records()[i].pose, moved.records()[j].pose);
        EXPECT_LT(rad2deg(quat_angle_rad(a.dq, b.dq)), 1e-9);
        EXPECT_LT(vec_angle(a.dt_dir, b.dt_dir), 1e-9);
      }
    }
  }
}

TEST(GeneratePairs, TwoImagesPairWithEachOther) {
  SceneDatabase db;
  db.add(ImageRecord{"s/seq-01/frame-000000", "s", Pose{Quat{}, Vec3(0, 0, 0)}, Split::Train});
  db.add(ImageRecord{"s/seq-01/frame-000001", "s", Pose{Quat::rz(10), Vec3(0.2, 0, 0)}, Split::Train});
  const auto pairs = generate_pairs(db, PairThresholds{}, 1);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].id_a, "s/seq-01/frame-000000");
  EXPECT_EQ(pairs[0].id_b, "s/seq-01/frame-000001");
  EXPECT_EQ(pairs[1].id_b, "s/seq-01/frame-000000");
  EXPECT_EQ(pairs[0].gt_relative, relative_pose(db.records()[0].pose, db.records()[1].pose));
}

TEST(GeneratePairs, FallbackIsNearestByBruteForce) {
  Rng rng(26);
  int fallbacks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    // Cameras spread over 20 m: most images have no in-threshold partner.
    const SceneDatabase db = random_database(rng, "s", 15, 3, 10.0);
    const auto pairs = generate_pairs(db, PairThresholds{0.5, 40.0}, 7);
    const auto train = db.select(Split::Train);
    ASSERT_EQ(pairs.size(), train.size());
    for (const auto& p : pairs) {
      const Pose& a = db.at(p.id_a).pose;
      const Pose& partner = db.at(p.id_b).pose;
      EXPECT_NE(p.id_a, p.id_b);
      EXPECT_EQ(db.at(p.id_b).split, Split::Train);
      bool any_candidate = false;
      double best = std::numeric_limits<double>::infinity();
      std::string best_id;
      for (const ImageRecord* b : train) {
        if (b->id == p.id_a) continue;
        const double dist = (a.center - b->pose.center).norm();
        any_candidate |= dist <= 0.5 && testing::matrix_angle_deg(quat_to_matrix(a.rotation),
                                                                  quat_to_matrix(b->pose.rotation)) <= 40.0;
        const Eigen::Vector4d qa = a.rotation.coeffs(), qb = b->pose.rotation.coeffs();
        const double m = dist + std::min((qa - qb).norm(), (qa + qb).norm());
        if (m < best) {
          best = m;
          best_id = b->id;
        }
      }
      if (any_candidate) {
        EXPECT_LE((a.center - partner.center).norm(), 0.5);
        EXPECT_LE(quat_angle(a.rotation, partner.rotation), 40.0);
      } else {
        ++fallbacks;
        EXPECT_EQ(p.id_b, best_id);
      }
      EXPECT_EQ(p.gt_relative, relative_pose(a, partner));
    }
  }
  EXPECT_GT(fallbacks, 100);
}

TEST(GeneratePairs, SeedDeterminismAndCount) {
  Rng rng(27);
  // Nearby cameras with similar headings, so most images have several candidates.
  SceneDatabase db;
  for (const auto& [scene, n] : {std::pair{"a", 40}, std::pair{"b", 25}}) {
    const SceneDatabase part = random_database(rng, scene, n, 5, 0.6);
    for (const ImageRecord& r : part.records()) {
      ImageRecord c = r;
      c.pose.rotation = Quat::rz(rng.uniform(-20, 20));
      db.add(std::move(c));
    }
  }
  const auto p1 = generate_pairs(db, PairThresholds{}, 99);
  const auto p2 = generate_pairs(db, PairThresholds{}, 99);
  EXPECT_TRUE(p1 == p2);
  EXPECT_EQ(p1.size(), 65u);
  std::ostringstream s1, s2;
  write_pairs(s1, p1);
  write_pairs(s2, p2);
  EXPECT_EQ(s1.str(), s2.str());
  for (const auto& p : p1) {
    EXPECT_EQ(db.at(p.id_a).scene, db.at(p.id_b).scene);
  }
  EXPECT_FALSE(p1 == generate_pairs(db, PairThresholds{}, 100));
}

TEST(GeneratePairs, Errors) {
  SceneDatabase single;
  single.add(ImageRecord{"s/seq-01/frame-000000", "s", Pose{}, Split::Train});
  EXPECT_EQ(code_of([&] { generate_pairs(single, PairThresholds{}, 0); }), ErrorCode::SingletonScene);
  SceneDatabase test_only;
  test_only.add(ImageRecord{"s/seq-02/frame-000000", "s", Pose{}, Split::Test});
  EXPECT_EQ(code_of([&] { generate_pairs(test_only, PairThresholds{}, 0); }), ErrorCode::SingletonScene);
  SceneDatabase stacked;
  stacked.add(ImageRecord{"s/seq-01/frame-000000", "s", Pose{}, Split::Train});
  stacked.add(ImageRecord{"s/seq-01/frame-000001", "s", Pose{Quat::rz(5), Vec3::Zero()}, Split::Train});
  EXPECT_EQ(code_of([&] { generate_pairs(stacked, PairThresholds{}, 0); }), ErrorCode::CoincidentCenters);
}

}  // namespace
}  // namespace relocnet
