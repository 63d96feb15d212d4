#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <map>

#include "relocnet/eval.hpp"
#include "relocnet/fusion.hpp"
#include "support/test_support.hpp"

namespace relocnet {
namespace {

using testing::InlierTableOracle;
using testing::Rng;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no Error thrown";
  return ErrorCode::IoError;
}

NeighborObservation observe(const std::string& id, const Pose& db, const Vec3& world_dir) {
  // Estimate expressed in the db camera frame, as a regressor would emit it.
  return NeighborObservation::make(id, db, RelativePoseEstimate{Quat{}, quat_rotate(db.rotation.conj(), world_dir)});
}

std::vector<NeighborObservation> unit_axes_scene() {
  const std::vector<Vec3> centers{Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(0, -1, 0), Vec3(0, 0, 1)};
  std::vector<NeighborObservation> obs;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    obs.push_back(observe("c" + std::to_string(i), Pose{Quat::rx(17.0 * i), centers[i]}, -centers[i]));
  }
  return obs;
}

/// Checks every surviving hypothesis against the oracle table row for its pair.
void expect_matches_oracle(const std::vector<NeighborObservation>& obs, const TranslationDiagnostics& diag,
                           double thresh) {
  std::vector<Vec3> centers, dirs;
  for (const auto& o : obs) {
    centers.push_back(o.db_pose.center);
    dirs.push_back(o.world_dir);
  }
  const InlierTableOracle oracle(centers, dirs, thresh);
  std::map<std::pair<std::size_t, std::size_t>, const TranslationHypothesis*> by_pair;
  for (const auto& h : diag.hypotheses) {
    by_pair[{h.first, h.second}] = &h;
  }
  std::size_t valid = 0;
  for (const auto& row : oracle.rows) {
    auto it = by_pair.find({row.k, row.m});
    ASSERT_EQ(row.valid, it != by_pair.end()) << "pair " << row.k << "," << row.m;
    if (!row.valid) continue;
    ++valid;
    EXPECT_LT((it->second->point - row.point).norm(), 1e-9);
    std::vector<std::string> expected;
    for (std::size_t r = 0; r < obs.size(); ++r) {
      if (row.inlier[r]) expected.push_back(obs[r].db_id);
    }
    EXPECT_EQ(it->second->inliers, expected) << "pair " << row.k << "," << row.m;
  }
  EXPECT_EQ(valid, diag.hypotheses.size());
  EXPECT_EQ(diag.best_inliers, oracle.best());
}

TEST(FuseTranslation, UnitAxesExact) {
  const auto obs = unit_axes_scene();
  const auto [point, diag] = fuse_translation(obs, FusionConfig{});
  EXPECT_LT(point.norm(), 1e-9);
  EXPECT_EQ(diag.best_inliers, 3);
  EXPECT_EQ(diag.pairs_total, 10u);
  EXPECT_EQ(diag.pairs_discarded, 2u);  // the two antipodal pairs are parallel
  expect_matches_oracle(obs, diag, 20.0);
}

TEST(FuseTranslation, UnitAxesOneNegatedDirection) {
  auto obs = unit_axes_scene();
  obs[4] = observe("c4", obs[4].db_pose, obs[4].db_pose.center);  // points away from the query
  const auto [point, diag] = fuse_translation(obs, FusionConfig{});
  EXPECT_LT(point.norm(), 1e-9);
  expect_matches_oracle(obs, diag, 20.0);
  std::vector<Vec3> centers, dirs;
  for (const auto& o : obs) {
    centers.push_back(o.db_pose.center);
    dirs.push_back(o.world_dir);
  }
  const InlierTableOracle oracle(centers, dirs, 20.0);
  EXPECT_LT((oracle.winner() - point).norm(), 1e-9);
}

TEST(FuseTranslation, TwoObservations) {
  const std::vector<NeighborObservation> obs{observe("a", Pose{Quat{}, Vec3(0, 0, 0)}, Vec3(1, 1, 0)),
                                             observe("b", Pose{Quat::rz(40), Vec3(2, 0, 0)}, Vec3(-1, 1, 0))};
  const auto [point, diag] = fuse_translation(obs, FusionConfig{});
  EXPECT_LT((point - Vec3(1, 1, 0)).norm(), 1e-12);
  ASSERT_EQ(diag.hypotheses.size(), 1u);
  EXPECT_EQ(diag.best_inliers, 0);
  EXPECT_FALSE(diag.tie);
}

TEST(FuseTranslation, Errors) {
  EXPECT_EQ(code_of([] { fuse_translation({observe("a", Pose{}, Vec3(1, 0, 0))}, FusionConfig{}); }),
            ErrorCode::TooFewNeighbors);
  // Rays meeting behind both cameras.
  const std::vector<NeighborObservation> behind{observe("a", Pose{Quat{}, Vec3(0, 0, 0)}, Vec3(-1, -1, 0)),
                                                observe("b", Pose{Quat{}, Vec3(2, 0, 0)}, Vec3(1, -1, 0))};
  EXPECT_EQ(code_of([&] { fuse_translation(behind, FusionConfig{}); }), ErrorCode::NoValidHypothesis);
}

TEST(FuseTranslation, InlierCountsMatchOracleOnRandomInstances) {
  Rng rng(51);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto scene = testing::random_scene(rng, rng.integer(2, 8));
    const NoiseConfig noise{0.0, rng.uniform(0.0, 25.0), rng.uniform(0.0, 0.4), static_cast<std::uint64_t>(trial)};
    std::vector<NeighborObservation> obs;
    for (const auto& r : scene.db) {
      const auto est = synth_predict(relative_pose(r.pose, scene.query), noise, "q", r.id);
      obs.push_back(NeighborObservation::make(r.id, r.pose, est));
    }
    const double thresh = rng.uniform(5.0, 30.0);
    try {
      const auto [point, diag] = fuse_translation(obs, FusionConfig{5, thresh});
      expect_matches_oracle(obs, diag, thresh);
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::NoValidHypothesis);
      std::vector<Vec3> centers, dirs;
      for (const auto& o : obs) {
        centers.push_back(o.db_pose.center);
        dirs.push_back(o.world_dir);
      }
      EXPECT_EQ(InlierTableOracle(centers, dirs, thresh).best(), -1);
    }
  }
}

TEST(RotationHypotheses, Examples) {
  const auto h = rotation_hypotheses({NeighborObservation::make("a", Pose{}, RelativePoseEstimate{Quat::rz(90), Vec3::UnitX()})});
  ASSERT_EQ(h.size(), 1u);
  EXPECT_LT(quat_angle(h[0].quat, Quat::rz(90)), 1e-9);
  EXPECT_TRUE(rotation_hypotheses({}).empty());

  Rng rng(52);
  for (int i = 0; i < 1000; ++i) {
    const Pose db = rng.pose(), q = rng.pose();
    const auto hyp = rotation_hypotheses({NeighborObservation::make("d", db, relative_pose(db, q))});
    EXPECT_LT(rad2deg(quat_angle_rad(hyp[0].quat, q.rotation)), 1e-9);
  }
}

std::vector<RotationHypothesis> hyps_from(const std::vector<Quat>& qs) {
  std::vector<RotationHypothesis> out;
  for (std::size_t i = 0; i < qs.size(); ++i) out.push_back(RotationHypothesis{i, qs[i], 0});
  return out;
}

TEST(FuseRotation, Examples) {
  {
    const auto [q, diag] = fuse_rotation(
        hyps_from({Quat::rz(10), Quat::rz(10), Quat::rz(80), Quat::rz(10), Quat::rz(10)}), FusionConfig{});
    EXPECT_LT(quat_angle(q, Quat::rz(10)), 1e-9);
    EXPECT_EQ(diag.best_inliers, 3);
    EXPECT_EQ(diag.averaged, 4u);  // the four Rz(10) tie with each other
    EXPECT_EQ(diag.hypotheses[2].inlier_count, 0);
  }
  {
    const Quat r = Quat::normalized(0.5, -0.2, 0.4, 0.1);
    const auto [q, diag] = fuse_rotation(hyps_from({r, r, r, r}), FusionConfig{});
    EXPECT_LT(quat_angle_rad(q, r), 1e-12);
    EXPECT_EQ(diag.best_inliers, 3);
  }
  {
    const auto [q, diag] = fuse_rotation(hyps_from({Quat::rz(0), Quat::rz(90)}), FusionConfig{});
    EXPECT_EQ(diag.best_inliers, 0);
    EXPECT_TRUE(diag.tie);
    EXPECT_EQ(diag.averaged, 2u);
    EXPECT_LT(quat_angle(q, Quat::rz(45)), 1e-6);
  }
  {
    const auto [q, diag] = fuse_rotation(hyps_from({Quat::rx(33)}), FusionConfig{});
    EXPECT_EQ(q, Quat::rx(33));
    EXPECT_EQ(diag.best_inliers, 0);
  }
  EXPECT_EQ(code_of([] { fuse_rotation({}, FusionConfig{}); }), ErrorCode::EmptyInput);
}

TEST(FuseRotation, TieUsesUnionOfConsensusSets) {
  // Rz(0) and Rz(30) each have one partner within 20 degrees: Rz(-15) and
  // Rz(45). The max count 1 is shared by all four, so all four are averaged.
  const auto [q, diag] =
      fuse_rotation(hyps_from({Quat::rz(-15), Quat::rz(0), Quat::rz(30), Quat::rz(45)}), FusionConfig{});
  EXPECT_TRUE(diag.tie);
  EXPECT_EQ(diag.best_inliers, 1);
  EXPECT_EQ(diag.averaged, 4u);
  const double oracle = testing::scan_minimize(
      [](double t) {
        double s = 0;
        for (double a : {-15.0, 0.0, 30.0, 45.0}) s += testing::wrapped_diff_deg(t, a);
        return s;
      },
      -180, 180);
  // Even count on a line: any point between 0 and 30 is optimal.
  EXPECT_GE(rad2deg(2.0 * std::atan2(q.z(), q.w())), -1e-6);
  EXPECT_LE(rad2deg(2.0 * std::atan2(q.z(), q.w())), 30.0 + 1e-6);
  EXPECT_GE(oracle, -1e-6);
  EXPECT_LE(oracle, 30.0 + 1e-6);
}

TEST(FuseRotation, CountsMatchPairwiseTable) {
  Rng rng(53);
  for (int trial = 0; trial < 500; ++trial) {
    const Quat center = rng.rotation();
    std::vector<Quat> qs;
    const int n = rng.integer(1, 9);
    for (int i = 0; i < n; ++i) {
      qs.push_back(quat_mul(center, Quat::exp(rng.normal(0.4) * rng.unit_vector())));
    }
    const auto [q, diag] = fuse_rotation(hyps_from(qs), FusionConfig{});
    int best = 0;
    for (int i = 0; i < n; ++i) {
      int c = 0;
      for (int j = 0; j < n; ++j) {
        if (j != i && testing::matrix_angle_deg(quat_to_matrix(qs[i]), quat_to_matrix(qs[j])) <= 20.0) ++c;
      }
      EXPECT_EQ(diag.hypotheses[i].inlier_count, c);
      best = std::max(best, c);
    }
    EXPECT_EQ(diag.best_inliers, best);
    EXPECT_NEAR(q.coeffs().norm(), 1.0, 1e-9);
  }
}

std::vector<Neighbor> noisy_neighbors(const testing::RandomScene& s, const NoiseConfig& noise, const std::string& qid) {
  std::vector<Neighbor> out;
  for (const auto& r : s.db) {
    out.push_back(Neighbor{&r, synth_predict(relative_pose(r.pose, s.query), noise, qid, r.id)});
  }
  return out;
}

TEST(Localize, ExactRecovery) {
  Rng rng(54);
  for (int trial = 0; trial < 500; ++trial) {
    const auto scene = testing::random_scene(rng, rng.integer(2, 8));
    const auto res = localize("q", testing::exact_neighbors(scene), FusionConfig{});
    EXPECT_LT((res.pose.center - scene.query.center).norm(), 1e-6);
    EXPECT_LT(quat_angle(res.pose.rotation, scene.query.rotation), 1e-4);
    EXPECT_EQ(res.translation_inliers, static_cast<int>(scene.db.size()) - 2);
    EXPECT_EQ(res.rotation_inliers, static_cast<int>(scene.db.size()) - 1);
  }
}

TEST(Localize, Errors) {
  Rng rng(55);
  const auto scene = testing::random_scene(rng, 1);
  EXPECT_EQ(code_of([&] { localize("q", testing::exact_neighbors(scene), FusionConfig{}); }), ErrorCode::TooFewNeighbors);

  testing::RandomScene line;
  line.query = Pose{Quat{}, Vec3(0, 0, 0)};
  for (int i = 0; i < 5; ++i) {
    line.db.push_back(ImageRecord{"l" + std::to_string(i), "s", Pose{rng.rotation(), Vec3(1.0 + i, 0, 0)}, Split::Train});
  }
  EXPECT_EQ(code_of([&] { localize("q", testing::exact_neighbors(line), FusionConfig{}); }), ErrorCode::NoValidHypothesis);
}

TEST(Localize, NeighborOrderInvariance) {
  Rng rng(56);
  for (int trial = 0; trial < 200; ++trial) {
    const auto scene = testing::random_scene(rng, 5);
    auto nbs = noisy_neighbors(scene, NoiseConfig{10, 10, 0.3, 9}, "q" + std::to_string(trial));
    LocalizationResult a, b;
    try {
      a = localize("q", nbs, FusionConfig{});
    } catch (const Error&) {
      continue;
    }
    std::shuffle(nbs.begin(), nbs.end(), rng.engine());
    b = localize("q", nbs, FusionConfig{});
    EXPECT_EQ(a.pose, b.pose);
    EXPECT_EQ(a.translation_inliers, b.translation_inliers);
    EXPECT_EQ(a.rotation_inliers, b.rotation_inliers);
    EXPECT_EQ(a.tie_translation, b.tie_translation);
    EXPECT_EQ(a.tie_rotation, b.tie_rotation);
    EXPECT_EQ(a.translation_gap, b.translation_gap);
  }
}

TEST(Localize, RigidEquivariance) {
  Rng rng(57);
  for (int trial = 0; trial < 200; ++trial) {
    const auto scene = testing::random_scene(rng, 5);
    const auto nbs = noisy_neighbors(scene, NoiseConfig{5, 5, 0.2, 3}, "q" + std::to_string(trial));
    const Quat g = rng.rotation();
    const Vec3 t = rng.point(10);
    std::vector<ImageRecord> moved_db = scene.db;
    for (auto& r : moved_db) r.pose = transform_pose(g, t, r.pose);
    std::vector<Neighbor> moved;
    for (std::size_t i = 0; i < nbs.size(); ++i) moved.push_back(Neighbor{&moved_db[i], nbs[i].estimate});
    LocalizationResult a;
    try {
      a = localize("q", nbs, FusionConfig{});
    } catch (const Error&) {
      EXPECT_THROW(localize("q", moved, FusionConfig{}), Error);
      continue;
    }
    const auto b = localize("q", moved, FusionConfig{});
    const Pose expected = transform_pose(g, t, a.pose);
    EXPECT_LT((b.pose.center - expected.center).norm(), 1e-6);
    EXPECT_LT(quat_angle(b.pose.rotation, expected.rotation), 1e-4);
    EXPECT_EQ(a.translation_inliers, b.translation_inliers);
    EXPECT_EQ(a.rotation_inliers, b.rotation_inliers);
  }
}

TEST(Localize, ErrorGrowsWithDirectionNoise) {
  std::vector<double> medians;
  for (double sigma : {2.0, 5.0, 10.0}) {
    Rng rng(58);  // same scenes for every sigma
    std::vector<double> errors;
    for (int trial = 0; trial < 200; ++trial) {
      const auto scene = testing::random_scene(rng, 5);
      const auto nbs = noisy_neighbors(scene, NoiseConfig{0, sigma, 0, 21}, "q" + std::to_string(trial));
      try {
        errors.push_back((localize("q", nbs, FusionConfig{}).pose.center - scene.query.center).norm());
      } catch (const Error&) {
      }
    }
    ASSERT_GT(errors.size(), 190u);
    medians.push_back(median(errors));
  }
  EXPECT_LE(medians[0], medians[1]);
  EXPECT_LE(medians[1], medians[2]);
}

}  // namespace
}  // namespace relocnet
