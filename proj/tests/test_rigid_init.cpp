#include "defmark/error.hpp"
#include "defmark/rigid_init.hpp"
#include "defmark/synthetic.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace defmark;
using namespace testsupport;

namespace {

PointCloud foot_sample(std::size_t n, std::uint64_t seed) {
  const PointCloud all = make_synthetic_foot(20, 40).mesh.vertices;
  Rng rng(seed);
  PointCloud out;
  for (std::size_t i : sample_without_replacement(rng, all.size(), n)) out.push_back(all[i]);
  return out;
}

double mean_closest_distance(const PointCloud& from, const PointCloud& to) {
  double s = 0.0;
  for (const auto& p : from) s += brute_knn(to, p, 1)[0].second;
  return s / static_cast<double>(from.size());
}

}  // namespace

TEST_CASE("identical clouds give the identity") {
  const PointCloud cloud = foot_sample(400, 1);
  const double diag = bbox_diag_oracle(cloud);
  const CpdResult r = rigid_cpd(cloud, cloud);
  CHECK(rotation_distance(r.transform.rotation, Mat3::Identity()) <= 1e-6);
  CHECK(r.transform.translation.norm() <= 1e-6 * diag);
  CHECK(r.converged);
  CHECK(orthonormal_proper(r.transform.rotation, 1e-9));
}

TEST_CASE("noiseless rigid motions are recovered") {
  Rng rng(17);
  const PointCloud cloud = foot_sample(400, 2);
  const double diag = bbox_diag_oracle(cloud);
  for (int trial = 0; trial < 5; ++trial) {
    const RigidTransform motion = random_rigid_motion(rng, 30.0 * std::numbers::pi / 180.0, 0.2 * diag);
    const CpdResult r = rigid_cpd(cloud, apply_rigid(cloud, motion));
    CHECK(rotation_distance(r.transform.rotation, motion.rotation) < 1e-3);
    CHECK((r.transform.translation - motion.translation).norm() < 1e-3 * diag);
    CHECK(r.iterations_run <= 100);
  }
}

TEST_CASE("ten percent outliers with w = 0.1 keep the rotation within 1e-2 rad") {
  Rng rng(23);
  const PointCloud cloud = foot_sample(400, 3);
  const double diag = bbox_diag_oracle(cloud);
  for (int trial = 0; trial < 3; ++trial) {
    const RigidTransform motion = random_rigid_motion(rng, 30.0 * std::numbers::pi / 180.0, 0.2 * diag);
    PointCloud target = apply_rigid(cloud, motion);
    Vec3 lo = target.front(), hi = target.front();
    for (const auto& p : target) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    for (int i = 0; i < 40; ++i) {
      target.emplace_back(uniform_real(rng, lo.x(), hi.x()), uniform_real(rng, lo.y(), hi.y()),
                          uniform_real(rng, lo.z(), hi.z()));
    }
    CpdParams params;
    params.outlier_weight = 0.1;
    const CpdResult r = rigid_cpd(cloud, target, params);
    CHECK(rotation_distance(r.transform.rotation, motion.rotation) < 1e-2);
  }
}

TEST_CASE("negative log-likelihood never increases") {
  Rng rng(5);
  const PointCloud cloud = foot_sample(300, 4);
  for (int trial = 0; trial < 4; ++trial) {
    const RigidTransform motion = random_rigid_motion(rng, 0.5, 20.0);
    PointCloud target = apply_rigid(cloud, motion);
    for (auto& p : target) p += random_vector(rng, -1.0, 1.0);
    CpdParams params;
    params.track_objective = true;
    params.estimate_scale = trial % 2 == 1;
    const CpdResult r = rigid_cpd(cloud, target, params);
    REQUIRE(r.objective_trace.size() == static_cast<std::size_t>(r.iterations_run));
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
      const double prev = r.objective_trace[i - 1];
      CHECK(r.objective_trace[i] <= prev + 1e-9 * std::abs(prev));
    }
  }
}

TEST_CASE("alignment reduces the mean closest-point distance") {
  Rng rng(99);
  const PointCloud cloud = foot_sample(300, 5);
  const double diag = bbox_diag_oracle(cloud);
  for (int trial = 0; trial < 5; ++trial) {
    const RigidTransform motion = random_rigid_motion(rng, 30.0 * std::numbers::pi / 180.0, 0.2 * diag);
    const PointCloud target = apply_rigid(cloud, motion);
    const CpdResult r = rigid_cpd(cloud, target);
    CHECK(mean_closest_distance(apply_rigid(cloud, r.transform), target) < mean_closest_distance(cloud, target));
  }
}

TEST_CASE("scale estimation recovers a uniform scale") {
  const PointCloud cloud = foot_sample(300, 6);
  const RigidTransform motion{axis_angle_rotation(Vec3(0, 0, 1), 0.3), Vec3(5, -3, 2)};
  CpdParams params;
  params.estimate_scale = true;
  const CpdResult r = rigid_cpd(cloud, apply_rigid(scale_points(cloud, 1.05), motion), params);
  CHECK(r.scale == doctest::Approx(1.05).epsilon(1e-6));
  CHECK(rotation_distance(r.transform.rotation, motion.rotation) < 1e-6);
}

TEST_CASE("subsampling keeps large inputs tractable and deterministic") {
  const PointCloud all = make_synthetic_foot(30, 60).mesh.vertices;
  Rng rng(8);
  const RigidTransform motion = random_rigid_motion(rng, 0.3, 10.0);
  CpdParams params;
  params.subsample_cap = 500;
  params.seed = 4;
  const CpdResult a = rigid_cpd(all, apply_rigid(all, motion), params);
  const CpdResult b = rigid_cpd(all, apply_rigid(all, motion), params);
  CHECK(a.transform.rotation == b.transform.rotation);
  CHECK(a.transform.translation == b.transform.translation);
  CHECK(rotation_distance(a.transform.rotation, motion.rotation) < 1e-3);
}

TEST_CASE("degenerate and invalid inputs") {
  const PointCloud planar{Point3(0, 0, 0), Point3(1, 0, 0), Point3(0, 1, 0), Point3(1, 1, 0), Point3(2, 1, 0)};
  const PointCloud solid{Point3(0, 0, 0), Point3(1, 0, 0), Point3(0, 1, 0), Point3(0, 0, 1), Point3(1, 1, 1)};
  CHECK_THROWS_AS(rigid_cpd(planar, solid), NumericalError);
  CHECK_THROWS_AS(rigid_cpd(solid, planar), NumericalError);
  CHECK_THROWS_AS(rigid_cpd(PointCloud(solid.begin(), solid.begin() + 3), solid), InputError);
  CpdParams bad;
  bad.outlier_weight = 1.0;
  CHECK_THROWS_AS(rigid_cpd(solid, solid, bad), InputError);
  bad = {};
  bad.max_iterations = 0;
  CHECK_THROWS_AS(rigid_cpd(solid, solid, bad), InputError);
  bad = {};
  bad.sigma_tolerance = 0.0;
  CHECK_THROWS_AS(rigid_cpd(solid, solid, bad), InputError);
}

TEST_CASE("apply_rigid examples") {
  Rng rng(1);
  const PointCloud cloud = random_cloud(rng, 20, -5, 5);
  const PointCloud same = apply_rigid(cloud, RigidTransform::identity());
  for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(same[i] == cloud[i]);

  const PointCloud moved = apply_rigid(PointCloud{Point3::Zero()}, RigidTransform{Mat3::Identity(), Vec3(1, 2, 3)});
  CHECK(moved[0] == Point3(1, 2, 3));

  const RigidTransform t{random_rotation(rng), random_vector(rng, -10, 10)};
  const PointCloud back = apply_rigid(apply_rigid(cloud, t), t.inverse());
  for (std::size_t i = 0; i < cloud.size(); ++i) CHECK((back[i] - cloud[i]).norm() <= 1e-9);
}
