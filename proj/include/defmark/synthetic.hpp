#pragma once

#include "defmark/geometry.hpp"
#include "defmark/model_io.hpp"
#include "defmark/random.hpp"

namespace defmark {

/// Closed foot-like surface (tapered ellipsoid, flattened sole, arch and a
/// downward-bent toe box) with 21 named landmarks placed on the surface but
/// not on vertices. Roughly 260 x 100 x 70 mm.
struct SyntheticFoot {
  TriMesh mesh;
  LandmarkSet landmarks;
};

/// rings * segments + 2 vertices (the default gives 5,002).
SyntheticFoot make_synthetic_foot(int rings = 50, int segments = 100);

/// Bend of a reference cloud along its longest principal axis a: every point
/// moves by s^2 * b, where s is its centered coordinate along a and b lies
/// along the shortest principal axis. |b| is fitted so the largest
/// displacement over the reference equals `max_displacement`.
class QuadraticBend {
 public:
  QuadraticBend(const PointCloud& reference, double max_displacement);

  Point3 apply(const Point3& p) const;
  PointCloud apply(const PointCloud& cloud) const;
  LandmarkSet apply(const LandmarkSet& landmarks) const;

 private:
  Eigen::Vector3d displacement(const Point3& p) const;

  Point3 center_;
  Eigen::Vector3d axis_;
  Eigen::Vector3d bend_;
};

/// Rotation about a uniformly random axis by an angle in [0, max_angle],
/// translation in a random direction with length in [0, max_translation].
RigidTransform random_rigid_motion(Rng& rng, double max_angle, double max_translation);

Eigen::Vector3d random_unit_vector(Rng& rng);

}  // namespace defmark
