#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace defmark {

// Coordinates are millimetres everywhere; nothing in the library rescales units.
using Point3 = Eigen::Vector3d;
using PointCloud = std::vector<Point3>;

struct TriMesh {
  PointCloud vertices;
  std::vector<std::array<int, 3>> faces;  // may be empty (pure point cloud)
};

/// Maps p to rotation * p + translation.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  Point3 apply(const Point3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// (*this) after `first`: p -> this(first(p)).
  RigidTransform compose(const RigidTransform& first) const;
};

/// True when `r` is orthonormal with determinant +1 within `tol`.
bool is_rotation(const Eigen::Matrix3d& r, double tol = 1e-9);

bool all_finite(std::span<const Point3> points);

/// Length of the axis-aligned bounding-box diagonal. Throws InputError on empty input.
double bbox_diagonal(std::span<const Point3> cloud);

Point3 centroid(std::span<const Point3> cloud);

struct Neighbor {
  int id = -1;
  double distance = 0.0;
};

/// Static k-d tree over a snapshot of a point cloud.
///
/// Results are exact: a query returns the same ids and distances as an
/// exhaustive scan, ordered by ascending distance with ties broken by the
/// lower point id. Immutable after construction and safe for concurrent reads.
class SpatialIndex {
 public:
  explicit SpatialIndex(PointCloud points);

  std::size_t size() const { return points_.size(); }
  const PointCloud& points() const { return points_; }

  Neighbor nearest(const Point3& query) const;
  /// Requires 1 <= k <= size(); throws InputError naming both values otherwise.
  std::vector<Neighbor> k_nearest(const Point3& query, std::size_t k) const;

 private:
  struct Node {
    int begin = 0;
    int end = 0;
    int left = -1;
    int right = -1;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
  };

  int build(int begin, int end);
  void search(int node, const Point3& query, std::size_t k, std::vector<std::pair<double, int>>& heap) const;

  PointCloud points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

SpatialIndex build_spatial_index(const PointCloud& cloud);

/// Squared Euclidean distance, evaluated in a fixed order so that every caller
/// (index, oracles, energies) sees bit-identical values.
inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

struct WeightedPair {
  Point3 source_point;
  Point3 target_point;
  double weight = 1.0;
};

struct RotationFit {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d singular_values = Eigen::Vector3d::Zero();
  int rank = 0;             // singular values >= 1e-12 * largest
  bool degenerate = false;  // H == 0: rotation is the identity and carries no information
};

/// Rotation R maximizing tr(H * R).
///
/// With U S V^T = svd(H^T), returns U * diag(1, 1, det(U V^T)) * V^T, which is
/// always a proper rotation even when the unconstrained optimum is a reflection.
RotationFit rotation_from_covariance(const Eigen::Matrix3d& h);

/// Weighted Kabsch: rotation minimizing sum w * |R * source - target|^2.
///
/// Inputs must already be centered by the caller; no centroid is removed here.
/// H accumulates sum w * source * target^T. Throws InputError on an empty span
/// or a negative weight; all-zero weights give a degenerate identity fit.
RotationFit kabsch_rotation(std::span<const WeightedPair> pairs);

/// Rotation by `angle` radians about `axis` (normalized internally).
Eigen::Matrix3d axis_angle_rotation(const Eigen::Vector3d& axis, double angle);

/// Rodrigues map from a rotation vector (axis * angle).
Eigen::Matrix3d rotation_from_vector(const Eigen::Vector3d& rotation_vector);

/// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

}  // namespace defmark
