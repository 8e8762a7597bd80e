#include "defmark/geometry.hpp"

#include "defmark/error.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace defmark {

namespace {

constexpr int kLeafSize = 8;
constexpr double kRankTolerance = 1e-12;

bool heap_less(const std::pair<double, int>& a, const std::pair<double, int>& b) {
  return a.first < b.first || (a.first == b.first && a.second < b.second);
}

}  // namespace

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& first) const {
  RigidTransform out;
  out.rotation = rotation * first.rotation;
  out.translation = rotation * first.translation + translation;
  return out;
}

bool is_rotation(const Eigen::Matrix3d& r, double tol) {
  if (!r.allFinite()) return false;
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
  return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

bool all_finite(std::span<const Point3> points) {
  return std::all_of(points.begin(), points.end(), [](const Point3& p) { return p.allFinite(); });
}

double bbox_diagonal(std::span<const Point3> cloud) {
  if (cloud.empty()) throw InputError("bbox_diagonal: empty point cloud");
  Point3 lo = cloud.front();
  Point3 hi = cloud.front();
  for (const auto& p : cloud) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

Point3 centroid(std::span<const Point3> cloud) {
  if (cloud.empty()) throw InputError("centroid: empty point cloud");
  Point3 sum = Point3::Zero();
  for (const auto& p : cloud) sum += p;
  return sum / static_cast<double>(cloud.size());
}

SpatialIndex::SpatialIndex(PointCloud points) : points_(std::move(points)) {
  if (points_.empty()) throw InputError("spatial index: cannot index an empty point cloud");
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  nodes_.reserve(2 * points_.size() / kLeafSize + 1);
  build(0, static_cast<int>(order_.size()));
}

int SpatialIndex::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Point3 lo = points_[order_[begin]];
  Point3 hi = lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident: keep as leaf

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void SpatialIndex::search(int node_id, const Point3& query, std::size_t k,
                          std::vector<std::pair<double, int>>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int pid = order_[i];
      const std::pair<double, int> cand{squared_distance(query, points_[pid]), pid};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), heap_less);
      } else if (heap_less(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), heap_less);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), heap_less);
      }
    }
    return;
  }
  const double delta = query[node.axis] - node.split;
  const int near = delta < 0.0 ? node.left : node.right;
  const int far = delta < 0.0 ? node.right : node.left;
  search(near, query, k, heap);
  // Equal bound is still visited: a point on the plane may tie and carry a lower id.
  if (heap.size() < k || delta * delta <= heap.front().first) search(far, query, k, heap);
}

Neighbor SpatialIndex::nearest(const Point3& query) const { return k_nearest(query, 1).front(); }

std::vector<Neighbor> SpatialIndex::k_nearest(const Point3& query, std::size_t k) const {
  if (k < 1 || k > points_.size()) {
    throw InputError("k_nearest: k = " + std::to_string(k) + " but the index holds " +
                     std::to_string(points_.size()) + " points");
  }
  std::vector<std::pair<double, int>> heap;
  heap.reserve(k);
  search(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end(), heap_less);
  std::vector<Neighbor> out;
  out.reserve(heap.size());
  for (const auto& [d2, id] : heap) out.push_back({id, std::sqrt(d2)});
  return out;
}

SpatialIndex build_spatial_index(const PointCloud& cloud) { return SpatialIndex(cloud); }

RotationFit rotation_from_covariance(const Eigen::Matrix3d& h) {
  RotationFit fit;
  if (!h.allFinite()) throw NumericalError("rotation fit: cross-covariance is not finite");
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  fit.singular_values = svd.singularValues();
  const double smax = fit.singular_values[0];
  if (!(smax > 0.0)) {
    fit.degenerate = true;
    return fit;
  }
  fit.rank = static_cast<int>((fit.singular_values.array() >= kRankTolerance * smax).count());
  const Eigen::Matrix3d& u = svd.matrixU();
  const Eigen::Matrix3d& v = svd.matrixV();
  Eigen::Vector3d c(1.0, 1.0, (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  fit.rotation = u * c.asDiagonal() * v.transpose();
  return fit;
}

RotationFit kabsch_rotation(std::span<const WeightedPair> pairs) {
  if (pairs.empty()) throw InputError("kabsch_rotation: no point pairs");
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (const auto& pair : pairs) {
    if (!(pair.weight >= 0.0)) throw InputError("kabsch_rotation: negative or NaN weight");
    h.noalias() += pair.weight * pair.source_point * pair.target_point.transpose();
  }
  return rotation_from_covariance(h);
}

Eigen::Matrix3d axis_angle_rotation(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Eigen::Matrix3d rotation_from_vector(const Eigen::Vector3d& rotation_vector) {
  const double angle = rotation_vector.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, rotation_vector / angle).toRotationMatrix();
}

double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near zero; use the antisymmetric part there.
  const Eigen::Matrix3d rel = a.transpose() * b;
  const Eigen::Vector3d w(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * w.norm(), c);
}

}  // namespace defmark
