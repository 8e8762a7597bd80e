#include "defmark/synthetic.hpp"

#include "defmark/error.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <numbers>

namespace defmark {

namespace {

constexpr double kHalfLength = 130.0;

// u in [0, pi] runs heel (x = -130) to toe (x = +130); v in [0, 2 pi) runs
// around the cross-section, v = pi/2 dorsal, v = 3 pi/2 plantar, v = 0 medial.
Point3 foot_surface(double u, double v) {
  const double x = -kHalfLength * std::cos(u);
  const double s = std::sin(u);
  const double t = x / kHalfLength;
  const double half_width = 40.0 + 8.0 * t - 6.0 * t * t;
  const double sv = std::sin(v);
  const double half_height = sv >= 0.0 ? 38.0 - 14.0 * t : 16.0 - 4.0 * t;
  double y = half_width * s * std::cos(v);
  double z = half_height * s * sv;
  // Medial arch pulls the sole in around midfoot.
  const double arch = std::exp(-std::pow((x + 10.0) / 35.0, 2));
  if (sv < 0.0 && std::cos(v) > 0.0) z += 6.0 * arch * std::cos(v) * (-sv) * s;
  y -= 4.0 * arch * std::max(0.0, std::cos(v)) * s;
  // Toe box bends down past the ball of the foot.
  if (x > 40.0) z -= 0.0018 * (x - 40.0) * (x - 40.0);
  return {x, y, z};
}

struct LandmarkSpec {
  const char* name;
  double u_fraction;  // along the foot, 0 = heel pole, 1 = toe pole
  double v_degrees;
};

constexpr std::array<LandmarkSpec, 21> kLandmarks{{
    {"pternion", 0.035, 180.0},
    {"heel_medial", 0.11, 12.0},
    {"heel_lateral", 0.11, 168.0},
    {"sole_heel", 0.13, 271.0},
    {"achilles_insertion", 0.09, 122.0},
    {"navicular", 0.47, 37.0},
    {"arch_apex", 0.46, 318.0},
    {"cuboid", 0.43, 202.0},
    {"styloid_5th", 0.52, 191.0},
    {"instep", 0.41, 91.0},
    {"dorsum_mid", 0.57, 83.0},
    {"sole_mid", 0.55, 268.0},
    {"mtp1_medial", 0.705, 7.0},
    {"mtp5_lateral", 0.665, 176.0},
    {"mtp1_dorsal", 0.715, 58.0},
    {"mtp5_dorsal", 0.675, 131.0},
    {"sole_ball", 0.72, 262.0},
    {"hallux_tip", 0.955, 33.0},
    {"toe2_tip", 0.965, 71.0},
    {"toe3_tip", 0.958, 104.0},
    {"toe5_tip", 0.93, 152.0},
}};

}  // namespace

SyntheticFoot make_synthetic_foot(int rings, int segments) {
  if (rings < 2 || segments < 3) throw InputError("synthetic foot: need at least 2 rings and 3 segments");
  SyntheticFoot foot;
  auto& verts = foot.mesh.vertices;
  auto& faces = foot.mesh.faces;
  const double pi = std::numbers::pi;

  verts.push_back(foot_surface(0.0, 0.0));  // heel pole
  for (int r = 1; r <= rings; ++r) {
    const double u = pi * r / (rings + 1);
    for (int s = 0; s < segments; ++s) verts.push_back(foot_surface(u, 2.0 * pi * s / segments));
  }
  verts.push_back(foot_surface(pi, 0.0));  // toe pole
  const int toe = static_cast<int>(verts.size()) - 1;

  auto ring_vertex = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
  for (int s = 0; s < segments; ++s) faces.push_back({0, ring_vertex(1, s + 1), ring_vertex(1, s)});
  for (int r = 1; r < rings; ++r) {
    for (int s = 0; s < segments; ++s) {
      const int a = ring_vertex(r, s), b = ring_vertex(r, s + 1);
      const int c = ring_vertex(r + 1, s + 1), d = ring_vertex(r + 1, s);
      faces.push_back({a, b, c});
      faces.push_back({a, c, d});
    }
  }
  for (int s = 0; s < segments; ++s) faces.push_back({toe, ring_vertex(rings, s), ring_vertex(rings, s + 1)});

  for (const auto& lm : kLandmarks) {
    foot.landmarks.add(lm.name, foot_surface(pi * lm.u_fraction, lm.v_degrees * pi / 180.0));
  }
  return foot;
}

QuadraticBend::QuadraticBend(const PointCloud& reference, double max_displacement) {
  if (reference.empty()) throw InputError("quadratic bend: empty reference cloud");
  center_ = centroid(reference);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : reference) cov += (p - center_) * (p - center_).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  axis_ = eig.eigenvectors().col(2);
  bend_ = eig.eigenvectors().col(0);

  double largest = 0.0;
  for (const auto& p : reference) largest = std::max(largest, displacement(p).norm());
  if (largest > 0.0) bend_ *= max_displacement / largest;
}

Eigen::Vector3d QuadraticBend::displacement(const Point3& p) const {
  const double s = (p - center_).dot(axis_);
  return s * s * bend_;
}

Point3 QuadraticBend::apply(const Point3& p) const { return p + displacement(p); }

PointCloud QuadraticBend::apply(const PointCloud& cloud) const {
  PointCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(apply(p));
  return out;
}

LandmarkSet QuadraticBend::apply(const LandmarkSet& landmarks) const {
  return landmarks.with_positions(apply(landmarks.positions()));
}

Eigen::Vector3d random_unit_vector(Rng& rng) {
  Eigen::Vector3d v;
  do {
    v = {standard_normal(rng), standard_normal(rng), standard_normal(rng)};
  } while (v.norm() < 1e-12);
  return v.normalized();
}

RigidTransform random_rigid_motion(Rng& rng, double max_angle, double max_translation) {
  RigidTransform t;
  t.rotation = axis_angle_rotation(random_unit_vector(rng), uniform_real(rng, 0.0, max_angle));
  t.translation = random_unit_vector(rng) * uniform_real(rng, 0.0, max_translation);
  return t;
}

}  // namespace defmark
