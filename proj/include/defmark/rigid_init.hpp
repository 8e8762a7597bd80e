#pragma once

#include "defmark/geometry.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace defmark {

struct CpdParams {
  double outlier_weight = 0.1;  // w in [0, 1)
  int max_iterations = 100;
  double sigma_tolerance = 1e-6;  // stop when |dσ²| / σ² falls below this
  std::optional<std::size_t> subsample_cap = 3000;
  bool estimate_scale = false;
  std::uint64_t seed = 0;
  bool track_objective = false;  // record the negative log-likelihood per iteration
};

struct CpdResult {
  RigidTransform transform;  // source coordinates -> target coordinates
  double scale = 1.0;        // 1 unless estimate_scale is on; maps p -> scale * R p + t
  double final_sigma2 = 0.0;
  int iterations_run = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // negative log-likelihood, filled when tracked
};

/// Rigid Coherent Point Drift: the source is a Gaussian mixture whose centroids
/// move rigidly; target points are the observations. Dense EM, O(N*M) per iteration.
///
/// Clouds larger than subsample_cap are reduced by seeded uniform sampling.
/// Throws InputError when either cloud has fewer than 4 points and NumericalError
/// when either is coplanar/collinear (the caller may fall back to identity).
CpdResult rigid_cpd(const PointCloud& source, const PointCloud& target, const CpdParams& params = {});

PointCloud apply_rigid(const PointCloud& cloud, const RigidTransform& transform);
PointCloud scale_points(const PointCloud& cloud, double scale);

}  // namespace defmark
