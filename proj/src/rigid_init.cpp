#include "defmark/rigid_init.hpp"

#include "defmark/error.hpp"
#include "defmark/random.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <string>

namespace defmark {

namespace {

using Matrix3X = Eigen::Matrix<double, 3, Eigen::Dynamic>;

Matrix3X to_matrix(const PointCloud& cloud, const std::vector<std::size_t>* subset) {
  const std::size_t n = subset ? subset->size() : cloud.size();
  Matrix3X m(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) m.col(static_cast<Eigen::Index>(i)) = cloud[subset ? (*subset)[i] : i];
  return m;
}

Matrix3X maybe_subsample(const PointCloud& cloud, const std::optional<std::size_t>& cap, Rng& rng) {
  if (!cap || cloud.size() <= *cap) return to_matrix(cloud, nullptr);
  const auto picked = sample_without_replacement(rng, cloud.size(), *cap);
  return to_matrix(cloud, &picked);
}

void require_volumetric(const Matrix3X& points, const char* which) {
  if (points.cols() < 4) {
    throw InputError(std::string("rigid_cpd: ") + which + " cloud needs at least 4 points, got " +
                     std::to_string(points.cols()));
  }
  const Eigen::Vector3d mean = points.rowwise().mean();
  const Matrix3X centered = points.colwise() - mean;
  const Eigen::Matrix3d cov = centered * centered.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov, Eigen::EigenvaluesOnly);
  const Eigen::Vector3d ev = eig.eigenvalues();
  if (!(ev[2] > 0.0) || ev[0] < 1e-10 * ev[2]) {
    throw NumericalError(std::string("rigid_cpd: ") + which + " cloud is coplanar or collinear");
  }
}

}  // namespace

CpdResult rigid_cpd(const PointCloud& source, const PointCloud& target, const CpdParams& params) {
  if (!(params.outlier_weight >= 0.0 && params.outlier_weight < 1.0)) {
    throw InputError("rigid_cpd: outlier weight must lie in [0, 1)");
  }
  if (params.max_iterations < 1) throw InputError("rigid_cpd: max_iterations must be >= 1");
  if (!(params.sigma_tolerance > 0.0)) throw InputError("rigid_cpd: sigma_tolerance must be positive");
  if (params.subsample_cap && *params.subsample_cap < 4) throw InputError("rigid_cpd: subsample cap below 4 points");

  // One stream per cloud from the same seed: equal-sized clouds get the same
  // index subset, so vertex-corresponding inputs stay corresponding.
  Rng source_rng(params.seed);
  Rng target_rng(params.seed);
  Matrix3X y = maybe_subsample(source, params.subsample_cap, source_rng);  // mixture centroids
  Matrix3X x = maybe_subsample(target, params.subsample_cap, target_rng);  // observations
  require_volumetric(y, "source");
  require_volumetric(x, "target");

  // The uniform outlier density is not unit-free, so EM runs on centered
  // clouds divided by one common length (keeps the problem rigid).
  const Eigen::Vector3d x_center = x.rowwise().mean();
  const Eigen::Vector3d y_center = y.rowwise().mean();
  x.colwise() -= x_center;
  y.colwise() -= y_center;
  const double unit = std::sqrt(x.colwise().squaredNorm().mean());
  x /= unit;
  y /= unit;

  const Eigen::Index m = y.cols();
  const Eigen::Index n = x.cols();
  const double dm = static_cast<double>(m);
  const double dn = static_cast<double>(n);
  const double w = params.outlier_weight;

  // All-pairs mean squared distance, in closed form.
  const double sum_x2 = x.colwise().squaredNorm().sum();
  const double sum_y2 = y.colwise().squaredNorm().sum();
  const double cross = x.rowwise().sum().dot(y.rowwise().sum());
  double sigma2 = (dm * sum_x2 + dn * sum_y2 - 2.0 * cross) / (3.0 * dm * dn);

  const double diag2 = std::pow(bbox_diagonal(target), 2) / (unit * unit);
  const double sigma2_floor = 1e-12 * diag2;

  CpdResult result;
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  Eigen::Vector3d trans = Eigen::Vector3d::Zero();
  double scale = 1.0;

  Eigen::MatrixXd p(m, n);
  Eigen::ArrayXd col(m);
  for (int iter = 1; iter <= params.max_iterations; ++iter) {
    result.iterations_run = iter;
    const Matrix3X ty = (scale * rot * y).colwise() + trans;

    // E-step: column-normalized Gaussian posteriors with a uniform outlier component.
    const double two_pi_s2 = 2.0 * std::numbers::pi * sigma2;
    const double c = w > 0.0 ? std::pow(two_pi_s2, 1.5) * (w / (1.0 - w)) * (dm / dn) : 0.0;
    const double inv_2s2 = 1.0 / (2.0 * sigma2);
    double log_sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      col = (ty.colwise() - x.col(j)).colwise().squaredNorm().transpose().array();
      col *= -inv_2s2;
      // Below -700 the result is subnormal or zero; flush it to avoid slow subnormal arithmetic.
      col = (col < -700.0).select(0.0, col.exp());
      const double denom = col.sum() + c;
      if (denom > 0.0) {
        p.col(j) = col / denom;
        log_sum += std::log(denom);
      } else {
        p.col(j).setZero();
      }
    }
    if (params.track_objective) {
      const double log_norm = (w < 1.0 ? std::log((1.0 - w) / dm) : 0.0) - 1.5 * std::log(two_pi_s2);
      result.objective_trace.push_back(-(log_sum + dn * log_norm));
    }

    // M-step.
    const Eigen::VectorXd p1 = p.rowwise().sum();
    const Eigen::VectorXd pt1 = p.colwise().sum().transpose();
    const double np = pt1.sum();
    if (!(np > 0.0)) throw NumericalError("rigid_cpd: every target point was classified as an outlier");
    const Eigen::Vector3d mu_x = x * pt1 / np;
    const Eigen::Vector3d mu_y = y * p1 / np;
    const Matrix3X xc = x.colwise() - mu_x;
    const Matrix3X yc = y.colwise() - mu_y;
    const Eigen::Matrix3d a = xc * (p.transpose() * yc.transpose());  // sum P x^ y^T

    // Maximizing tr(A^T R) is the Kabsch problem with H = A^T.
    const RotationFit fit = rotation_from_covariance(a.transpose());
    if (fit.degenerate || fit.rank < 2) {
      throw NumericalError("rigid_cpd: posterior-weighted geometry is degenerate (rank " +
                           std::to_string(fit.rank) + ")");
    }
    rot = fit.rotation;
    const double tr_ar = (a.transpose() * rot).trace();
    const double x_term = (xc.colwise().squaredNorm().transpose().array() * pt1.array()).sum();
    const double y_term = (yc.colwise().squaredNorm().transpose().array() * p1.array()).sum();
    if (params.estimate_scale) scale = tr_ar / y_term;
    trans = mu_x - scale * rot * mu_y;
    // sum P |x^ - s R y^|^2 / (3 Np); reduces to (x_term - s tr) at the optimal s.
    const double new_sigma2 = (x_term - 2.0 * scale * tr_ar + scale * scale * y_term) / (3.0 * np);

    if (!std::isfinite(new_sigma2)) throw NumericalError("rigid_cpd: sigma^2 became non-finite");
    if (new_sigma2 < sigma2_floor) {
      sigma2 = std::max(new_sigma2, 0.0);
      result.converged = true;
      break;
    }
    const double change = std::abs(new_sigma2 - sigma2) / sigma2;
    sigma2 = new_sigma2;
    if (change < params.sigma_tolerance) {
      result.converged = true;
      break;
    }
  }

  // x = c_x + unit * (s R (y - c_y) / unit + t)
  result.transform.rotation = rot;
  result.transform.translation = x_center - scale * rot * y_center + unit * trans;
  result.scale = scale;
  result.final_sigma2 = sigma2 * unit * unit;
  return result;
}

PointCloud apply_rigid(const PointCloud& cloud, const RigidTransform& transform) {
  PointCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(transform.apply(p));
  return out;
}

PointCloud scale_points(const PointCloud& cloud, double scale) {
  PointCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(scale * p);
  return out;
}

}  // namespace defmark
