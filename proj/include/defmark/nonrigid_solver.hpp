#pragma once

#include "defmark/defgraph.hpp"
#include "defmark/geometry.hpp"
#include "defmark/model_io.hpp"
#include "defmark/rigid_init.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace defmark {

struct Correspondence {
  int source_id = -1;
  int target_id = -1;
  double distance = 0.0;
};

/// Closest-vertex matches from the deformed source into the target.
struct CorrespondenceSet {
  std::vector<Correspondence> pairs;  // ascending source_id
  std::size_t rejected_count = 0;
  std::vector<int> target_of_source;  // dense lookup, -1 where rejected
};

struct SolverParams {
  double alpha = 2000.0;  // weight of the alignment term
  int node_count = 500;
  int k_influence = 10;
  int k_node = 6;
  int max_outer_iterations = 50;
  int sweeps_per_outer = 1;
  double relative_energy_tolerance = 1e-5;
  std::optional<double> correspondence_reject_multiplier;
  std::uint64_t seed = 0;

  NodeSampling sampling = NodeSampling::Uniform;
  bool randomized_node_order = false;
  bool rigid_init = true;
  CpdParams cpd;
  // Re-evaluates the full energy around every node update and counts increases.
  bool verify_monotonicity = false;

  /// Throws InputError describing the first invalid field.
  void validate() const;
};

/// Accumulated block problem for one node:
///   minimize sum_i beta_i |gamma_i R p_i + gamma_i T - q_i|^2
/// which, after eliminating T = mu_v - R mu_y, reads Z - 2 tr(H R).
struct NodeSystem {
  double mass = 0.0;  // sum beta gamma^2
  Eigen::Vector3d mu_v = Eigen::Vector3d::Zero();
  Eigen::Vector3d mu_y = Eigen::Vector3d::Zero();
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  double z = 0.0;
  std::size_t term_count = 0;
};

struct NodeUpdate {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  NodeSystem system;
  double block_energy_before = 0.0;
  double block_energy_after = 0.0;
  bool isolated = false;         // node touches no energy term; left unchanged
  bool kept_incumbent = false;   // closed form was not better numerically
};

/// One residual term of a node's block problem, exposed for diagnostics and tests.
struct BlockTerm {
  double beta = 0.0;
  double gamma = 0.0;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector3d q = Eigen::Vector3d::Zero();
};

struct MonotonicityReport {
  std::size_t updates_checked = 0;
  std::size_t violations = 0;
  double worst_relative_increase = 0.0;  // max of (after - before) / max(1, before)
};

struct RegistrationResult {
  NodeTransformSet transforms;
  PointCloud deformed_source;
  LandmarkSet predicted_landmarks;
  std::vector<EnergyRecord> energy_trace;
  int outer_iterations_run = 0;
  bool converged = false;

  // Intermediate state, kept for diagnostics and reporting.
  std::optional<CpdResult> rigid;
  std::string rigid_fallback;  // why rigid initialization fell back to identity, if it did
  PointCloud aligned_source;
  LandmarkSet aligned_landmarks;
  DeformationGraph graph;
  CorrespondenceSet last_correspondences;
  MonotonicityReport monotonicity;
  std::size_t isolated_node_updates = 0;
  std::size_t incumbent_kept = 0;
  double rigid_ms = 0.0;
  double graph_ms = 0.0;
  double optimize_ms = 0.0;
};

/// 1-NN of every deformed source vertex. With a reject multiplier m, pairs
/// farther than m * median pair distance are dropped. Throws NumericalError
/// when nothing survives.
CorrespondenceSet find_correspondences(const PointCloud& deformed_source, const SpatialIndex& target_index,
                                       std::optional<double> reject_multiplier = std::nullopt);

/// Sum of squared distances over the matched pairs.
double energy_align(const CorrespondenceSet& correspondences, const PointCloud& deformed_source,
                    const PointCloud& target);

/// sum_j sum_{k in adj(j)} |(n_j + T_j) - (R_k (n_j - n_k) + n_k + T_k)|^2 over the stored directed lists.
double energy_smooth(const DeformationGraph& graph, const NodeTransformSet& transforms);

double energy_total(double e_smooth, double e_align, double alpha);

/// Full objective: deforms the source, then smooth + alpha * align.
EnergyRecord evaluate_energy(const DeformationGraph& graph, const NodeTransformSet& transforms,
                             const CorrespondenceSet& correspondences, const PointCloud& source,
                             const PointCloud& target, double alpha);

/// Every energy term that depends on node `node`, in the canonical form used by solve_node.
std::vector<BlockTerm> gather_block_terms(int node, const DeformationGraph& graph,
                                          const NodeTransformSet& transforms,
                                          const CorrespondenceSet& correspondences, const PointCloud& source,
                                          const PointCloud& target, double alpha);

double block_energy(const std::vector<BlockTerm>& terms, const Eigen::Matrix3d& rotation,
                    const Eigen::Vector3d& translation);

/// Closed-form minimizer of the total energy over one node's (R, T), all
/// other nodes held fixed. Never returns a pair with higher block energy
/// than the incumbent.
NodeUpdate solve_node(int node, const DeformationGraph& graph, const NodeTransformSet& transforms,
                      const CorrespondenceSet& correspondences, const PointCloud& source,
                      const PointCloud& target, double alpha);

/// Rigid initialization, graph construction, then alternating correspondence
/// search and block-coordinate sweeps; finally transfers the landmarks.
RegistrationResult register_models(const TriMesh& source, const LandmarkSet& source_landmarks,
                                   const TriMesh& target, const SolverParams& params = {});

}  // namespace defmark
