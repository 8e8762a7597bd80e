#include "defmark/nonrigid_solver.hpp"

#include "defmark/error.hpp"
#include "defmark/log.hpp"
#include "defmark/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

namespace defmark {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double median_of(std::vector<double> values) {
  const std::size_t n = values.size();
  std::sort(values.begin(), values.end());
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

void SolverParams::validate() const {
  auto fail = [](const std::string& what) { throw InputError("solver parameters: " + what); };
  if (!(alpha > 0.0) || !std::isfinite(alpha)) fail("alpha must be positive");
  if (node_count < 1) fail("node_count must be positive");
  if (k_influence < 1) fail("k_influence must be positive");
  if (k_node < 1) fail("k_node must be positive");
  if (node_count < k_influence) fail("node_count must be at least k_influence");
  if (max_outer_iterations < 1) fail("max_outer_iterations must be positive");
  if (sweeps_per_outer < 1) fail("sweeps_per_outer must be positive");
  if (!(relative_energy_tolerance > 0.0)) fail("relative_energy_tolerance must be positive");
  if (correspondence_reject_multiplier && !(*correspondence_reject_multiplier > 0.0)) {
    fail("correspondence_reject_multiplier must be positive");
  }
}

CorrespondenceSet find_correspondences(const PointCloud& deformed_source, const SpatialIndex& target_index,
                                       std::optional<double> reject_multiplier) {
  CorrespondenceSet set;
  set.pairs.reserve(deformed_source.size());
  set.target_of_source.assign(deformed_source.size(), -1);
  for (std::size_t i = 0; i < deformed_source.size(); ++i) {
    const Neighbor nb = target_index.nearest(deformed_source[i]);
    set.pairs.push_back({static_cast<int>(i), nb.id, nb.distance});
  }
  if (reject_multiplier && !set.pairs.empty()) {
    std::vector<double> d;
    d.reserve(set.pairs.size());
    for (const auto& c : set.pairs) d.push_back(c.distance);
    const double limit = *reject_multiplier * median_of(std::move(d));
    const auto kept_end = std::remove_if(set.pairs.begin(), set.pairs.end(),
                                         [&](const Correspondence& c) { return c.distance > limit; });
    set.rejected_count = static_cast<std::size_t>(set.pairs.end() - kept_end);
    set.pairs.erase(kept_end, set.pairs.end());
  }
  if (set.pairs.empty()) throw NumericalError("find_correspondences: every correspondence was rejected");
  for (const auto& c : set.pairs) set.target_of_source[static_cast<std::size_t>(c.source_id)] = c.target_id;
  return set;
}

double energy_align(const CorrespondenceSet& correspondences, const PointCloud& deformed_source,
                    const PointCloud& target) {
  double sum = 0.0;
  for (const auto& c : correspondences.pairs) {
    sum += squared_distance(deformed_source[static_cast<std::size_t>(c.source_id)],
                            target[static_cast<std::size_t>(c.target_id)]);
  }
  return sum;
}

double energy_smooth(const DeformationGraph& graph, const NodeTransformSet& transforms) {
  const auto& n = graph.nodes.positions;
  double sum = 0.0;
  for (std::size_t j = 0; j < graph.adjacency.size(); ++j) {
    const Point3 own = n[j] + transforms.translations[j];
    for (int k_id : graph.adjacency[j]) {
      const auto k = static_cast<std::size_t>(k_id);
      const Point3 neighbor = transforms.rotations[k] * (n[j] - n[k]) + n[k] + transforms.translations[k];
      sum += squared_distance(own, neighbor);
    }
  }
  return sum;
}

double energy_total(double e_smooth, double e_align, double alpha) { return e_smooth + alpha * e_align; }

EnergyRecord evaluate_energy(const DeformationGraph& graph, const NodeTransformSet& transforms,
                             const CorrespondenceSet& correspondences, const PointCloud& source,
                             const PointCloud& target, double alpha) {
  const PointCloud deformed = deform_points(source, graph.bindings, graph.nodes, transforms);
  EnergyRecord rec;
  rec.align = energy_align(correspondences, deformed, target);
  rec.smooth = energy_smooth(graph, transforms);
  rec.total = energy_total(rec.smooth, rec.align, alpha);
  return rec;
}

std::vector<BlockTerm> gather_block_terms(int node, const DeformationGraph& graph,
                                          const NodeTransformSet& transforms,
                                          const CorrespondenceSet& correspondences, const PointCloud& source,
                                          const PointCloud& target, double alpha) {
  const auto j = static_cast<std::size_t>(node);
  const auto& n = graph.nodes.positions;
  std::vector<BlockTerm> terms;

  // Alignment: the deformed vertex is gamma (R_j p + T_j) plus a remainder
  // that does not depend on node j.
  for (const NodeMember& member : graph.members[j]) {
    const auto v = static_cast<std::size_t>(member.vertex);
    const int match = correspondences.target_of_source[v];
    if (match < 0) continue;
    const VertexBinding& binding = graph.bindings[v];
    const double gamma = binding.weights[static_cast<std::size_t>(member.slot)];
    const Eigen::Vector3d p = source[v] - n[j];
    Eigen::Vector3d rest = source[v] - gamma * p;
    for (std::size_t s = 0; s < binding.node_ids.size(); ++s) {
      if (static_cast<int>(s) == member.slot || binding.weights[s] == 0.0) continue;
      const auto l = static_cast<std::size_t>(binding.node_ids[s]);
      const Eigen::Vector3d local = source[v] - n[l];
      rest += binding.weights[s] * ((transforms.rotations[l] * local - local) + transforms.translations[l]);
    }
    terms.push_back({alpha, gamma, p, target[static_cast<std::size_t>(match)] - rest});
  }

  // Smoothness. Adjacency is symmetric, so every neighbor k gives both the
  // edge k -> j (node j predicts n_k) and the edge j -> k (n_j + T_j is
  // compared with node k's prediction; R_j does not enter).
  for (int k_id : graph.adjacency[j]) {
    const auto k = static_cast<std::size_t>(k_id);
    terms.push_back({1.0, 1.0, n[k] - n[j], n[k] + transforms.translations[k] - n[j]});
    const Point3 predicted = transforms.rotations[k] * (n[j] - n[k]) + n[k] + transforms.translations[k];
    terms.push_back({1.0, 1.0, Eigen::Vector3d::Zero(), predicted - n[j]});
  }
  return terms;
}

double block_energy(const std::vector<BlockTerm>& terms, const Eigen::Matrix3d& rotation,
                    const Eigen::Vector3d& translation) {
  double sum = 0.0;
  for (const auto& t : terms) {
    sum += t.beta * (t.gamma * (rotation * t.p + translation) - t.q).squaredNorm();
  }
  return sum;
}

NodeUpdate solve_node(int node, const DeformationGraph& graph, const NodeTransformSet& transforms,
                      const CorrespondenceSet& correspondences, const PointCloud& source,
                      const PointCloud& target, double alpha) {
  const auto j = static_cast<std::size_t>(node);
  const Eigen::Matrix3d& r_old = transforms.rotations[j];
  const Eigen::Vector3d& t_old = transforms.translations[j];
  const auto terms = gather_block_terms(node, graph, transforms, correspondences, source, target, alpha);

  NodeUpdate update;
  update.rotation = r_old;
  update.translation = t_old;
  NodeSystem& sys = update.system;
  sys.term_count = terms.size();

  Eigen::Vector3d sum_q = Eigen::Vector3d::Zero();
  Eigen::Vector3d sum_p = Eigen::Vector3d::Zero();
  for (const auto& t : terms) {
    const double bg = t.beta * t.gamma;
    sys.mass += bg * t.gamma;
    sum_q += bg * t.q;
    sum_p += bg * t.gamma * t.p;
  }
  update.block_energy_before = block_energy(terms, r_old, t_old);
  if (!(sys.mass > 0.0)) {
    update.isolated = true;
    update.block_energy_after = update.block_energy_before;
    return update;
  }
  sys.mu_v = sum_q / sys.mass;
  sys.mu_y = sum_p / sys.mass;

  // T = mu_v - R mu_y leaves sum beta |gamma R p~ - q~|^2 with p~ = p - mu_y
  // and q~ = q - gamma mu_v, i.e. Z - 2 tr(H R).
  for (const auto& t : terms) {
    const Eigen::Vector3d pc = t.gamma * (t.p - sys.mu_y);
    const Eigen::Vector3d qc = t.q - t.gamma * sys.mu_v;
    sys.h.noalias() += t.beta * pc * qc.transpose();
    sys.z += t.beta * (pc.squaredNorm() + qc.squaredNorm());
  }
  const RotationFit fit = rotation_from_covariance(sys.h);
  const Eigen::Matrix3d r_new = fit.degenerate ? r_old : fit.rotation;
  const Eigen::Vector3d t_new = sys.mu_v - r_new * sys.mu_y;
  const double e_new = block_energy(terms, r_new, t_new);

  if (e_new <= update.block_energy_before) {
    update.rotation = r_new;
    update.translation = t_new;
    update.block_energy_after = e_new;
  } else {
    update.kept_incumbent = true;
    update.block_energy_after = update.block_energy_before;
  }
  return update;
}

RegistrationResult register_models(const TriMesh& source, const LandmarkSet& source_landmarks,
                                   const TriMesh& target, const SolverParams& params) {
  params.validate();
  if (source.vertices.empty()) throw InputError("register: source mesh has no vertices");
  if (target.vertices.empty()) throw InputError("register: target mesh has no vertices");
  if (!all_finite(source.vertices) || !all_finite(target.vertices)) {
    throw InputError("register: mesh contains non-finite coordinates");
  }

  RegistrationResult result;
  auto start = Clock::now();
  result.aligned_source = source.vertices;
  result.aligned_landmarks = source_landmarks;
  if (params.rigid_init) {
    try {
      const CpdResult cpd = rigid_cpd(source.vertices, target.vertices, params.cpd);
      result.aligned_source = apply_rigid(scale_points(source.vertices, cpd.scale), cpd.transform);
      result.aligned_landmarks = source_landmarks.with_positions(
          apply_rigid(scale_points(source_landmarks.positions(), cpd.scale), cpd.transform));
      result.rigid = cpd;
    } catch (const NumericalError& e) {
      // Degenerate geometry for the initializer: continue from the input pose.
      result.rigid_fallback = e.what();
      log::warn("rigid initialization skipped: ", e.what());
    }
  }
  result.rigid_ms = elapsed_ms(start);

  start = Clock::now();
  GraphParams gp;
  gp.node_count = params.node_count;
  gp.k_influence = params.k_influence;
  gp.k_node = params.k_node;
  gp.seed = params.seed;
  gp.sampling = params.sampling;
  result.graph = build_deformation_graph(result.aligned_source, gp);
  const SpatialIndex target_index(target.vertices);
  result.graph_ms = elapsed_ms(start);

  start = Clock::now();
  const DeformationGraph& graph = result.graph;
  const PointCloud& src = result.aligned_source;
  const PointCloud& tgt = target.vertices;
  const std::size_t node_count = graph.nodes.size();
  NodeTransformSet& transforms = result.transforms;
  transforms = NodeTransformSet::identity(node_count);

  std::vector<int> order(node_count);
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng(params.seed ^ 0x9e3779b97f4a7c15ULL);

  std::size_t edge_count = 0;
  for (const auto& adj : graph.adjacency) edge_count += adj.size();
  const double tiny = std::pow(1e-9 * bbox_diagonal(tgt), 2);
  const auto zero_floor = [&](std::size_t pairs) {
    return tiny * (params.alpha * static_cast<double>(pairs) + static_cast<double>(edge_count));
  };

  CorrespondenceSet corr;
  for (int outer = 1; outer <= params.max_outer_iterations; ++outer) {
    result.outer_iterations_run = outer;
    corr = find_correspondences(deform_points(src, graph.bindings, graph.nodes, transforms), target_index,
                                params.correspondence_reject_multiplier);

    for (int sweep = 0; sweep < params.sweeps_per_outer; ++sweep) {
      if (params.randomized_node_order) {
        for (std::size_t i = node_count; i > 1; --i) std::swap(order[i - 1], order[uniform_index(order_rng, i)]);
      }
      for (int j : order) {
        double before = 0.0;
        if (params.verify_monotonicity) before = evaluate_energy(graph, transforms, corr, src, tgt, params.alpha).total;
        const NodeUpdate upd = solve_node(j, graph, transforms, corr, src, tgt, params.alpha);
        transforms.rotations[static_cast<std::size_t>(j)] = upd.rotation;
        transforms.translations[static_cast<std::size_t>(j)] = upd.translation;
        result.isolated_node_updates += upd.isolated ? 1 : 0;
        result.incumbent_kept += upd.kept_incumbent ? 1 : 0;
        if (params.verify_monotonicity) {
          const double after = evaluate_energy(graph, transforms, corr, src, tgt, params.alpha).total;
          const double rel = (after - before) / std::max(1.0, before);
          auto& mono = result.monotonicity;
          ++mono.updates_checked;
          mono.worst_relative_increase = std::max(mono.worst_relative_increase, rel);
          if (after > before + 1e-9 * std::max(1.0, before)) ++mono.violations;
        }
      }
    }

    for (std::size_t j = 0; j < node_count; ++j) {
      if (!is_rotation(transforms.rotations[j])) {
        throw NumericalError("register: node " + std::to_string(j) + " left SO(3) at outer iteration " +
                             std::to_string(outer));
      }
    }

    EnergyRecord rec = evaluate_energy(graph, transforms, corr, src, tgt, params.alpha);
    rec.iteration = outer;
    if (!std::isfinite(rec.total)) {
      std::ostringstream dump;
      dump << "register: non-finite energy at outer iteration " << outer << " (E_align=" << rec.align
           << ", E_smooth=" << rec.smooth << ", correspondences=" << corr.pairs.size()
           << ", rejected=" << corr.rejected_count << ")";
      for (std::size_t j = 0; j < node_count; ++j) {
        if (!transforms.rotations[j].allFinite() || !transforms.translations[j].allFinite()) {
          dump << "; first non-finite node " << j;
          break;
        }
      }
      throw NumericalError(dump.str());
    }
    result.energy_trace.push_back(rec);

    // Every residual at or below 1e-9 of the target size counts as an exact fit.
    if (rec.total <= zero_floor(corr.pairs.size())) {
      result.converged = true;
      break;
    }
    if (result.energy_trace.size() >= 2) {
      const double prev = result.energy_trace[result.energy_trace.size() - 2].total;
      const double change = std::abs(rec.total - prev);
      if (prev > 0.0 && change < params.relative_energy_tolerance * prev) {
        result.converged = true;
        break;
      }
    }
  }

  result.last_correspondences = std::move(corr);
  result.deformed_source = deform_points(src, graph.bindings, graph.nodes, transforms);
  result.predicted_landmarks = transfer_landmarks(result.aligned_landmarks, graph.nodes, transforms, params.k_influence);
  result.optimize_ms = elapsed_ms(start);
  return result;
}

}  // namespace defmark
