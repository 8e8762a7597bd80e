#include "defmark/defgraph.hpp"

#include "defmark/error.hpp"
#include "defmark/random.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace defmark {

NodeTransformSet NodeTransformSet::identity(std::size_t node_count) {
  NodeTransformSet t;
  t.rotations.assign(node_count, Eigen::Matrix3d::Identity());
  t.translations.assign(node_count, Eigen::Vector3d::Zero());
  return t;
}

NodeSet sample_nodes(const PointCloud& source, int node_count, std::uint64_t seed, NodeSampling sampling) {
  if (node_count < 1) throw InputError("sample_nodes: node count must be positive");
  if (static_cast<std::size_t>(node_count) > source.size()) {
    throw InputError("sample_nodes: requested " + std::to_string(node_count) + " nodes but the source has only " +
                     std::to_string(source.size()) + " vertices; lower the node count or use a denser mesh");
  }
  Rng rng(seed);
  std::vector<std::size_t> picked;
  if (sampling == NodeSampling::Uniform) {
    picked = sample_without_replacement(rng, source.size(), static_cast<std::size_t>(node_count));
  } else {
    std::vector<double> dist(source.size(), std::numeric_limits<double>::infinity());
    std::size_t next = uniform_index(rng, source.size());
    for (int i = 0; i < node_count; ++i) {
      picked.push_back(next);
      std::size_t best = 0;
      double best_d = -1.0;
      for (std::size_t v = 0; v < source.size(); ++v) {
        dist[v] = std::min(dist[v], squared_distance(source[v], source[next]));
        if (dist[v] > best_d) {
          best_d = dist[v];
          best = v;
        }
      }
      next = best;
    }
    std::sort(picked.begin(), picked.end());
  }
  NodeSet nodes;
  nodes.sampling_seed = seed;
  nodes.vertex_ids.reserve(picked.size());
  nodes.positions.reserve(picked.size());
  for (std::size_t id : picked) {
    nodes.vertex_ids.push_back(static_cast<int>(id));
    nodes.positions.push_back(source[id]);
  }
  return nodes;
}

std::vector<VertexBinding> bind_vertices(const PointCloud& points, const NodeSet& nodes, int k_influence) {
  if (k_influence < 1) throw InputError("bind_vertices: k_influence must be positive");
  if (nodes.size() < static_cast<std::size_t>(k_influence)) {
    throw InputError("bind_vertices: k_influence = " + std::to_string(k_influence) + " exceeds node count " +
                     std::to_string(nodes.size()));
  }
  const SpatialIndex index(nodes.positions);
  const double eps = 1e-9 * bbox_diagonal(nodes.positions);
  const auto k = static_cast<std::size_t>(k_influence);

  std::vector<VertexBinding> bindings(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nearest = index.k_nearest(points[i], k);
    VertexBinding& b = bindings[i];
    b.node_ids.resize(k);
    b.weights.assign(k, 0.0);
    for (std::size_t s = 0; s < k; ++s) b.node_ids[s] = nearest[s].id;

    if (nearest.front().distance < eps || nearest.front().distance == 0.0) {
      b.weights[0] = 1.0;
      continue;
    }
    double norm = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      b.weights[s] = 1.0 / nearest[s].distance;
      norm += b.weights[s];
    }
    for (double& w : b.weights) w /= norm;
  }
  return bindings;
}

NodeAdjacency build_node_graph(const NodeSet& nodes, int k_node) {
  if (k_node < 1) throw InputError("build_node_graph: k_node must be positive");
  if (nodes.size() <= static_cast<std::size_t>(k_node)) {
    throw InputError("build_node_graph: k_node = " + std::to_string(k_node) + " needs more than " +
                     std::to_string(k_node) + " nodes, got " + std::to_string(nodes.size()));
  }
  const SpatialIndex index(nodes.positions);
  NodeAdjacency adj(nodes.size());
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    auto nearest = index.k_nearest(nodes.positions[j], static_cast<std::size_t>(k_node) + 1);
    // Drop the node itself; with duplicate positions it may not be listed first.
    auto self = std::find_if(nearest.begin(), nearest.end(),
                             [&](const Neighbor& nb) { return nb.id == static_cast<int>(j); });
    if (self != nearest.end()) {
      nearest.erase(self);
    } else {
      nearest.pop_back();
    }
    for (const auto& nb : nearest) {
      adj[j].push_back(nb.id);
      adj[static_cast<std::size_t>(nb.id)].push_back(static_cast<int>(j));
    }
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adj;
}

DeformationGraph build_deformation_graph(const PointCloud& source, const GraphParams& params) {
  if (params.node_count < params.k_influence) {
    throw InputError("deformation graph: node count " + std::to_string(params.node_count) +
                     " is smaller than k_influence " + std::to_string(params.k_influence));
  }
  DeformationGraph graph;
  graph.nodes = sample_nodes(source, params.node_count, params.seed, params.sampling);
  graph.adjacency = build_node_graph(graph.nodes, params.k_node);
  graph.bindings = bind_vertices(source, graph.nodes, params.k_influence);
  graph.k_influence = params.k_influence;
  graph.members.assign(graph.nodes.size(), {});
  for (std::size_t v = 0; v < graph.bindings.size(); ++v) {
    const auto& b = graph.bindings[v];
    for (std::size_t s = 0; s < b.node_ids.size(); ++s) {
      if (b.weights[s] > 0.0) {
        graph.members[static_cast<std::size_t>(b.node_ids[s])].push_back({static_cast<int>(v), static_cast<int>(s)});
      }
    }
  }
  return graph;
}

Point3 deform_point(const Point3& point, const VertexBinding& binding, const NodeSet& nodes,
                    const NodeTransformSet& transforms) {
  Eigen::Vector3d displacement = Eigen::Vector3d::Zero();
  for (std::size_t s = 0; s < binding.node_ids.size(); ++s) {
    const double w = binding.weights[s];
    if (w == 0.0) continue;
    const auto j = static_cast<std::size_t>(binding.node_ids[s]);
    const Eigen::Vector3d local = point - nodes.positions[j];
    displacement += w * ((transforms.rotations[j] * local - local) + transforms.translations[j]);
  }
  return point + displacement;
}

PointCloud deform_points(const PointCloud& points, const std::vector<VertexBinding>& bindings,
                         const NodeSet& nodes, const NodeTransformSet& transforms) {
  if (bindings.size() != points.size()) throw InputError("deform_points: one binding per point is required");
  if (transforms.size() != nodes.size()) throw InputError("deform_points: transforms must cover every node");
  PointCloud out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = deform_point(points[i], bindings[i], nodes, transforms);
  return out;
}

LandmarkSet transfer_landmarks(const LandmarkSet& landmarks, const NodeSet& nodes,
                               const NodeTransformSet& transforms, int k_influence) {
  if (landmarks.empty()) return landmarks;
  const PointCloud positions = landmarks.positions();
  if (!all_finite(positions)) throw InputError("transfer_landmarks: non-finite landmark position");
  const auto bindings = bind_vertices(positions, nodes, k_influence);
  return landmarks.with_positions(deform_points(positions, bindings, nodes, transforms));
}

}  // namespace defmark
