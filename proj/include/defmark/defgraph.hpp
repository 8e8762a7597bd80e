#pragma once

#include "defmark/geometry.hpp"
#include "defmark/model_io.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace defmark {

enum class NodeSampling {
  Uniform,         // uniform without replacement over vertex indices
  FarthestPoint,   // greedy farthest-point; deterministic given the seed's first pick
};

/// Graph nodes: a subset of source vertices, kept in ascending vertex order.
struct NodeSet {
  std::vector<int> vertex_ids;
  PointCloud positions;
  std::uint64_t sampling_seed = 0;

  std::size_t size() const { return positions.size(); }
};

/// Blend of the k nearest nodes at one point, nearest first.
struct VertexBinding {
  std::vector<int> node_ids;
  std::vector<double> weights;
};

/// Symmetrized node-to-node neighbor lists, each sorted ascending.
using NodeAdjacency = std::vector<std::vector<int>>;

/// A vertex bound to a node, and the slot of that node inside the vertex binding.
struct NodeMember {
  int vertex = -1;
  int slot = -1;
};

struct DeformationGraph {
  NodeSet nodes;
  NodeAdjacency adjacency;
  std::vector<VertexBinding> bindings;        // one per source vertex
  std::vector<std::vector<NodeMember>> members;  // inverse of bindings, per node
  int k_influence = 0;
};

/// Per-node rigid transforms, applied about the node position.
struct NodeTransformSet {
  std::vector<Eigen::Matrix3d> rotations;
  std::vector<Eigen::Vector3d> translations;

  static NodeTransformSet identity(std::size_t node_count);
  std::size_t size() const { return rotations.size(); }
};

struct GraphParams {
  int node_count = 500;
  int k_influence = 10;
  int k_node = 6;
  std::uint64_t seed = 0;
  NodeSampling sampling = NodeSampling::Uniform;
};

/// Throws InputError when node_count exceeds the vertex count or is below 1.
NodeSet sample_nodes(const PointCloud& source, int node_count, std::uint64_t seed,
                     NodeSampling sampling = NodeSampling::Uniform);

/// Inverse-distance weights over the k nearest nodes (Euclidean search).
///
/// A point closer than 1e-9 * (node bounding-box diagonal) to its nearest
/// node is treated as coincident with it and bound to that node alone with
/// weight 1; this is the limit of the inverse-distance blend as the point
/// approaches the node.
std::vector<VertexBinding> bind_vertices(const PointCloud& points, const NodeSet& nodes, int k_influence);

/// Links each node to its k_node nearest other nodes, then symmetrizes.
NodeAdjacency build_node_graph(const NodeSet& nodes, int k_node);

DeformationGraph build_deformation_graph(const PointCloud& source, const GraphParams& params);

/// v' = sum_j w_j [R_j (v - n_j) + n_j + T_j], evaluated in displacement form
/// v + sum_j w_j [(R_j - I)(v - n_j) + T_j], which is equal whenever the
/// weights sum to one and reproduces v exactly under identity transforms.
Point3 deform_point(const Point3& point, const VertexBinding& binding, const NodeSet& nodes,
                    const NodeTransformSet& transforms);

PointCloud deform_points(const PointCloud& points, const std::vector<VertexBinding>& bindings,
                         const NodeSet& nodes, const NodeTransformSet& transforms);

/// Binds each landmark like a vertex (same k) and pushes it through the deformation.
LandmarkSet transfer_landmarks(const LandmarkSet& landmarks, const NodeSet& nodes,
                               const NodeTransformSet& transforms, int k_influence);

}  // namespace defmark
