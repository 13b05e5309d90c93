#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "seqrecon/geodesic.hpp"
#include "seqrecon/mesh.hpp"
#include "seqrecon/parallel.hpp"

namespace seqrecon {

// Embedded deformation graph: nodes coincide with mesh vertices, the edge
// relation links nodes that blend their motion on at least one vertex.
struct DeformGraph {
  std::vector<Vec3> nodes;
  std::vector<int> node_vertices;          // vertex each node was sampled at
  std::vector<std::array<int, 2>> edges;   // unique pairs, a < b
  std::vector<std::vector<int>> neighbors; // symmetric adjacency, sorted

  int node_count() const { return static_cast<int>(nodes.size()); }
};

// Per-vertex rows of (node id, weight), at most K entries, summing to 1.
struct SkinningWeights {
  int K = 4;
  std::vector<std::vector<std::pair<int, double>>> rows;
  std::vector<double> support_radius;
};

struct NodeMotion {
  std::vector<Mat3> A;
  std::vector<Vec3> b;

  int node_count() const { return static_cast<int>(A.size()); }

  static NodeMotion identity(int m) {
    NodeMotion motion;
    motion.A.assign(m, Mat3::Identity());
    motion.b.assign(m, Vec3::Zero());
    return motion;
  }
};

struct RigidMotion {
  Mat3 R = Mat3::Identity();
  Vec3 T = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + T; }
};

// Per-vertex rigid motions extracted from a node motion field.
using VertexRigidMotions = std::vector<RigidMotion>;

inline double skin_falloff(double d, double r) {
  if (r <= 0.0) return d == 0.0 ? 1.0 : 0.0;
  double q = 1.0 - (d * d) / (r * r);
  if (q <= 0.0) return 0.0;
  return q * q * q;
}

inline int default_node_count(int vertex_count) {
  return std::clamp(vertex_count / 90, 16, 512);
}

namespace detail {

// Farthest-point sampling in geodesic distance. The seed is discarded in
// favour of the vertex farthest from it, so chains pick their endpoints.
inline std::vector<int> farthest_point_sample(const EdgeGraph& graph, int target_count) {
  const int nv = static_cast<int>(graph.adj.size());
  std::vector<double> dist, mindist;
  dijkstra(graph, 0, dist);
  int first = 0;
  for (int v = 0; v < nv; ++v)
    if (std::isfinite(dist[v]) && dist[v] > dist[first]) first = v;
  if (!std::isfinite(dist[first])) throw std::invalid_argument("sample_nodes: mesh not connected");

  std::vector<int> nodes{first};
  std::vector<char> chosen(nv, 0);
  chosen[first] = 1;
  dijkstra(graph, first, mindist);
  while (static_cast<int>(nodes.size()) < target_count) {
    int next = -1;
    for (int v = 0; v < nv; ++v) {
      if (chosen[v]) continue;
      if (next < 0 || mindist[v] > mindist[next]) next = v;
    }
    if (next < 0) break;
    if (!std::isfinite(mindist[next]))
      throw std::invalid_argument("sample_nodes: mesh not connected");
    nodes.push_back(next);
    chosen[next] = 1;
    dijkstra(graph, next, dist);
    for (int v = 0; v < nv; ++v) mindist[v] = std::min(mindist[v], dist[v]);
  }
  return nodes;
}

inline std::vector<std::vector<std::pair<int, double>>> weight_rows_from_nearest(
    const std::vector<std::vector<std::pair<int, double>>>& nearest, int k,
    std::vector<double>* radius_out) {
  const std::size_t nv = nearest.size();
  std::vector<std::vector<std::pair<int, double>>> rows(nv);
  if (radius_out) radius_out->assign(nv, 0.0);
  for (std::size_t v = 0; v < nv; ++v) {
    const auto& cand = nearest[v];
    if (static_cast<int>(cand.size()) < k + 1)
      throw std::invalid_argument("skinning weights: vertex reaches fewer than K+1 nodes");
    double r = cand[k].second;  // distance to the (K+1)-th nearest node
    if (radius_out) (*radius_out)[v] = r;
    double sum = 0;
    auto& row = rows[v];
    for (int i = 0; i < k; ++i) {
      double w = skin_falloff(cand[i].second, r);
      if (w > 0.0) {
        row.push_back({cand[i].first, w});
        sum += w;
      }
    }
    if (row.empty() || sum <= 0.0) {
      // all K candidates sit exactly at radius r; fall back to the nearest
      row = {{cand[0].first, 1.0}};
      sum = 1.0;
    }
    for (auto& [node, w] : row) w /= sum;
    std::sort(row.begin(), row.end());
  }
  return rows;
}

inline void edges_from_rows(const std::vector<std::vector<std::pair<int, double>>>& rows,
                            DeformGraph& graph) {
  std::vector<std::array<int, 2>> edges;
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i)
      for (std::size_t j = i + 1; j < row.size(); ++j)
        edges.push_back({row[i].first, row[j].first});
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  graph.edges = edges;
  graph.neighbors.assign(graph.nodes.size(), {});
  for (const auto& e : edges) {
    graph.neighbors[e[0]].push_back(e[1]);
    graph.neighbors[e[1]].push_back(e[0]);
  }
  for (auto& n : graph.neighbors) std::sort(n.begin(), n.end());
}

}  // namespace detail

// Farthest-point node sampling plus shared-influence edges. A node left with
// no shared-influence neighbor is linked to its geodesically nearest node so
// the smoothness term never sees an isolated node.
inline DeformGraph sample_nodes(const TriMesh& mesh, int target_count, int skin_k = 4) {
  if (target_count < 2) throw std::invalid_argument("sample_nodes: target_count must be >= 2");
  if (target_count > mesh.vertex_count())
    throw std::invalid_argument("sample_nodes: target_count exceeds vertex count");
  EdgeGraph egraph = build_bridged_graph(mesh);
  DeformGraph graph;
  graph.node_vertices = detail::farthest_point_sample(egraph, target_count);
  for (int v : graph.node_vertices) graph.nodes.push_back(mesh.vertices[v]);

  const int m = graph.node_count();
  int k_eff = std::min(skin_k, m - 1);
  auto nearest = k_nearest_sources(egraph, graph.node_vertices, k_eff + 1);
  auto rows = detail::weight_rows_from_nearest(nearest, k_eff, nullptr);
  detail::edges_from_rows(rows, graph);

  for (int t = 0; t < m; ++t) {
    if (!graph.neighbors[t].empty()) continue;
    std::vector<double> dist;
    detail::dijkstra(egraph, graph.node_vertices[t], dist);
    int best = -1;
    for (int s = 0; s < m; ++s) {
      if (s == t) continue;
      if (best < 0 || dist[graph.node_vertices[s]] < dist[graph.node_vertices[best]]) best = s;
    }
    if (best >= 0) {
      int a = std::min(t, best), b = std::max(t, best);
      graph.edges.push_back({a, b});
      graph.neighbors[a].push_back(b);
      graph.neighbors[b].push_back(a);
    }
  }
  std::sort(graph.edges.begin(), graph.edges.end());
  graph.edges.erase(std::unique(graph.edges.begin(), graph.edges.end()), graph.edges.end());
  for (auto& n : graph.neighbors) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return graph;
}

// w_t(v) = max(0, (1 - d^2/r^2)^3) over the K geodesically nearest nodes,
// r = distance to the (K+1)-th, rows normalized to sum 1.
inline SkinningWeights compute_skinning_weights(const TriMesh& mesh, const DeformGraph& graph,
                                                int K = 4) {
  if (K < 1) throw std::invalid_argument("compute_skinning_weights: K must be >= 1");
  if (graph.node_count() < K + 1)
    throw std::invalid_argument("compute_skinning_weights: need at least K+1 nodes");
  EdgeGraph egraph = build_bridged_graph(mesh);
  auto nearest = k_nearest_sources(egraph, graph.node_vertices, K + 1);
  SkinningWeights weights;
  weights.K = K;
  weights.rows = detail::weight_rows_from_nearest(nearest, K, &weights.support_radius);
  return weights;
}

// Weight row for a free point, using Euclidean distance to the nodes. Used
// when a deformed position must be skinned onto another frame's graph.
inline std::vector<std::pair<int, double>> euclidean_weight_row(const Vec3& p,
                                                                const DeformGraph& graph, int K) {
  const int m = graph.node_count();
  int k_eff = std::min(K, m - 1);
  if (k_eff < 1) throw std::invalid_argument("euclidean_weight_row: need at least 2 nodes");
  std::vector<std::pair<double, int>> cand(m);
  for (int t = 0; t < m; ++t) cand[t] = {(graph.nodes[t] - p).norm(), t};
  std::sort(cand.begin(), cand.end());
  double r = cand[k_eff].first;
  std::vector<std::pair<int, double>> row;
  double sum = 0;
  for (int i = 0; i < k_eff; ++i) {
    double w = skin_falloff(cand[i].first, r);
    if (w > 0.0) {
      row.push_back({cand[i].second, w});
      sum += w;
    }
  }
  if (row.empty() || sum <= 0.0) {
    row = {{cand[0].second, 1.0}};
    sum = 1.0;
  }
  for (auto& [node, w] : row) w /= sum;
  std::sort(row.begin(), row.end());
  return row;
}

// v' = sum_t w_t(v) [A_t (v - g_t) + g_t + b_t]
inline Vec3 deform_vertex(const Vec3& v, const std::vector<std::pair<int, double>>& row,
                          const DeformGraph& graph, const NodeMotion& motion) {
  Vec3 out = Vec3::Zero();
  for (const auto& [t, w] : row)
    out += w * (motion.A[t] * (v - graph.nodes[t]) + graph.nodes[t] + motion.b[t]);
  return out;
}

// Nearest rotation in Frobenius norm; determinant forced to +1.
inline Mat3 polar_rotation(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat3 fix = Mat3::Identity();
    fix(2, 2) = -1.0;
    R = svd.matrixU() * fix * svd.matrixV().transpose();
  }
  return R;
}

// R = polar factor of the blended affine, T chosen so R v + T = f(v) exactly.
inline RigidMotion decompose_vertex_motion(const Vec3& v,
                                           const std::vector<std::pair<int, double>>& row,
                                           const DeformGraph& graph, const NodeMotion& motion) {
  Mat3 blend = Mat3::Zero();
  for (const auto& [t, w] : row) blend += w * motion.A[t];
  if (blend.determinant() <= 1e-9)
    throw std::domain_error("decompose_vertex_motion: degenerate blended matrix");
  RigidMotion rigid;
  rigid.R = polar_rotation(blend);
  rigid.T = deform_vertex(v, row, graph, motion) - rigid.R * v;
  return rigid;
}

inline RigidMotion invert_rigid_motion(const RigidMotion& m) {
  RigidMotion inv;
  inv.R = m.R.transpose();
  inv.T = -(m.R.transpose() * m.T);
  return inv;
}

// Deform every vertex; normals are rotated by the per-vertex polar factor.
inline TriMesh deform_mesh(const TriMesh& mesh, const SkinningWeights& weights,
                           const DeformGraph& graph, const NodeMotion& motion) {
  TriMesh out = mesh;
  parallel_for(0, mesh.vertices.size(), [&](std::size_t i) {
    out.vertices[i] = deform_vertex(mesh.vertices[i], weights.rows[i], graph, motion);
  });
  if (mesh.has_normals()) {
    parallel_for(0, mesh.vertices.size(), [&](std::size_t i) {
      Mat3 blend = Mat3::Zero();
      for (const auto& [t, w] : weights.rows[i]) blend += w * motion.A[t];
      out.normals[i] = (polar_rotation(blend) * mesh.normals[i]).normalized();
    });
  }
  return out;
}

inline VertexRigidMotions decompose_mesh_motion(const TriMesh& mesh,
                                                const SkinningWeights& weights,
                                                const DeformGraph& graph,
                                                const NodeMotion& motion) {
  VertexRigidMotions rigids(mesh.vertices.size());
  parallel_for(0, mesh.vertices.size(), [&](std::size_t i) {
    rigids[i] = decompose_vertex_motion(mesh.vertices[i], weights.rows[i], graph, motion);
  });
  return rigids;
}

// Weighted rigid-motion average: rotations via sign-aligned quaternion mean,
// translations linearly. Weights must be nonnegative and not all zero.
inline RigidMotion average_rigid_motions(const std::vector<RigidMotion>& motions,
                                         const std::vector<double>& weights) {
  if (motions.empty() || motions.size() != weights.size())
    throw std::invalid_argument("average_rigid_motions: bad inputs");
  double wsum = 0;
  for (double w : weights) wsum += w;
  if (wsum <= 0.0) throw std::invalid_argument("average_rigid_motions: zero total weight");
  Eigen::Quaterniond ref(motions[0].R);
  Eigen::Vector4d qacc = Eigen::Vector4d::Zero();
  Vec3 tacc = Vec3::Zero();
  for (std::size_t i = 0; i < motions.size(); ++i) {
    Eigen::Quaterniond q(motions[i].R);
    if (q.coeffs().dot(ref.coeffs()) < 0.0) q.coeffs() = -q.coeffs();
    qacc += (weights[i] / wsum) * q.coeffs();
    tacc += (weights[i] / wsum) * motions[i].T;
  }
  Eigen::Quaterniond mean;
  mean.coeffs() = qacc.normalized();
  RigidMotion out;
  out.R = mean.toRotationMatrix();
  out.T = tacc;
  return out;
}

}  // namespace seqrecon
