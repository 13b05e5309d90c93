#pragma once

#include <algorithm>
#include <limits>
#include <queue>
#include <stdexcept>
#include <vector>

#include "seqrecon/fusion.hpp"
#include "seqrecon/mesh.hpp"
#include "seqrecon/parallel.hpp"

namespace seqrecon {

// ---------------------------------------------------------------------------
// K-means over aligned graph nodes.

struct NodeClusters {
  int K = 0;
  std::vector<int> assignment;  // per input point
  std::vector<Vec3> centers;
};

// Deterministic K-means: maximin seeding from the point farthest from the
// global mean, ties to the lower index, Lloyd iterations until assignments
// stabilize.
inline NodeClusters cluster_nodes(const std::vector<Vec3>& points, int K, int max_iterations = 100) {
  const int n = static_cast<int>(points.size());
  if (K < 1 || K > n) throw std::invalid_argument("cluster_nodes: bad K");
  {
    std::vector<Vec3> distinct = points;
    std::sort(distinct.begin(), distinct.end(), [](const Vec3& a, const Vec3& b) {
      return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
    });
    distinct.erase(std::unique(distinct.begin(), distinct.end(),
                               [](const Vec3& a, const Vec3& b) { return a == b; }),
                   distinct.end());
    if (static_cast<int>(distinct.size()) < K)
      throw std::invalid_argument("cluster_nodes: K exceeds distinct point count");
  }

  NodeClusters out;
  out.K = K;
  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= n;
  std::vector<int> seeds;
  {
    int first = 0;
    for (int i = 1; i < n; ++i)
      if ((points[i] - mean).squaredNorm() > (points[first] - mean).squaredNorm()) first = i;
    seeds.push_back(first);
    std::vector<double> mindist(n);
    for (int i = 0; i < n; ++i) mindist[i] = (points[i] - points[first]).squaredNorm();
    while (static_cast<int>(seeds.size()) < K) {
      int next = 0;
      for (int i = 1; i < n; ++i)
        if (mindist[i] > mindist[next]) next = i;
      seeds.push_back(next);
      for (int i = 0; i < n; ++i)
        mindist[i] = std::min(mindist[i], (points[i] - points[next]).squaredNorm());
    }
  }
  out.centers.reserve(K);
  for (int s : seeds) out.centers.push_back(points[s]);
  out.assignment.assign(n, -1);

  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points[i] - out.centers[0]).squaredNorm();
      for (int j = 1; j < K; ++j) {
        double d = (points[i] - out.centers[j]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (out.assignment[i] != best) {
        out.assignment[i] = best;
        changed = true;
      }
    }
    if (!changed) break;

    std::vector<Vec3> sums(K, Vec3::Zero());
    std::vector<int> counts(K, 0);
    for (int i = 0; i < n; ++i) {
      sums[out.assignment[i]] += points[i];
      ++counts[out.assignment[i]];
    }
    for (int j = 0; j < K; ++j) {
      if (counts[j] > 0) {
        out.centers[j] = sums[j] / counts[j];
        continue;
      }
      // empty cluster: steal the point farthest from its own center
      int worst = 0;
      double worst_d = -1;
      for (int i = 0; i < n; ++i) {
        double d = (points[i] - out.centers[out.assignment[i]]).squaredNorm();
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      out.centers[j] = points[worst];
      out.assignment[worst] = j;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vertex-cluster affinity (mean of original skinning weights over the
// K-nearest aligned vertices).

// One aligned input vertex: where it landed in the reference pose and which
// frame-local weight row it carries.
struct AlignedVertexSet {
  std::vector<Vec3> positions;      // aligned position per record
  std::vector<int> frame;           // source frame per record
  std::vector<int> vertex;          // frame-local vertex id per record
};

namespace detail {

inline std::vector<int> k_nearest_points(const PointGrid& grid, const std::vector<Vec3>& all,
                                         const Vec3& x, int k) {
  // expanding radius search; deterministic (distance, index) order
  double radius = 0;
  {
    int seed = grid.nearest(x);
    radius = std::max((all[seed] - x).norm(), 1e-12);
  }
  std::vector<std::pair<double, int>> found;
  for (int attempt = 0; attempt < 64; ++attempt) {
    found.clear();
    grid.for_each_in_radius(x, radius, [&](int idx, double d) { found.push_back({d, idx}); });
    if (static_cast<int>(found.size()) >= k) break;
    radius *= 2.0;
  }
  std::sort(found.begin(), found.end());
  if (static_cast<int>(found.size()) > k) found.resize(k);
  std::vector<int> out;
  out.reserve(found.size());
  for (const auto& [d, idx] : found) out.push_back(idx);
  return out;
}

}  // namespace detail

// w(v~, c_j) for every template vertex and cluster. `cluster_of_node[f][t]`
// maps frame f's node t to its cluster. S counts only pairs whose weight
// exists; a vertex-cluster pair with no support scores 0.
inline std::vector<std::vector<double>> vertex_cluster_weights(
    const std::vector<Vec3>& template_vertices, const AlignedVertexSet& aligned,
    const FrameSequence& seq, const std::vector<std::vector<int>>& cluster_of_node, int K,
    int neighborhood = 8) {
  if (aligned.positions.empty()) throw std::invalid_argument("vertex_cluster_weights: no data");
  Aabb box;
  for (const auto& p : aligned.positions) box.expand(p);
  PointGrid grid(&aligned.positions, 1e-3 + 0.02 * box.diagonal());

  std::vector<std::vector<double>> weights(template_vertices.size(),
                                           std::vector<double>(K, 0.0));
  parallel_for(0, template_vertices.size(), [&](std::size_t i) {
    std::vector<int> nearest =
        detail::k_nearest_points(grid, aligned.positions, template_vertices[i], neighborhood);
    std::vector<double> sum(K, 0.0);
    std::vector<int> count(K, 0);
    for (int rec : nearest) {
      int f = aligned.frame[rec];
      int v = aligned.vertex[rec];
      for (const auto& [node, w] : seq.frames[f].weights.rows[v]) {
        int cluster = cluster_of_node[f][node];
        sum[cluster] += w;
        ++count[cluster];
      }
    }
    for (int j = 0; j < K; ++j)
      if (count[j] > 0) weights[i][j] = sum[j] / count[j];
  });
  return weights;
}

// ---------------------------------------------------------------------------
// Max-flow (Dinic) with accumulated terminal capacities.

class MaxFlow {
 public:
  explicit MaxFlow(int nodes) : terminal_(nodes, 0.0), adj_(nodes + 2) {}

  void add_tweights(int i, double cap_source, double cap_sink) {
    terminal_[i] += cap_source - cap_sink;
  }

  void add_edge(int i, int j, double cap, double rev_cap) {
    adj_[i].push_back({j, cap, static_cast<int>(adj_[j].size())});
    adj_[j].push_back({i, rev_cap, static_cast<int>(adj_[i].size()) - 1});
  }

  // Returns max flow; afterwards source_side tells the min-cut segment.
  double solve() {
    const int n = static_cast<int>(terminal_.size());
    source_ = n;
    sink_ = n + 1;
    for (int i = 0; i < n; ++i) {
      if (terminal_[i] > 0)
        add_edge(source_, i, terminal_[i], 0.0);
      else if (terminal_[i] < 0)
        add_edge(i, sink_, -terminal_[i], 0.0);
    }
    double flow = 0;
    while (bfs_levels()) {
      iter_.assign(adj_.size(), 0);
      double pushed;
      while ((pushed = dfs(source_, std::numeric_limits<double>::max())) > 1e-12) flow += pushed;
    }
    return flow;
  }

  bool source_side(int i) const { return level_[i] >= 0; }

 private:
  struct Edge {
    int to;
    double cap;
    int rev;
  };

  bool bfs_levels() {
    level_.assign(adj_.size(), -1);
    std::queue<int> q;
    level_[source_] = 0;
    q.push(source_);
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (const auto& e : adj_[u]) {
        if (e.cap > 1e-12 && level_[e.to] < 0) {
          level_[e.to] = level_[u] + 1;
          q.push(e.to);
        }
      }
    }
    return level_[sink_] >= 0;
  }

  double dfs(int u, double limit) {
    if (u == sink_) return limit;
    for (std::size_t& i = iter_[u]; i < adj_[u].size(); ++i) {
      Edge& e = adj_[u][i];
      if (e.cap <= 1e-12 || level_[e.to] != level_[u] + 1) continue;
      double got = dfs(e.to, std::min(limit, e.cap));
      if (got > 1e-12) {
        e.cap -= got;
        adj_[e.to][e.rev].cap += got;
        return got;
      }
    }
    return 0.0;
  }

  std::vector<double> terminal_;
  std::vector<std::vector<Edge>> adj_;
  std::vector<std::size_t> iter_;
  std::vector<int> level_;
  int source_ = -1, sink_ = -1;
};

// ---------------------------------------------------------------------------
// Multi-label segmentation by alpha-expansion with Potts smoothness.

struct PatchSegmentation {
  int cluster_count = 0;
  std::vector<int> labels;  // per template vertex, final patch id
  std::vector<Vec3> centroids;
  std::vector<std::vector<int>> patch_vertices;

  int patch_count() const { return static_cast<int>(centroids.size()); }
};

// Eq.-10 energy of a labeling: -sum_i w(i, L_i) + lambda * Potts boundary.
inline double segmentation_energy(const std::vector<std::vector<double>>& weights,
                                  const std::vector<std::array<int, 2>>& edges,
                                  const std::vector<int>& labels, double lambda) {
  double e = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) e -= weights[i][labels[i]];
  for (const auto& edge : edges)
    if (labels[edge[0]] != labels[edge[1]]) e += lambda;
  return e;
}

namespace detail {

// One expansion move: every vertex either keeps its label or takes alpha.
inline bool expand_label(const std::vector<std::vector<double>>& data_cost,
                         const std::vector<std::array<int, 2>>& edges, double lambda, int alpha,
                         std::vector<int>& labels,
                         const std::vector<std::vector<double>>& weights, double& energy) {
  const int n = static_cast<int>(labels.size());
  MaxFlow flow(n);
  for (int i = 0; i < n; ++i) {
    double keep = data_cost[i][labels[i]];
    double take = data_cost[i][alpha];
    flow.add_tweights(i, take, keep);  // cap_source = E(x=1), cap_sink = E(x=0)
  }
  for (const auto& edge : edges) {
    int p = edge[0], q = edge[1];
    double A = labels[p] != labels[q] ? lambda : 0.0;  // E00
    double B = labels[p] != alpha ? lambda : 0.0;      // E01
    double C = labels[q] != alpha ? lambda : 0.0;      // E10
    double D = 0.0;                                    // E11
    flow.add_tweights(p, D, A);
    double b = B - A, c = C - D;
    if (b < 0) {
      // [[0,B],[C,0]] = x-only B + y-only (-B) + edge (B+C) on (x=1,y=0)
      flow.add_tweights(p, 0, b);
      flow.add_tweights(q, 0, -b);
      flow.add_edge(p, q, 0, b + c);
    } else if (c < 0) {
      flow.add_tweights(p, 0, -c);
      flow.add_tweights(q, 0, c);
      flow.add_edge(p, q, b + c, 0);
    } else {
      flow.add_edge(p, q, b, c);
    }
  }
  flow.solve();
  std::vector<int> moved = labels;
  for (int i = 0; i < n; ++i)
    if (!flow.source_side(i)) moved[i] = alpha;
  double moved_energy = segmentation_energy(weights, edges, moved, lambda);
  if (moved_energy < energy - 1e-12) {
    labels = std::move(moved);
    energy = moved_energy;
    return true;
  }
  return false;
}

}  // namespace detail

// Raw multi-label optimization (no connectivity post-split). Data costs are
// the per-vertex max-shifted negated weights, which preserves the argmin.
inline std::vector<int> graph_cut_labels(const std::vector<std::vector<double>>& weights,
                                          const std::vector<std::array<int, 2>>& edges,
                                          double lambda, int max_sweeps = 4) {
  const int n = static_cast<int>(weights.size());
  if (n == 0) throw std::invalid_argument("graph_cut_labels: no vertices");
  const int K = static_cast<int>(weights.front().size());

  std::vector<std::vector<double>> data_cost(n, std::vector<double>(K, 0.0));
  std::vector<int> labels(n, 0);
  for (int i = 0; i < n; ++i) {
    double best = weights[i][0];
    int arg = 0;
    for (int j = 1; j < K; ++j)
      if (weights[i][j] > best) {
        best = weights[i][j];
        arg = j;
      }
    if (best <= 0.0)
      throw std::runtime_error("graph_cut_labels: vertex " + std::to_string(i) +
                               " has no cluster support");
    labels[i] = arg;
    for (int j = 0; j < K; ++j) data_cost[i][j] = best - weights[i][j];
  }

  double energy = segmentation_energy(weights, edges, labels, lambda);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool improved = false;
    for (int alpha = 0; alpha < K; ++alpha)
      improved |= detail::expand_label(data_cost, edges, lambda, alpha, labels, weights, energy);
    if (!improved) break;
  }
  return labels;
}

// Full segmentation: graph cut, then split disconnected labels into
// connected patches and compute centroids.
inline PatchSegmentation segment(const TriMesh& template_mesh,
                                 const std::vector<std::vector<double>>& weights, double lambda,
                                 int max_sweeps = 4) {
  if (weights.size() != template_mesh.vertices.size())
    throw std::invalid_argument("segment: weight table size mismatch");
  auto edges = mesh_edges(template_mesh);
  std::vector<int> raw = graph_cut_labels(weights, edges, lambda, max_sweeps);

  // connected-component split per label
  std::vector<std::vector<int>> adjacency(template_mesh.vertices.size());
  for (const auto& e : edges) {
    adjacency[e[0]].push_back(e[1]);
    adjacency[e[1]].push_back(e[0]);
  }
  PatchSegmentation seg;
  seg.cluster_count = static_cast<int>(weights.front().size());
  seg.labels.assign(template_mesh.vertices.size(), -1);
  for (std::size_t seed = 0; seed < raw.size(); ++seed) {
    if (seg.labels[seed] >= 0) continue;
    int patch = seg.patch_count();
    seg.centroids.push_back(Vec3::Zero());
    seg.patch_vertices.push_back({});
    std::vector<int> stack{static_cast<int>(seed)};
    seg.labels[seed] = patch;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      seg.patch_vertices[patch].push_back(u);
      seg.centroids[patch] += template_mesh.vertices[u];
      for (int v : adjacency[u])
        if (seg.labels[v] < 0 && raw[v] == raw[seed]) {
          seg.labels[v] = patch;
          stack.push_back(v);
        }
    }
    seg.centroids[patch] /= static_cast<double>(seg.patch_vertices[patch].size());
    std::sort(seg.patch_vertices[patch].begin(), seg.patch_vertices[patch].end());
  }
  return seg;
}

// ---------------------------------------------------------------------------
// Verification report.

struct SegmentationReport {
  bool full_coverage = false;
  bool patches_connected = false;
  bool count_ok = false;
  std::vector<double> patch_areas;
  std::vector<double> patch_boundary_lengths;

  bool all_ok() const { return full_coverage && patches_connected && count_ok; }
};

inline SegmentationReport verify_segmentation(const PatchSegmentation& seg,
                                              const TriMesh& template_mesh) {
  SegmentationReport report;
  report.full_coverage = !seg.labels.empty();
  for (int l : seg.labels)
    if (l < 0 || l >= seg.patch_count()) report.full_coverage = false;
  report.count_ok = seg.patch_count() <= std::max(seg.cluster_count, 1);

  // connectivity per patch over the template edges
  std::vector<std::vector<int>> adjacency(template_mesh.vertices.size());
  for (const auto& e : mesh_edges(template_mesh)) {
    adjacency[e[0]].push_back(e[1]);
    adjacency[e[1]].push_back(e[0]);
  }
  report.patches_connected = true;
  for (int patch = 0; patch < seg.patch_count(); ++patch) {
    const auto& verts = seg.patch_vertices[patch];
    if (verts.empty()) {
      report.patches_connected = false;
      continue;
    }
    std::vector<char> seen(template_mesh.vertices.size(), 0);
    std::vector<int> stack{verts.front()};
    seen[verts.front()] = 1;
    std::size_t reached = 0;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      ++reached;
      for (int v : adjacency[u])
        if (!seen[v] && seg.labels[v] == patch) {
          seen[v] = 1;
          stack.push_back(v);
        }
    }
    if (reached != verts.size()) report.patches_connected = false;
  }

  report.patch_areas.assign(seg.patch_count(), 0.0);
  for (int f = 0; f < template_mesh.face_count(); ++f) {
    const auto& face = template_mesh.faces[f];
    int a = seg.labels[face[0]], b = seg.labels[face[1]], c = seg.labels[face[2]];
    int owner = a == b || a == c ? a : (b == c ? b : std::min({a, b, c}));
    if (owner >= 0 && owner < seg.patch_count())
      report.patch_areas[owner] += face_area(template_mesh, f);
  }
  report.patch_boundary_lengths.assign(seg.patch_count(), 0.0);
  for (const auto& e : mesh_edges(template_mesh)) {
    int a = seg.labels[e[0]], b = seg.labels[e[1]];
    if (a == b) continue;
    double len = (template_mesh.vertices[e[0]] - template_mesh.vertices[e[1]]).norm();
    if (a >= 0 && a < seg.patch_count()) report.patch_boundary_lengths[a] += len;
    if (b >= 0 && b < seg.patch_count()) report.patch_boundary_lengths[b] += len;
  }
  return report;
}

}  // namespace seqrecon
