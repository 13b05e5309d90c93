#pragma once

#include <limits>
#include <queue>
#include <stdexcept>
#include <vector>

#include "seqrecon/mesh.hpp"

namespace seqrecon {

// Shortest-path distances over the mesh edge graph (Dijkstra). This is the
// geodesic approximation used everywhere: skinning weights, node sampling and
// the occluded-node fallback only need relative distances.
struct GeodesicField {
  int source = -1;
  std::vector<double> distances;  // +inf where unreachable
};

namespace detail {

inline void dijkstra(const EdgeGraph& graph, int source, std::vector<double>& dist) {
  const double inf = std::numeric_limits<double>::infinity();
  dist.assign(graph.adj.size(), inf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> queue;
  dist[source] = 0.0;
  queue.push({0.0, source});
  while (!queue.empty()) {
    auto [d, u] = queue.top();
    queue.pop();
    if (d > dist[u]) continue;
    for (auto [v, len] : graph.adj[u]) {
      double nd = d + len;
      if (nd < dist[v]) {
        dist[v] = nd;
        queue.push({nd, v});
      }
    }
  }
}

}  // namespace detail

inline GeodesicField geodesic_distances(const EdgeGraph& graph, int source) {
  if (source < 0 || source >= static_cast<int>(graph.adj.size()))
    throw std::invalid_argument("geodesic_distances: invalid source vertex");
  GeodesicField field;
  field.source = source;
  detail::dijkstra(graph, source, field.distances);
  return field;
}

inline GeodesicField geodesic_distances(const TriMesh& mesh, int source) {
  return geodesic_distances(EdgeGraph::build(mesh), source);
}

// Edge graph with minimal Euclidean bridges between connected components, so
// geodesic machinery keeps working on truncated frames that fall apart.
// Connected meshes come back unchanged.
inline EdgeGraph build_bridged_graph(const TriMesh& mesh) {
  EdgeGraph graph = EdgeGraph::build(mesh);
  const int nv = static_cast<int>(graph.adj.size());
  std::vector<int> component(nv, -1);
  int count = 0;
  for (int seed = 0; seed < nv; ++seed) {
    if (component[seed] >= 0) continue;
    std::vector<int> stack{seed};
    component[seed] = count;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (auto [v, len] : graph.adj[u])
        if (component[v] < 0) {
          component[v] = count;
          stack.push_back(v);
        }
    }
    ++count;
  }
  if (count <= 1) return graph;

  std::vector<char> linked(count, 0);
  linked[component[0]] = 1;
  for (int pass = 1; pass < count; ++pass) {
    int best_u = -1, best_v = -1;
    double best = std::numeric_limits<double>::max();
    for (int u = 0; u < nv; ++u) {
      if (!linked[component[u]]) continue;
      for (int v = 0; v < nv; ++v) {
        if (linked[component[v]]) continue;
        double d = (mesh.vertices[u] - mesh.vertices[v]).squaredNorm();
        if (d < best) {
          best = d;
          best_u = u;
          best_v = v;
        }
      }
    }
    double len = std::sqrt(best);
    graph.adj[best_u].push_back({best_v, len});
    graph.adj[best_v].push_back({best_u, len});
    linked[component[best_v]] = 1;
  }
  return graph;
}

// For every vertex, the k geodesically nearest of the given source vertices,
// as (source index, distance) pairs sorted by (distance, source index).
inline std::vector<std::vector<std::pair<int, double>>> k_nearest_sources(
    const EdgeGraph& graph, const std::vector<int>& sources, int k) {
  const int nv = static_cast<int>(graph.adj.size());
  std::vector<std::vector<std::pair<int, double>>> best(nv);
  std::vector<double> dist;
  for (int s = 0; s < static_cast<int>(sources.size()); ++s) {
    detail::dijkstra(graph, sources[s], dist);
    for (int v = 0; v < nv; ++v) {
      if (!std::isfinite(dist[v])) continue;
      auto& row = best[v];
      row.push_back({s, dist[v]});
      std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
      });
      if (static_cast<int>(row.size()) > k) row.resize(k);
    }
  }
  return best;
}

}  // namespace seqrecon
