#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqrecon {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Indexed triangle surface. Duplicate vertices are kept as-is; welding is a
// separate explicit operation (see fusion.hpp).
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec3> normals;  // unit length, one per vertex; empty until computed

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
  bool has_normals() const { return normals.size() == vertices.size(); }
};

struct Aabb {
  Vec3 lo{Vec3::Constant(std::numeric_limits<double>::max())};
  Vec3 hi{Vec3::Constant(std::numeric_limits<double>::lowest())};

  void expand(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return 0.5 * (lo + hi); }
  double diagonal() const { return (hi - lo).norm(); }
};

inline Aabb bounding_box(const TriMesh& mesh) {
  Aabb box;
  for (const Vec3& v : mesh.vertices) box.expand(v);
  return box;
}

inline double bbox_diagonal(const TriMesh& mesh) { return bounding_box(mesh).diagonal(); }

inline void validate_mesh(const TriMesh& mesh) {
  const int nv = mesh.vertex_count();
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k)
      if (f[k] < 0 || f[k] >= nv)
        throw std::invalid_argument("mesh face references invalid vertex " + std::to_string(f[k]));
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw std::invalid_argument("mesh face repeats a vertex");
  }
}

inline Vec3 face_normal_scaled(const TriMesh& mesh, int f) {
  const auto& t = mesh.faces[f];
  return 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                   .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
}

inline double face_area(const TriMesh& mesh, int f) { return face_normal_scaled(mesh, f).norm(); }

inline double surface_area(const TriMesh& mesh) {
  double a = 0;
  for (int f = 0; f < mesh.face_count(); ++f) a += face_area(mesh, f);
  return a;
}

// Area-weighted vertex normals. Fails when a vertex has no incident face with
// nonzero area (its normal is undefined).
inline TriMesh compute_vertex_normals(TriMesh mesh) {
  if (mesh.faces.empty()) throw std::invalid_argument("compute_vertex_normals: mesh has no faces");
  validate_mesh(mesh);
  mesh.normals.assign(mesh.vertices.size(), Vec3::Zero());
  for (int f = 0; f < mesh.face_count(); ++f) {
    Vec3 n = face_normal_scaled(mesh, f);  // area-weighted
    for (int k = 0; k < 3; ++k) mesh.normals[mesh.faces[f][k]] += n;
  }
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    double len = mesh.normals[v].norm();
    if (len <= 1e-300)
      throw std::invalid_argument("compute_vertex_normals: undefined normal at vertex " +
                                  std::to_string(v));
    mesh.normals[v] /= len;
  }
  return mesh;
}

// Unique undirected edges (a < b), sorted.
inline std::vector<std::array<int, 2>> mesh_edges(const TriMesh& mesh) {
  std::vector<std::array<int, 2>> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.push_back({a, b});
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

// Per-vertex adjacency with Euclidean edge lengths.
struct EdgeGraph {
  std::vector<std::vector<std::pair<int, double>>> adj;

  static EdgeGraph build(const TriMesh& mesh) {
    EdgeGraph g;
    g.adj.resize(mesh.vertices.size());
    for (const auto& e : mesh_edges(mesh)) {
      double len = (mesh.vertices[e[0]] - mesh.vertices[e[1]]).norm();
      g.adj[e[0]].push_back({e[1], len});
      g.adj[e[1]].push_back({e[0], len});
    }
    return g;
  }
};

// Count of boundary edges (incident to exactly one face). Zero means closed.
inline int boundary_edge_count(const TriMesh& mesh) {
  std::vector<std::array<int, 2>> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.push_back({a, b});
    }
  std::sort(edges.begin(), edges.end());
  int boundary = 0;
  for (std::size_t i = 0; i < edges.size();) {
    std::size_t j = i;
    while (j < edges.size() && edges[j] == edges[i]) ++j;
    if (j - i == 1) ++boundary;
    i = j;
  }
  return boundary;
}

inline bool is_watertight(const TriMesh& mesh) {
  if (mesh.faces.empty()) return false;
  std::vector<std::array<int, 2>> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.push_back({a, b});
    }
  std::sort(edges.begin(), edges.end());
  for (std::size_t i = 0; i < edges.size();) {
    std::size_t j = i;
    while (j < edges.size() && edges[j] == edges[i]) ++j;
    if (j - i != 2) return false;
    i = j;
  }
  return true;
}

inline int euler_characteristic(const TriMesh& mesh) {
  return mesh.vertex_count() - static_cast<int>(mesh_edges(mesh).size()) + mesh.face_count();
}

}  // namespace seqrecon
