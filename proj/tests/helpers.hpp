#pragma once

#include <random>

#include "seqrecon/mesh.hpp"

namespace testutil {

using seqrecon::TriMesh;
using seqrecon::Vec3;

// Unit quad [0,1]^2 at height z, facing +z.
inline TriMesh make_quad(double z = 0.0) {
  TriMesh m;
  m.vertices = {{0, 0, z}, {1, 0, z}, {1, 1, z}, {0, 1, z}};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  return seqrecon::compute_vertex_normals(std::move(m));
}

// Collinear chain of n vertices at unit spacing, degenerate faces keep the
// edge graph alive for geodesic tests. No normals.
inline TriMesh make_chain(int n) {
  TriMesh m;
  for (int i = 0; i < n; ++i) m.vertices.emplace_back(static_cast<double>(i), 0.0, 0.0);
  for (int i = 0; i + 2 < n; ++i) m.faces.push_back({i, i + 1, i + 2});
  return m;
}

// Random triangle soup inside the unit cube.
inline TriMesh make_soup(int triangles, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  TriMesh m;
  for (int i = 0; i < 3 * triangles; ++i)
    m.vertices.emplace_back(uni(rng), uni(rng), uni(rng));
  for (int i = 0; i < triangles; ++i) m.faces.push_back({3 * i, 3 * i + 1, 3 * i + 2});
  return m;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Vec3 v(gauss(rng), gauss(rng), gauss(rng));
  while (v.norm() < 1e-6) v = Vec3(gauss(rng), gauss(rng), gauss(rng));
  return v.normalized();
}

inline seqrecon::Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace testutil
