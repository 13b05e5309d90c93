#pragma once

#include <stdexcept>

#include "seqrecon/bvh.hpp"
#include "seqrecon/mesh.hpp"
#include "seqrecon/parallel.hpp"

namespace seqrecon {

// One-directional mean of source-vertex to target-surface distances. The
// caller restricts `source` to the visible subset when evaluating against
// partial inputs.
inline double hausdorff_mean(const TriMesh& source, const MeshBvh& target_bvh) {
  if (source.vertices.empty()) throw std::invalid_argument("hausdorff_mean: empty source");
  std::vector<double> dist(source.vertices.size());
  parallel_for(0, source.vertices.size(),
               [&](std::size_t i) { dist[i] = target_bvh.closest_point(source.vertices[i]).distance; });
  double sum = 0;
  for (double d : dist) sum += d;
  return sum / static_cast<double>(dist.size());
}

inline double hausdorff_mean(const TriMesh& source, const TriMesh& target) {
  if (target.faces.empty()) throw std::invalid_argument("hausdorff_mean: empty target");
  MeshBvh bvh(target);
  return hausdorff_mean(source, bvh);
}

// Fraction of `truth` vertices within `radius` of the reconstruction surface.
inline double coverage_fraction(const TriMesh& truth, const MeshBvh& recon_bvh, double radius) {
  if (truth.vertices.empty()) throw std::invalid_argument("coverage_fraction: empty mesh");
  std::vector<char> hit(truth.vertices.size());
  parallel_for(0, truth.vertices.size(), [&](std::size_t i) {
    hit[i] = recon_bvh.closest_point(truth.vertices[i]).distance <= radius ? 1 : 0;
  });
  std::size_t covered = 0;
  for (char h : hit) covered += h;
  return static_cast<double>(covered) / static_cast<double>(truth.vertices.size());
}

}  // namespace seqrecon
