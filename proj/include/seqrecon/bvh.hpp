#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "seqrecon/mesh.hpp"

namespace seqrecon {

struct RayHit {
  int face_index = -1;
  Vec3 point = Vec3::Zero();
  double distance = 0.0;  // signed; negative when the hit lies opposite the ray direction
  Vec3 barycentric = Vec3::Zero();
};

struct SurfacePoint {
  Vec3 point = Vec3::Zero();
  int face_index = -1;
  double distance = 0.0;
};

namespace detail {

// Hits slightly behind the origin still count; rays routinely start on the
// surface they query (zero-distance correspondences).
constexpr double kRayTMin = -1e-12;

struct TriHit {
  double t, u, v;
};

// Moller-Trumbore. Both the BVH and the exhaustive scan call this, so the
// two paths can only ever disagree through traversal, not through geometry.
inline bool ray_triangle(const Vec3& orig, const Vec3& dir, const Vec3& v0, const Vec3& v1,
                         const Vec3& v2, TriHit& out) {
  Vec3 e1 = v1 - v0;
  Vec3 e2 = v2 - v0;
  Vec3 p = dir.cross(e2);
  double det = e1.dot(p);
  if (std::abs(det) < 1e-14) return false;
  double inv = 1.0 / det;
  Vec3 s = orig - v0;
  double u = s.dot(p) * inv;
  if (u < -1e-12 || u > 1.0 + 1e-12) return false;
  Vec3 q = s.cross(e1);
  double v = dir.dot(q) * inv;
  if (v < -1e-12 || u + v > 1.0 + 1e-12) return false;
  double t = e2.dot(q) * inv;
  if (t < kRayTMin) return false;
  out = {t, u, v};
  return true;
}

// Closest point on a triangle (Ericson, Real-Time Collision Detection 5.1.5).
inline Vec3 closest_point_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  Vec3 bp = p - b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    double v = d1 / (d1 - d3);
    return a + v * ab;
  }
  Vec3 cp = p - c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    double w = d2 / (d2 - d6);
    return a + w * ac;
  }
  double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return b + w * (c - b);
  }
  double denom = 1.0 / (va + vb + vc);
  double v = vb * denom, w = vc * denom;
  return a + ab * v + ac * w;
}

inline bool ray_box(const Vec3& orig, const Vec3& inv_dir, const Aabb& box, double t_max) {
  double t0 = kRayTMin, t1 = t_max;
  for (int k = 0; k < 3; ++k) {
    double lo = (box.lo[k] - orig[k]) * inv_dir[k];
    double hi = (box.hi[k] - orig[k]) * inv_dir[k];
    if (inv_dir[k] < 0.0) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
    if (t0 > t1) return false;
  }
  return true;
}

inline double box_distance_sq(const Vec3& p, const Aabb& box) {
  double d = 0;
  for (int k = 0; k < 3; ++k) {
    double e = std::max({box.lo[k] - p[k], 0.0, p[k] - box.hi[k]});
    d += e * e;
  }
  return d;
}

inline RayHit make_hit(const TriMesh& mesh, int face, const TriHit& h, double sign) {
  RayHit hit;
  hit.face_index = face;
  hit.distance = sign * h.t;
  double u = std::clamp(h.u, 0.0, 1.0);
  double v = std::clamp(h.v, 0.0, 1.0);
  if (u + v > 1.0) {
    double s = u + v;
    u /= s;
    v /= s;
  }
  hit.barycentric = Vec3(1.0 - u - v, u, v);
  const auto& f = mesh.faces[face];
  hit.point = hit.barycentric[0] * mesh.vertices[f[0]] + hit.barycentric[1] * mesh.vertices[f[1]] +
              hit.barycentric[2] * mesh.vertices[f[2]];
  return hit;
}

// One-directional exhaustive scan; keeps the lowest face index among ties.
inline bool scan_dir(const TriMesh& mesh, const Vec3& orig, const Vec3& dir, double& best_t,
                     int& best_face, TriHit& best_hit) {
  bool found = false;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const auto& tri = mesh.faces[f];
    TriHit h;
    if (ray_triangle(orig, dir, mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                     mesh.vertices[tri[2]], h) &&
        h.t < best_t) {
      best_t = h.t;
      best_face = f;
      best_hit = h;
      found = true;
    }
  }
  return found;
}

}  // namespace detail

// Exhaustive reference used by the property tests; the BVH must agree exactly.
inline std::optional<RayHit> ray_intersect_brute(const TriMesh& mesh, const Vec3& origin,
                                                 const Vec3& direction, bool bidirectional) {
  double tf = std::numeric_limits<double>::infinity();
  double tb = std::numeric_limits<double>::infinity();
  int ff = -1, fb = -1;
  detail::TriHit hf{}, hb{};
  bool fwd = detail::scan_dir(mesh, origin, direction, tf, ff, hf);
  bool bwd = bidirectional && detail::scan_dir(mesh, origin, Vec3(-direction), tb, fb, hb);
  if (!fwd && !bwd) return std::nullopt;
  if (!bwd || (fwd && tf <= tb)) return detail::make_hit(mesh, ff, hf, +1.0);
  return detail::make_hit(mesh, fb, hb, -1.0);
}

inline SurfacePoint closest_point_brute(const TriMesh& mesh, const Vec3& query) {
  if (mesh.faces.empty()) throw std::invalid_argument("closest_point: empty mesh");
  double best = std::numeric_limits<double>::infinity();
  SurfacePoint sp;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const auto& tri = mesh.faces[f];
    Vec3 c = detail::closest_point_triangle(query, mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                            mesh.vertices[tri[2]]);
    double d = (c - query).squaredNorm();
    if (d < best) {
      best = d;
      sp.point = c;
      sp.face_index = f;
    }
  }
  sp.distance = std::sqrt(best);
  return sp;
}

// Median-split BVH on the longest centroid axis. Construction is deterministic
// so tied queries always resolve the same way.
class MeshBvh {
 public:
  MeshBvh() = default;

  explicit MeshBvh(const TriMesh& mesh) : mesh_(&mesh) {
    if (mesh.faces.empty()) throw std::invalid_argument("MeshBvh: empty mesh");
    prims_.resize(mesh.faces.size());
    std::iota(prims_.begin(), prims_.end(), 0);
    boxes_.resize(mesh.faces.size());
    centroids_.resize(mesh.faces.size());
    for (int f = 0; f < mesh.face_count(); ++f) {
      Aabb b;
      for (int k = 0; k < 3; ++k) b.expand(mesh.vertices[mesh.faces[f][k]]);
      boxes_[f] = b;
      centroids_[f] = (mesh.vertices[mesh.faces[f][0]] + mesh.vertices[mesh.faces[f][1]] +
                       mesh.vertices[mesh.faces[f][2]]) /
                      3.0;
    }
    nodes_.reserve(2 * mesh.faces.size());
    build(0, static_cast<int>(prims_.size()));
  }

  const TriMesh& mesh() const { return *mesh_; }

  std::optional<RayHit> ray_intersect(const Vec3& origin, const Vec3& direction,
                                      bool bidirectional) const {
    double tf = std::numeric_limits<double>::infinity();
    double tb = std::numeric_limits<double>::infinity();
    int ff = -1, fb = -1;
    detail::TriHit hf{}, hb{};
    bool fwd = traverse_ray(origin, direction, tf, ff, hf);
    bool bwd = bidirectional && traverse_ray(origin, Vec3(-direction), tb, fb, hb);
    if (!fwd && !bwd) return std::nullopt;
    if (!bwd || (fwd && tf <= tb)) return detail::make_hit(*mesh_, ff, hf, +1.0);
    return detail::make_hit(*mesh_, fb, hb, -1.0);
  }

  SurfacePoint closest_point(const Vec3& query) const {
    double best = std::numeric_limits<double>::infinity();
    SurfacePoint sp;
    traverse_closest(0, query, best, sp);
    sp.distance = std::sqrt(best);
    return sp;
  }

 private:
  struct Node {
    Aabb box;
    int left = -1, right = -1;
    int begin = 0, count = 0;  // leaf when count > 0
  };

  int build(int begin, int end) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    Aabb box, cbox;
    for (int i = begin; i < end; ++i) {
      box.expand(boxes_[prims_[i]]);
      cbox.expand(centroids_[prims_[i]]);
    }
    nodes_[id].box = box;
    int count = end - begin;
    if (count <= 4) {
      nodes_[id].begin = begin;
      nodes_[id].count = count;
      return id;
    }
    Vec3 ext = cbox.extent();
    int axis = 0;
    if (ext[1] > ext[axis]) axis = 1;
    if (ext[2] > ext[axis]) axis = 2;
    int mid = begin + count / 2;
    std::nth_element(prims_.begin() + begin, prims_.begin() + mid, prims_.begin() + end,
                     [&](int a, int b) {
                       double ca = centroids_[a][axis], cb = centroids_[b][axis];
                       return ca != cb ? ca < cb : a < b;
                     });
    int left = build(begin, mid);
    int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  bool traverse_ray(const Vec3& orig, const Vec3& dir, double& best_t, int& best_face,
                    detail::TriHit& best_hit) const {
    Vec3 inv_dir;
    for (int k = 0; k < 3; ++k) inv_dir[k] = 1.0 / dir[k];  // inf on zero components is fine
    bool found = false;
    std::vector<int> stack{0};
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      const Node& node = nodes_[id];
      if (!detail::ray_box(orig, inv_dir, node.box, best_t)) continue;
      if (node.count > 0) {
        for (int i = node.begin; i < node.begin + node.count; ++i) {
          int f = prims_[i];
          const auto& tri = mesh_->faces[f];
          detail::TriHit h;
          if (detail::ray_triangle(orig, dir, mesh_->vertices[tri[0]], mesh_->vertices[tri[1]],
                                   mesh_->vertices[tri[2]], h)) {
            if (h.t < best_t || (h.t == best_t && f < best_face)) {
              best_t = h.t;
              best_face = f;
              best_hit = h;
              found = true;
            }
          }
        }
      } else {
        stack.push_back(node.right);
        stack.push_back(node.left);
      }
    }
    return found;
  }

  void traverse_closest(int id, const Vec3& query, double& best, SurfacePoint& sp) const {
    const Node& node = nodes_[id];
    if (detail::box_distance_sq(query, node.box) > best) return;
    if (node.count > 0) {
      for (int i = node.begin; i < node.begin + node.count; ++i) {
        int f = prims_[i];
        const auto& tri = mesh_->faces[f];
        Vec3 c = detail::closest_point_triangle(query, mesh_->vertices[tri[0]],
                                                mesh_->vertices[tri[1]], mesh_->vertices[tri[2]]);
        double d = (c - query).squaredNorm();
        if (d < best || (d == best && f < sp.face_index)) {
          best = d;
          sp.point = c;
          sp.face_index = f;
        }
      }
      return;
    }
    traverse_closest(node.left, query, best, sp);
    traverse_closest(node.right, query, best, sp);
  }

  const TriMesh* mesh_ = nullptr;
  std::vector<int> prims_;
  std::vector<Aabb> boxes_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

inline std::optional<RayHit> ray_intersect(const MeshBvh& bvh, const Vec3& origin,
                                           const Vec3& direction, bool bidirectional) {
  return bvh.ray_intersect(origin, direction, bidirectional);
}

inline SurfacePoint closest_point_on_mesh(const MeshBvh& bvh, const Vec3& query) {
  return bvh.closest_point(query);
}

}  // namespace seqrecon
