#pragma once

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqrecon/mesh.hpp"
#include "seqrecon/metrics.hpp"

namespace seqrecon {

// Ground-truth frames share connectivity, so vertex i is the same material
// point in every frame; corrupted frames are exact vertex subsets.
struct SyntheticSequence {
  std::string scenario;
  std::vector<TriMesh> ground_truth;
  std::vector<TriMesh> corrupted;
  std::vector<std::vector<int>> removed_vertices;  // per frame, ground-truth ids
  std::vector<std::vector<int>> vertex_map;        // corrupted id -> ground-truth id
  std::vector<int> region_tags;                    // optional per-vertex construction tag

  int frame_count() const { return static_cast<int>(ground_truth.size()); }
};

struct EvalReport {
  std::vector<double> frame_hausdorff;  // visible input vs reconstruction
  std::vector<double> frame_coverage;   // ground truth within 2% bbox diagonal
  double mean_hausdorff = 0.0;
  double mean_coverage = 0.0;
  std::vector<std::pair<std::string, double>> stage_runtimes;
};

// ---------------------------------------------------------------------------
// Base shapes.

inline TriMesh make_icosphere(double radius, int subdivisions, const Vec3& center = Vec3::Zero()) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                             {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                             {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (auto& v : verts) v.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (verts[a] + verts[b]).normalized();
      verts.push_back(m);
      int id = static_cast<int>(verts.size()) - 1;
      midpoint[key] = id;
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  TriMesh mesh;
  mesh.faces = faces;
  mesh.vertices.reserve(verts.size());
  for (const auto& v : verts) mesh.vertices.push_back(center + radius * v);
  return compute_vertex_normals(std::move(mesh));
}

// Closed cylinder along z, hinge plane z = 0. Used by the bending scenario.
inline TriMesh make_capped_cylinder(double radius, double height, int radial_segments,
                                    int height_segments) {
  TriMesh mesh;
  const int nr = radial_segments, nh = height_segments;
  for (int j = 0; j <= nh; ++j) {
    double z = -height / 2 + height * j / nh;
    for (int i = 0; i < nr; ++i) {
      double a = 2.0 * M_PI * i / nr;
      mesh.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), z);
    }
  }
  auto ring = [&](int j, int i) { return j * nr + (i % nr); };
  for (int j = 0; j < nh; ++j)
    for (int i = 0; i < nr; ++i) {
      mesh.faces.push_back({ring(j, i), ring(j, i + 1), ring(j + 1, i)});
      mesh.faces.push_back({ring(j, i + 1), ring(j + 1, i + 1), ring(j + 1, i)});
    }
  int bottom_center = static_cast<int>(mesh.vertices.size());
  mesh.vertices.emplace_back(0, 0, -height / 2);
  int top_center = static_cast<int>(mesh.vertices.size());
  mesh.vertices.emplace_back(0, 0, height / 2);
  for (int i = 0; i < nr; ++i) {
    mesh.faces.push_back({bottom_center, ring(0, i + 1), ring(0, i)});
    mesh.faces.push_back({top_center, ring(nh, i), ring(nh, i + 1)});
  }
  return compute_vertex_normals(std::move(mesh));
}

// ---------------------------------------------------------------------------
// Scenarios.

// Upper half rotates about the x axis through the hinge plane; a smoothstep
// blend band above the hinge keeps the bend smooth. Vertices above the band
// move exactly rigidly, which the tests rely on.
inline SyntheticSequence make_bending_cylinder(int frames, double max_bend_deg,
                                               int radial_segments = 32,
                                               int height_segments = 30) {
  if (frames < 3) throw std::invalid_argument("make_bending_cylinder: need at least 3 frames");
  if (max_bend_deg > 120.0)
    throw std::invalid_argument("make_bending_cylinder: bend beyond 120 degrees self-intersects");
  const double radius = 0.3, height = 2.0;
  TriMesh rest = make_capped_cylinder(radius, height, radial_segments, height_segments);
  const double blend = 0.15 * height;
  SyntheticSequence seq;
  seq.scenario = "bending-cylinder";
  for (int f = 0; f < frames; ++f) {
    double angle = max_bend_deg * M_PI / 180.0 * f / (frames - 1);
    TriMesh frame = rest;
    for (std::size_t v = 0; v < rest.vertices.size(); ++v) {
      double z = rest.vertices[v][2];
      double t = std::clamp(z / blend, 0.0, 1.0);
      double s = t * t * (3.0 - 2.0 * t);
      double a = angle * s;
      Mat3 rot = Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix();
      frame.vertices[v] = rot * rest.vertices[v];
    }
    seq.ground_truth.push_back(compute_vertex_normals(std::move(frame)));
  }
  seq.corrupted = seq.ground_truth;
  seq.removed_vertices.assign(frames, {});
  seq.vertex_map.resize(frames);
  for (int f = 0; f < frames; ++f) {
    seq.vertex_map[f].resize(rest.vertices.size());
    for (std::size_t v = 0; v < rest.vertices.size(); ++v)
      seq.vertex_map[f][v] = static_cast<int>(v);
  }
  return seq;
}

// Rigidly rotating sphere; the rigid-recovery tests read ground truth off it.
inline SyntheticSequence make_rotating_sphere(int frames, double step_deg,
                                              const Vec3& axis = Vec3::UnitZ(),
                                              int subdivisions = 3) {
  if (frames < 2) throw std::invalid_argument("make_rotating_sphere: need at least 2 frames");
  TriMesh rest = make_icosphere(1.0, subdivisions);
  SyntheticSequence seq;
  seq.scenario = "rotating-sphere";
  for (int f = 0; f < frames; ++f) {
    Mat3 rot = Eigen::AngleAxisd(step_deg * M_PI / 180.0 * f, axis.normalized()).toRotationMatrix();
    TriMesh frame = rest;
    for (auto& v : frame.vertices) v = rot * v;
    seq.ground_truth.push_back(compute_vertex_normals(std::move(frame)));
  }
  seq.corrupted = seq.ground_truth;
  seq.removed_vertices.assign(frames, {});
  seq.vertex_map.resize(frames);
  for (int f = 0; f < frames; ++f) {
    seq.vertex_map[f].resize(rest.vertices.size());
    for (std::size_t v = 0; v < rest.vertices.size(); ++v)
      seq.vertex_map[f][v] = static_cast<int>(v);
  }
  return seq;
}

namespace detail {

// Subdivided axis-aligned box with welded edges.
inline TriMesh make_box(const Vec3& center, const Vec3& half, int segments) {
  std::map<std::array<long, 3>, int> index;
  TriMesh mesh;
  auto vertex = [&](double x, double y, double z) {
    std::array<long, 3> key = {std::lround(x * 1e7), std::lround(y * 1e7), std::lround(z * 1e7)};
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    mesh.vertices.emplace_back(center + Vec3(x * half[0], y * half[1], z * half[2]));
    int id = static_cast<int>(mesh.vertices.size()) - 1;
    index[key] = id;
    return id;
  };
  const int n = segments;
  // each face is a grid on the unit cube [-1,1]^3
  auto emit_face = [&](int axis, double sign) {
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        auto corner = [&](int da, int db) {
          double u = -1.0 + 2.0 * (a + da) / n;
          double v = -1.0 + 2.0 * (b + db) / n;
          double c[3];
          c[axis] = sign;
          c[(axis + 1) % 3] = u;
          c[(axis + 2) % 3] = v;
          return vertex(c[0], c[1], c[2]);
        };
        int v00 = corner(0, 0), v10 = corner(1, 0), v01 = corner(0, 1), v11 = corner(1, 1);
        if (sign > 0) {
          mesh.faces.push_back({v00, v10, v11});
          mesh.faces.push_back({v00, v11, v01});
        } else {
          mesh.faces.push_back({v00, v11, v10});
          mesh.faces.push_back({v00, v01, v11});
        }
      }
  };
  for (int axis = 0; axis < 3; ++axis) {
    emit_face(axis, 1.0);
    emit_face(axis, -1.0);
  }
  return mesh;
}

}  // namespace detail

struct TwoBodyMotion {
  Vec3 translation = Vec3::Zero();  // applied to box B over the sequence
  double rotation_deg = 0.0;
  Vec3 rotation_axis = Vec3::UnitZ();
};

// Two rigid boxes joined by a thin open tube; box B moves per `motion`,
// bridge vertices blend linearly between the two rigid motions.
// region_tags: 0 = box A, 1 = box B, 2 = bridge.
inline SyntheticSequence make_two_body(int frames, const TwoBodyMotion& motion,
                                       int box_segments = 6, int bridge_segments = 8) {
  if (frames < 2) throw std::invalid_argument("make_two_body: need at least 2 frames");
  const Vec3 half(0.5, 0.5, 0.5);
  const Vec3 centerA(-1.0, 0, 0), centerB(1.0, 0, 0);
  TriMesh boxA = detail::make_box(centerA, half, box_segments);
  TriMesh boxB = detail::make_box(centerB, half, box_segments);

  TriMesh rest = boxA;
  std::vector<int> tags(rest.vertices.size(), 0);
  int offsetB = rest.vertex_count();
  for (const auto& v : boxB.vertices) rest.vertices.push_back(v);
  for (const auto& f : boxB.faces)
    rest.faces.push_back({f[0] + offsetB, f[1] + offsetB, f[2] + offsetB});
  tags.resize(rest.vertices.size(), 1);

  // open square tube from inside box A to inside box B
  const double x0 = centerA[0] + half[0] - 0.05, x1 = centerB[0] - half[0] + 0.05;
  const double side = 0.12;
  int offsetT = rest.vertex_count();
  const int nl = bridge_segments;
  std::vector<std::array<double, 2>> profile = {{side, side}, {-side, side}, {-side, -side},
                                                {side, -side}};
  for (int i = 0; i <= nl; ++i) {
    double x = x0 + (x1 - x0) * i / nl;
    for (const auto& p : profile) rest.vertices.emplace_back(x, p[0], p[1]);
  }
  auto tube = [&](int i, int k) { return offsetT + i * 4 + (k % 4); };
  for (int i = 0; i < nl; ++i)
    for (int k = 0; k < 4; ++k) {
      rest.faces.push_back({tube(i, k), tube(i, k + 1), tube(i + 1, k)});
      rest.faces.push_back({tube(i, k + 1), tube(i + 1, k + 1), tube(i + 1, k)});
    }
  tags.resize(rest.vertices.size(), 2);

  SyntheticSequence seq;
  seq.scenario = "two-body";
  seq.region_tags = tags;
  for (int f = 0; f < frames; ++f) {
    double s_f = frames == 1 ? 0.0 : static_cast<double>(f) / (frames - 1);
    Mat3 rot = Eigen::AngleAxisd(motion.rotation_deg * M_PI / 180.0 * s_f,
                                 motion.rotation_axis.normalized())
                   .toRotationMatrix();
    Vec3 trans = s_f * motion.translation;
    TriMesh frame = rest;
    for (std::size_t v = 0; v < rest.vertices.size(); ++v) {
      Vec3 moved = rot * (rest.vertices[v] - centerB) + centerB + trans;
      if (tags[v] == 1) {
        frame.vertices[v] = moved;
      } else if (tags[v] == 2) {
        double blend = std::clamp((rest.vertices[v][0] - x0) / (x1 - x0), 0.0, 1.0);
        frame.vertices[v] = (1.0 - blend) * rest.vertices[v] + blend * moved;
      }
    }
    seq.ground_truth.push_back(compute_vertex_normals(std::move(frame)));
  }
  seq.corrupted = seq.ground_truth;
  seq.removed_vertices.assign(frames, {});
  seq.vertex_map.resize(frames);
  for (int f = 0; f < frames; ++f) {
    seq.vertex_map[f].resize(rest.vertices.size());
    for (std::size_t v = 0; v < rest.vertices.size(); ++v)
      seq.vertex_map[f][v] = static_cast<int>(v);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Corruption.

struct CorruptionScheme {
  enum class Kind { SphereHole, PlaneTruncation, ComplementaryThirds } kind =
      Kind::ComplementaryThirds;
  // sphere hole: center interpolates start -> end across the sequence
  Vec3 sphere_center_start = Vec3::Zero();
  Vec3 sphere_center_end = Vec3::Zero();
  double sphere_radius = 0.0;
  // plane truncation: drop vertices with normal . (v - point) < offset(f)
  Vec3 plane_point = Vec3::Zero();
  Vec3 plane_normal = Vec3::UnitZ();
  double plane_offset_start = 0.0;
  double plane_offset_end = 0.0;

  static CorruptionScheme sphere_hole(const Vec3& start, const Vec3& end, double radius) {
    CorruptionScheme s;
    s.kind = Kind::SphereHole;
    s.sphere_center_start = start;
    s.sphere_center_end = end;
    s.sphere_radius = radius;
    return s;
  }
  static CorruptionScheme plane_truncation(const Vec3& point, const Vec3& normal,
                                           double offset_start = 0.0, double offset_end = 0.0) {
    CorruptionScheme s;
    s.kind = Kind::PlaneTruncation;
    s.plane_point = point;
    s.plane_normal = normal;
    s.plane_offset_start = offset_start;
    s.plane_offset_end = offset_end;
    return s;
  }
  static CorruptionScheme complementary_thirds() { return {}; }
};

namespace detail {

// Shared rule: a face survives when none of its vertices is removed; only
// vertices referenced by surviving faces are kept.
inline TriMesh visible_mesh(const TriMesh& gt, const std::vector<int>& removed,
                            std::vector<int>* map_out) {
  std::vector<char> gone(gt.vertices.size(), 0);
  for (int v : removed) gone[v] = 1;
  std::vector<char> used(gt.vertices.size(), 0);
  TriMesh out;
  for (const auto& f : gt.faces) {
    if (gone[f[0]] || gone[f[1]] || gone[f[2]]) continue;
    used[f[0]] = used[f[1]] = used[f[2]] = 1;
  }
  std::vector<int> remap(gt.vertices.size(), -1);
  for (std::size_t v = 0; v < gt.vertices.size(); ++v) {
    if (!used[v]) continue;
    remap[v] = out.vertex_count();
    out.vertices.push_back(gt.vertices[v]);
    if (map_out) map_out->push_back(static_cast<int>(v));
  }
  for (const auto& f : gt.faces) {
    if (gone[f[0]] || gone[f[1]] || gone[f[2]]) continue;
    out.faces.push_back({remap[f[0]], remap[f[1]], remap[f[2]]});
  }
  return out;
}

}  // namespace detail

inline SyntheticSequence corrupt(const SyntheticSequence& input, const CorruptionScheme& scheme) {
  SyntheticSequence seq = input;
  const int frames = seq.frame_count();
  const TriMesh& rest = input.ground_truth.front();

  // material thirds along the longest rest-pose axis
  std::vector<int> thirds(rest.vertices.size(), 0);
  if (scheme.kind == CorruptionScheme::Kind::ComplementaryThirds) {
    Aabb box = bounding_box(rest);
    Vec3 ext = box.extent();
    int axis = 0;
    if (ext[1] > ext[axis]) axis = 1;
    if (ext[2] > ext[axis]) axis = 2;
    for (std::size_t v = 0; v < rest.vertices.size(); ++v) {
      double t = (rest.vertices[v][axis] - box.lo[axis]) / ext[axis];
      thirds[v] = std::min(2, static_cast<int>(t * 3.0));
    }
  }

  for (int f = 0; f < frames; ++f) {
    const TriMesh& gt = seq.ground_truth[f];
    double s_f = frames == 1 ? 0.0 : static_cast<double>(f) / (frames - 1);
    std::vector<int> removed;
    switch (scheme.kind) {
      case CorruptionScheme::Kind::SphereHole: {
        Vec3 c = (1.0 - s_f) * scheme.sphere_center_start + s_f * scheme.sphere_center_end;
        for (std::size_t v = 0; v < gt.vertices.size(); ++v)
          if ((gt.vertices[v] - c).norm() < scheme.sphere_radius)
            removed.push_back(static_cast<int>(v));
        break;
      }
      case CorruptionScheme::Kind::PlaneTruncation: {
        double off = (1.0 - s_f) * scheme.plane_offset_start + s_f * scheme.plane_offset_end;
        Vec3 n = scheme.plane_normal.normalized();
        for (std::size_t v = 0; v < gt.vertices.size(); ++v)
          if (n.dot(gt.vertices[v] - scheme.plane_point) < off)
            removed.push_back(static_cast<int>(v));
        break;
      }
      case CorruptionScheme::Kind::ComplementaryThirds: {
        int band = f % 3;
        for (std::size_t v = 0; v < gt.vertices.size(); ++v)
          if (thirds[v] == band) removed.push_back(static_cast<int>(v));
        break;
      }
    }
    if (removed.size() > 0.8 * gt.vertices.size())
      throw std::invalid_argument("corrupt: scheme removes more than 80% of frame " +
                                  std::to_string(f));
    std::vector<int> map;
    TriMesh visible = detail::visible_mesh(gt, removed, &map);
    if (visible.faces.empty())
      throw std::invalid_argument("corrupt: frame " + std::to_string(f) + " left without faces");
    seq.corrupted[f] = compute_vertex_normals(std::move(visible));
    seq.removed_vertices[f] = std::move(removed);
    seq.vertex_map[f] = std::move(map);
  }
  return seq;
}

// Gaussian vertex jitter on the corrupted frames (sigma 0 is a no-op).
inline SyntheticSequence with_vertex_noise(SyntheticSequence seq, double sigma, uint64_t seed) {
  if (sigma <= 0.0) return seq;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (auto& frame : seq.corrupted) {
    for (auto& v : frame.vertices) v += Vec3(gauss(rng), gauss(rng), gauss(rng));
    frame = compute_vertex_normals(std::move(frame));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Evaluation.

inline EvalReport evaluate(const std::vector<TriMesh>& reconstruction,
                           const SyntheticSequence& synthetic) {
  if (static_cast<int>(reconstruction.size()) != synthetic.frame_count())
    throw std::invalid_argument("evaluate: frame count mismatch");
  EvalReport report;
  for (int f = 0; f < synthetic.frame_count(); ++f) {
    MeshBvh bvh(reconstruction[f]);
    report.frame_hausdorff.push_back(hausdorff_mean(synthetic.corrupted[f], bvh));
    double radius = 0.02 * bbox_diagonal(synthetic.ground_truth[f]);
    report.frame_coverage.push_back(coverage_fraction(synthetic.ground_truth[f], bvh, radius));
  }
  for (double h : report.frame_hausdorff) report.mean_hausdorff += h;
  for (double c : report.frame_coverage) report.mean_coverage += c;
  report.mean_hausdorff /= synthetic.frame_count();
  report.mean_coverage /= synthetic.frame_count();
  return report;
}

}  // namespace seqrecon
