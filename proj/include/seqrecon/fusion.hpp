#pragma once

#include <cstdint>
#include <map>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "seqrecon/deform_graph.hpp"
#include "seqrecon/energies.hpp"
#include "seqrecon/mesh.hpp"
#include "seqrecon/parallel.hpp"
#include "seqrecon/registration.hpp"
#include "seqrecon/solver.hpp"

namespace seqrecon {

// ---------------------------------------------------------------------------
// Point cloud utilities.

struct OrientedCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<int> source;  // frame id per point

  std::size_t size() const { return points.size(); }
};

// Uniform-bin spatial index over a fixed point set.
class PointGrid {
 public:
  PointGrid(const std::vector<Vec3>* points, double cell) : points_(points), cell_(cell) {
    if (points_->empty()) throw std::invalid_argument("PointGrid: empty point set");
    for (const auto& p : *points_) origin_ = origin_.cwiseMin(p);
    bins_.reserve(points_->size());
    for (std::size_t i = 0; i < points_->size(); ++i)
      bins_[key((*points_)[i])].push_back(static_cast<int>(i));
  }

  template <class F>
  void for_each_in_radius(const Vec3& x, double radius, F&& f) const {
    double r2 = radius * radius;
    std::array<int, 3> lo = cell_of(x - Vec3::Constant(radius));
    std::array<int, 3> hi = cell_of(x + Vec3::Constant(radius));
    for (int cz = lo[2]; cz <= hi[2]; ++cz)
      for (int cy = lo[1]; cy <= hi[1]; ++cy)
        for (int cx = lo[0]; cx <= hi[0]; ++cx) {
          auto it = bins_.find(pack(cx, cy, cz));
          if (it == bins_.end()) continue;
          for (int idx : it->second) {
            double d2 = ((*points_)[idx] - x).squaredNorm();
            if (d2 <= r2) f(idx, std::sqrt(d2));
          }
        }
  }

  // Index of the closest point (ties break to the lower index).
  int nearest(const Vec3& x) const {
    std::array<int, 3> c = cell_of(x);
    int best = -1;
    double best_d2 = std::numeric_limits<double>::max();
    for (int shell = 0;; ++shell) {
      for (int cz = c[2] - shell; cz <= c[2] + shell; ++cz)
        for (int cy = c[1] - shell; cy <= c[1] + shell; ++cy)
          for (int cx = c[0] - shell; cx <= c[0] + shell; ++cx) {
            if (shell > 0 && std::abs(cx - c[0]) != shell && std::abs(cy - c[1]) != shell &&
                std::abs(cz - c[2]) != shell)
              continue;  // interior already scanned
            auto it = bins_.find(pack(cx, cy, cz));
            if (it == bins_.end()) continue;
            for (int idx : it->second) {
              double d2 = ((*points_)[idx] - x).squaredNorm();
              if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
                best_d2 = d2;
                best = idx;
              }
            }
          }
      if (best >= 0) {
        double safe = static_cast<double>(shell) * cell_;
        if (best_d2 <= safe * safe) return best;
      }
      if (shell > max_shell_) return best;  // scanned everything
    }
  }

 private:
  std::array<int, 3> cell_of(const Vec3& p) const {
    return {static_cast<int>(std::floor((p[0] - origin_[0]) / cell_)),
            static_cast<int>(std::floor((p[1] - origin_[1]) / cell_)),
            static_cast<int>(std::floor((p[2] - origin_[2]) / cell_))};
  }
  int64_t key(const Vec3& p) const {
    auto c = cell_of(p);
    return pack(c[0], c[1], c[2]);
  }
  static int64_t pack(int x, int y, int z) {
    return (static_cast<int64_t>(x) << 42) ^ (static_cast<int64_t>(y) << 21) ^
           static_cast<int64_t>(z);
  }

  const std::vector<Vec3>* points_;
  double cell_;
  Vec3 origin_ = Vec3::Constant(std::numeric_limits<double>::max());
  int max_shell_ = 1 << 12;
  std::unordered_map<int64_t, std::vector<int>> bins_;
};

// ---------------------------------------------------------------------------
// Welding.

// Merge vertices that quantize to the same tolerance cell; faces that collapse
// are dropped. Tolerance defaults to 1e-6 x bbox diagonal at the call sites.
inline TriMesh weld_vertices(const TriMesh& mesh, double tolerance) {
  if (tolerance <= 0) throw std::invalid_argument("weld_vertices: tolerance must be positive");
  std::map<std::array<int64_t, 3>, int> cells;
  std::vector<int> remap(mesh.vertices.size());
  TriMesh out;
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const Vec3& p = mesh.vertices[v];
    std::array<int64_t, 3> key = {static_cast<int64_t>(std::llround(p[0] / tolerance)),
                                  static_cast<int64_t>(std::llround(p[1] / tolerance)),
                                  static_cast<int64_t>(std::llround(p[2] / tolerance))};
    auto [it, fresh] = cells.try_emplace(key, out.vertex_count());
    if (fresh) out.vertices.push_back(p);
    remap[v] = it->second;
  }
  for (const auto& f : mesh.faces) {
    std::array<int, 3> g = {remap[f[0]], remap[f[1]], remap[f[2]]};
    if (g[0] == g[1] || g[1] == g[2] || g[0] == g[2]) continue;
    out.faces.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Signed-distance fusion + marching tetrahedra.

struct FusionOptions {
  int voxel_resolution = 256;  // bbox diagonal / resolution = voxel size
  double truncation_voxels = 3.0;
  int max_grid_dim = 512;
};

namespace detail {

struct SdfGrid {
  Vec3 origin;
  double voxel = 0;
  int nx = 0, ny = 0, nz = 0;  // vertex counts
  std::vector<float> values;
  std::vector<char> observed;

  int id(int x, int y, int z) const { return (z * ny + y) * nx + x; }
};

// Average of point-plane signed distances over the truncation ball, then a
// BFS sign fill for unobserved vertices so the zero set stays closed.
inline SdfGrid build_sdf(const OrientedCloud& cloud, double voxel, double trunc_voxels,
                         int max_grid_dim) {
  Aabb box;
  for (const auto& p : cloud.points) box.expand(p);
  const double trunc = trunc_voxels * voxel;
  const double pad = trunc + 2.0 * voxel;
  SdfGrid grid;
  grid.voxel = voxel;
  grid.origin = box.lo - Vec3::Constant(pad);
  Vec3 span = box.extent() + Vec3::Constant(2.0 * pad);
  grid.nx = static_cast<int>(std::ceil(span[0] / voxel)) + 1;
  grid.ny = static_cast<int>(std::ceil(span[1] / voxel)) + 1;
  grid.nz = static_cast<int>(std::ceil(span[2] / voxel)) + 1;
  if (grid.nx > max_grid_dim || grid.ny > max_grid_dim || grid.nz > max_grid_dim)
    throw std::invalid_argument("fuse: voxel grid exceeds the dimension cap");

  const std::size_t total = static_cast<std::size_t>(grid.nx) * grid.ny * grid.nz;
  grid.values.assign(total, 0.f);
  grid.observed.assign(total, 0);

  PointGrid index(&cloud.points, trunc);
  parallel_for(0, total, [&](std::size_t vid) {
    int x = static_cast<int>(vid % grid.nx);
    int y = static_cast<int>((vid / grid.nx) % grid.ny);
    int z = static_cast<int>(vid / (static_cast<std::size_t>(grid.nx) * grid.ny));
    Vec3 pos = grid.origin + voxel * Vec3(x, y, z);
    double num = 0, den = 0;
    index.for_each_in_radius(pos, trunc, [&](int idx, double dist) {
      double w = 1.0 - dist / trunc;
      num += w * cloud.normals[idx].dot(pos - cloud.points[idx]);
      den += w;
    });
    if (den > 0) {
      grid.values[vid] = static_cast<float>(std::clamp(num / den, -trunc, trunc));
      grid.observed[vid] = 1;
    }
  });

  // flood signs outward from the observed band
  std::queue<int> queue;
  for (std::size_t vid = 0; vid < total; ++vid)
    if (grid.observed[vid]) queue.push(static_cast<int>(vid));
  const float fill = static_cast<float>(trunc);
  auto sign_of = [&](int vid) { return grid.values[vid] < 0.f ? -fill : fill; };
  while (!queue.empty()) {
    int vid = queue.front();
    queue.pop();
    int x = vid % grid.nx;
    int y = (vid / grid.nx) % grid.ny;
    int z = vid / (grid.nx * grid.ny);
    const int nbr[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z},
                           {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
    for (const auto& n : nbr) {
      if (n[0] < 0 || n[0] >= grid.nx || n[1] < 0 || n[1] >= grid.ny || n[2] < 0 ||
          n[2] >= grid.nz)
        continue;
      int nid = grid.id(n[0], n[1], n[2]);
      if (grid.observed[nid]) continue;
      grid.values[nid] = sign_of(vid);
      grid.observed[nid] = 2;  // filled
      queue.push(nid);
    }
  }
  // exact zeros would break edge interpolation
  const float eps = fill * 1e-7f;
  for (auto& v : grid.values)
    if (v >= 0.f && v < eps) v = eps;
    else if (v < 0.f && v > -eps) v = -eps;
  return grid;
}

// Translation-invariant 6-tet split of each cell; shared faces get the same
// diagonals, so the extracted surface is crack free.
inline TriMesh marching_tetrahedra(const SdfGrid& grid) {
  // Kuhn subdivision: one tet per monotone corner path 0 -> 6
  static const int tets[6][4] = {{0, 1, 2, 6}, {0, 1, 5, 6}, {0, 3, 2, 6},
                                 {0, 3, 7, 6}, {0, 4, 5, 6}, {0, 4, 7, 6}};
  // cube corner offsets, index bit order (x,y,z)
  static const int corner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                   {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  TriMesh mesh;
  std::unordered_map<uint64_t, int> edge_vertex;
  auto cut = [&](int va, int vb, float fa, float fb, const Vec3& pa, const Vec3& pb) {
    uint64_t key = va < vb ? (static_cast<uint64_t>(va) << 32) | static_cast<uint32_t>(vb)
                           : (static_cast<uint64_t>(vb) << 32) | static_cast<uint32_t>(va);
    auto [it, fresh] = edge_vertex.try_emplace(key, mesh.vertex_count());
    if (fresh) {
      double t = fa / (static_cast<double>(fa) - fb);
      mesh.vertices.push_back(pa + t * (pb - pa));
    }
    return it->second;
  };

  for (int z = 0; z + 1 < grid.nz; ++z)
    for (int y = 0; y + 1 < grid.ny; ++y)
      for (int x = 0; x + 1 < grid.nx; ++x) {
        int ids[8];
        float vals[8];
        Vec3 pos[8];
        bool neg = false, pos_any = false;
        for (int k = 0; k < 8; ++k) {
          ids[k] = grid.id(x + corner[k][0], y + corner[k][1], z + corner[k][2]);
          vals[k] = grid.values[ids[k]];
          pos[k] = grid.origin +
                   grid.voxel * Vec3(x + corner[k][0], y + corner[k][1], z + corner[k][2]);
          (vals[k] < 0.f ? neg : pos_any) = true;
        }
        if (!neg || !pos_any) continue;
        for (const auto& tet : tets) {
          int inside[4], outside[4];
          int ni = 0, no = 0;
          for (int k = 0; k < 4; ++k)
            (vals[tet[k]] < 0.f ? inside[ni++] : outside[no++]) = tet[k];
          auto edge = [&](int a, int b) {
            return cut(ids[a], ids[b], vals[a], vals[b], pos[a], pos[b]);
          };
          if (ni == 1) {
            mesh.faces.push_back({edge(inside[0], outside[0]), edge(inside[0], outside[1]),
                                  edge(inside[0], outside[2])});
          } else if (ni == 3) {
            mesh.faces.push_back({edge(inside[0], outside[0]), edge(inside[2], outside[0]),
                                  edge(inside[1], outside[0])});
          } else if (ni == 2) {
            int e00 = edge(inside[0], outside[0]);
            int e01 = edge(inside[0], outside[1]);
            int e10 = edge(inside[1], outside[0]);
            int e11 = edge(inside[1], outside[1]);
            mesh.faces.push_back({e00, e10, e11});
            mesh.faces.push_back({e00, e11, e01});
          }
        }
      }

  // orient every triangle along the outward field gradient
  auto value_grad = [&](const Vec3& p) {
    // gradient of the trilinear field at the nearest vertex, one-sided at walls
    int x = std::clamp(static_cast<int>(std::lround((p[0] - grid.origin[0]) / grid.voxel)), 0,
                       grid.nx - 1);
    int y = std::clamp(static_cast<int>(std::lround((p[1] - grid.origin[1]) / grid.voxel)), 0,
                       grid.ny - 1);
    int z = std::clamp(static_cast<int>(std::lround((p[2] - grid.origin[2]) / grid.voxel)), 0,
                       grid.nz - 1);
    auto v = [&](int ix, int iy, int iz) {
      return grid.values[grid.id(std::clamp(ix, 0, grid.nx - 1), std::clamp(iy, 0, grid.ny - 1),
                                 std::clamp(iz, 0, grid.nz - 1))];
    };
    return Vec3(v(x + 1, y, z) - v(x - 1, y, z), v(x, y + 1, z) - v(x, y - 1, z),
                v(x, y, z + 1) - v(x, y, z - 1));
  };
  for (auto& f : mesh.faces) {
    Vec3 a = mesh.vertices[f[0]], b = mesh.vertices[f[1]], c = mesh.vertices[f[2]];
    Vec3 n = (b - a).cross(c - a);
    Vec3 g = value_grad((a + b + c) / 3.0);
    if (n.dot(g) < 0) std::swap(f[1], f[2]);
  }
  return mesh;
}

}  // namespace detail

// Implicit-surface fusion of oriented points: truncated signed distances are
// averaged on a uniform grid and triangulated. The output is watertight when
// the cloud covers a closed surface.
inline TriMesh fuse_oriented_points(const OrientedCloud& input, double voxel_size,
                                    const FusionOptions& options = {},
                                    std::vector<int>* provenance = nullptr) {
  if (input.points.empty()) throw std::invalid_argument("fuse: empty input");
  if (input.normals.size() != input.points.size())
    throw std::invalid_argument("fuse: normals missing");

  // drop bit-exact duplicates so re-fusing identical data is a no-op
  OrientedCloud cloud;
  {
    std::map<std::array<double, 6>, int> seen;
    for (std::size_t i = 0; i < input.points.size(); ++i) {
      std::array<double, 6> key = {input.points[i][0],  input.points[i][1], input.points[i][2],
                                   input.normals[i][0], input.normals[i][1], input.normals[i][2]};
      if (!seen.try_emplace(key, static_cast<int>(i)).second) continue;
      cloud.points.push_back(input.points[i]);
      cloud.normals.push_back(input.normals[i]);
      cloud.source.push_back(input.source.empty() ? 0 : input.source[i]);
    }
  }

  detail::SdfGrid grid =
      detail::build_sdf(cloud, voxel_size, options.truncation_voxels, options.max_grid_dim);
  TriMesh mesh = detail::marching_tetrahedra(grid);
  if (mesh.faces.empty()) throw std::runtime_error("fuse: no surface extracted");
  mesh = compute_vertex_normals(std::move(mesh));

  if (provenance) {
    PointGrid index(&cloud.points, voxel_size * options.truncation_voxels);
    provenance->resize(mesh.vertices.size());
    parallel_for(0, mesh.vertices.size(), [&](std::size_t v) {
      int idx = index.nearest(mesh.vertices[v]);
      (*provenance)[v] = idx >= 0 ? cloud.source[idx] : 0;
    });
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Global alignment (stage 2 solve).

struct GlobalAlignment {
  int reference = 0;
  std::vector<NodeMotion> motions;  // frame n -> reference pose
  std::vector<char> usable;         // excluded frames are skipped by fusion
  std::vector<double> frame_residuals;
  SolverReport report;
};

struct AlignmentOptions {
  double lambda_rigid = 150.0;
  double lambda_smooth = 5.0;
  double lambda_corr = 1.0;
  int max_frames = 370;
  int introduction_iterations = 3;
  int polish_iterations = 10;
  double exclusion_residual_frac = 0.05;  // of bbox diagonal
  SolverOptions solver;
};

namespace detail {

// Correspondence pairs for Eq. 8: every vertex of frame n, pushed through the
// frozen forward motion, skinned onto frame n+1's graph.
struct CorrPair {
  std::vector<Vec3> forwarded;                               // q_i = f+(v_i)
  std::vector<std::vector<std::pair<int, double>>> q_rows;   // weights of q on graph n+1
};

inline CorrPair make_corr_pair(const Frame& frame_n, const Frame& frame_n1,
                               const NodeMotion& forward, int skin_k) {
  CorrPair pair;
  const auto& verts = frame_n.mesh.vertices;
  pair.forwarded.resize(verts.size());
  pair.q_rows.resize(verts.size());
  parallel_for(0, verts.size(), [&](std::size_t i) {
    pair.forwarded[i] = deform_vertex(verts[i], frame_n.weights.rows[i], frame_n.graph, forward);
    pair.q_rows[i] = euclidean_weight_row(pair.forwarded[i], frame_n1.graph, skin_k);
  });
  return pair;
}

}  // namespace detail

// Eq. 8 evaluated directly on a candidate alignment.
inline double energy_corr(const FrameSequence& seq, const std::vector<NodeMotion>& motions,
                          const std::vector<PairwiseResult>& pairwise, int skin_k = 4) {
  double total = 0;
  for (int n = 0; n + 1 < seq.frame_count(); ++n) {
    if (!pairwise[n].forward) continue;
    detail::CorrPair pair =
        detail::make_corr_pair(seq.frames[n], seq.frames[n + 1], *pairwise[n].forward, skin_k);
    const auto& verts = seq.frames[n].mesh.vertices;
    std::vector<double> sq(verts.size());
    parallel_for(0, verts.size(), [&](std::size_t i) {
      Vec3 direct = deform_vertex(verts[i], seq.frames[n].weights.rows[i], seq.frames[n].graph,
                                  motions[n]);
      Vec3 chained =
          deform_vertex(pair.forwarded[i], pair.q_rows[i], seq.frames[n + 1].graph, motions[n + 1]);
      sq[i] = (direct - chained).squaredNorm();
    });
    for (double s : sq) total += s;
  }
  return total;
}

// Chain pairwise motions into per-frame motions to the reference pose, then
// minimize lambda_r E_rigid + lambda_s E_smooth + lambda_c E_corr with the
// reference frame held fixed, introducing frames outward from the reference.
inline GlobalAlignment align_all_frames(const FrameSequence& seq,
                                        const std::vector<PairwiseResult>& pairwise,
                                        int reference, const AlignmentOptions& opt) {
  const int n_frames = seq.frame_count();
  if (n_frames > opt.max_frames)
    throw std::invalid_argument("align_all_frames: sequence exceeds the frame cap (" +
                                std::to_string(opt.max_frames) + ")");
  if (reference < 0 || reference >= n_frames)
    throw std::invalid_argument("align_all_frames: invalid reference frame");
  if (static_cast<int>(pairwise.size()) != n_frames)
    throw std::invalid_argument("align_all_frames: pairwise results missing");

  GlobalAlignment alignment;
  alignment.reference = reference;
  alignment.motions.resize(n_frames);
  alignment.usable.assign(n_frames, 1);
  alignment.frame_residuals.assign(n_frames, 0.0);
  alignment.motions[reference] = NodeMotion::identity(seq.frames[reference].graph.node_count());

  // introduction order: outward from the reference, lower side first on ties
  std::vector<int> order;
  for (int d = 1; d < n_frames; ++d) {
    if (reference - d >= 0) order.push_back(reference - d);
    if (reference + d < n_frames) order.push_back(reference + d);
  }

  // initialize by composing the chain toward the reference
  auto init_from_neighbor = [&](int n, int neighbor, const NodeMotion& step_motion) {
    const DeformGraph& graph = seq.frames[n].graph;
    const Frame& nb = seq.frames[neighbor];
    NodeMotion motion = NodeMotion::identity(graph.node_count());
    for (int t = 0; t < graph.node_count(); ++t) {
      Vec3 q = graph.nodes[t] + step_motion.b[t];  // node after its own step
      auto row = euclidean_weight_row(q, nb.graph, 4);
      Mat3 blend = Mat3::Zero();
      for (const auto& [s, w] : row) blend += w * alignment.motions[neighbor].A[s];
      motion.A[t] = blend * step_motion.A[t];
      motion.b[t] = deform_vertex(q, row, nb.graph, alignment.motions[neighbor]) - graph.nodes[t];
    }
    alignment.motions[n] = motion;
  };
  for (int idx : order) {
    if (idx > reference) {
      const auto& bwd = pairwise[idx].backward;
      if (!bwd) throw std::invalid_argument("align_all_frames: missing backward motion");
      init_from_neighbor(idx, idx - 1, *bwd);
    } else {
      const auto& fwd = pairwise[idx].forward;
      if (!fwd) throw std::invalid_argument("align_all_frames: missing forward motion");
      init_from_neighbor(idx, idx + 1, *fwd);
    }
  }

  // parameter layout: non-reference frames back to back
  std::vector<int> base(n_frames, -1);
  int total_params = 0;
  for (int n = 0; n < n_frames; ++n) {
    if (n == reference) continue;
    base[n] = total_params;
    total_params += motion_param_count(seq.frames[n].graph.node_count());
  }

  // precompute corr machinery per adjacent pair
  std::vector<detail::CorrPair> pairs(std::max(0, n_frames - 1));
  for (int n = 0; n + 1 < n_frames; ++n) {
    if (!pairwise[n].forward) continue;
    pairs[n] = detail::make_corr_pair(seq.frames[n], seq.frames[n + 1], *pairwise[n].forward, 4);
  }

  Eigen::VectorXd x(total_params);
  for (int n = 0; n < n_frames; ++n)
    if (n != reference) pack_motion(alignment.motions[n], base[n], x);

  auto build_blocks = [&](const std::vector<char>& active) {
    std::vector<ResidualBlock> blocks;
    for (int n = 0; n < n_frames; ++n) {
      if (n == reference || !active[n]) continue;
      const DeformGraph& graph = seq.frames[n].graph;
      for (int t = 0; t < graph.node_count(); ++t)
        blocks.push_back(make_rigid_block(base[n] + 12 * t, opt.lambda_rigid));
      for (int t = 0; t < graph.node_count(); ++t)
        for (int k : graph.neighbors[t])
          blocks.push_back(make_smooth_block(base[n] + 12 * t, base[n] + 12 * k, graph.nodes[t],
                                             graph.nodes[k], opt.lambda_smooth));
    }
    for (int n = 0; n + 1 < n_frames; ++n) {
      if (!pairwise[n].forward || !active[n] || !active[n + 1]) continue;
      const Frame& fn = seq.frames[n];
      const Frame& fn1 = seq.frames[n + 1];
      for (std::size_t i = 0; i < fn.mesh.vertices.size(); ++i) {
        Vec3 constant = Vec3::Zero();
        std::vector<DeformTerm> terms;
        if (n == reference) {
          constant += fn.mesh.vertices[i];  // identity motion, held fixed
        } else {
          terms.push_back({base[n], &fn.graph, fn.mesh.vertices[i], fn.weights.rows[i], 1.0});
        }
        if (n + 1 == reference) {
          constant -= pairs[n].forwarded[i];
        } else {
          terms.push_back({base[n + 1], &fn1.graph, pairs[n].forwarded[i], pairs[n].q_rows[i],
                           -1.0});
        }
        blocks.push_back(make_deform_combo_block(terms, constant, opt.lambda_corr));
      }
    }
    return blocks;
  };

  // sequential introduction, then a joint polish
  std::vector<char> active(n_frames, 0);
  active[reference] = 1;
  SolverOptions intro = opt.solver;
  intro.max_iterations = opt.introduction_iterations;
  for (int idx : order) {
    active[idx] = 1;
    auto blocks = build_blocks(active);
    auto [solution, report] = solve(blocks, x, intro);
    x = solution;
    alignment.report = report;
  }
  SolverOptions polish = opt.solver;
  polish.max_iterations = opt.polish_iterations;
  auto blocks = build_blocks(active);
  auto [solution, report] = solve(blocks, x, polish);
  x = solution;
  alignment.report = report;

  for (int n = 0; n < n_frames; ++n)
    if (n != reference)
      alignment.motions[n] = unpack_motion(x, base[n], seq.frames[n].graph.node_count());

  // per-frame mean chained-correspondence residual; poor frames are excluded
  for (int n = 0; n + 1 < n_frames; ++n) {
    if (!pairwise[n].forward) continue;
    const Frame& fn = seq.frames[n];
    const auto& verts = fn.mesh.vertices;
    std::vector<double> norms(verts.size());
    parallel_for(0, verts.size(), [&](std::size_t i) {
      Vec3 direct = deform_vertex(verts[i], fn.weights.rows[i], fn.graph, alignment.motions[n]);
      Vec3 chained = deform_vertex(pairs[n].forwarded[i], pairs[n].q_rows[i],
                                   seq.frames[n + 1].graph, alignment.motions[n + 1]);
      norms[i] = (direct - chained).norm();
    });
    double mean = 0;
    for (double d : norms) mean += d;
    mean /= std::max<std::size_t>(1, norms.size());
    alignment.frame_residuals[n] = std::max(alignment.frame_residuals[n], mean);
    alignment.frame_residuals[n + 1] = std::max(alignment.frame_residuals[n + 1], mean);
  }
  for (int n = 0; n < n_frames; ++n) {
    if (n == reference) continue;
    double diag = bbox_diagonal(seq.frames[n].mesh);
    if (alignment.frame_residuals[n] > opt.exclusion_residual_frac * diag) alignment.usable[n] = 0;
  }
  return alignment;
}

// ---------------------------------------------------------------------------
// Template construction.

struct GlobalTemplate {
  TriMesh mesh;       // watertight fused surface
  DeformGraph graph;  // sampled on the fused mesh
  std::vector<int> provenance;  // source frame per template vertex
};

struct TemplateOptions {
  FusionOptions fusion;
  int node_count = 0;  // 0 = default ratio
  int skin_k = 4;
};

// Deform every usable frame into the reference pose and pool the points.
inline OrientedCloud gather_aligned_cloud(const FrameSequence& seq,
                                          const GlobalAlignment& alignment) {
  OrientedCloud cloud;
  for (int n = 0; n < seq.frame_count(); ++n) {
    if (!alignment.usable[n]) continue;
    TriMesh deformed = deform_mesh(seq.frames[n].mesh, seq.frames[n].weights, seq.frames[n].graph,
                                   alignment.motions[n]);
    for (int v = 0; v < deformed.vertex_count(); ++v) {
      cloud.points.push_back(deformed.vertices[v]);
      cloud.normals.push_back(deformed.normals[v]);
      cloud.source.push_back(n);
    }
  }
  return cloud;
}

inline GlobalTemplate build_template(const FrameSequence& seq, const GlobalAlignment& alignment,
                                     const TemplateOptions& opt = {}) {
  OrientedCloud cloud = gather_aligned_cloud(seq, alignment);
  if (cloud.points.empty()) throw std::runtime_error("build_template: no usable frames");
  Aabb box;
  for (const auto& p : cloud.points) box.expand(p);
  double voxel = box.diagonal() / opt.fusion.voxel_resolution;

  GlobalTemplate tpl;
  tpl.mesh = fuse_oriented_points(cloud, voxel, opt.fusion, &tpl.provenance);
  int target = opt.node_count > 0 ? opt.node_count : default_node_count(tpl.mesh.vertex_count());
  target = std::min(target, tpl.mesh.vertex_count());
  tpl.graph = sample_nodes(tpl.mesh, target, opt.skin_k);
  return tpl;
}

}  // namespace seqrecon
