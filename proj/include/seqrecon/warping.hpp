#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "seqrecon/bvh.hpp"
#include "seqrecon/energies.hpp"
#include "seqrecon/fusion.hpp"
#include "seqrecon/geodesic.hpp"
#include "seqrecon/segmentation.hpp"
#include "seqrecon/solver.hpp"

namespace seqrecon {

// ---------------------------------------------------------------------------
// Warp-back graph: one node per patch, placed at the in-patch vertex nearest
// the patch centroid, skinned over the template with the usual falloff.

struct WarpGraph {
  DeformGraph graph;
  SkinningWeights weights;
  std::vector<int> node_patch;
};

inline WarpGraph build_warp_graph(const TriMesh& template_mesh, const PatchSegmentation& seg,
                                  int skin_k = 4) {
  if (seg.patch_count() < 2)
    throw std::invalid_argument("build_warp_graph: need at least 2 patches");
  WarpGraph wg;
  for (int patch = 0; patch < seg.patch_count(); ++patch) {
    const auto& verts = seg.patch_vertices[patch];
    int best = verts.front();
    double best_d = (template_mesh.vertices[best] - seg.centroids[patch]).squaredNorm();
    for (int v : verts) {
      double d = (template_mesh.vertices[v] - seg.centroids[patch]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = v;
      }
    }
    wg.graph.node_vertices.push_back(best);
    wg.graph.nodes.push_back(template_mesh.vertices[best]);
    wg.node_patch.push_back(patch);
  }
  const int m = wg.graph.node_count();
  int k_used = std::min(skin_k, m - 1);
  wg.weights = compute_skinning_weights(template_mesh, wg.graph, k_used);
  detail::edges_from_rows(wg.weights.rows, wg.graph);
  // isolated nodes (tiny patches) link to their nearest node
  for (int t = 0; t < m; ++t) {
    if (!wg.graph.neighbors[t].empty()) continue;
    int best = t == 0 ? 1 : 0;
    for (int s = 0; s < m; ++s) {
      if (s == t) continue;
      if ((wg.graph.nodes[s] - wg.graph.nodes[t]).squaredNorm() <
          (wg.graph.nodes[best] - wg.graph.nodes[t]).squaredNorm())
        best = s;
    }
    int a = std::min(t, best), b = std::max(t, best);
    wg.graph.edges.push_back({a, b});
    wg.graph.neighbors[a].push_back(b);
    wg.graph.neighbors[b].push_back(a);
  }
  std::sort(wg.graph.edges.begin(), wg.graph.edges.end());
  wg.graph.edges.erase(std::unique(wg.graph.edges.begin(), wg.graph.edges.end()),
                       wg.graph.edges.end());
  for (auto& n : wg.graph.neighbors) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return wg;
}

// ---------------------------------------------------------------------------
// Surface expansion (per frame): move each template vertex along its normal
// to close the residual gap against the deformed frame, with patch-restricted
// smoothness propagating into uncovered regions.

struct ExpansionField {
  std::vector<double> displacement;
  std::vector<char> has_correspondence;  // gamma in T_k
  std::vector<Vec3> targets;             // c_gamma (valid entries only)
  std::vector<int> empty_patches;        // patches with no ray hit; d pinned to 0
};

struct ExpansionOptions {
  double lambda_patch = 1.0;
  int neighborhood = 4;          // eta: nearest same-patch vertices
  double cutoff_frac = 0.02;     // of the template bbox diagonal
};

inline ResidualBlock make_expansion_data_block(int param, const Vec3& vertex, const Vec3& normal,
                                               const Vec3& target, double weight) {
  ResidualBlock blk;
  blk.params = {param};
  blk.dim = 3;
  blk.weight = weight;
  Vec3 base = vertex - target;
  blk.eval = [base, normal](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    for (int i = 0; i < 3; ++i) r[i] = base[i] + l[0] * normal[i];
    if (J)
      for (int i = 0; i < 3; ++i) (*J)(i, 0) = normal[i];
  };
  return blk;
}

inline ResidualBlock make_expansion_smooth_block(int param_i, int param_k, double weight) {
  ResidualBlock blk;
  blk.params = {param_i, param_k};
  blk.dim = 1;
  blk.weight = weight;
  blk.eval = [](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r[0] = l[0] - l[1];
    if (J) {
      (*J)(0, 0) = 1.0;
      (*J)(0, 1) = -1.0;
    }
  };
  return blk;
}

inline std::vector<ResidualBlock> expansion_blocks(const TriMesh& template_mesh,
                                                   const PatchSegmentation& seg,
                                                   const ExpansionField& field,
                                                   const ExpansionOptions& opt,
                                                   const std::vector<char>& active) {
  std::vector<ResidualBlock> blocks;
  for (int v = 0; v < template_mesh.vertex_count(); ++v)
    if (field.has_correspondence[v] && active[v])
      blocks.push_back(make_expansion_data_block(v, template_mesh.vertices[v],
                                                 template_mesh.normals[v], field.targets[v], 1.0));
  // eta: nearest same-patch vertices
  for (int patch = 0; patch < seg.patch_count(); ++patch) {
    const auto& verts = seg.patch_vertices[patch];
    if (verts.size() < 2 || !active[verts.front()]) continue;
    std::vector<Vec3> positions;
    positions.reserve(verts.size());
    for (int v : verts) positions.push_back(template_mesh.vertices[v]);
    for (std::size_t a = 0; a < verts.size(); ++a) {
      std::vector<std::pair<double, int>> cand;
      cand.reserve(verts.size() - 1);
      for (std::size_t b = 0; b < verts.size(); ++b) {
        if (a == b) continue;
        cand.push_back({(positions[a] - positions[b]).squaredNorm(), verts[b]});
      }
      int take = std::min<std::size_t>(opt.neighborhood, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
      for (int i = 0; i < take; ++i)
        blocks.push_back(make_expansion_smooth_block(verts[a], cand[i].second, opt.lambda_patch));
    }
  }
  return blocks;
}

// Bidirectional normal rays against the deformed frame, then one linear
// least-squares solve in d. Patches the rays never reach keep d = 0.
inline ExpansionField expand_surface(const TriMesh& template_mesh, const TriMesh& deformed_frame,
                                     const PatchSegmentation& seg,
                                     const ExpansionOptions& opt = {}) {
  if (!template_mesh.has_normals())
    throw std::invalid_argument("expand_surface: template normals required");
  const int nv = template_mesh.vertex_count();
  ExpansionField field;
  field.displacement.assign(nv, 0.0);
  field.has_correspondence.assign(nv, 0);
  field.targets.assign(nv, Vec3::Zero());

  MeshBvh bvh(deformed_frame);
  const double cutoff = opt.cutoff_frac * bbox_diagonal(template_mesh);
  parallel_for(0, static_cast<std::size_t>(nv), [&](std::size_t v) {
    auto hit = bvh.ray_intersect(template_mesh.vertices[v], template_mesh.normals[v], true);
    if (hit && std::abs(hit->distance) <= cutoff) {
      field.has_correspondence[v] = 1;
      field.targets[v] = hit->point;
    }
  });

  // patches without any correspondence stay put
  std::vector<char> active(nv, 1);
  for (int patch = 0; patch < seg.patch_count(); ++patch) {
    bool any = false;
    for (int v : seg.patch_vertices[patch])
      if (field.has_correspondence[v]) {
        any = true;
        break;
      }
    if (any) continue;
    field.empty_patches.push_back(patch);
    for (int v : seg.patch_vertices[patch]) active[v] = 0;
  }

  auto blocks = expansion_blocks(template_mesh, seg, field, opt, active);
  if (blocks.empty()) return field;

  // the problem is quadratic: solve its normal equations directly
  Eigen::VectorXd d0 = Eigen::VectorXd::Zero(nv);
  auto [A, g] = assemble_normal_equations(blocks, d0, 1e-10);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error("expand_surface: singular expansion system");
  Eigen::VectorXd d = ldlt.solve(g);
  for (int v = 0; v < nv; ++v) field.displacement[v] = active[v] ? d[v] : 0.0;
  return field;
}

inline TriMesh apply_expansion(const TriMesh& template_mesh, const ExpansionField& field) {
  TriMesh out = template_mesh;
  for (int v = 0; v < out.vertex_count(); ++v)
    out.vertices[v] += field.displacement[v] * template_mesh.normals[v];
  return compute_vertex_normals(std::move(out));
}

// ---------------------------------------------------------------------------
// Per-frame node motion estimation and the warp state.

struct WarpState {
  DeformGraph frame_graph;       // warp graph with nodes at expanded positions
  NodeMotion motion;             // A^{0->n}, b^{0->n} per patch node
  std::vector<char> fallback;    // provenance per node: 0 direct, 1 fallback
  TriMesh expanded;              // P^n_expan
  TriMesh initial_warp;          // P^{0,n}: anchor of the data term
};

// Direct nodes adopt the inverted rigid motion of the hit vertex; occluded
// nodes average their 3 geodesically nearest direct nodes, weights 1/d.
inline WarpState estimate_node_motions(const TriMesh& expanded_template, const WarpGraph& wg,
                                       const EdgeGraph& template_edges,
                                       const TriMesh& deformed_frame,
                                       const VertexRigidMotions& warp_back_motions,
                                       double cutoff, int fallback_k = 3) {
  const int m = wg.graph.node_count();
  WarpState state;
  state.expanded = expanded_template;
  state.frame_graph = wg.graph;
  for (int t = 0; t < m; ++t)
    state.frame_graph.nodes[t] = expanded_template.vertices[wg.graph.node_vertices[t]];
  state.motion = NodeMotion::identity(m);
  state.fallback.assign(m, 0);

  MeshBvh bvh(deformed_frame);
  std::vector<std::optional<RigidMotion>> direct(m);
  for (int t = 0; t < m; ++t) {
    int vid = wg.graph.node_vertices[t];
    auto hit = bvh.ray_intersect(expanded_template.vertices[vid], expanded_template.normals[vid],
                                 true);
    if (!hit || std::abs(hit->distance) > cutoff) continue;
    const auto& face = deformed_frame.faces[hit->face_index];
    int closest = face[0];
    double best = (deformed_frame.vertices[face[0]] - hit->point).squaredNorm();
    for (int k = 1; k < 3; ++k) {
      double d = (deformed_frame.vertices[face[k]] - hit->point).squaredNorm();
      if (d < best || (d == best && face[k] < closest)) {
        best = d;
        closest = face[k];
      }
    }
    direct[t] = warp_back_motions[closest];
  }

  int direct_count = 0;
  for (const auto& d : direct) direct_count += d.has_value() ? 1 : 0;
  if (direct_count == 0)
    throw std::runtime_error("estimate_node_motions: no node sees the frame");

  // geodesic distances from each fallback node to the direct nodes
  std::vector<GeodesicField> fields(m);
  for (int t = 0; t < m; ++t)
    if (!direct[t]) fields[t] = geodesic_distances(template_edges, wg.graph.node_vertices[t]);

  for (int t = 0; t < m; ++t) {
    RigidMotion rigid;
    if (direct[t]) {
      rigid = *direct[t];
    } else {
      state.fallback[t] = 1;
      std::vector<std::pair<double, int>> cand;
      for (int s = 0; s < m; ++s) {
        if (!direct[s]) continue;
        double d = fields[t].distances[wg.graph.node_vertices[s]];
        if (std::isfinite(d)) cand.push_back({d, s});
      }
      if (cand.empty())
        throw std::runtime_error("estimate_node_motions: fallback node unreachable");
      std::sort(cand.begin(), cand.end());
      int take = std::min<std::size_t>(fallback_k, cand.size());
      std::vector<RigidMotion> motions;
      std::vector<double> weights;
      for (int i = 0; i < take; ++i) {
        motions.push_back(*direct[cand[i].second]);
        weights.push_back(1.0 / std::max(cand[i].first, 1e-12));
      }
      rigid = average_rigid_motions(motions, weights);
    }
    const Vec3& g = state.frame_graph.nodes[t];
    state.motion.A[t] = rigid.R;
    state.motion.b[t] = rigid.R * g + rigid.T - g;  // Eq. 1 reproduces the rigid map at g
  }

  // initial warp of the expanded template
  state.initial_warp = deform_mesh(state.expanded, wg.weights, state.frame_graph, state.motion);
  return state;
}

// ---------------------------------------------------------------------------
// Joint temporal refinement (Eq. 12/13 style).

struct RefinementOptions {
  double alpha_rigid = 100.0;
  double alpha_smooth = 30.0;
  double alpha_tempo = 1.0;
  double alpha_data = 5.0;
  int max_iterations = 15;
  SolverOptions solver;
};

inline double mean_second_difference(const std::vector<TriMesh>& sequence) {
  if (sequence.size() < 3) return 0.0;
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t n = 1; n + 1 < sequence.size(); ++n)
    for (std::size_t v = 0; v < sequence[n].vertices.size(); ++v) {
      sum += (sequence[n + 1].vertices[v] + sequence[n - 1].vertices[v] -
              2.0 * sequence[n].vertices[v])
                 .norm();
      ++count;
    }
  return count ? sum / count : 0.0;
}

// Jointly adjust all frames' node motions: per-frame rigidity and smoothness,
// second-difference temporal coupling, and a data anchor to the initial warp.
// First and last frames carry no temporal term.
inline SolverReport refine_temporal(std::vector<WarpState>& states, const WarpGraph& wg,
                                    const RefinementOptions& opt = {}) {
  const int n_frames = static_cast<int>(states.size());
  if (n_frames == 0) throw std::invalid_argument("refine_temporal: no frames");
  const int m = wg.graph.node_count();
  const int per_frame = motion_param_count(m);

  Eigen::VectorXd x(per_frame * n_frames);
  for (int n = 0; n < n_frames; ++n) pack_motion(states[n].motion, per_frame * n, x);

  std::vector<ResidualBlock> blocks;
  for (int n = 0; n < n_frames; ++n) {
    int base = per_frame * n;
    const DeformGraph& graph = states[n].frame_graph;
    for (int t = 0; t < m; ++t) blocks.push_back(make_rigid_block(base + 12 * t, opt.alpha_rigid));
    for (int t = 0; t < m; ++t)
      for (int k : graph.neighbors[t])
        blocks.push_back(make_smooth_block(base + 12 * t, base + 12 * k, graph.nodes[t],
                                           graph.nodes[k], opt.alpha_smooth));
    const std::size_t nv = states[n].expanded.vertices.size();
    for (std::size_t v = 0; v < nv; ++v) {
      DeformTerm term{base, &graph, states[n].expanded.vertices[v], wg.weights.rows[v], 1.0};
      blocks.push_back(make_deform_combo_block({term}, -states[n].initial_warp.vertices[v],
                                               opt.alpha_data));
    }
  }
  for (int n = 1; n + 1 < n_frames; ++n) {
    const std::size_t nv = states[n].expanded.vertices.size();
    for (std::size_t v = 0; v < nv; ++v) {
      DeformTerm prev{per_frame * (n - 1), &states[n - 1].frame_graph,
                      states[n - 1].expanded.vertices[v], wg.weights.rows[v], 1.0};
      DeformTerm curr{per_frame * n, &states[n].frame_graph, states[n].expanded.vertices[v],
                      wg.weights.rows[v], -2.0};
      DeformTerm next{per_frame * (n + 1), &states[n + 1].frame_graph,
                      states[n + 1].expanded.vertices[v], wg.weights.rows[v], 1.0};
      blocks.push_back(make_deform_combo_block({prev, curr, next}, Vec3::Zero(), opt.alpha_tempo));
    }
  }

  SolverOptions sopt = opt.solver;
  sopt.max_iterations = opt.max_iterations;
  auto [solution, report] = solve(blocks, x, sopt);
  for (int n = 0; n < n_frames; ++n)
    states[n].motion = unpack_motion(solution, per_frame * n, m);
  return report;
}

inline TriMesh warp_template_to_frame(const WarpState& state, const WarpGraph& wg) {
  TriMesh out = state.expanded;
  parallel_for(0, out.vertices.size(), [&](std::size_t v) {
    out.vertices[v] =
        deform_vertex(state.expanded.vertices[v], wg.weights.rows[v], state.frame_graph,
                      state.motion);
  });
  return compute_vertex_normals(std::move(out));
}

}  // namespace seqrecon
