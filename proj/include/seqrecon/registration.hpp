#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqrecon/bvh.hpp"
#include "seqrecon/deform_graph.hpp"
#include "seqrecon/energies.hpp"
#include "seqrecon/mesh.hpp"
#include "seqrecon/parallel.hpp"
#include "seqrecon/solver.hpp"

namespace seqrecon {

// One input frame plus its deformation machinery.
struct Frame {
  TriMesh mesh;  // partial input, normals computed
  DeformGraph graph;
  SkinningWeights weights;
};

struct FrameSequence {
  std::vector<Frame> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
};

struct Correspondence {
  int source_vertex = -1;
  int target_vertex = -1;
  Vec3 target_point = Vec3::Zero();
  Vec3 target_normal = Vec3::Zero();
  double ray_distance = 0.0;  // signed hit distance along the deformed normal
  bool valid = false;
};

// Pruned entries keep their slot so indexing is stable across ICP rounds.
struct CorrespondenceSet {
  std::vector<Correspondence> entries;
  int valid_count = 0;
  double hit_rate = 0.0;
  double median_abs_distance = 0.0;

  double validity() const {
    return entries.empty() ? 0.0 : static_cast<double>(valid_count) / entries.size();
  }
};

struct RegistrationOptions {
  double lambda_rigid = 100.0;
  double lambda_smooth = 20.0;
  double lambda_fit = 1.0;
  double lambda_tempo = 5.0;
  double lambda_point = 0.1;
  double lambda_plane = 1.0;
  int outer_rounds = 20;
  int inner_iterations = 5;
  double prune_median_factor = 5.0;
  double prune_normal_angle_deg = 60.0;
  double failure_distance_frac = 0.05;  // of the source bbox diagonal
  SolverOptions solver;
};

struct PairwiseResult {
  std::optional<NodeMotion> forward;   // n -> n+1
  std::optional<NodeMotion> backward;  // n -> n-1
  std::map<std::string, double> energies;
  SolverReport report;  // last inner solve
  std::vector<SolverReport> round_reports;
  bool failed = false;
  double mean_valid_distance = 0.0;
  int rounds = 0;
};

// Ray-based correspondence search: a bidirectional ray from each deformed
// source vertex along its deformed normal; the match is the target vertex
// nearest the intersection. No closest-point fallback on a miss.
inline CorrespondenceSet find_correspondences(const std::vector<Vec3>& positions,
                                              const std::vector<Vec3>& normals,
                                              const TriMesh& target, const MeshBvh& target_bvh,
                                              const RegistrationOptions& opt,
                                              double scale_hint) {
  CorrespondenceSet set;
  set.entries.resize(positions.size());
  parallel_for(0, positions.size(), [&](std::size_t i) {
    Correspondence& c = set.entries[i];
    c.source_vertex = static_cast<int>(i);
    auto hit = target_bvh.ray_intersect(positions[i], normals[i], true);
    if (!hit) return;
    const auto& face = target.faces[hit->face_index];
    int best = face[0];
    double best_d = (target.vertices[face[0]] - hit->point).squaredNorm();
    for (int k = 1; k < 3; ++k) {
      double d = (target.vertices[face[k]] - hit->point).squaredNorm();
      if (d < best_d || (d == best_d && face[k] < best)) {
        best_d = d;
        best = face[k];
      }
    }
    c.target_vertex = best;
    c.target_point = target.vertices[best];
    c.target_normal = target.normals[best];
    c.ray_distance = hit->distance;
    c.valid = true;  // provisional; pruning below
  });

  std::vector<double> dists;
  for (const auto& c : set.entries)
    if (c.valid) dists.push_back(std::abs(c.ray_distance));
  set.hit_rate = set.entries.empty() ? 0.0 : static_cast<double>(dists.size()) / set.entries.size();
  if (dists.empty()) return set;
  std::sort(dists.begin(), dists.end());
  set.median_abs_distance = dists[dists.size() / 2];

  double dist_cut = opt.prune_median_factor * set.median_abs_distance + 1e-12 * scale_hint;
  double cos_cut = std::cos(opt.prune_normal_angle_deg * M_PI / 180.0);
  for (std::size_t i = 0; i < set.entries.size(); ++i) {
    auto& c = set.entries[i];
    if (!c.valid) continue;
    if (std::abs(c.ray_distance) > dist_cut || normals[i].dot(c.target_normal) < cos_cut)
      c.valid = false;
  }
  set.valid_count = 0;
  for (const auto& c : set.entries) set.valid_count += c.valid ? 1 : 0;
  return set;
}

// lambda_point ||v-c||^2 + lambda_plane |n.(v-c)|^2 over valid entries.
inline double energy_fit(const CorrespondenceSet& corr, const std::vector<Vec3>& positions,
                         const std::vector<Vec3>& normals, double lambda_point,
                         double lambda_plane) {
  double e = 0;
  for (const auto& c : corr.entries) {
    if (!c.valid) continue;
    Vec3 diff = positions[c.source_vertex] - c.target_point;
    double along = normals[c.source_vertex].dot(diff);
    e += lambda_point * diff.squaredNorm() + lambda_plane * along * along;
  }
  return e;
}

namespace detail {

struct DeformedState {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
};

inline DeformedState deform_state(const Frame& frame, const NodeMotion& motion) {
  DeformedState out;
  out.positions.resize(frame.mesh.vertices.size());
  out.normals.resize(frame.mesh.vertices.size());
  parallel_for(0, frame.mesh.vertices.size(), [&](std::size_t i) {
    out.positions[i] = deform_vertex(frame.mesh.vertices[i], frame.weights.rows[i], frame.graph,
                                     motion);
    Mat3 blend = Mat3::Zero();
    for (const auto& [t, w] : frame.weights.rows[i]) blend += w * motion.A[t];
    out.normals[i] = (polar_rotation(blend) * frame.mesh.normals[i]).normalized();
  });
  return out;
}

// Transfer a warm-start motion from another frame's graph by nearest node.
inline NodeMotion transfer_motion(const DeformGraph& from_graph, const NodeMotion& from_motion,
                                  const DeformGraph& to_graph) {
  NodeMotion out = NodeMotion::identity(to_graph.node_count());
  for (int t = 0; t < to_graph.node_count(); ++t) {
    int best = 0;
    double best_d = (from_graph.nodes[0] - to_graph.nodes[t]).squaredNorm();
    for (int s = 1; s < from_graph.node_count(); ++s) {
      double d = (from_graph.nodes[s] - to_graph.nodes[t]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    out.A[t] = from_motion.A[best];
    out.b[t] = from_motion.b[best];
  }
  return out;
}

// Invert an embedded deformation per node: the local map x -> A(x-g_s)+g_s+b,
// inverted and re-expressed around g_t.
inline NodeMotion invert_transferred_motion(const DeformGraph& from_graph,
                                            const NodeMotion& from_motion,
                                            const DeformGraph& to_graph) {
  NodeMotion out = NodeMotion::identity(to_graph.node_count());
  for (int t = 0; t < to_graph.node_count(); ++t) {
    int best = 0;
    double best_d = (from_graph.nodes[0] - to_graph.nodes[t]).squaredNorm();
    for (int s = 1; s < from_graph.node_count(); ++s) {
      double d = (from_graph.nodes[s] - to_graph.nodes[t]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    const Mat3& A = from_motion.A[best];
    if (std::abs(A.determinant()) < 1e-9) continue;  // keep identity
    Mat3 Ainv = A.inverse();
    const Vec3& gs = from_graph.nodes[best];
    const Vec3& gt = to_graph.nodes[t];
    out.A[t] = Ainv;
    out.b[t] = Ainv * (gt - gs - from_motion.b[best]) + gs - gt;
  }
  return out;
}

}  // namespace detail

// Stage 1: align `curr` onto its neighbors by minimizing
// lambda1 E_rigid + lambda2 E_smooth + lambda3 E_fit (both directions)
// + lambda4 E_tempo, re-running the ray correspondence search each round.
// Boundary frames drop the missing direction and the tempo coupling.
inline PairwiseResult register_triplet(const Frame& curr, const TriMesh* prev, const TriMesh* next,
                                       const RegistrationOptions& opt,
                                       const PairwiseResult* warm = nullptr,
                                       const DeformGraph* warm_graph = nullptr) {
  if (!prev && !next) throw std::invalid_argument("register_triplet: no neighbor frames");
  const int m = curr.graph.node_count();
  const double diag = bbox_diagonal(curr.mesh);

  PairwiseResult result;
  NodeMotion fwd = NodeMotion::identity(m);
  NodeMotion bwd = NodeMotion::identity(m);
  if (warm && warm_graph) {
    // warm start: motions vary smoothly frame to frame
    if (next && warm->forward) fwd = detail::transfer_motion(*warm_graph, *warm->forward, curr.graph);
    if (prev && warm->forward)
      bwd = detail::invert_transferred_motion(*warm_graph, *warm->forward, curr.graph);
  }

  std::optional<MeshBvh> next_bvh, prev_bvh;
  if (next) next_bvh.emplace(*next);
  if (prev) prev_bvh.emplace(*prev);

  const int fwd_base = next ? 0 : -1;
  const int bwd_base = prev ? (next ? 12 * m : 0) : -1;
  const int param_count = 12 * m * ((next ? 1 : 0) + (prev ? 1 : 0));

  SolverOptions inner = opt.solver;
  inner.max_iterations = opt.inner_iterations;

  CorrespondenceSet corr_f, corr_b;
  double prev_round_energy = std::numeric_limits<double>::infinity();
  for (int round = 0; round < opt.outer_rounds; ++round) {
    detail::DeformedState state_f, state_b;
    if (next) {
      state_f = detail::deform_state(curr, fwd);
      corr_f = find_correspondences(state_f.positions, state_f.normals, *next, *next_bvh, opt, diag);
    }
    if (prev) {
      state_b = detail::deform_state(curr, bwd);
      corr_b = find_correspondences(state_b.positions, state_b.normals, *prev, *prev_bvh, opt, diag);
    }
    if ((!next || corr_f.valid_count == 0) && (!prev || corr_b.valid_count == 0)) {
      result.failed = true;
      break;
    }

    std::vector<ResidualBlock> blocks;
    auto add_direction = [&](int base, const CorrespondenceSet& corr) {
      for (int t = 0; t < m; ++t) blocks.push_back(make_rigid_block(base + 12 * t, opt.lambda_rigid));
      for (int t = 0; t < m; ++t)
        for (int k : curr.graph.neighbors[t])
          blocks.push_back(make_smooth_block(base + 12 * t, base + 12 * k, curr.graph.nodes[t],
                                             curr.graph.nodes[k], opt.lambda_smooth));
      for (const auto& c : corr.entries) {
        if (!c.valid) continue;
        // the plane normal is the deformed source normal, frozen this round
        blocks.push_back(make_fit_block(base, curr.graph, curr.mesh.vertices[c.source_vertex],
                                        curr.weights.rows[c.source_vertex], c.target_point,
                                        (base == fwd_base ? state_f : state_b).normals[c.source_vertex],
                                        opt.lambda_point, opt.lambda_plane, opt.lambda_fit));
      }
    };
    if (next) add_direction(fwd_base, corr_f);
    if (prev) add_direction(bwd_base, corr_b);
    if (next && prev)
      for (int t = 0; t < m; ++t)
        blocks.push_back(make_tempo_block(fwd_base + 12 * t, bwd_base + 12 * t, opt.lambda_tempo));

    Eigen::VectorXd x(param_count);
    if (next) pack_motion(fwd, fwd_base, x);
    if (prev) pack_motion(bwd, bwd_base, x);
    auto [solution, report] = solve(blocks, x, inner);
    if (next) fwd = unpack_motion(solution, fwd_base, m);
    if (prev) bwd = unpack_motion(solution, bwd_base, m);
    result.report = report;
    result.round_reports.push_back(report);
    result.rounds = round + 1;

    double energy = report.final_energy;
    if (round > 0 && std::abs(prev_round_energy - energy) <= 1e-6 * std::max(1.0, prev_round_energy))
      break;
    prev_round_energy = energy;
    double last_step = report.rows.empty() ? 0.0 : report.rows.back().step_norm;
    if (report.status == SolveStatus::Converged && last_step < 1e-10 && round > 0) break;
  }

  // final statistics on fresh correspondences
  double dist_sum = 0;
  int dist_count = 0;
  auto accumulate = [&](const CorrespondenceSet& corr, const detail::DeformedState& state) {
    for (const auto& c : corr.entries)
      if (c.valid) {
        dist_sum += (state.positions[c.source_vertex] - c.target_point).norm();
        ++dist_count;
      }
  };
  detail::DeformedState state_f, state_b;
  if (next) {
    state_f = detail::deform_state(curr, fwd);
    corr_f = find_correspondences(state_f.positions, state_f.normals, *next, *next_bvh, opt, diag);
    accumulate(corr_f, state_f);
    result.energies["rigid_forward"] = energy_rigid(fwd);
    result.energies["smooth_forward"] = energy_smooth(curr.graph, fwd);
    result.energies["fit_forward"] =
        energy_fit(corr_f, state_f.positions, state_f.normals, opt.lambda_point, opt.lambda_plane);
  }
  if (prev) {
    state_b = detail::deform_state(curr, bwd);
    corr_b = find_correspondences(state_b.positions, state_b.normals, *prev, *prev_bvh, opt, diag);
    accumulate(corr_b, state_b);
    result.energies["rigid_backward"] = energy_rigid(bwd);
    result.energies["smooth_backward"] = energy_smooth(curr.graph, bwd);
    result.energies["fit_backward"] =
        energy_fit(corr_b, state_b.positions, state_b.normals, opt.lambda_point, opt.lambda_plane);
  }
  if (next && prev) result.energies["tempo"] = energy_tempo(fwd, bwd);

  if (dist_count == 0) {
    result.failed = true;
  } else {
    result.mean_valid_distance = dist_sum / dist_count;
    if (result.mean_valid_distance > opt.failure_distance_frac * diag) result.failed = true;
  }
  if (next) result.forward = fwd;
  if (prev) result.backward = bwd;
  return result;
}

// Sequential registration in frame order, warm-starting each triplet from
// its predecessor.
inline std::vector<PairwiseResult> register_sequence(const FrameSequence& seq,
                                                     const RegistrationOptions& opt) {
  const int n = seq.frame_count();
  if (n < 2) throw std::invalid_argument("register_sequence: need at least 2 frames");
  std::vector<PairwiseResult> results(n);
  for (int i = 0; i < n; ++i) {
    const TriMesh* prev = i > 0 ? &seq.frames[i - 1].mesh : nullptr;
    const TriMesh* next = i + 1 < n ? &seq.frames[i + 1].mesh : nullptr;
    const PairwiseResult* warm = i > 0 ? &results[i - 1] : nullptr;
    const DeformGraph* warm_graph = i > 0 ? &seq.frames[i - 1].graph : nullptr;
    results[i] = register_triplet(seq.frames[i], prev, next, opt, warm, warm_graph);
  }
  return results;
}

}  // namespace seqrecon
