#pragma once

#include <map>
#include <string>
#include <vector>

#include "seqrecon/deform_graph.hpp"
#include "seqrecon/solver.hpp"

namespace seqrecon {

// Parameter packing: 12 scalars per node, A_t row-major then b_t. A multi
// motion solve lays frames out back to back, each at its own base offset.
inline int motion_param_count(int node_count) { return 12 * node_count; }

inline void pack_motion(const NodeMotion& motion, int base, Eigen::VectorXd& x) {
  for (int t = 0; t < motion.node_count(); ++t) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) x[base + 12 * t + 3 * r + c] = motion.A[t](r, c);
    for (int i = 0; i < 3; ++i) x[base + 12 * t + 9 + i] = motion.b[t][i];
  }
}

inline NodeMotion unpack_motion(const Eigen::VectorXd& x, int base, int node_count) {
  NodeMotion motion = NodeMotion::identity(node_count);
  for (int t = 0; t < node_count; ++t) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) motion.A[t](r, c) = x[base + 12 * t + 3 * r + c];
    for (int i = 0; i < 3; ++i) motion.b[t][i] = x[base + 12 * t + 9 + i];
  }
  return motion;
}

// ---------------------------------------------------------------------------
// Direct energy evaluation (used both by the pipeline reports and as an
// independent check against the residual-block path).

// sum_t (a1.a2)^2 + (a2.a3)^2 + (a1.a3)^2 + (1-a1.a1)^2 + (1-a2.a2)^2 + (1-a3.a3)^2
inline double energy_rigid(const NodeMotion& motion) {
  double e = 0;
  for (const Mat3& A : motion.A) {
    Vec3 a1 = A.col(0), a2 = A.col(1), a3 = A.col(2);
    e += std::pow(a1.dot(a2), 2) + std::pow(a2.dot(a3), 2) + std::pow(a1.dot(a3), 2) +
         std::pow(1.0 - a1.dot(a1), 2) + std::pow(1.0 - a2.dot(a2), 2) +
         std::pow(1.0 - a3.dot(a3), 2);
  }
  return e;
}

// sum_t sum_{k in nu(t)} ||A_t (g_k - g_t) + g_t + b_t - (g_k + b_k)||^2
inline double energy_smooth(const DeformGraph& graph, const NodeMotion& motion) {
  double e = 0;
  for (int t = 0; t < graph.node_count(); ++t)
    for (int k : graph.neighbors[t]) {
      Vec3 r = motion.A[t] * (graph.nodes[k] - graph.nodes[t]) + graph.nodes[t] + motion.b[t] -
               (graph.nodes[k] + motion.b[k]);
      e += r.squaredNorm();
    }
  return e;
}

// sum_t ||I - A+ A-||_F^2 + ||A- b+ + b-||^2
inline double energy_tempo(const NodeMotion& forward, const NodeMotion& backward) {
  if (forward.node_count() != backward.node_count())
    throw std::invalid_argument("energy_tempo: node count mismatch");
  double e = 0;
  for (int t = 0; t < forward.node_count(); ++t) {
    Mat3 m = Mat3::Identity() - forward.A[t] * backward.A[t];
    Vec3 v = backward.A[t] * forward.b[t] + backward.b[t];
    e += m.squaredNorm() + v.squaredNorm();
  }
  return e;
}

// ---------------------------------------------------------------------------
// Residual blocks.

// Orthonormality of the columns of A_t; 6 residuals over the 9 A parameters.
inline ResidualBlock make_rigid_block(int node_base, double weight) {
  ResidualBlock blk;
  blk.dim = 6;
  blk.weight = weight;
  blk.params.resize(9);
  for (int i = 0; i < 9; ++i) blk.params[i] = node_base + i;
  blk.eval = [](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    // column j of A: a_j[i] = l[3*i + j]
    auto col = [&](int j) { return Vec3(l[j], l[3 + j], l[6 + j]); };
    Vec3 a1 = col(0), a2 = col(1), a3 = col(2);
    r[0] = a1.dot(a2);
    r[1] = a2.dot(a3);
    r[2] = a1.dot(a3);
    r[3] = 1.0 - a1.dot(a1);
    r[4] = 1.0 - a2.dot(a2);
    r[5] = 1.0 - a3.dot(a3);
    if (J) {
      J->setZero();
      for (int i = 0; i < 3; ++i) {
        (*J)(0, 3 * i + 0) = a2[i];
        (*J)(0, 3 * i + 1) = a1[i];
        (*J)(1, 3 * i + 1) = a3[i];
        (*J)(1, 3 * i + 2) = a2[i];
        (*J)(2, 3 * i + 0) = a3[i];
        (*J)(2, 3 * i + 2) = a1[i];
        (*J)(3, 3 * i + 0) = -2.0 * a1[i];
        (*J)(4, 3 * i + 1) = -2.0 * a2[i];
        (*J)(5, 3 * i + 2) = -2.0 * a3[i];
      }
    }
  };
  return blk;
}

// One directed smoothness edge t -> k.
inline ResidualBlock make_smooth_block(int base_t, int base_k, const Vec3& g_t, const Vec3& g_k,
                                       double weight) {
  ResidualBlock blk;
  blk.dim = 3;
  blk.weight = weight;
  blk.params.resize(15);
  for (int i = 0; i < 12; ++i) blk.params[i] = base_t + i;       // A_t, b_t
  for (int i = 0; i < 3; ++i) blk.params[12 + i] = base_k + 9 + i;  // b_k
  Vec3 d = g_k - g_t;
  Vec3 offset = g_t - g_k;
  blk.eval = [d, offset](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    for (int i = 0; i < 3; ++i)
      r[i] = l[3 * i] * d[0] + l[3 * i + 1] * d[1] + l[3 * i + 2] * d[2] + offset[i] + l[9 + i] -
             l[12 + i];
    if (J) {
      J->setZero();
      for (int i = 0; i < 3; ++i) {
        for (int c = 0; c < 3; ++c) (*J)(i, 3 * i + c) = d[c];
        (*J)(i, 9 + i) = 1.0;
        (*J)(i, 12 + i) = -1.0;
      }
    }
  };
  return blk;
}

// Point + plane ICP term for one correspondence of a deformed vertex.
inline ResidualBlock make_fit_block(int motion_base, const DeformGraph& graph, const Vec3& vertex,
                                    const std::vector<std::pair<int, double>>& row,
                                    const Vec3& target, const Vec3& normal, double lambda_point,
                                    double lambda_plane, double weight) {
  ResidualBlock blk;
  blk.dim = 4;
  blk.weight = weight;
  const int nn = static_cast<int>(row.size());
  blk.params.resize(12 * nn);
  std::vector<Vec3> rel(nn), anchors(nn);
  std::vector<double> w(nn);
  for (int j = 0; j < nn; ++j) {
    int t = row[j].first;
    w[j] = row[j].second;
    rel[j] = vertex - graph.nodes[t];
    anchors[j] = graph.nodes[t];
    for (int i = 0; i < 12; ++i) blk.params[12 * j + i] = motion_base + 12 * t + i;
  }
  double sp = std::sqrt(lambda_point), sl = std::sqrt(lambda_plane);
  blk.eval = [rel, anchors, w, target, normal, sp, sl, nn](const Eigen::VectorXd& l,
                                                           Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    Vec3 pos = Vec3::Zero();
    for (int j = 0; j < nn; ++j) {
      const double* p = l.data() + 12 * j;
      for (int i = 0; i < 3; ++i)
        pos[i] += w[j] * (p[3 * i] * rel[j][0] + p[3 * i + 1] * rel[j][1] + p[3 * i + 2] * rel[j][2] +
                          anchors[j][i] + p[9 + i]);
    }
    Vec3 diff = pos - target;
    r[0] = sp * diff[0];
    r[1] = sp * diff[1];
    r[2] = sp * diff[2];
    r[3] = sl * normal.dot(diff);
    if (J) {
      J->setZero();
      for (int j = 0; j < nn; ++j) {
        for (int i = 0; i < 3; ++i) {
          for (int c = 0; c < 3; ++c) {
            double dpos = w[j] * rel[j][c];  // d pos_i / d A(i,c)
            (*J)(i, 12 * j + 3 * i + c) = sp * dpos;
            (*J)(3, 12 * j + 3 * i + c) = sl * normal[i] * dpos;
          }
          (*J)(i, 12 * j + 9 + i) = sp * w[j];
          (*J)(3, 12 * j + 9 + i) = sl * normal[i] * w[j];
        }
      }
    }
  };
  return blk;
}

// Forward/backward coupling of one node: vec(I - A+ A-) and A- b+ + b-.
inline ResidualBlock make_tempo_block(int fwd_base, int bwd_base, double weight) {
  ResidualBlock blk;
  blk.dim = 12;
  blk.weight = weight;
  blk.params.resize(24);
  for (int i = 0; i < 12; ++i) blk.params[i] = fwd_base + i;
  for (int i = 0; i < 12; ++i) blk.params[12 + i] = bwd_base + i;
  blk.eval = [](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    auto P = [&](int i, int k) { return l[3 * i + k]; };        // A+
    auto M = [&](int i, int k) { return l[12 + 3 * i + k]; };   // A-
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = i == j ? 1.0 : 0.0;
        for (int k = 0; k < 3; ++k) s -= P(i, k) * M(k, j);
        r[3 * i + j] = s;
      }
    for (int i = 0; i < 3; ++i) {
      double s = l[12 + 9 + i];  // b-
      for (int k = 0; k < 3; ++k) s += M(i, k) * l[9 + k];
      r[9 + i] = s;
    }
    if (J) {
      J->setZero();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 3; ++k) {
            (*J)(3 * i + j, 3 * i + k) = -M(k, j);
            (*J)(3 * i + j, 12 + 3 * k + j) = -P(i, k);
          }
      for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) {
          (*J)(9 + i, 12 + 3 * i + k) = l[9 + k];  // d/dM(i,k) = b+_k
          (*J)(9 + i, 9 + k) = M(i, k);            // d/db+_k
        }
        (*J)(9 + i, 12 + 9 + i) = 1.0;
      }
    }
  };
  return blk;
}

// One Eq.-1 evaluation entering a linear combination. `base` is the frame's
// parameter offset; `row` the weight row of `point` on that frame's graph.
struct DeformTerm {
  int base = 0;
  const DeformGraph* graph = nullptr;
  Vec3 point = Vec3::Zero();
  std::vector<std::pair<int, double>> row;
  double coeff = 1.0;
};

// residual = sum_k coeff_k * f_k(point_k) + constant. Covers the chained
// correspondence term, the trajectory second-difference term and the warp
// data anchor, which are all linear in the motion parameters.
inline ResidualBlock make_deform_combo_block(const std::vector<DeformTerm>& terms,
                                             const Vec3& constant, double weight) {
  ResidualBlock blk;
  blk.dim = 3;
  blk.weight = weight;
  struct Entry {
    double w_coeff;  // coeff * skin weight
    Vec3 rel;        // point - g_t
    int local;       // first local column of this node's 12 params
  };
  std::vector<Entry> entries;
  Vec3 base_const = constant;
  std::map<int, int> local_of;  // global param base of node -> local column
  for (const auto& term : terms) {
    for (const auto& [t, w] : term.row) {
      int gbase = term.base + 12 * t;
      auto [it, fresh] = local_of.try_emplace(gbase, static_cast<int>(local_of.size()) * 12);
      if (fresh) {
        for (int i = 0; i < 12; ++i) blk.params.push_back(gbase + i);
      }
      entries.push_back({term.coeff * w, term.point - term.graph->nodes[t], it->second});
      base_const += term.coeff * w * term.graph->nodes[t];
    }
  }
  blk.eval = [entries, base_const](const Eigen::VectorXd& l, Eigen::VectorXd& r,
                                   Eigen::MatrixXd* J) {
    Vec3 acc = base_const;
    for (const auto& e : entries) {
      const double* p = l.data() + e.local;
      for (int i = 0; i < 3; ++i)
        acc[i] += e.w_coeff *
                  (p[3 * i] * e.rel[0] + p[3 * i + 1] * e.rel[1] + p[3 * i + 2] * e.rel[2] +
                   p[9 + i]);
    }
    r = acc;
    if (J) {
      J->setZero();
      for (const auto& e : entries)
        for (int i = 0; i < 3; ++i) {
          for (int c = 0; c < 3; ++c) (*J)(i, e.local + 3 * i + c) += e.w_coeff * e.rel[c];
          (*J)(i, e.local + 9 + i) += e.w_coeff;
        }
    }
  };
  return blk;
}

}  // namespace seqrecon
