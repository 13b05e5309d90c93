#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqrecon/parallel.hpp"

namespace seqrecon {

// One summand of a least-squares energy: weight * ||r(params)||^2.
// `params` lists the global parameter indices the block touches; eval fills
// the residual and, when requested, the dense local Jacobian (dim x touched).
struct ResidualBlock {
  std::vector<int> params;
  int dim = 0;
  double weight = 1.0;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd*)> eval;
};

enum class SolveStatus { Converged, MaxIterations, Stalled };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max-iterations";
    case SolveStatus::Stalled: return "stalled";
  }
  return "?";
}

struct SolverTraceRow {
  int iteration = 0;
  double energy = 0.0;
  double damping = 0.0;
  double step_norm = 0.0;
};

struct SolverReport {
  int iterations = 0;
  double initial_energy = 0.0;
  double final_energy = 0.0;
  std::vector<double> energy_trace;  // non-increasing by construction
  std::vector<SolverTraceRow> rows;
  SolveStatus status = SolveStatus::Converged;
};

struct SolverOptions {
  int max_iterations = 50;
  double relative_energy_tol = 1e-6;
  double step_norm_tol = 1e-8;
  int max_backtracks = 20;
  double initial_damping = 1e-6;
  double max_damping = 1e3;
  // Dense normal equations below this parameter count, sparse above.
  int dense_threshold = 4096;
};

namespace detail {

inline Eigen::VectorXd gather(const Eigen::VectorXd& x, const std::vector<int>& ids) {
  Eigen::VectorXd local(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) local[i] = x[ids[i]];
  return local;
}

// Residual-only sweep; returns per-block squared norms (NaN marks non-finite
// residuals). Parallel over blocks, summed in block order afterwards so the
// result never depends on the thread count.
inline void block_norms(const std::vector<ResidualBlock>& blocks, const Eigen::VectorXd& x,
                        std::vector<double>& sq) {
  sq.resize(blocks.size());
  parallel_for(0, blocks.size(), [&](std::size_t i) {
    const ResidualBlock& blk = blocks[i];
    Eigen::VectorXd local = gather(x, blk.params);
    Eigen::VectorXd r(blk.dim);
    blk.eval(local, r, nullptr);
    sq[i] = r.allFinite() ? r.squaredNorm() : std::numeric_limits<double>::quiet_NaN();
  });
}

inline double weighted_sum(const std::vector<ResidualBlock>& blocks,
                           const std::vector<double>& sq) {
  double e = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) e += blocks[i].weight * sq[i];
  return e;
}

}  // namespace detail

inline double evaluate_energy(const std::vector<ResidualBlock>& blocks, const Eigen::VectorXd& x) {
  std::vector<double> sq;
  detail::block_norms(blocks, x, sq);
  return detail::weighted_sum(blocks, sq);
}

// Damped normal equations J^T W J + mu I and -J^T W r at `x`.
inline std::pair<Eigen::SparseMatrix<double>, Eigen::VectorXd> assemble_normal_equations(
    const std::vector<ResidualBlock>& blocks, const Eigen::VectorXd& x, double damping) {
  const int n = static_cast<int>(x.size());
  std::vector<Eigen::Triplet<double>> trips;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  for (const auto& blk : blocks) {
    Eigen::VectorXd local = detail::gather(x, blk.params);
    r.resize(blk.dim);
    J.resize(blk.dim, static_cast<int>(blk.params.size()));
    blk.eval(local, r, &J);
    Eigen::MatrixXd H = blk.weight * (J.transpose() * J);
    Eigen::VectorXd gl = blk.weight * (J.transpose() * r);
    for (std::size_t a = 0; a < blk.params.size(); ++a) {
      g[blk.params[a]] -= gl[a];
      for (std::size_t b = 0; b < blk.params.size(); ++b)
        trips.emplace_back(blk.params[a], blk.params[b], H(a, b));
    }
  }
  for (int i = 0; i < n; ++i) trips.emplace_back(i, i, damping);
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(trips.begin(), trips.end());
  return {A, g};
}

// Central finite differences against the analytic Jacobian; returns the max
// elementwise relative error with denominator max(1, |analytic|).
inline double check_jacobian(const ResidualBlock& block, const Eigen::VectorXd& local_point,
                             double step) {
  if (step <= 0) throw std::invalid_argument("check_jacobian: step must be positive");
  Eigen::VectorXd r(block.dim);
  Eigen::MatrixXd J(block.dim, static_cast<int>(local_point.size()));
  block.eval(local_point, r, &J);
  double worst = 0;
  Eigen::VectorXd rp(block.dim), rm(block.dim);
  for (int j = 0; j < local_point.size(); ++j) {
    Eigen::VectorXd p = local_point;
    p[j] += step;
    block.eval(p, rp, nullptr);
    p[j] -= 2 * step;
    block.eval(p, rm, nullptr);
    for (int i = 0; i < block.dim; ++i) {
      double fd = (rp[i] - rm[i]) / (2 * step);
      double err = std::abs(fd - J(i, j)) / std::max(1.0, std::abs(J(i, j)));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Gauss-Newton with Levenberg damping and backtracking line search. Steps are
// only accepted on descent, so the energy trace is non-increasing. Assembly
// streams block by block; memory stays O(system size).
inline std::pair<Eigen::VectorXd, SolverReport> solve(const std::vector<ResidualBlock>& blocks,
                                                      Eigen::VectorXd x,
                                                      const SolverOptions& options = {}) {
  SolverReport report;
  if (!x.allFinite()) throw std::domain_error("solve: non-finite initial parameters");
  if (blocks.empty()) {
    report.status = SolveStatus::Converged;
    return {x, report};
  }
  for (const auto& blk : blocks) {
    if (blk.dim <= 0 || !blk.eval) throw std::invalid_argument("solve: malformed residual block");
    for (int id : blk.params)
      if (id < 0 || id >= x.size()) throw std::invalid_argument("solve: parameter id out of range");
    if (blk.weight < 0) throw std::invalid_argument("solve: negative block weight");
  }

  const int n = static_cast<int>(x.size());
  const bool dense = n <= options.dense_threshold;

  std::vector<double> sq;
  detail::block_norms(blocks, x, sq);
  for (double s : sq)
    if (std::isnan(s)) throw std::domain_error("solve: non-finite residual at start");
  double energy = detail::weighted_sum(blocks, sq);
  report.initial_energy = energy;
  report.energy_trace.push_back(energy);
  report.rows.push_back({0, energy, 0.0, 0.0});

  double damping = options.initial_damping;
  Eigen::MatrixXd Hd;
  Eigen::VectorXd g(n);
  Eigen::VectorXd r;
  Eigen::MatrixXd J;

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    g.setZero();
    std::vector<Eigen::Triplet<double>> trips;
    if (dense) Hd = Eigen::MatrixXd::Zero(n, n);
    for (const auto& blk : blocks) {
      Eigen::VectorXd local = detail::gather(x, blk.params);
      r.resize(blk.dim);
      J.resize(blk.dim, static_cast<int>(blk.params.size()));
      blk.eval(local, r, &J);
      Eigen::MatrixXd H = blk.weight * (J.transpose() * J);
      Eigen::VectorXd gl = blk.weight * (J.transpose() * r);
      const auto& ids = blk.params;
      for (std::size_t a = 0; a < ids.size(); ++a) {
        g[ids[a]] -= gl[a];
        if (dense) {
          double* colbase = Hd.data();
          for (std::size_t b = 0; b < ids.size(); ++b)
            colbase[static_cast<std::ptrdiff_t>(ids[b]) * n + ids[a]] += H(a, b);
        } else {
          for (std::size_t b = 0; b < ids.size(); ++b)
            trips.emplace_back(ids[a], ids[b], H(a, b));
        }
      }
    }

    // solve the damped system, escalating damping while it stays singular
    Eigen::VectorXd step;
    while (true) {
      bool ok = false;
      if (dense) {
        Eigen::MatrixXd A = Hd;
        A.diagonal().array() += damping;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        if (ldlt.info() == Eigen::Success) {
          step = ldlt.solve(g);
          ok = step.allFinite();
        }
      } else {
        Eigen::SparseMatrix<double> A(n, n);
        auto t2 = trips;
        for (int i = 0; i < n; ++i) t2.emplace_back(i, i, damping);
        A.setFromTriplets(t2.begin(), t2.end());
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
        if (ldlt.info() == Eigen::Success) {
          step = ldlt.solve(g);
          ok = step.allFinite();
        }
      }
      if (ok) break;
      damping *= 10.0;
      if (damping > options.max_damping)
        throw std::runtime_error("solve: normal equations singular beyond damping limit");
    }

    // backtracking line search on the damped step
    bool accepted = false;
    double trial_energy = energy;
    Eigen::VectorXd xt;
    double scale = 1.0;
    for (int bt = 0; bt <= options.max_backtracks; ++bt) {
      xt = x + scale * step;
      detail::block_norms(blocks, xt, sq);
      bool finite = true;
      for (double s : sq)
        if (std::isnan(s)) {
          finite = false;
          break;
        }
      if (finite) {
        trial_energy = detail::weighted_sum(blocks, sq);
        if (trial_energy < energy) {
          accepted = true;
          break;
        }
      }
      scale *= 0.5;
    }

    if (!accepted) {
      report.status = SolveStatus::Stalled;
      report.iterations = iter - 1;
      report.final_energy = energy;
      return {x, report};
    }

    double step_norm = scale * step.norm();
    double drop = energy - trial_energy;
    x = std::move(xt);
    energy = trial_energy;
    report.energy_trace.push_back(energy);
    report.rows.push_back({iter, energy, damping, step_norm});
    report.iterations = iter;
    damping = scale < 1.0 ? damping * 10.0 : std::max(damping / 10.0, 1e-12);

    if (drop < options.relative_energy_tol * std::max(energy, 1e-300) ||
        step_norm < options.step_norm_tol) {
      report.status = SolveStatus::Converged;
      report.final_energy = energy;
      return {x, report};
    }
  }
  report.status = SolveStatus::MaxIterations;
  report.final_energy = energy;
  return {x, report};
}

}  // namespace seqrecon
