#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "helpers.hpp"
#include "seqrecon/energies.hpp"
#include "seqrecon/solver.hpp"

using namespace seqrecon;

namespace {

ResidualBlock linear_block(int param, double target) {
  ResidualBlock blk;
  blk.params = {param};
  blk.dim = 1;
  blk.eval = [target](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r[0] = l[0] - target;
    if (J) (*J)(0, 0) = 1.0;
  };
  return blk;
}

}  // namespace

TEST_CASE("gauss-newton is exact on a linear residual") {
  auto [x, report] = solve({linear_block(0, 3.0)}, Eigen::VectorXd::Zero(1));
  REQUIRE(std::abs(x[0] - 3.0) < 1e-5);
  // the first accepted step already lands on the minimum
  REQUIRE(report.energy_trace.at(1) < 1e-10);
  REQUIRE(report.status == SolveStatus::Converged);
}

TEST_CASE("rosenbrock reaches the global minimum") {
  ResidualBlock r1;
  r1.params = {0};
  r1.dim = 1;
  r1.eval = [](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r[0] = 1.0 - l[0];
    if (J) (*J)(0, 0) = -1.0;
  };
  ResidualBlock r2;
  r2.params = {0, 1};
  r2.dim = 1;
  r2.eval = [](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r[0] = 10.0 * (l[1] - l[0] * l[0]);
    if (J) {
      (*J)(0, 0) = -20.0 * l[0];
      (*J)(0, 1) = 10.0;
    }
  };
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  SolverOptions opt;
  opt.max_iterations = 200;
  opt.relative_energy_tol = 1e-14;
  auto [x, report] = solve({r1, r2}, x0, opt);
  REQUIRE(std::abs(x[0] - 1.0) < 1e-6);
  REQUIRE(std::abs(x[1] - 1.0) < 1e-6);
  for (std::size_t i = 1; i < report.energy_trace.size(); ++i)
    REQUIRE(report.energy_trace[i] <= report.energy_trace[i - 1]);
}

TEST_CASE("zero blocks return the initial point") {
  Eigen::VectorXd x0(3);
  x0 << 1, 2, 3;
  auto [x, report] = solve({}, x0);
  REQUIRE(x == x0);
  REQUIRE(report.iterations == 0);
  REQUIRE(report.status == SolveStatus::Converged);
}

TEST_CASE("non-finite start fails fast") {
  Eigen::VectorXd bad(1);
  bad << std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(solve({linear_block(0, 0.0)}, bad), std::domain_error);
}

TEST_CASE("jacobian check on a linear block") {
  Eigen::VectorXd p(1);
  p << 17.0;
  REQUIRE(check_jacobian(linear_block(0, 3.0), p, 1e-4) < 1e-10);
}

TEST_CASE("normal equations for a single residual") {
  Eigen::VectorXd x(1);
  x << 2.0;
  ResidualBlock blk;
  blk.params = {0};
  blk.dim = 1;
  blk.eval = [](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r[0] = l[0];
    if (J) (*J)(0, 0) = 1.0;
  };
  double mu = 1e-6;
  auto [A, g] = assemble_normal_equations({blk}, x, mu);
  REQUIRE(A.coeff(0, 0) == Catch::Approx(1.0 + mu).margin(1e-15));
  REQUIRE(g[0] == Catch::Approx(-2.0).margin(1e-15));
}

TEST_CASE("independent residuals assemble block-diagonally") {
  Eigen::VectorXd x(2);
  x << 1.0, -2.0;
  auto [A, g] = assemble_normal_equations({linear_block(0, 0.0), linear_block(1, 0.0)}, x, 0.0);
  REQUIRE(A.coeff(0, 1) == 0.0);
  REQUIRE(A.coeff(1, 0) == 0.0);
  REQUIRE(A.coeff(0, 0) == 1.0);
  REQUIRE(A.coeff(1, 1) == 1.0);
}

TEST_CASE("sparse assembly equals a dense oracle on random blocks") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const int n = 12;
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x[i] = uni(rng);

  std::vector<ResidualBlock> blocks;
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd dense_g = Eigen::VectorXd::Zero(n);
  for (int b = 0; b < 8; ++b) {
    int dim = 1 + static_cast<int>(rng() % 3);
    int nv = 1 + static_cast<int>(rng() % 4);
    std::vector<int> ids;
    while (static_cast<int>(ids.size()) < nv) {
      int id = static_cast<int>(rng() % n);
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    Eigen::MatrixXd M(dim, nv);
    Eigen::VectorXd c(dim);
    for (int i = 0; i < dim; ++i) {
      c[i] = uni(rng);
      for (int j = 0; j < nv; ++j) M(i, j) = uni(rng);
    }
    ResidualBlock blk;
    blk.params = ids;
    blk.dim = dim;
    blk.eval = [M, c](const Eigen::VectorXd& l, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
      r = M * l + c;
      if (J) *J = M;
    };
    blocks.push_back(blk);

    Eigen::VectorXd local(nv);
    for (int j = 0; j < nv; ++j) local[j] = x[ids[j]];
    Eigen::MatrixXd JtJ = M.transpose() * M;
    Eigen::VectorXd Jtr = M.transpose() * (M * local + c);
    for (int a = 0; a < nv; ++a) {
      dense_g[ids[a]] -= Jtr[a];
      for (int bcol = 0; bcol < nv; ++bcol) dense(ids[a], ids[bcol]) += JtJ(a, bcol);
    }
  }
  auto [A, g] = assemble_normal_equations(blocks, x, 0.0);
  REQUIRE((Eigen::MatrixXd(A) - dense).norm() < 1e-12);
  REQUIRE((g - dense_g).norm() < 1e-12);
}

TEST_CASE("permuting blocks changes neither energy nor iterations") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> uni(-0.4, 0.4);
  // a nonconvex problem: one rigidity block plus random linear anchors
  std::vector<ResidualBlock> blocks;
  blocks.push_back(make_rigid_block(0, 1.0));
  for (int i = 0; i < 9; ++i) blocks.push_back(linear_block(i, uni(rng)));

  Eigen::VectorXd x0(9);
  Mat3 A0 = Mat3::Identity() + 0.3 * Mat3::Random();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) x0[3 * r + c] = A0(r, c);

  auto [xa, ra] = solve(blocks, x0);
  std::vector<ResidualBlock> shuffled = blocks;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto [xb, rb] = solve(shuffled, x0);
  REQUIRE(std::abs(ra.final_energy - rb.final_energy) < 1e-9);
  REQUIRE(ra.iterations == rb.iterations);
  for (std::size_t i = 1; i < ra.energy_trace.size(); ++i)
    REQUIRE(ra.energy_trace[i] <= ra.energy_trace[i - 1]);
}
