#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "helpers.hpp"
#include "seqrecon/energies.hpp"
#include "seqrecon/registration.hpp"
#include "seqrecon/synthetic.hpp"

using namespace seqrecon;

namespace {

NodeMotion random_motion(int m, std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> uni(-spread, spread);
  NodeMotion motion = NodeMotion::identity(m);
  for (int t = 0; t < m; ++t) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) motion.A[t](r, c) += uni(rng);
    motion.b[t] = Vec3(uni(rng), uni(rng), uni(rng));
  }
  return motion;
}

}  // namespace

TEST_CASE("rigidity energy values") {
  NodeMotion identity = NodeMotion::identity(3);
  REQUIRE(energy_rigid(identity) == 0.0);

  std::mt19937_64 rng(3);
  NodeMotion rotations = NodeMotion::identity(100);
  for (auto& A : rotations.A) A = testutil::random_rotation(rng);
  REQUIRE(energy_rigid(rotations) < 1e-12);

  NodeMotion doubled = NodeMotion::identity(1);
  doubled.A[0] = 2.0 * Mat3::Identity();
  REQUIRE(energy_rigid(doubled) == Catch::Approx(27.0).margin(1e-12));

  // nonzero whenever columns stray from orthonormal
  NodeMotion skew = NodeMotion::identity(1);
  skew.A[0](0, 1) = 0.2;
  REQUIRE(energy_rigid(skew) > 1e-6);
}

TEST_CASE("smoothness energy values") {
  DeformGraph graph;
  graph.nodes = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  graph.edges = {{0, 1}};
  graph.neighbors = {{1}, {0}};

  REQUIRE(energy_smooth(graph, NodeMotion::identity(2)) == 0.0);

  NodeMotion shifted = NodeMotion::identity(2);
  shifted.b[0] = Vec3(0, 1, 0);
  REQUIRE(energy_smooth(graph, shifted) == Catch::Approx(2.0).margin(1e-12));

  // global rigid motions cost nothing
  std::mt19937_64 rng(7);
  TriMesh sphere = make_icosphere(1.0, 1);
  DeformGraph sampled = sample_nodes(sphere, 10);
  Mat3 R = testutil::random_rotation(rng);
  Vec3 t(0.3, 0.1, -0.2);
  NodeMotion global;
  for (int k = 0; k < sampled.node_count(); ++k) {
    global.A.push_back(R);
    global.b.push_back(R * sampled.nodes[k] + t - sampled.nodes[k]);
  }
  REQUIRE(energy_smooth(sampled, global) < 1e-12);
  REQUIRE(energy_rigid(global) < 1e-12);
}

TEST_CASE("fit energy values") {
  CorrespondenceSet corr;
  Correspondence c;
  c.source_vertex = 0;
  c.target_point = Vec3(0, 0, 0);
  c.target_normal = Vec3(0, 0, 1);
  c.valid = true;
  corr.entries = {c};
  corr.valid_count = 1;

  std::vector<Vec3> normals = {Vec3(0, 0, 1)};
  REQUIRE(energy_fit(corr, {Vec3(0, 0, 0)}, normals, 0.1, 1.0) == 0.0);
  REQUIRE(energy_fit(corr, {Vec3(0, 0, 1)}, normals, 0.1, 1.0) ==
          Catch::Approx(1.1).margin(1e-12));
  REQUIRE(energy_fit(corr, {Vec3(1, 0, 0)}, normals, 0.1, 1.0) ==
          Catch::Approx(0.1).margin(1e-12));

  corr.entries[0].valid = false;
  REQUIRE(energy_fit(corr, {Vec3(1, 0, 0)}, normals, 0.1, 1.0) == 0.0);
}

TEST_CASE("temporal coupling energy values") {
  NodeMotion fwd = NodeMotion::identity(1), bwd = NodeMotion::identity(1);
  fwd.b[0] = Vec3(1, 0, 0);
  bwd.b[0] = Vec3(-1, 0, 0);
  REQUIRE(energy_tempo(fwd, bwd) == 0.0);

  std::mt19937_64 rng(9);
  Mat3 R = testutil::random_rotation(rng);
  Vec3 t(0.4, -0.2, 0.7);
  NodeMotion f2, b2;
  f2.A = {R};
  f2.b = {t};
  b2.A = {R.transpose()};
  b2.b = {Vec3(-(R.transpose() * t))};
  REQUIRE(energy_tempo(f2, b2) < 1e-12);

  NodeMotion f3 = NodeMotion::identity(1), b3 = NodeMotion::identity(1);
  f3.b[0] = Vec3(1, 0, 0);
  b3.b[0] = Vec3(1, 0, 0);
  REQUIRE(energy_tempo(f3, b3) == Catch::Approx(4.0).margin(1e-12));

  // zero exactly when backward composes forward to identity
  for (int i = 0; i < 20; ++i) {
    Mat3 A = testutil::random_rotation(rng) + 0.1 * Mat3::Random();
    Vec3 bb = Vec3::Random();
    NodeMotion fr, br;
    fr.A = {A};
    fr.b = {bb};
    br.A = {Mat3(A.inverse())};
    br.b = {Vec3(-(A.inverse() * bb))};
    REQUIRE(energy_tempo(fr, br) < 1e-18);
    br.b[0] += Vec3(1e-3, 0, 0);
    REQUIRE(energy_tempo(fr, br) > 1e-8);
  }
}

TEST_CASE("residual blocks match the direct energy formulas") {
  TriMesh sphere = make_icosphere(1.0, 1);
  DeformGraph graph = sample_nodes(sphere, 8);
  std::mt19937_64 rng(11);
  NodeMotion fwd = random_motion(graph.node_count(), rng, 0.3);
  NodeMotion bwd = random_motion(graph.node_count(), rng, 0.3);

  const int m = graph.node_count();
  Eigen::VectorXd x(24 * m);
  pack_motion(fwd, 0, x);
  pack_motion(bwd, 12 * m, x);

  std::vector<ResidualBlock> rigid_blocks, smooth_blocks, tempo_blocks;
  for (int t = 0; t < m; ++t) rigid_blocks.push_back(make_rigid_block(12 * t, 1.0));
  for (int t = 0; t < m; ++t)
    for (int k : graph.neighbors[t])
      smooth_blocks.push_back(
          make_smooth_block(12 * t, 12 * k, graph.nodes[t], graph.nodes[k], 1.0));
  for (int t = 0; t < m; ++t) tempo_blocks.push_back(make_tempo_block(12 * t, 12 * m + 12 * t, 1.0));

  REQUIRE(evaluate_energy(rigid_blocks, x) == Catch::Approx(energy_rigid(fwd)).epsilon(1e-12));
  REQUIRE(evaluate_energy(smooth_blocks, x) ==
          Catch::Approx(energy_smooth(graph, fwd)).epsilon(1e-12));
  REQUIRE(evaluate_energy(tempo_blocks, x) ==
          Catch::Approx(energy_tempo(fwd, bwd)).epsilon(1e-12));
}

TEST_CASE("analytic jacobians pass central finite differences") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  TriMesh sphere = make_icosphere(1.0, 1);
  DeformGraph graph = sample_nodes(sphere, 8);
  SkinningWeights weights = compute_skinning_weights(sphere, graph, 4);

  auto random_local = [&](int n) {
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p[i] = uni(rng);
    return p;
  };

  for (int trial = 0; trial < 100; ++trial) {
    ResidualBlock rigid = make_rigid_block(0, 1.0);
    REQUIRE(check_jacobian(rigid, random_local(9), 1e-6) < 1e-5);

    ResidualBlock smooth = make_smooth_block(0, 12, graph.nodes[0], graph.nodes[1], 1.0);
    REQUIRE(check_jacobian(smooth, random_local(15), 1e-6) < 1e-5);

    ResidualBlock tempo = make_tempo_block(0, 12, 1.0);
    REQUIRE(check_jacobian(tempo, random_local(24), 1e-6) < 1e-5);

    int v = static_cast<int>(rng() % sphere.vertices.size());
    ResidualBlock fit = make_fit_block(0, graph, sphere.vertices[v], weights.rows[v],
                                       Vec3(uni(rng), uni(rng), uni(rng)),
                                       testutil::random_unit(rng), 0.1, 1.0, 1.0);
    REQUIRE(check_jacobian(fit, random_local(static_cast<int>(fit.params.size())), 1e-6) < 1e-5);

    std::vector<DeformTerm> terms;
    DeformTerm a;
    a.base = 0;
    a.graph = &graph;
    a.point = sphere.vertices[v];
    a.row = weights.rows[v];
    a.coeff = 1.0;
    DeformTerm b = a;
    b.base = 12 * graph.node_count();
    b.coeff = -1.0;
    b.point = sphere.vertices[(v + 5) % sphere.vertex_count()];
    b.row = weights.rows[(v + 5) % sphere.vertex_count()];
    terms = {a, b};
    ResidualBlock combo = make_deform_combo_block(terms, Vec3(0.1, 0.2, 0.3), 1.0);
    REQUIRE(check_jacobian(combo, random_local(static_cast<int>(combo.params.size())), 1e-6) <
            1e-5);
  }
}

TEST_CASE("combo block reproduces a chained-correspondence residual") {
  TriMesh sphere = make_icosphere(1.0, 1);
  DeformGraph graph = sample_nodes(sphere, 8);
  SkinningWeights weights = compute_skinning_weights(sphere, graph, 4);
  std::mt19937_64 rng(17);
  NodeMotion ma = random_motion(graph.node_count(), rng, 0.2);
  NodeMotion mb = random_motion(graph.node_count(), rng, 0.2);

  const int m = graph.node_count();
  Eigen::VectorXd x(24 * m);
  pack_motion(ma, 0, x);
  pack_motion(mb, 12 * m, x);

  int v = 7;
  DeformTerm ta{0, &graph, sphere.vertices[v], weights.rows[v], 1.0};
  DeformTerm tb{12 * m, &graph, sphere.vertices[v], weights.rows[v], -1.0};
  ResidualBlock blk = make_deform_combo_block({ta, tb}, Vec3::Zero(), 1.0);

  Eigen::VectorXd local(blk.params.size());
  for (std::size_t i = 0; i < blk.params.size(); ++i) local[i] = x[blk.params[i]];
  Eigen::VectorXd r(3);
  blk.eval(local, r, nullptr);

  Vec3 expected = deform_vertex(sphere.vertices[v], weights.rows[v], graph, ma) -
                  deform_vertex(sphere.vertices[v], weights.rows[v], graph, mb);
  REQUIRE((r - expected).norm() < 1e-12);
}
