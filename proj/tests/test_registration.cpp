#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "helpers.hpp"
#include "seqrecon/graph_json.hpp"
#include "seqrecon/registration.hpp"
#include "seqrecon/synthetic.hpp"

using namespace seqrecon;

namespace {

// Subdivided unit square [0,1]^2 at height z, facing +z.
TriMesh make_grid(int n, double z) {
  TriMesh m;
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      m.vertices.emplace_back(static_cast<double>(i) / n, static_cast<double>(j) / n, z);
  auto at = [&](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      m.faces.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
      m.faces.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
    }
  return compute_vertex_normals(std::move(m));
}

Frame make_frame(TriMesh mesh, int nodes) {
  Frame frame;
  frame.mesh = std::move(mesh);
  frame.graph = sample_nodes(frame.mesh, nodes);
  frame.weights = compute_skinning_weights(frame.mesh, frame.graph, 4);
  return frame;
}

double max_node_deviation(const NodeMotion& motion, const Mat3& A_ref) {
  double worst = 0;
  for (const auto& A : motion.A) worst = std::max(worst, (A - A_ref).norm());
  return worst;
}

}  // namespace

TEST_CASE("correspondences on identical meshes are perfect") {
  TriMesh sphere = make_icosphere(1.0, 2);
  MeshBvh bvh(sphere);
  RegistrationOptions opt;
  CorrespondenceSet corr = find_correspondences(sphere.vertices, sphere.normals, sphere, bvh, opt,
                                                bbox_diagonal(sphere));
  REQUIRE(corr.validity() == 1.0);
  for (const auto& c : corr.entries) {
    REQUIRE(c.valid);
    REQUIRE(std::abs(c.ray_distance) < 1e-9);
    REQUIRE((c.target_point - sphere.vertices[c.source_vertex]).norm() < 1e-9);
  }
}

TEST_CASE("uniformly offset source sees uniform hit distances") {
  TriMesh target = make_grid(10, 0.0);
  TriMesh source = make_grid(10, 0.1);
  MeshBvh bvh(target);
  RegistrationOptions opt;
  CorrespondenceSet corr = find_correspondences(source.vertices, source.normals, target, bvh, opt,
                                                bbox_diagonal(source));
  REQUIRE(corr.validity() == 1.0);
  for (const auto& c : corr.entries)
    REQUIRE(std::abs(c.ray_distance) == Catch::Approx(0.1).margin(1e-9));
}

TEST_CASE("a hole in the target lowers validity without closest-point fallback") {
  TriMesh target = make_grid(24, 0.0);
  // punch a disk covering ~30% of the unit square
  const double r = std::sqrt(0.3 / M_PI);
  TriMesh holed;
  std::vector<int> remap(target.vertices.size(), -1);
  for (const auto& f : target.faces) {
    Vec3 centroid = (target.vertices[f[0]] + target.vertices[f[1]] + target.vertices[f[2]]) / 3.0;
    if ((centroid - Vec3(0.5, 0.5, 0.0)).head<2>().norm() < r) continue;
    std::array<int, 3> g;
    for (int k = 0; k < 3; ++k) {
      if (remap[f[k]] < 0) {
        remap[f[k]] = holed.vertex_count();
        holed.vertices.push_back(target.vertices[f[k]]);
      }
      g[k] = remap[f[k]];
    }
    holed.faces.push_back(g);
  }
  holed = compute_vertex_normals(std::move(holed));

  TriMesh source = make_grid(24, 0.1);
  MeshBvh bvh(holed);
  RegistrationOptions opt;
  CorrespondenceSet corr = find_correspondences(source.vertices, source.normals, holed, bvh, opt,
                                                bbox_diagonal(source));
  REQUIRE(corr.validity() > 0.6);
  REQUIRE(corr.validity() < 0.8);
  for (const auto& c : corr.entries)
    if (c.valid) REQUIRE(std::abs(c.ray_distance) == Catch::Approx(0.1).margin(1e-9));
}

TEST_CASE("static triplet registers to the identity") {
  SyntheticSequence seq = make_rotating_sphere(3, 0.0, Vec3::UnitZ(), 2);
  Frame curr = make_frame(seq.ground_truth[1], 16);
  RegistrationOptions opt;
  PairwiseResult result =
      register_triplet(curr, &seq.ground_truth[0], &seq.ground_truth[2], opt);
  REQUIRE_FALSE(result.failed);
  REQUIRE(result.forward);
  REQUIRE(result.backward);
  REQUIRE(max_node_deviation(*result.forward, Mat3::Identity()) < 1e-4);
  REQUIRE(max_node_deviation(*result.backward, Mat3::Identity()) < 1e-4);
  for (const auto& b : result.forward->b) REQUIRE(b.norm() < 1e-4);
  REQUIRE(result.energies.at("fit_forward") < 1e-6);
  for (const auto& rep : result.round_reports)
    for (std::size_t i = 1; i < rep.energy_trace.size(); ++i)
      REQUIRE(rep.energy_trace[i] <= rep.energy_trace[i - 1]);
}

TEST_CASE("rigid triplet recovers the rotations") {
  SyntheticSequence seq = make_rotating_sphere(3, 10.0, Vec3::UnitZ(), 2);
  Frame curr = make_frame(seq.ground_truth[1], 16);
  RegistrationOptions opt;
  PairwiseResult result =
      register_triplet(curr, &seq.ground_truth[0], &seq.ground_truth[2], opt);
  REQUIRE_FALSE(result.failed);
  Mat3 fwd_truth = Eigen::AngleAxisd(10.0 * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix();
  Mat3 bwd_truth = fwd_truth.transpose();
  REQUIRE(max_node_deviation(*result.forward, fwd_truth) < 1e-3);
  REQUIRE(max_node_deviation(*result.backward, bwd_truth) < 1e-3);

  // per-vertex alignment error against the true next frame
  double rms = 0;
  for (int v = 0; v < curr.mesh.vertex_count(); ++v) {
    Vec3 deformed = deform_vertex(curr.mesh.vertices[v], curr.weights.rows[v], curr.graph,
                                  *result.forward);
    rms += (deformed - seq.ground_truth[2].vertices[v]).squaredNorm();
  }
  rms = std::sqrt(rms / curr.mesh.vertex_count());
  REQUIRE(rms < 1e-3 * bbox_diagonal(curr.mesh));
}

TEST_CASE("boundary frames drop the missing direction") {
  SyntheticSequence seq = make_rotating_sphere(2, 4.0, Vec3::UnitZ(), 2);
  Frame first = make_frame(seq.ground_truth[0], 16);
  RegistrationOptions opt;
  PairwiseResult result = register_triplet(first, nullptr, &seq.ground_truth[1], opt);
  REQUIRE_FALSE(result.failed);
  REQUIRE(result.forward);
  REQUIRE_FALSE(result.backward);
  REQUIRE(result.energies.count("tempo") == 0);
  REQUIRE_THROWS_AS(register_triplet(first, nullptr, nullptr, opt), std::invalid_argument);
}

TEST_CASE("truncated middle frame still registers") {
  SyntheticSequence seq = make_bending_cylinder(3, 10.0, 24, 20);
  seq = corrupt(seq, CorruptionScheme::sphere_hole(Vec3(0, 0.3, 0.5), Vec3(0, 0.3, 0.5), 0.45));
  double removed =
      1.0 - static_cast<double>(seq.corrupted[1].vertex_count()) / seq.ground_truth[1].vertex_count();
  REQUIRE(removed > 0.05);

  Frame curr = make_frame(seq.corrupted[1], 16);
  RegistrationOptions opt;
  PairwiseResult result =
      register_triplet(curr, &seq.ground_truth[0], &seq.ground_truth[2], opt);
  REQUIRE_FALSE(result.failed);
  REQUIRE(result.mean_valid_distance < 0.01 * bbox_diagonal(curr.mesh));
}

TEST_CASE("registration json round trip is lossless") {
  SyntheticSequence seq = make_rotating_sphere(3, 6.0, Vec3::UnitY(), 1);
  Frame curr = make_frame(seq.ground_truth[1], 8);
  RegistrationOptions opt;
  PairwiseResult result =
      register_triplet(curr, &seq.ground_truth[0], &seq.ground_truth[2], opt);

  Json j = pairwise_to_json(curr.graph, curr.weights, result);
  std::string text = j.dump();
  Json parsed = Json::parse(text);
  DeformGraph graph2;
  SkinningWeights weights2;
  PairwiseResult result2;
  pairwise_from_json(parsed, graph2, weights2, result2);

  REQUIRE(graph2.nodes.size() == curr.graph.nodes.size());
  for (int t = 0; t < curr.graph.node_count(); ++t) {
    REQUIRE(graph2.nodes[t] == curr.graph.nodes[t]);
    REQUIRE(graph2.neighbors[t] == curr.graph.neighbors[t]);
  }
  REQUIRE(weights2.rows.size() == curr.weights.rows.size());
  for (std::size_t v = 0; v < weights2.rows.size(); ++v)
    REQUIRE(weights2.rows[v] == curr.weights.rows[v]);
  REQUIRE(result2.forward);
  for (int t = 0; t < curr.graph.node_count(); ++t) {
    REQUIRE(result2.forward->A[t] == result.forward->A[t]);
    REQUIRE(result2.forward->b[t] == result.forward->b[t]);
  }
  REQUIRE(result2.energies == result.energies);
}
