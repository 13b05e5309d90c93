#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "helpers.hpp"
#include "seqrecon/fusion.hpp"
#include "seqrecon/metrics.hpp"
#include "seqrecon/registration.hpp"
#include "seqrecon/synthetic.hpp"

using namespace seqrecon;

namespace {

OrientedCloud cloud_from_mesh(const TriMesh& mesh, int source = 0) {
  OrientedCloud cloud;
  cloud.points = mesh.vertices;
  cloud.normals = mesh.normals;
  cloud.source.assign(mesh.vertices.size(), source);
  return cloud;
}

Frame make_frame(TriMesh mesh, int nodes) {
  Frame frame;
  frame.mesh = std::move(mesh);
  frame.graph = sample_nodes(frame.mesh, nodes);
  frame.weights = compute_skinning_weights(frame.mesh, frame.graph, 4);
  return frame;
}

bool meshes_identical(const TriMesh& a, const TriMesh& b) {
  if (a.vertices.size() != b.vertices.size() || a.faces != b.faces) return false;
  for (std::size_t v = 0; v < a.vertices.size(); ++v)
    if (a.vertices[v] != b.vertices[v]) return false;
  return true;
}

}  // namespace

TEST_CASE("weld merges coincident vertices") {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  m.faces = {{0, 1, 2}, {3, 5, 4}};
  TriMesh welded = weld_vertices(m, 1e-9);
  REQUIRE(welded.vertex_count() == 4);
  REQUIRE(welded.face_count() == 2);
  REQUIRE(boundary_edge_count(welded) == 4);

  // collapsing faces disappear
  TriMesh collapse;
  collapse.vertices = {{0, 0, 0}, {1e-12, 0, 0}, {0, 1, 0}};
  collapse.faces = {{0, 1, 2}};
  REQUIRE(weld_vertices(collapse, 1e-6).face_count() == 0);
  REQUIRE_THROWS_AS(weld_vertices(m, 0.0), std::invalid_argument);
}

TEST_CASE("fusing a complete sphere cloud reproduces the sphere") {
  TriMesh sphere = make_icosphere(1.0, 3);
  OrientedCloud cloud = cloud_from_mesh(sphere);
  double voxel = bbox_diagonal(sphere) / 64.0;
  TriMesh fused = fuse_oriented_points(cloud, voxel);
  REQUIRE(is_watertight(fused));
  REQUIRE(euler_characteristic(fused) == 2);
  REQUIRE(hausdorff_mean(fused, sphere) < 2.0 * voxel);
  // and the fused surface sits at radius ~1
  for (int v = 0; v < fused.vertex_count(); v += 17)
    REQUIRE(std::abs(fused.vertices[v].norm() - 1.0) < 2.0 * voxel);
}

TEST_CASE("two overlapping hemisphere clouds close into one sphere") {
  TriMesh sphere = make_icosphere(1.0, 3);
  OrientedCloud cloud;
  for (int v = 0; v < sphere.vertex_count(); ++v) {
    if (sphere.vertices[v][2] >= -0.05) {  // top, 10% overlap band
      cloud.points.push_back(sphere.vertices[v]);
      cloud.normals.push_back(sphere.normals[v]);
      cloud.source.push_back(0);
    }
    if (sphere.vertices[v][2] <= 0.05) {  // bottom
      cloud.points.push_back(sphere.vertices[v]);
      cloud.normals.push_back(sphere.normals[v]);
      cloud.source.push_back(1);
    }
  }
  double voxel = bbox_diagonal(sphere) / 64.0;
  TriMesh fused = fuse_oriented_points(cloud, voxel);
  REQUIRE(is_watertight(fused));
  REQUIRE(euler_characteristic(fused) == 2);
  REQUIRE(hausdorff_mean(fused, sphere) < 2.0 * voxel);
}

TEST_CASE("fusion rejects bad input") {
  REQUIRE_THROWS_AS(fuse_oriented_points(OrientedCloud{}, 0.1), std::invalid_argument);
  OrientedCloud no_normals;
  no_normals.points = {Vec3(0, 0, 0)};
  REQUIRE_THROWS_AS(fuse_oriented_points(no_normals, 0.1), std::invalid_argument);
}

TEST_CASE("fusion is idempotent and deduplicates repeated clouds") {
  TriMesh sphere = make_icosphere(1.0, 2);
  OrientedCloud cloud = cloud_from_mesh(sphere);
  double voxel = bbox_diagonal(sphere) / 32.0;
  TriMesh once = fuse_oriented_points(cloud, voxel);
  TriMesh again = fuse_oriented_points(cloud, voxel);
  REQUIRE(meshes_identical(once, again));

  OrientedCloud doubled = cloud;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    doubled.points.push_back(cloud.points[i]);
    doubled.normals.push_back(cloud.normals[i]);
    doubled.source.push_back(cloud.source[i]);
  }
  TriMesh fused_doubled = fuse_oriented_points(doubled, voxel);
  REQUIRE(meshes_identical(once, fused_doubled));
}

TEST_CASE("energy_corr vanishes on exactly composed rigid chains") {
  const double step = 12.0;
  SyntheticSequence seq = make_rotating_sphere(3, step, Vec3::UnitZ(), 2);
  FrameSequence frames;
  for (int f = 0; f < 3; ++f) frames.frames.push_back(make_frame(seq.ground_truth[f], 12));

  auto rigid_motion = [&](const DeformGraph& graph, const Mat3& R) {
    NodeMotion m;
    for (int t = 0; t < graph.node_count(); ++t) {
      m.A.push_back(R);
      m.b.push_back(R * graph.nodes[t] - graph.nodes[t]);
    }
    return m;
  };
  Mat3 fwd = Eigen::AngleAxisd(step * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix();
  std::vector<PairwiseResult> pairwise(3);
  for (int f = 0; f < 2; ++f) pairwise[f].forward = rigid_motion(frames.frames[f].graph, fwd);

  std::vector<NodeMotion> motions;
  for (int f = 0; f < 3; ++f) {
    Mat3 to_ref = Eigen::AngleAxisd(-step * f * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix();
    motions.push_back(rigid_motion(frames.frames[f].graph, to_ref));
  }
  REQUIRE(energy_corr(frames, motions, pairwise) < 1e-10);

  // perturbing the last frame's motion by a translation costs kappa * eps^2
  const double eps = 1e-3;
  for (auto& b : motions[2].b) b += Vec3(eps, 0, 0);
  double expected = frames.frames[1].mesh.vertex_count() * eps * eps;
  REQUIRE(energy_corr(frames, motions, pairwise) ==
          Catch::Approx(expected).epsilon(1e-9));
}

TEST_CASE("static sequence aligns to the identity") {
  SyntheticSequence seq = make_rotating_sphere(3, 0.0, Vec3::UnitZ(), 2);
  FrameSequence frames;
  for (int f = 0; f < 3; ++f) frames.frames.push_back(make_frame(seq.ground_truth[f], 12));
  RegistrationOptions ropt;
  auto pairwise = register_sequence(frames, ropt);
  AlignmentOptions opt;
  GlobalAlignment alignment = align_all_frames(frames, pairwise, 0, opt);

  // reference frame is held exactly at the identity
  for (int t = 0; t < frames.frames[0].graph.node_count(); ++t) {
    REQUIRE((alignment.motions[0].A[t] - Mat3::Identity()).norm() < 1e-9);
    REQUIRE(alignment.motions[0].b[t].norm() < 1e-9);
  }
  for (int f = 1; f < 3; ++f)
    for (int t = 0; t < frames.frames[f].graph.node_count(); ++t) {
      REQUIRE((alignment.motions[f].A[t] - Mat3::Identity()).norm() < 1e-4);
      REQUIRE(alignment.motions[f].b[t].norm() < 1e-4);
    }
  REQUIRE(energy_corr(frames, alignment.motions, pairwise) < 1e-4);
}

TEST_CASE("rigid sequence alignment matches the composed ground truth") {
  const double step = 8.0;
  SyntheticSequence seq = make_rotating_sphere(3, step, Vec3::UnitZ(), 2);
  FrameSequence frames;
  for (int f = 0; f < 3; ++f) frames.frames.push_back(make_frame(seq.ground_truth[f], 12));
  RegistrationOptions ropt;
  auto pairwise = register_sequence(frames, ropt);
  AlignmentOptions opt;
  GlobalAlignment alignment = align_all_frames(frames, pairwise, 0, opt);

  for (int f = 0; f < 3; ++f) {
    REQUIRE(alignment.usable[f]);
    Mat3 truth = Eigen::AngleAxisd(-step * f * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix();
    for (int t = 0; t < frames.frames[f].graph.node_count(); ++t)
      REQUIRE((alignment.motions[f].A[t] - truth).norm() < 1e-3);
  }
}

TEST_CASE("overlong sequences are rejected") {
  FrameSequence frames;
  frames.frames.resize(371);
  std::vector<PairwiseResult> pairwise(371);
  AlignmentOptions opt;
  REQUIRE_THROWS_AS(align_all_frames(frames, pairwise, 0, opt), std::invalid_argument);
}

TEST_CASE("template from a static sequence matches the input shape") {
  SyntheticSequence seq = make_rotating_sphere(3, 0.0, Vec3::UnitZ(), 2);
  FrameSequence frames;
  for (int f = 0; f < 3; ++f) frames.frames.push_back(make_frame(seq.ground_truth[f], 12));
  RegistrationOptions ropt;
  auto pairwise = register_sequence(frames, ropt);
  AlignmentOptions aopt;
  GlobalAlignment alignment = align_all_frames(frames, pairwise, 0, aopt);

  TemplateOptions topt;
  topt.fusion.voxel_resolution = 48;
  GlobalTemplate tpl = build_template(frames, alignment, topt);
  double voxel = bbox_diagonal(frames.frames[0].mesh) / topt.fusion.voxel_resolution;
  REQUIRE(is_watertight(tpl.mesh));
  REQUIRE(hausdorff_mean(tpl.mesh, frames.frames[0].mesh) < 2.0 * voxel);
  REQUIRE(tpl.provenance.size() == tpl.mesh.vertices.size());
  for (int p : tpl.provenance) {
    REQUIRE(p >= 0);
    REQUIRE(p < 3);
  }
  for (int t = 0; t < tpl.graph.node_count(); ++t)
    REQUIRE(tpl.graph.nodes[t] == tpl.mesh.vertices[tpl.graph.node_vertices[t]]);
}
