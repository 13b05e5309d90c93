#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <random>

#include "helpers.hpp"
#include "seqrecon/geodesic.hpp"
#include "seqrecon/mesh.hpp"
#include "seqrecon/mesh_io.hpp"
#include "seqrecon/metrics.hpp"
#include "seqrecon/synthetic.hpp"

using namespace seqrecon;

TEST_CASE("quad normals point +z") {
  TriMesh quad = testutil::make_quad();
  for (const auto& n : quad.normals) REQUIRE((n - Vec3(0, 0, 1)).norm() < 1e-12);
}

TEST_CASE("icosphere normals are radial") {
  TriMesh sphere = make_icosphere(1.0, 4);
  for (int v = 0; v < sphere.vertex_count(); ++v) {
    Vec3 radial = sphere.vertices[v].normalized();
    double angle = std::acos(std::clamp(radial.dot(sphere.normals[v]), -1.0, 1.0));
    REQUIRE(angle < 1e-2);
  }
}

TEST_CASE("normals reject empty and degenerate input") {
  TriMesh empty;
  empty.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  REQUIRE_THROWS_AS(compute_vertex_normals(empty), std::invalid_argument);

  TriMesh degen;
  degen.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  degen.faces = {{0, 1, 2}};  // zero area
  REQUIRE_THROWS_AS(compute_vertex_normals(degen), std::invalid_argument);

  TriMesh repeated;
  repeated.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  repeated.faces = {{0, 1, 1}};
  REQUIRE_THROWS_AS(validate_mesh(repeated), std::invalid_argument);
}

TEST_CASE("normals invariant under face reordering") {
  TriMesh sphere = make_icosphere(1.0, 2);
  TriMesh shuffled = sphere;
  shuffled.normals.clear();
  std::mt19937_64 rng(7);
  std::shuffle(shuffled.faces.begin(), shuffled.faces.end(), rng);
  shuffled = compute_vertex_normals(std::move(shuffled));
  for (int v = 0; v < sphere.vertex_count(); ++v)
    REQUIRE((sphere.normals[v] - shuffled.normals[v]).norm() < 1e-12);
}

TEST_CASE("geodesic basics") {
  TriMesh chain = testutil::make_chain(8);
  GeodesicField field = geodesic_distances(chain, 0);
  REQUIRE(field.distances[0] == 0.0);
  REQUIRE(field.distances[3] == Catch::Approx(3.0).margin(1e-12));

  REQUIRE_THROWS_AS(geodesic_distances(chain, 99), std::invalid_argument);
}

TEST_CASE("geodesic antipodal distance on the sphere") {
  TriMesh sphere = make_icosphere(1.0, 3);
  int src = 0;
  int antipode = 0;
  double best = std::numeric_limits<double>::max();
  for (int v = 0; v < sphere.vertex_count(); ++v) {
    double d = (sphere.vertices[v] + sphere.vertices[src]).norm();
    if (d < best) {
      best = d;
      antipode = v;
    }
  }
  GeodesicField field = geodesic_distances(sphere, src);
  REQUIRE(std::abs(field.distances[antipode] - M_PI) < 0.1 * M_PI);
}

TEST_CASE("geodesic symmetry and edge triangle inequality") {
  TriMesh sphere = make_icosphere(1.0, 2);
  EdgeGraph graph = EdgeGraph::build(sphere);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pick(0, sphere.vertex_count() - 1);
  for (int trial = 0; trial < 10; ++trial) {
    int a = pick(rng), b = pick(rng);
    GeodesicField fa = geodesic_distances(graph, a);
    GeodesicField fb = geodesic_distances(graph, b);
    REQUIRE(std::abs(fa.distances[b] - fb.distances[a]) < 1e-9);
    for (const auto& e : mesh_edges(sphere)) {
      double len = (sphere.vertices[e[0]] - sphere.vertices[e[1]]).norm();
      REQUIRE(std::abs(fa.distances[e[0]] - fa.distances[e[1]]) <= len + 1e-9);
    }
  }
}

TEST_CASE("hausdorff_mean basics") {
  TriMesh sphere = make_icosphere(1.0, 2);
  REQUIRE(hausdorff_mean(sphere, sphere) == 0.0);

  TriMesh a = testutil::make_quad(0.0);
  TriMesh b = testutil::make_quad(1.0);
  REQUIRE(hausdorff_mean(a, b) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("hausdorff_mean equals brute-force closest-point mean") {
  TriMesh source = testutil::make_soup(40, 3);
  TriMesh target = testutil::make_soup(50, 4);
  double fast = hausdorff_mean(source, target);
  double slow = 0;
  for (const auto& v : source.vertices) slow += closest_point_brute(target, v).distance;
  slow /= source.vertices.size();
  REQUIRE(std::abs(fast - slow) < 1e-12);
}

TEST_CASE("watertightness and euler characteristic") {
  TriMesh sphere = make_icosphere(1.0, 2);
  REQUIRE(is_watertight(sphere));
  REQUIRE(boundary_edge_count(sphere) == 0);
  REQUIRE(euler_characteristic(sphere) == 2);
  TriMesh quad = testutil::make_quad();
  REQUIRE_FALSE(is_watertight(quad));
  REQUIRE(boundary_edge_count(quad) == 4);
}

TEST_CASE("ply round trip preserves geometry exactly") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "seqrecon_io_test";
  fs::create_directories(dir);
  TriMesh sphere = make_icosphere(0.7, 2, Vec3(0.1, -0.2, 0.3));

  for (bool binary : {true, false}) {
    std::string path = (dir / (binary ? "m_bin.ply" : "m_asc.ply")).string();
    write_ply(sphere, path, binary);
    TriMesh back = read_ply(path);
    REQUIRE(back.vertex_count() == sphere.vertex_count());
    REQUIRE(back.faces == sphere.faces);
    for (int v = 0; v < sphere.vertex_count(); ++v) {
      REQUIRE(back.vertices[v] == sphere.vertices[v]);
      REQUIRE(back.normals[v] == sphere.normals[v]);
    }
  }

  // extra integer property survives a write and is skippable on read
  VertexIntProperty prop{"patch_id", std::vector<int>(sphere.vertices.size(), 3)};
  std::string path = (dir / "m_prop.ply").string();
  write_ply(sphere, path, true, &prop);
  TriMesh back = read_ply(path);
  REQUIRE(back.faces == sphere.faces);
  REQUIRE(back.vertices[5] == sphere.vertices[5]);
}

TEST_CASE("obj round trip") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "seqrecon_io_test";
  fs::create_directories(dir);
  TriMesh sphere = make_icosphere(1.0, 1);
  std::string path = (dir / "m.obj").string();
  write_obj(sphere, path);
  TriMesh back = read_obj(path);
  REQUIRE(back.faces == sphere.faces);
  for (int v = 0; v < sphere.vertex_count(); ++v) REQUIRE(back.vertices[v] == sphere.vertices[v]);
}

TEST_CASE("read_mesh dispatches and rejects unknown extensions") {
  REQUIRE_THROWS_AS(read_mesh("/nonexistent/file.stl"), MeshIoError);
  REQUIRE_THROWS_AS(read_ply("/nonexistent/file.ply"), MeshIoError);
}
