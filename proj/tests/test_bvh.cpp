#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "helpers.hpp"
#include "seqrecon/bvh.hpp"
#include "seqrecon/synthetic.hpp"

using namespace seqrecon;

TEST_CASE("ray hits the unit quad") {
  TriMesh quad = testutil::make_quad();
  MeshBvh bvh(quad);
  auto hit = bvh.ray_intersect(Vec3(0, 0, -1), Vec3(0, 0, 1), false);
  REQUIRE(hit);
  REQUIRE(hit->distance == Catch::Approx(1.0).margin(1e-12));
  REQUIRE((hit->point - Vec3(0, 0, 0)).norm() < 1e-12);
  REQUIRE(std::abs(hit->barycentric.sum() - 1.0) < 1e-9);
  for (int k = 0; k < 3; ++k) {
    REQUIRE(hit->barycentric[k] >= 0.0);
    REQUIRE(hit->barycentric[k] <= 1.0);
  }
}

TEST_CASE("bidirectional ray picks the nearer absolute hit") {
  TriMesh both = testutil::make_quad(0.0);
  TriMesh upper = testutil::make_quad(1.0);
  int base = both.vertex_count();
  for (const auto& v : upper.vertices) both.vertices.push_back(v);
  for (const auto& f : upper.faces) both.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
  both = compute_vertex_normals(std::move(both));
  MeshBvh bvh(both);
  auto hit = bvh.ray_intersect(Vec3(0.5, 0.5, 0.3), Vec3(0, 0, 1), true);
  REQUIRE(hit);
  REQUIRE(hit->distance == Catch::Approx(-0.3).margin(1e-12));
  REQUIRE((hit->point - Vec3(0.5, 0.5, 0.0)).norm() < 1e-12);
  auto brute = ray_intersect_brute(both, Vec3(0.5, 0.5, 0.3), Vec3(0, 0, 1), true);
  REQUIRE(brute);
  REQUIRE(brute->face_index == hit->face_index);
  REQUIRE(brute->distance == hit->distance);
}

TEST_CASE("parallel offset ray misses") {
  TriMesh quad = testutil::make_quad();
  MeshBvh bvh(quad);
  REQUIRE_FALSE(bvh.ray_intersect(Vec3(0, 0, 1), Vec3(1, 0, 0), true).has_value());
}

TEST_CASE("bvh rays agree exactly with exhaustive scans") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uni(-2.0, 3.0);
  for (int mesh_case = 0; mesh_case < 2; ++mesh_case) {
    TriMesh mesh = mesh_case == 0 ? testutil::make_soup(10000, 5) : make_icosphere(1.0, 3);
    MeshBvh bvh(mesh);
    int rays = mesh_case == 0 ? 100 : 300;
    for (int i = 0; i < rays; ++i) {
      Vec3 origin(uni(rng), uni(rng), uni(rng));
      Vec3 dir = testutil::random_unit(rng);
      bool bidir = (i % 2) == 0;
      auto fast = bvh.ray_intersect(origin, dir, bidir);
      auto slow = ray_intersect_brute(mesh, origin, dir, bidir);
      REQUIRE(fast.has_value() == slow.has_value());
      if (fast) {
        REQUIRE(fast->face_index == slow->face_index);
        REQUIRE(fast->distance == slow->distance);
        REQUIRE(fast->point == slow->point);
      }
    }
  }
}

TEST_CASE("closest point basics") {
  TriMesh quad = testutil::make_quad();
  MeshBvh bvh(quad);
  auto on_vertex = bvh.closest_point(Vec3(1, 1, 0));
  REQUIRE(on_vertex.distance == 0.0);
  REQUIRE((on_vertex.point - Vec3(1, 1, 0)).norm() == 0.0);

  auto above = bvh.closest_point(Vec3(0, 0, 5));
  REQUIRE(above.distance == Catch::Approx(5.0).margin(1e-12));
  REQUIRE((above.point - Vec3(0, 0, 0)).norm() < 1e-12);
}

TEST_CASE("closest point agrees exactly with brute force") {
  TriMesh mesh = testutil::make_soup(50, 9);
  MeshBvh bvh(mesh);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> uni(-1.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    Vec3 q(uni(rng), uni(rng), uni(rng));
    auto fast = bvh.closest_point(q);
    auto slow = closest_point_brute(mesh, q);
    REQUIRE(fast.face_index == slow.face_index);
    REQUIRE(fast.point == slow.point);
    REQUIRE(fast.distance == slow.distance);
  }
}

TEST_CASE("bvh closest point agrees on a 10k-triangle mesh") {
  TriMesh mesh = testutil::make_soup(10000, 31);
  MeshBvh bvh(mesh);
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> uni(-0.5, 1.5);
  for (int i = 0; i < 50; ++i) {
    Vec3 q(uni(rng), uni(rng), uni(rng));
    auto fast = bvh.closest_point(q);
    auto slow = closest_point_brute(mesh, q);
    REQUIRE(fast.face_index == slow.face_index);
    REQUIRE(fast.distance == slow.distance);
  }
}
