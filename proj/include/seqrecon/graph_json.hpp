#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <string>

#include "seqrecon/deform_graph.hpp"
#include "seqrecon/registration.hpp"

namespace seqrecon {

using Json = nlohmann::json;

// Scalars are stored as C hex-float literals so round trips are bit exact.
inline std::string hexf(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double unhexf(const std::string& s) {
  return std::strtod(s.c_str(), nullptr);
}

inline Json vec3_to_json(const Vec3& v) { return Json::array({hexf(v[0]), hexf(v[1]), hexf(v[2])}); }

inline Vec3 vec3_from_json(const Json& j) {
  return Vec3(unhexf(j.at(0).get<std::string>()), unhexf(j.at(1).get<std::string>()),
              unhexf(j.at(2).get<std::string>()));
}

inline Json mat3_to_json(const Mat3& m) {
  Json out = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(hexf(m(r, c)));
  return out;
}

inline Mat3 mat3_from_json(const Json& j) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = unhexf(j.at(3 * r + c).get<std::string>());
  return m;
}

inline Json graph_to_json(const DeformGraph& graph) {
  Json j;
  j["nodes"] = Json::array();
  for (const auto& n : graph.nodes) j["nodes"].push_back(vec3_to_json(n));
  j["node_vertices"] = graph.node_vertices;
  j["edges"] = Json::array();
  for (const auto& e : graph.edges) j["edges"].push_back(Json::array({e[0], e[1]}));
  return j;
}

inline DeformGraph graph_from_json(const Json& j) {
  DeformGraph graph;
  for (const auto& n : j.at("nodes")) graph.nodes.push_back(vec3_from_json(n));
  graph.node_vertices = j.at("node_vertices").get<std::vector<int>>();
  graph.neighbors.assign(graph.nodes.size(), {});
  for (const auto& e : j.at("edges")) {
    int a = e.at(0).get<int>(), b = e.at(1).get<int>();
    graph.edges.push_back({a, b});
    graph.neighbors[a].push_back(b);
    graph.neighbors[b].push_back(a);
  }
  for (auto& n : graph.neighbors) std::sort(n.begin(), n.end());
  return graph;
}

inline Json weights_to_json(const SkinningWeights& weights) {
  Json j;
  j["K"] = weights.K;
  j["rows"] = Json::array();
  for (const auto& row : weights.rows) {
    Json jr = Json::array();
    for (const auto& [node, w] : row) jr.push_back(Json::array({node, hexf(w)}));
    j["rows"].push_back(jr);
  }
  j["support_radius"] = Json::array();
  for (double r : weights.support_radius) j["support_radius"].push_back(hexf(r));
  return j;
}

inline SkinningWeights weights_from_json(const Json& j) {
  SkinningWeights weights;
  weights.K = j.at("K").get<int>();
  for (const auto& jr : j.at("rows")) {
    std::vector<std::pair<int, double>> row;
    for (const auto& e : jr)
      row.push_back({e.at(0).get<int>(), unhexf(e.at(1).get<std::string>())});
    weights.rows.push_back(std::move(row));
  }
  for (const auto& r : j.at("support_radius"))
    weights.support_radius.push_back(unhexf(r.get<std::string>()));
  return weights;
}

inline Json motion_to_json(const NodeMotion& motion) {
  Json j;
  j["A"] = Json::array();
  j["b"] = Json::array();
  for (const auto& A : motion.A) j["A"].push_back(mat3_to_json(A));
  for (const auto& b : motion.b) j["b"].push_back(vec3_to_json(b));
  return j;
}

inline NodeMotion motion_from_json(const Json& j) {
  NodeMotion motion;
  for (const auto& A : j.at("A")) motion.A.push_back(mat3_from_json(A));
  for (const auto& b : j.at("b")) motion.b.push_back(vec3_from_json(b));
  return motion;
}

// Registration result = graph schema extended with motions and energies.
inline Json pairwise_to_json(const DeformGraph& graph, const SkinningWeights& weights,
                             const PairwiseResult& result) {
  Json j = graph_to_json(graph);
  j["weights"] = weights_to_json(weights);
  if (result.forward) j["forward"] = motion_to_json(*result.forward);
  if (result.backward) j["backward"] = motion_to_json(*result.backward);
  Json energies;
  for (const auto& [name, value] : result.energies) energies[name] = hexf(value);
  j["energies"] = energies;
  j["failed"] = result.failed;
  j["mean_valid_distance"] = hexf(result.mean_valid_distance);
  j["rounds"] = result.rounds;
  return j;
}

inline void pairwise_from_json(const Json& j, DeformGraph& graph, SkinningWeights& weights,
                               PairwiseResult& result) {
  graph = graph_from_json(j);
  weights = weights_from_json(j.at("weights"));
  result = PairwiseResult{};
  if (j.contains("forward")) result.forward = motion_from_json(j.at("forward"));
  if (j.contains("backward")) result.backward = motion_from_json(j.at("backward"));
  if (j.contains("energies"))
    for (const auto& [name, value] : j.at("energies").items())
      result.energies[name] = unhexf(value.get<std::string>());
  result.failed = j.value("failed", false);
  if (j.contains("mean_valid_distance"))
    result.mean_valid_distance = unhexf(j.at("mean_valid_distance").get<std::string>());
  result.rounds = j.value("rounds", 0);
}

inline void write_json_file(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return Json::parse(in);
}

}  // namespace seqrecon
