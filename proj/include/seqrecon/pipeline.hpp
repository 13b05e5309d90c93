#pragma once

#include <chrono>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "seqrecon/fusion.hpp"
#include "seqrecon/graph_json.hpp"
#include "seqrecon/mesh_io.hpp"
#include "seqrecon/registration.hpp"
#include "seqrecon/segmentation.hpp"
#include "seqrecon/synthetic.hpp"
#include "seqrecon/warping.hpp"

namespace seqrecon {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration. Defaults are the published weighting constants.

struct PipelineConfig {
  // pairwise registration
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
  // global alignment + fusion
  double lambda_align_rigid = 150.0;
  double lambda_align_smooth = 5.0;
  double lambda_align_corr = 1.0;
  int reference_frame = 0;
  int max_frames = 370;
  int voxel_resolution = 256;
  double truncation_voxels = 3.0;
  // segmentation
  double lambda_segmentation = 1.0;
  int omega_neighborhood = 8;
  // warping
  double lambda_patch = 1.0;
  double alpha_rigid = 100.0;
  double alpha_smooth = 30.0;
  double alpha_tempo = 1.0;
  double alpha_data = 5.0;
  double expansion_cutoff_frac = 0.02;
  int fallback_k = 3;
  // shared
  int skinning_k = 4;
  int node_count = 0;  // 0 = ratio rule
  int node_ratio = 90;
  double solver_relative_tol = 1e-6;
  double solver_step_tol = 1e-8;
  int solver_max_iterations = 50;
  int threads = 0;
  uint64_t seed = 0;
};

#define SEQRECON_CONFIG_FIELDS(X)                                                      \
  X(lambda_rigid) X(lambda_smooth) X(lambda_fit) X(lambda_tempo) X(lambda_point)       \
  X(lambda_plane) X(outer_rounds) X(inner_iterations) X(prune_median_factor)           \
  X(prune_normal_angle_deg) X(lambda_align_rigid) X(lambda_align_smooth)               \
  X(lambda_align_corr) X(reference_frame) X(max_frames) X(voxel_resolution)            \
  X(truncation_voxels) X(lambda_segmentation) X(omega_neighborhood) X(lambda_patch)    \
  X(alpha_rigid) X(alpha_smooth) X(alpha_tempo) X(alpha_data) X(expansion_cutoff_frac) \
  X(fallback_k) X(skinning_k) X(node_count) X(node_ratio) X(solver_relative_tol)       \
  X(solver_step_tol) X(solver_max_iterations) X(threads) X(seed)

inline Json config_to_json(const PipelineConfig& c) {
  Json j;
#define SEQRECON_PUT(name) j[#name] = c.name;
  SEQRECON_CONFIG_FIELDS(SEQRECON_PUT)
#undef SEQRECON_PUT
  return j;
}

inline void config_apply_json(PipelineConfig& c, const Json& j) {
#define SEQRECON_GET(name)                                      \
  if (j.contains(#name)) c.name = j.at(#name).get<decltype(c.name)>();
  SEQRECON_CONFIG_FIELDS(SEQRECON_GET)
#undef SEQRECON_GET
  if (c.max_frames > 370)
    throw std::invalid_argument("config: max_frames may not exceed 370");
}

// Environment overrides: DT_ + uppercased key, e.g. DT_LAMBDA_RIGID.
inline void config_apply_env(PipelineConfig& c) {
  Json j;
#define SEQRECON_ENV(name)                                    \
  {                                                           \
    std::string key = "DT_" #name;                            \
    for (auto& ch : key) ch = std::toupper(ch);               \
    if (const char* value = std::getenv(key.c_str()))         \
      j[#name] = Json::parse(value, nullptr, false).is_discarded() \
                     ? Json(std::string(value))               \
                     : Json::parse(value);                    \
  }
  SEQRECON_CONFIG_FIELDS(SEQRECON_ENV)
#undef SEQRECON_ENV
  if (!j.empty()) config_apply_json(c, j);
}

inline std::string config_hash(const PipelineConfig& c) {
  std::string dump = config_to_json(c).dump();
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline int frame_node_target(const PipelineConfig& c, int vertex_count) {
  int target = c.node_count > 0 ? c.node_count
                                : std::clamp(vertex_count / c.node_ratio, 16, 512);
  target = std::min(target, vertex_count);
  return std::max(target, 2);
}

inline SolverOptions solver_options(const PipelineConfig& c) {
  SolverOptions opt;
  opt.relative_energy_tol = c.solver_relative_tol;
  opt.step_norm_tol = c.solver_step_tol;
  opt.max_iterations = c.solver_max_iterations;
  return opt;
}

inline RegistrationOptions registration_options(const PipelineConfig& c) {
  RegistrationOptions opt;
  opt.lambda_rigid = c.lambda_rigid;
  opt.lambda_smooth = c.lambda_smooth;
  opt.lambda_fit = c.lambda_fit;
  opt.lambda_tempo = c.lambda_tempo;
  opt.lambda_point = c.lambda_point;
  opt.lambda_plane = c.lambda_plane;
  opt.outer_rounds = c.outer_rounds;
  opt.inner_iterations = c.inner_iterations;
  opt.prune_median_factor = c.prune_median_factor;
  opt.prune_normal_angle_deg = c.prune_normal_angle_deg;
  opt.solver = solver_options(c);
  return opt;
}

inline AlignmentOptions alignment_options(const PipelineConfig& c) {
  AlignmentOptions opt;
  opt.lambda_rigid = c.lambda_align_rigid;
  opt.lambda_smooth = c.lambda_align_smooth;
  opt.lambda_corr = c.lambda_align_corr;
  opt.max_frames = c.max_frames;
  opt.solver = solver_options(c);
  return opt;
}

// ---------------------------------------------------------------------------
// Sequence manifests (shared between the synthetic factory and the CLI).

struct Manifest {
  std::string scenario;
  Json parameters;
  std::vector<std::string> frames;         // relative paths, frame order
  std::vector<std::string> ground_truth;   // optional
  std::vector<std::vector<int>> removed_vertices;
  std::vector<int> region_tags;
};

inline void write_manifest(const Manifest& m, const fs::path& path) {
  Json j;
  j["scenario"] = m.scenario;
  j["parameters"] = m.parameters;
  j["frames"] = m.frames;
  if (!m.ground_truth.empty()) j["ground_truth"] = m.ground_truth;
  if (!m.removed_vertices.empty()) j["removed_vertices"] = m.removed_vertices;
  if (!m.region_tags.empty()) j["region_tags"] = m.region_tags;
  write_json_file(j, path.string());
}

inline Manifest read_manifest(const fs::path& path) {
  Json j = read_json_file(path.string());
  Manifest m;
  m.scenario = j.value("scenario", std::string{});
  m.parameters = j.value("parameters", Json::object());
  m.frames = j.at("frames").get<std::vector<std::string>>();
  if (j.contains("ground_truth"))
    m.ground_truth = j.at("ground_truth").get<std::vector<std::string>>();
  if (j.contains("removed_vertices"))
    m.removed_vertices = j.at("removed_vertices").get<std::vector<std::vector<int>>>();
  if (j.contains("region_tags")) m.region_tags = j.at("region_tags").get<std::vector<int>>();
  return m;
}

// Writes numbered frame files plus the manifest.
inline fs::path write_sequence_dir(const SyntheticSequence& seq, const fs::path& dir) {
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "gt");
  Manifest m;
  m.scenario = seq.scenario;
  m.parameters = Json::object();
  for (int f = 0; f < seq.frame_count(); ++f) {
    char name[64];
    std::snprintf(name, sizeof(name), "frames/frame_%03d.ply", f);
    write_ply(seq.corrupted[f], (dir / name).string(), true);
    m.frames.push_back(name);
    std::snprintf(name, sizeof(name), "gt/gt_%03d.ply", f);
    write_ply(seq.ground_truth[f], (dir / name).string(), true);
    m.ground_truth.push_back(name);
  }
  m.removed_vertices = seq.removed_vertices;
  m.region_tags = seq.region_tags;
  write_manifest(m, dir / "manifest.json");
  return dir / "manifest.json";
}

// Accepts a manifest path, a directory containing manifest.json, or a plain
// directory of mesh files in lexicographic frame order.
struct LoadedSequence {
  std::vector<TriMesh> frames;
  std::optional<SyntheticSequence> synthetic;  // when ground truth is present
};

inline LoadedSequence load_sequence(const fs::path& input) {
  if (!fs::exists(input)) throw std::runtime_error("input not found: " + input.string());
  fs::path manifest_path;
  if (fs::is_directory(input)) {
    if (fs::exists(input / "manifest.json")) manifest_path = input / "manifest.json";
  } else if (input.filename() == "manifest.json" || input.extension() == ".json") {
    manifest_path = input;
  }

  LoadedSequence out;
  if (!manifest_path.empty()) {
    Manifest m = read_manifest(manifest_path);
    fs::path base = manifest_path.parent_path();
    for (const auto& rel : m.frames) {
      TriMesh mesh = read_mesh((base / rel).string());
      out.frames.push_back(compute_vertex_normals(std::move(mesh)));
    }
    if (!m.ground_truth.empty()) {
      SyntheticSequence seq;
      seq.scenario = m.scenario;
      for (const auto& rel : m.ground_truth) {
        TriMesh mesh = read_mesh((base / rel).string());
        seq.ground_truth.push_back(compute_vertex_normals(std::move(mesh)));
      }
      seq.corrupted = out.frames;
      seq.removed_vertices = m.removed_vertices;
      seq.region_tags = m.region_tags;
      seq.vertex_map.resize(seq.frame_count());
      out.synthetic = std::move(seq);
    }
    return out;
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(input)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == ".ply" || ext == ".obj") files.push_back(entry.path());
  }
  if (files.empty()) throw std::runtime_error("no mesh frames in " + input.string());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    TriMesh mesh = read_mesh(f.string());
    out.frames.push_back(compute_vertex_normals(std::move(mesh)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints.

struct Checkpoint {
  std::string config_hash;
  std::string input;
  std::vector<std::string> stages;  // completed, in order

  bool has(const std::string& stage) const {
    return std::find(stages.begin(), stages.end(), stage) != stages.end();
  }
};

inline void write_checkpoint(const Checkpoint& c, const fs::path& out_dir) {
  Json j;
  j["config_hash"] = c.config_hash;
  j["input"] = c.input;
  j["stages"] = c.stages;
  write_json_file(j, (out_dir / "checkpoint.json").string());
}

inline Checkpoint read_checkpoint(const fs::path& out_dir) {
  Checkpoint c;
  fs::path path = out_dir / "checkpoint.json";
  if (!fs::exists(path)) return c;
  Json j = read_json_file(path.string());
  c.config_hash = j.value("config_hash", std::string{});
  c.input = j.value("input", std::string{});
  if (j.contains("stages")) c.stages = j.at("stages").get<std::vector<std::string>>();
  return c;
}

// ---------------------------------------------------------------------------
// Pipeline context and stages.

struct StageTimer {
  std::map<std::string, double> seconds;

  template <class F>
  auto run(const std::string& name, F&& f) {
    auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      seconds[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } else {
      auto result = f();
      seconds[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      return result;
    }
  }
};

struct PipelineContext {
  PipelineConfig config;
  fs::path out_dir;
  fs::path input;
  Checkpoint checkpoint;
  StageTimer timer;
  fs::path solver_trace;  // optional per-solve convergence CSV
  std::vector<std::pair<std::string, SolverReport>> solver_reports;

  fs::path registration_dir() const { return out_dir / "registration"; }
  fs::path warped_dir() const { return out_dir / "warped"; }
};

inline void write_solver_trace(const PipelineContext& ctx) {
  if (ctx.solver_trace.empty()) return;
  std::ofstream out(ctx.solver_trace);
  if (!out) throw std::runtime_error("cannot write " + ctx.solver_trace.string());
  out << "solve,iteration,energy,damping,step_norm\n";
  out.precision(17);
  for (const auto& [name, report] : ctx.solver_reports)
    for (const auto& row : report.rows)
      out << name << "," << row.iteration << "," << row.energy << "," << row.damping << ","
          << row.step_norm << "\n";
}

inline FrameSequence build_frames(const PipelineConfig& config,
                                  const std::vector<TriMesh>& meshes) {
  if (static_cast<int>(meshes.size()) > config.max_frames)
    throw std::length_error("frame count " + std::to_string(meshes.size()) +
                            " exceeds the maximum of " + std::to_string(config.max_frames));
  FrameSequence seq;
  for (const auto& mesh : meshes) {
    Frame frame;
    frame.mesh = mesh;
    int target = frame_node_target(config, frame.mesh.vertex_count());
    frame.graph = sample_nodes(frame.mesh, target, config.skinning_k);
    int k_eff = std::min(config.skinning_k, frame.graph.node_count() - 1);
    frame.weights = compute_skinning_weights(frame.mesh, frame.graph, k_eff);
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

inline void stage_register(PipelineContext& ctx, const FrameSequence& frames,
                           std::vector<PairwiseResult>& results) {
  results = register_sequence(frames, registration_options(ctx.config));
  fs::create_directories(ctx.registration_dir());
  for (int n = 0; n < frames.frame_count(); ++n) {
    if (results[n].failed)
      throw std::runtime_error("registration failed on frame " + std::to_string(n) +
                               " (mean correspondence distance too large)");
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%03d.json", n);
    write_json_file(pairwise_to_json(frames.frames[n].graph, frames.frames[n].weights, results[n]),
                    (ctx.registration_dir() / name).string());
    std::snprintf(name, sizeof(name), "register_%03d", n);
    ctx.solver_reports.push_back({name, results[n].report});
  }
}

inline std::vector<PairwiseResult> load_registration(const PipelineContext& ctx,
                                                     FrameSequence& frames) {
  std::vector<PairwiseResult> results(frames.frame_count());
  for (int n = 0; n < frames.frame_count(); ++n) {
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%03d.json", n);
    Json j = read_json_file((ctx.registration_dir() / name).string());
    DeformGraph graph;
    SkinningWeights weights;
    pairwise_from_json(j, graph, weights, results[n]);
    frames.frames[n].graph = std::move(graph);
    frames.frames[n].weights = std::move(weights);
  }
  return results;
}

inline Json alignment_to_json(const GlobalAlignment& alignment) {
  Json j;
  j["reference"] = alignment.reference;
  j["motions"] = Json::array();
  for (const auto& m : alignment.motions) j["motions"].push_back(motion_to_json(m));
  j["usable"] = Json::array();
  for (char u : alignment.usable) j["usable"].push_back(static_cast<int>(u));
  j["frame_residuals"] = Json::array();
  for (double r : alignment.frame_residuals) j["frame_residuals"].push_back(hexf(r));
  return j;
}

inline GlobalAlignment alignment_from_json(const Json& j) {
  GlobalAlignment alignment;
  alignment.reference = j.at("reference").get<int>();
  for (const auto& m : j.at("motions")) alignment.motions.push_back(motion_from_json(m));
  for (const auto& u : j.at("usable")) alignment.usable.push_back(static_cast<char>(u.get<int>()));
  for (const auto& r : j.at("frame_residuals"))
    alignment.frame_residuals.push_back(unhexf(r.get<std::string>()));
  return alignment;
}

inline void stage_template(PipelineContext& ctx, const FrameSequence& frames,
                           const std::vector<PairwiseResult>& pairwise,
                           GlobalAlignment& alignment, GlobalTemplate& tpl) {
  alignment = align_all_frames(frames, pairwise, ctx.config.reference_frame,
                               alignment_options(ctx.config));
  TemplateOptions topt;
  topt.fusion.voxel_resolution = ctx.config.voxel_resolution;
  topt.fusion.truncation_voxels = ctx.config.truncation_voxels;
  topt.node_count = ctx.config.node_count;
  topt.skin_k = ctx.config.skinning_k;
  tpl = build_template(frames, alignment, topt);
  ctx.solver_reports.push_back({"align", alignment.report});

  write_json_file(alignment_to_json(alignment), (ctx.out_dir / "alignment.json").string());
  VertexIntProperty prov{"source_frame", tpl.provenance};
  write_ply(tpl.mesh, (ctx.out_dir / "template.ply").string(), true, &prov);
  write_json_file(graph_to_json(tpl.graph), (ctx.out_dir / "template_graph.json").string());
}

inline void load_template(const PipelineContext& ctx, GlobalAlignment& alignment,
                          GlobalTemplate& tpl) {
  alignment = alignment_from_json(read_json_file((ctx.out_dir / "alignment.json").string()));
  tpl.mesh = read_ply((ctx.out_dir / "template.ply").string());
  tpl.mesh = compute_vertex_normals(std::move(tpl.mesh));
  tpl.graph = graph_from_json(read_json_file((ctx.out_dir / "template_graph.json").string()));
  tpl.provenance.assign(tpl.mesh.vertices.size(), 0);  // not needed downstream
}

inline void stage_segment(PipelineContext& ctx, const FrameSequence& frames,
                          const GlobalAlignment& alignment, const GlobalTemplate& tpl,
                          PatchSegmentation& seg) {
  // K = the largest per-frame node count
  int K = 0;
  for (const auto& frame : frames.frames) K = std::max(K, frame.graph.node_count());

  // aligned nodes and vertices in the reference pose
  std::vector<Vec3> aligned_nodes;
  std::vector<std::vector<int>> cluster_of_node(frames.frame_count());
  AlignedVertexSet aligned;
  for (int f = 0; f < frames.frame_count(); ++f) {
    if (!alignment.usable[f]) continue;
    const Frame& frame = frames.frames[f];
    for (int t = 0; t < frame.graph.node_count(); ++t)
      aligned_nodes.push_back(frame.graph.nodes[t] + alignment.motions[f].b[t]);
    TriMesh deformed = deform_mesh(frame.mesh, frame.weights, frame.graph, alignment.motions[f]);
    for (int v = 0; v < deformed.vertex_count(); ++v) {
      aligned.positions.push_back(deformed.vertices[v]);
      aligned.frame.push_back(f);
      aligned.vertex.push_back(v);
    }
  }
  NodeClusters clusters =
      cluster_nodes(aligned_nodes, std::min(K, static_cast<int>(aligned_nodes.size())));
  std::size_t cursor = 0;
  for (int f = 0; f < frames.frame_count(); ++f) {
    if (!alignment.usable[f]) continue;
    int m = frames.frames[f].graph.node_count();
    cluster_of_node[f].assign(clusters.assignment.begin() + cursor,
                              clusters.assignment.begin() + cursor + m);
    cursor += m;
  }

  auto weights = vertex_cluster_weights(tpl.mesh.vertices, aligned, frames, cluster_of_node,
                                        clusters.K, ctx.config.omega_neighborhood);
  seg = segment(tpl.mesh, weights, ctx.config.lambda_segmentation);

  VertexIntProperty prop{"patch_id", seg.labels};
  write_ply(tpl.mesh, (ctx.out_dir / "segmentation.ply").string(), true, &prop);
  SegmentationReport report = verify_segmentation(seg, tpl.mesh);
  Json j;
  j["cluster_count"] = seg.cluster_count;
  j["patch_count"] = seg.patch_count();
  j["centroids"] = Json::array();
  for (const auto& c : seg.centroids) j["centroids"].push_back(vec3_to_json(c));
  j["patch_areas"] = report.patch_areas;
  j["patch_boundary_lengths"] = report.patch_boundary_lengths;
  j["patches_connected"] = report.patches_connected;
  j["labels"] = seg.labels;
  write_json_file(j, (ctx.out_dir / "segmentation.json").string());
}

inline PatchSegmentation load_segmentation(const PipelineContext& ctx, const GlobalTemplate& tpl) {
  Json j = read_json_file((ctx.out_dir / "segmentation.json").string());
  PatchSegmentation seg;
  seg.cluster_count = j.at("cluster_count").get<int>();
  seg.labels = j.at("labels").get<std::vector<int>>();
  int patches = j.at("patch_count").get<int>();
  seg.patch_vertices.resize(patches);
  for (int v = 0; v < static_cast<int>(seg.labels.size()); ++v)
    seg.patch_vertices[seg.labels[v]].push_back(v);
  for (const auto& c : j.at("centroids")) seg.centroids.push_back(vec3_from_json(c));
  return seg;
}

inline void stage_warp(PipelineContext& ctx, const FrameSequence& frames,
                       const GlobalAlignment& alignment, const GlobalTemplate& tpl,
                       const PatchSegmentation& seg, std::vector<TriMesh>& warped) {
  WarpGraph wg = build_warp_graph(tpl.mesh, seg, ctx.config.skinning_k);
  EdgeGraph template_edges = build_bridged_graph(tpl.mesh);
  const double cutoff = ctx.config.expansion_cutoff_frac * bbox_diagonal(tpl.mesh);

  ExpansionOptions eopt;
  eopt.lambda_patch = ctx.config.lambda_patch;
  eopt.cutoff_frac = ctx.config.expansion_cutoff_frac;

  std::vector<WarpState> states(frames.frame_count());
  for (int n = 0; n < frames.frame_count(); ++n) {
    const Frame& frame = frames.frames[n];
    TriMesh deformed = deform_mesh(frame.mesh, frame.weights, frame.graph, alignment.motions[n]);
    VertexRigidMotions rigid =
        decompose_mesh_motion(frame.mesh, frame.weights, frame.graph, alignment.motions[n]);
    for (auto& r : rigid) r = invert_rigid_motion(r);

    ExpansionField field = expand_surface(tpl.mesh, deformed, seg, eopt);
    TriMesh expanded = apply_expansion(tpl.mesh, field);
    states[n] = estimate_node_motions(expanded, wg, template_edges, deformed, rigid, cutoff,
                                      ctx.config.fallback_k);
  }

  RefinementOptions ropt;
  ropt.alpha_rigid = ctx.config.alpha_rigid;
  ropt.alpha_smooth = ctx.config.alpha_smooth;
  ropt.alpha_tempo = ctx.config.alpha_tempo;
  ropt.alpha_data = ctx.config.alpha_data;
  ropt.solver = solver_options(ctx.config);
  SolverReport refine_report = refine_temporal(states, wg, ropt);
  ctx.solver_reports.push_back({"refine", refine_report});

  fs::create_directories(ctx.warped_dir());
  warped.clear();
  for (int n = 0; n < frames.frame_count(); ++n) {
    TriMesh out = warp_template_to_frame(states[n], wg);
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%03d.ply", n);
    write_ply(out, (ctx.warped_dir() / name).string(), true);

    int direct = 0, fallback = 0;
    for (char f : states[n].fallback) (f ? fallback : direct)++;
    Json sidecar;
    sidecar["frame"] = n;
    sidecar["direct_nodes"] = direct;
    sidecar["fallback_nodes"] = fallback;
    sidecar["hausdorff_to_input"] = hexf(hausdorff_mean(frames.frames[n].mesh, out));
    std::snprintf(name, sizeof(name), "frame_%03d.json", n);
    write_json_file(sidecar, (ctx.warped_dir() / name).string());
    warped.push_back(std::move(out));
  }
}

inline std::vector<TriMesh> load_warped(const PipelineContext& ctx, int frame_count) {
  std::vector<TriMesh> warped;
  for (int n = 0; n < frame_count; ++n) {
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%03d.ply", n);
    warped.push_back(read_ply((ctx.warped_dir() / name).string()));
  }
  return warped;
}

// ---------------------------------------------------------------------------
// Reports.

inline void emit_report(const EvalReport& report, const fs::path& csv_path,
                        const fs::path& json_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << "frame,hausdorff_mean,coverage";
  for (const auto& [stage, s] : report.stage_runtimes) csv << "," << stage << "_seconds";
  csv << "\n";
  csv.precision(17);
  for (std::size_t f = 0; f < report.frame_hausdorff.size(); ++f) {
    csv << f << "," << report.frame_hausdorff[f] << "," << report.frame_coverage[f];
    for (const auto& [stage, s] : report.stage_runtimes) csv << "," << s;
    csv << "\n";
  }
  if (!csv) throw std::runtime_error("write failure on " + csv_path.string());

  Json j;
  j["mean_hausdorff"] = report.mean_hausdorff;
  j["mean_coverage"] = report.mean_coverage;
  j["frame_hausdorff"] = report.frame_hausdorff;
  j["frame_coverage"] = report.frame_coverage;
  Json runtimes;
  for (const auto& [stage, s] : report.stage_runtimes) runtimes[stage] = s;
  j["stage_runtimes_seconds"] = runtimes;
  write_json_file(j, json_path.string());
}

// ---------------------------------------------------------------------------
// Orchestration. Stages run in order; completed stages with a matching config
// hash are skipped on resume.

inline void run_pipeline(PipelineContext& ctx, const std::vector<std::string>& stages) {
  worker_threads() = ctx.config.threads;
  fs::create_directories(ctx.out_dir);

  const std::string hash = config_hash(ctx.config);
  Checkpoint cp = read_checkpoint(ctx.out_dir);
  if (cp.config_hash != hash || (!ctx.input.empty() && cp.input != ctx.input.string())) {
    cp = Checkpoint{};  // config changed: every downstream artifact is stale
    cp.config_hash = hash;
    cp.input = ctx.input.string();
  }
  write_json_file(config_to_json(ctx.config), (ctx.out_dir / "config.json").string());

  LoadedSequence loaded = load_sequence(ctx.input);
  FrameSequence frames;
  std::vector<PairwiseResult> pairwise;
  GlobalAlignment alignment;
  GlobalTemplate tpl;
  PatchSegmentation seg;
  std::vector<TriMesh> warped;

  auto need = [&](const std::string& stage) {
    return std::find(stages.begin(), stages.end(), stage) != stages.end();
  };
  bool frames_built = false;
  auto ensure_frames = [&] {
    if (!frames_built) {
      frames = ctx.timer.run("frames", [&] { return build_frames(ctx.config, loaded.frames); });
      frames_built = true;
    }
  };

  if (need("register")) {
    ensure_frames();
    if (!cp.has("registered")) {
      ctx.timer.run("register", [&] { stage_register(ctx, frames, pairwise); });
      cp.stages.push_back("registered");
      write_checkpoint(cp, ctx.out_dir);
    } else {
      pairwise = load_registration(ctx, frames);
    }
  }

  if (need("template")) {
    ensure_frames();
    if (pairwise.empty()) pairwise = load_registration(ctx, frames);
    if (!cp.has("template")) {
      ctx.timer.run("template", [&] { stage_template(ctx, frames, pairwise, alignment, tpl); });
      cp.stages.push_back("aligned");
      cp.stages.push_back("template");
      write_checkpoint(cp, ctx.out_dir);
    } else {
      load_template(ctx, alignment, tpl);
    }
  }

  if (need("segment")) {
    ensure_frames();
    if (pairwise.empty()) pairwise = load_registration(ctx, frames);
    if (alignment.motions.empty()) load_template(ctx, alignment, tpl);
    if (!cp.has("segmented")) {
      ctx.timer.run("segment", [&] { stage_segment(ctx, frames, alignment, tpl, seg); });
      cp.stages.push_back("segmented");
      write_checkpoint(cp, ctx.out_dir);
    } else {
      seg = load_segmentation(ctx, tpl);
    }
  }

  if (need("warp")) {
    ensure_frames();
    if (pairwise.empty()) pairwise = load_registration(ctx, frames);
    if (alignment.motions.empty()) load_template(ctx, alignment, tpl);
    if (seg.labels.empty()) seg = load_segmentation(ctx, tpl);
    if (!cp.has("warped")) {
      ctx.timer.run("warp", [&] { stage_warp(ctx, frames, alignment, tpl, seg, warped); });
      cp.stages.push_back("warped");
      write_checkpoint(cp, ctx.out_dir);
    } else {
      warped = load_warped(ctx, frames.frame_count());
    }
  }

  if (need("evaluate")) {
    if (!loaded.synthetic)
      throw std::runtime_error("evaluate requires a manifest with ground truth");
    if (warped.empty())
      warped = load_warped(ctx, static_cast<int>(loaded.frames.size()));
    EvalReport report = ctx.timer.run("evaluate", [&] {
      return evaluate(warped, *loaded.synthetic);
    });
    for (const auto& [stage, s] : ctx.timer.seconds) report.stage_runtimes.push_back({stage, s});
    emit_report(report, ctx.out_dir / "report.csv", ctx.out_dir / "report.json");
  }

  // wall-clock diagnostics live outside the deterministic artifact set
  Json timings;
  for (const auto& [stage, s] : ctx.timer.seconds) timings[stage] = s;
  write_json_file(timings, (ctx.out_dir / "timings.json").string());
  write_solver_trace(ctx);
}

}  // namespace seqrecon
