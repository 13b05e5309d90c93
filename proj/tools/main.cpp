#include <CLI11.hpp>
#include <iostream>

#include "seqrecon/pipeline.hpp"

using namespace seqrecon;

namespace {

// distinct exit codes per failure class
constexpr int kExitOk = 0;
constexpr int kExitCli = 2;
constexpr int kExitMissingInput = 3;
constexpr int kExitBadMesh = 4;
constexpr int kExitFrameCap = 5;
constexpr int kExitStageFailure = 6;

struct SynthOptions {
  std::string scenario = "bending";
  int frames = 10;
  double bend_deg = 30.0;
  double rotation_step_deg = 10.0;
  std::string corrupt_kind = "none";
  double hole_radius = 0.3;
  double noise_sigma = 0.0;
  uint64_t seed = 0;
  int radial_segments = 32;
  int height_segments = 30;
};

SyntheticSequence make_scenario(const SynthOptions& opt) {
  SyntheticSequence seq;
  if (opt.scenario == "bending") {
    seq = make_bending_cylinder(opt.frames, opt.bend_deg, opt.radial_segments,
                                opt.height_segments);
  } else if (opt.scenario == "two-body") {
    seq = make_two_body(opt.frames, TwoBodyMotion{Vec3(0.8, 0, 0), 20.0, Vec3::UnitY()});
  } else if (opt.scenario == "sphere") {
    seq = make_rotating_sphere(opt.frames, opt.rotation_step_deg);
  } else {
    throw CLI::ValidationError("--scenario", "unknown scenario '" + opt.scenario + "'");
  }

  if (opt.corrupt_kind == "complementary-thirds") {
    seq = corrupt(seq, CorruptionScheme::complementary_thirds());
  } else if (opt.corrupt_kind == "sphere-hole") {
    Aabb box = bounding_box(seq.ground_truth.front());
    seq = corrupt(seq, CorruptionScheme::sphere_hole(box.center(), box.center(),
                                                     opt.hole_radius * box.diagonal()));
  } else if (opt.corrupt_kind == "plane-truncation") {
    Aabb box = bounding_box(seq.ground_truth.front());
    seq = corrupt(seq, CorruptionScheme::plane_truncation(box.center(), Vec3::UnitZ(),
                                                          -0.3 * box.diagonal()));
  } else if (opt.corrupt_kind != "none") {
    throw CLI::ValidationError("--corrupt", "unknown scheme '" + opt.corrupt_kind + "'");
  }
  if (opt.noise_sigma > 0) seq = with_vertex_noise(std::move(seq), opt.noise_sigma, opt.seed);
  return seq;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mesh-sequence registration and completion pipeline"};
  app.require_subcommand(0, 1);

  std::string config_path, input, out_dir = "out", solver_trace;
  int threads = -1;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "output/checkpoint directory");
  app.add_option("--threads", threads, "worker thread cap (0 = hardware)");
  app.add_option("--solver-trace", solver_trace, "write per-solve convergence rows (CSV)");
  app.add_flag("--print-config", print_config, "print the resolved config and exit");

  SynthOptions synth;
  auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic test sequence");
  cmd_synth->add_option("--scenario", synth.scenario, "bending | two-body | sphere");
  cmd_synth->add_option("--frames", synth.frames, "frame count");
  cmd_synth->add_option("--bend", synth.bend_deg, "max bend angle (degrees)");
  cmd_synth->add_option("--rotation-step", synth.rotation_step_deg, "per-frame rotation");
  cmd_synth->add_option("--corrupt", synth.corrupt_kind,
                        "none | complementary-thirds | sphere-hole | plane-truncation");
  cmd_synth->add_option("--hole-radius", synth.hole_radius, "sphere hole radius (bbox fraction)");
  cmd_synth->add_option("--noise", synth.noise_sigma, "gaussian vertex jitter sigma");
  cmd_synth->add_option("--seed", synth.seed, "noise seed");
  cmd_synth->add_option("--radial-segments", synth.radial_segments, "cylinder resolution");
  cmd_synth->add_option("--height-segments", synth.height_segments, "cylinder resolution");

  auto* cmd_register = app.add_subcommand("register", "stage 1: pairwise registration");
  auto* cmd_template = app.add_subcommand("template", "stage 2: global alignment + fusion");
  auto* cmd_segment = app.add_subcommand("segment", "stage 3: rigid patch segmentation");
  auto* cmd_warp = app.add_subcommand("warp", "stage 4: template warp-back");
  auto* cmd_evaluate = app.add_subcommand("evaluate", "metrics against ground truth");
  auto* cmd_all = app.add_subcommand("all", "run the full chain");
  for (auto* cmd : {cmd_register, cmd_template, cmd_segment, cmd_warp, cmd_evaluate, cmd_all})
    cmd->add_option("--input", input, "frame directory or manifest.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitCli;
  }

  try {
    PipelineConfig config;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) {
        std::cerr << "config file not found: " << config_path << "\n";
        return kExitMissingInput;
      }
      try {
        config_apply_json(config, read_json_file(config_path));
      } catch (const Json::exception& e) {
        std::cerr << "config parse error: " << e.what() << "\n";
        return kExitCli;
      }
    }
    try {
      config_apply_env(config);
    } catch (const Json::exception& e) {
      std::cerr << "config env override error: " << e.what() << "\n";
      return kExitCli;
    }
    if (threads >= 0) config.threads = threads;

    if (print_config) {
      std::cout << config_to_json(config).dump(2) << "\n";
      if (app.get_subcommands().empty()) return kExitOk;
    }

    if (cmd_synth->parsed()) {
      SyntheticSequence seq = make_scenario(synth);
      fs::path manifest = write_sequence_dir(seq, out_dir);
      std::cout << "wrote " << manifest.string() << "\n";
      return kExitOk;
    }

    std::vector<std::string> stages;
    if (cmd_register->parsed()) stages = {"register"};
    if (cmd_template->parsed()) stages = {"register", "template"};
    if (cmd_segment->parsed()) stages = {"register", "template", "segment"};
    if (cmd_warp->parsed()) stages = {"register", "template", "segment", "warp"};
    if (cmd_evaluate->parsed()) stages = {"evaluate"};
    if (cmd_all->parsed()) stages = {"register", "template", "segment", "warp", "evaluate"};
    if (stages.empty()) {
      if (!print_config) std::cout << app.help();
      return kExitOk;
    }

    PipelineContext ctx;
    ctx.config = config;
    ctx.out_dir = out_dir;
    ctx.solver_trace = solver_trace;
    if (input.empty()) {
      // stages after a checkpointed register can reuse the recorded input
      Checkpoint cp = read_checkpoint(ctx.out_dir);
      if (cp.input.empty()) {
        std::cerr << "--input is required\n";
        return kExitCli;
      }
      input = cp.input;
    }
    ctx.input = input;

    if (cmd_all->parsed() && !load_sequence(ctx.input).synthetic) {
      // no ground truth: run the reconstruction chain without evaluation
      stages = {"register", "template", "segment", "warp"};
    }

    run_pipeline(ctx, stages);
    for (const auto& [stage, s] : ctx.timer.seconds)
      std::cout << stage << ": " << s << " s\n";
    return kExitOk;
  } catch (const std::length_error& e) {
    std::cerr << "frame cap exceeded: " << e.what() << "\n";
    return kExitFrameCap;
  } catch (const MeshIoError& e) {
    std::cerr << "mesh error: " << e.what() << "\n";
    return kExitBadMesh;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitCli;
  } catch (const std::invalid_argument& e) {
    std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    return what.find("exceeds the frame cap") != std::string::npos ? kExitFrameCap
                                                                   : kExitStageFailure;
  } catch (const std::exception& e) {
    std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    return what.find("not found") != std::string::npos ? kExitMissingInput : kExitStageFailure;
  }
}
