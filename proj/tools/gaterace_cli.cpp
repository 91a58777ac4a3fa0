#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gaterace/harness.hpp"
#include "gaterace/perception.hpp"
#include "gaterace/track_io.hpp"

using namespace gaterace;
namespace fs = std::filesystem;

namespace {

std::vector<double> parse_csv(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

struct LoadedPolicy {
  Checkpoint ckpt;
  RunConfig config;
  Policy policy;
};

LoadedPolicy load_policy(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  RunConfig cfg = run_config_from_json(ckpt.run_config);
  Policy policy = policy_from_checkpoint(ckpt);
  return {std::move(ckpt), std::move(cfg), std::move(policy)};
}

EnvConfig eval_env(const RunConfig& cfg) {
  EnvConfig env = cfg.env;
  env.use_depth = cfg.policy.use_depth;
  return env;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaterace: curriculum reinforcement learning for drone racing"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a policy from a run config");
  std::string config_path;
  Ablations ablations;
  TrainOptions train_opts;
  std::int64_t stop_after = -1;
  train_cmd->add_option("config", config_path, "Run config (JSON)")->required();
  train_cmd->add_flag("--no-recurrent", ablations.no_recurrent,
                      "Replace the recurrent core with a feed-forward layer");
  train_cmd->add_flag("--no-avoid-reward", ablations.no_avoid_reward,
                      "Drop the obstacle-avoidance reward term");
  train_cmd->add_flag("--one-step", ablations.one_step,
                      "Train directly at the final curriculum level");
  train_cmd->add_flag("--resume", train_opts.resume,
                      "Continue from the run's latest checkpoint");
  train_cmd->add_option("--stop-after", stop_after,
                        "Stop after this many rollouts in total");
  train_cmd->add_flag("-v,--verbose", train_opts.verbose, "Print progress");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (SR and LT)");
  std::string ckpt_path;
  std::string track_name;
  int density = -1;
  double gate_range = -1.0;
  double v_d = -1.0;
  int trials = 10;
  std::uint64_t seed = 1000;
  std::string report_out;
  eval_cmd->add_option("checkpoint", ckpt_path)->required();
  eval_cmd->add_option("--track", track_name, "Track name or file");
  eval_cmd->add_option("--density", density, "Obstacles per section");
  eval_cmd->add_option("--gate-range", gate_range, "Horizontal gate randomization (m)");
  eval_cmd->add_option("--vd", v_d, "Desired speed in the observation");
  eval_cmd->add_option("--trials", trials, "Number of trials");
  eval_cmd->add_option("--seed", seed, "Evaluation seed");
  eval_cmd->add_option("--out", report_out, "Write the JSON report here");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Density or gate-range sweep");
  std::string sweep_ckpt;
  std::string axis = "density";
  std::vector<std::string> sweep_tracks;
  int sweep_trials = -1;
  std::string sweep_out;
  sweep_cmd->add_option("checkpoint", sweep_ckpt)->required();
  sweep_cmd->add_option("--axis", axis)->check(CLI::IsMember({"density", "gates"}));
  sweep_cmd->add_option("--tracks", sweep_tracks, "Tracks to sweep");
  sweep_cmd->add_option("--trials", sweep_trials, "Trials per cell");
  sweep_cmd->add_option("--out", sweep_out, "Directory for the table files");

  // gen-scene
  auto* gen_cmd = app.add_subcommand("gen-scene", "Generate a randomized scene");
  std::string gen_track;
  int gen_density = -1;
  std::uint64_t gen_seed = 0;
  double gen_xy = 0.0;
  double gen_z = 0.0;
  std::string gen_out;
  gen_cmd->add_option("track", gen_track)->required();
  gen_cmd->add_option("--density", gen_density, "Obstacles per section");
  gen_cmd->add_option("--seed", gen_seed, "Generator seed");
  gen_cmd->add_option("--gate-xy", gen_xy, "Horizontal gate randomization (m)");
  gen_cmd->add_option("--gate-z", gen_z, "Vertical gate randomization (m)");
  gen_cmd->add_option("--out", gen_out, "Output JSON (default stdout)");

  // render-depth
  auto* render_cmd = app.add_subcommand("render-depth", "Render a depth image");
  std::string render_track;
  std::string pose = "0,0,1.5,0";
  std::string scene_file;
  std::string render_out = "depth.pgm";
  render_cmd->add_option("track", render_track, "Track name or file");
  render_cmd->add_option("--scene", scene_file, "Scene JSON from gen-scene");
  render_cmd->add_option("--pose", pose, "x,y,z,yaw (yaw in radians)");
  render_cmd->add_option("--out", render_out, "Output PGM");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      RunConfig cfg = apply_ablations(load_run_config(config_path), ablations);
      if (stop_after >= 0) train_opts.stop_after_rollouts = stop_after;
      const TrainResult r = train(cfg, train_opts);
      nlohmann::json out = {{"run_dir", r.run_dir.string()},
                            {"checkpoint", r.last_checkpoint.string()},
                            {"steps", r.steps},
                            {"rollouts", r.rollouts},
                            {"early_stopped", r.early_stopped}};
      if (r.last_eval) out["last_eval_success_rate"] = r.last_eval->success_rate;
      std::cout << out.dump(2) << '\n';
    } else if (*eval_cmd) {
      const LoadedPolicy lp = load_policy(ckpt_path);
      const CurriculumStage final_stage =
          stage_config(lp.config.curriculum.final_level, lp.config.curriculum);
      EvalOptions o;
      const Track track = load_track_by_name(track_name.empty() ? lp.config.track
                                                                : track_name);
      o.track_name = track.name;
      o.density = density >= 0 ? density : final_stage.density;
      o.gate_xy_range = gate_range >= 0.0 ? gate_range : final_stage.gate_xy_range;
      o.gate_z_range = gate_range >= 0.0
                           ? gate_range * final_stage.gate_z_range /
                                 final_stage.gate_xy_range
                           : final_stage.gate_z_range;
      o.v_d = v_d > 0.0 ? v_d : final_stage.v_d;
      o.trials = trials;
      o.seed = seed;
      o.threads = lp.config.ppo.threads;
      o.env = eval_env(lp.config);
      const EvalReport report = evaluate(lp.policy, track, o);
      const std::string text = report.to_json().dump(2);
      if (!report_out.empty()) {
        std::ofstream(report_out) << text << '\n';
      }
      std::cout << text << '\n';
    } else if (*sweep_cmd) {
      const LoadedPolicy lp = load_policy(sweep_ckpt);
      SweepSettings s = lp.config.sweep;
      if (!sweep_tracks.empty()) s.tracks = sweep_tracks;
      if (sweep_trials > 0) s.trials = sweep_trials;
      const SweepTable table =
          sweep(lp.policy, axis == "density" ? SweepAxis::kDensity : SweepAxis::kGates,
                s, eval_env(lp.config), lp.config.curriculum, lp.config.ppo.threads);
      const fs::path dir = sweep_out.empty() ? output_root() / "sweeps" : fs::path(sweep_out);
      fs::create_directories(dir);
      save_json(dir / ("sweep_" + axis + ".json"), table.to_json());
      std::ofstream(dir / ("sweep_" + axis + ".md")) << table.to_markdown();
      std::cout << table.to_markdown();
      for (const std::string& t : table.monotonicity_violations) {
        std::cout << "note: success rate is not monotone along the axis for " << t
                  << '\n';
      }
    } else if (*gen_cmd) {
      const Track base = load_track_by_name(gen_track);
      CurriculumStage stage;
      stage.density = gen_density >= 0 ? gen_density : base.default_density;
      stage.gate_xy_range = gen_xy;
      stage.gate_z_range = gen_z;
      const Scene scene = make_stage_scene(base, stage, gen_seed);
      const std::string text = scene_to_json(scene).dump(2);
      if (gen_out.empty()) {
        std::cout << text << '\n';
      } else {
        std::ofstream(gen_out) << text << '\n';
        std::cerr << "scene hash " << scene.hash() << ", " << scene.obstacles().size()
                  << " obstacles\n";
      }
    } else if (*render_cmd) {
      Scene scene;
      if (!scene_file.empty()) {
        scene = scene_from_json(load_json(scene_file));
      } else if (!render_track.empty()) {
        scene = Scene(load_track_by_name(render_track), {}, 0, 0);
      } else {
        throw std::invalid_argument("render-depth needs a track or --scene");
      }
      const std::vector<double> v = parse_csv(pose);
      if (v.size() != 4) throw std::invalid_argument("--pose expects x,y,z,yaw");
      QuadState state;
      state.p_W = Vec3(v[0], v[1], v[2]);
      state.q = quat_from_yaw(v[3]);
      const CameraModel camera;
      std::mt19937_64 rng(0);
      const DepthImage img = to_observation(render_depth(state, scene, camera), camera,
                                            0.0, rng);
      write_pgm(render_out, img);
      std::cerr << "wrote " << render_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
