#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaterace/checkpoint.hpp"
#include "gaterace/curriculum.hpp"
#include "gaterace/env.hpp"
#include "gaterace/policy.hpp"
#include "gaterace/trainer.hpp"

namespace gaterace {

struct EvalSettings {
  int trials = 10;
  std::uint64_t seed = 1000;
  // Evaluate every this many rollouts during training; 0 disables.
  int interval_rollouts = 0;
  // Stop training once an evaluation reaches this success rate.
  std::optional<double> stop_success_rate;
  // Evaluation difficulty; unset fields follow the current curriculum stage.
  std::optional<int> density;
  std::optional<double> gate_xy_range;
  std::optional<double> gate_z_range;
  std::optional<double> v_d;
};

struct SweepSettings {
  std::vector<int> densities{2, 3, 4, 5};
  std::vector<double> gate_ranges{0.3, 0.5, 0.7, 1.0};
  std::vector<std::string> tracks{"s_shaped", "j_shaped", "circle_3d"};
  int trials = 10;
  std::uint64_t seed = 2000;
};

struct RunConfig {
  std::string name = "run";
  std::string track = "mini";
  std::uint64_t seed = 0;
  PPOConfig ppo;
  PolicyConfig policy;
  EnvConfig env;
  CurriculumSchedule curriculum;
  EvalSettings eval;
  SweepSettings sweep;
  int checkpoint_interval = 10;  // rollouts
  // Run directory; relative paths resolve under the output root.
  std::string output_dir;
};

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
// Part of the configuration that identifies a run for resumption.
std::uint64_t run_config_hash(const RunConfig& c);

struct Ablations {
  bool no_recurrent = false;
  bool no_avoid_reward = false;
  bool one_step = false;
};

// Each flag changes exactly one factor of the configuration.
RunConfig apply_ablations(RunConfig c, const Ablations& a);

// $GATERACE_OUTPUT_ROOT, or "runs" in the working directory.
std::filesystem::path output_root();
std::filesystem::path run_directory(const RunConfig& c);

// Builds the trainer inputs, deriving action bounds from the track's vehicle.
TrainerSetup make_trainer_setup(const RunConfig& c);

struct EvalOptions {
  std::string track_name;
  int density = 0;
  double gate_xy_range = 0.5;
  double gate_z_range = 0.15;
  double v_d = 3.0;
  int trials = 10;
  std::uint64_t seed = 1000;
  int start_point = 0;
  int threads = 1;
  EnvConfig env;
  // Replaces the generated scene of a trial (constructed failure cases).
  std::function<Scene(int trial)> scene_override;
};

struct TrialRecord {
  int trial = 0;
  std::uint64_t scene_seed = 0;
  std::uint64_t scene_hash = 0;
  DoneReason outcome = DoneReason::kRunning;
  int gates_passed = 0;
  int steps = 0;
  std::optional<double> lap_time;
};

struct EvalReport {
  std::string track;
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;
  std::vector<double> lap_times;
  std::optional<double> mean_lap_time;
  int density = 0;
  double gate_xy_range = 0.0;
  double gate_z_range = 0.0;
  double v_d = 0.0;
  std::uint64_t seed = 0;
  std::vector<TrialRecord> records;

  nlohmann::json to_json() const;
};

EvalReport summarize(const EvalOptions& options,
                     const std::vector<TrialRecord>& records);

EvalReport evaluate(const Policy& policy, const Track& track,
                    const EvalOptions& options);

enum class SweepAxis { kDensity, kGates };

struct SweepTable {
  SweepAxis axis = SweepAxis::kDensity;
  std::vector<double> points;
  std::vector<std::string> tracks;
  std::vector<std::vector<EvalReport>> reports;  // [track][point]
  // Tracks whose SR rises with difficulty somewhere along the axis.
  std::vector<std::string> monotonicity_violations;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

SweepTable sweep(const Policy& policy, SweepAxis axis,
                 const SweepSettings& settings, const EnvConfig& env,
                 const CurriculumSchedule& schedule, int threads = 1);

struct TrainOptions {
  bool resume = false;
  // Stop (with a checkpoint) after this many rollouts in total.
  std::optional<std::int64_t> stop_after_rollouts;
  bool verbose = false;
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::filesystem::path last_checkpoint;
  std::int64_t steps = 0;
  std::int64_t rollouts = 0;
  bool early_stopped = false;
  std::optional<EvalReport> last_eval;
};

TrainResult train(const RunConfig& config, const TrainOptions& options = {});

}  // namespace gaterace
