#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "gaterace/curriculum.hpp"
#include "gaterace/dynamics.hpp"
#include "gaterace/perception.hpp"
#include "gaterace/world.hpp"

namespace gaterace {

inline constexpr int kStateDim = 17;
inline constexpr int kActionDim = 4;

struct Observation {
  // [p1 (3), p2 (3), v (3), v_d, o (4, w x y z), omega (3)]; p1, p2 and v in
  // the body frame.
  std::array<double, kStateDim> state{};
  DepthImage depth;  // empty when the env runs state-only
};

struct RewardWeights {
  double prog = 0.9;
  double theta = 0.05;
  double cmd = -0.005;
  double cmd_delta = -0.0025;
  double vd = -0.05;
  double avoid = -0.01;
  double pass = 5.0;
  double crash = -4.0;
  double b_omega = 0.1;
  // Over-speed penalty only above v_d; false gives the signed variant.
  bool vd_clamped = true;
};

struct RewardBreakdown {
  double prog = 0.0;
  double theta = 0.0;
  double cmd = 0.0;
  double vd = 0.0;
  double avoid = 0.0;
  double pass = 0.0;
  double crash = 0.0;
  double total = 0.0;
};

enum class DoneReason { kRunning, kCrash, kLapComplete, kTimeout, kDivergence };

const char* to_string(DoneReason r);

struct EpisodeState {
  int next_gate_index = 0;
  int gates_passed = 0;
  int gates_to_finish = 0;
  ActionCTBR prev_action;
  double prev_distance = 0.0;
  int steps = 0;
  double time = 0.0;
  std::optional<double> lap_time;
  DoneReason done_reason = DoneReason::kRunning;
};

struct StepEvents {
  bool passed = false;
  bool crashed = false;
};

struct StepInfo {
  double d_col = 0.0;
  int gates_passed = 0;
  double speed = 0.0;
  RewardBreakdown reward;
  std::optional<double> lap_time;
};

struct StepResult {
  Observation obs;
  RewardBreakdown reward;
  DoneReason done = DoneReason::kRunning;
  StepInfo info;
};

struct EnvConfig {
  double physics_dt = 1.0 / 120.0;
  int action_repeat = 4;
  int max_steps = 1024;
  double start_jitter = 0.5;
  int max_reset_tries = 100;
  // Pin the start point (evaluation); otherwise drawn uniformly.
  std::optional<int> fixed_start;
  bool use_depth = true;
  double depth_sigma = 0.02;
  CameraModel camera;
  RewardWeights reward;
  double drone_radius = kDroneRadius;
};

// Gate targeted after passing `gate`, clamped to the last gate on open tracks.
int following_gate(const Track& track, int gate);

Observation assemble_observation(const QuadState& state, const Track& track,
                                 int next_gate_index, double v_d,
                                 DepthImage depth);

RewardBreakdown compute_reward(const EpisodeState& prev, const QuadState& state,
                               const ActionCTBR& action, const Scene& scene,
                               const CurriculumStage& stage,
                               const StepEvents& events,
                               const RewardWeights& weights,
                               double drone_radius = kDroneRadius);

class RacingEnv {
 public:
  RacingEnv(EnvConfig config, std::uint64_t seed);

  void set_scene(ScenePtr scene) { scene_ = std::move(scene); }
  void set_stage(const CurriculumStage& stage) { stage_ = stage; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  Observation reset();
  StepResult step(const ActionCTBR& action);

  const QuadState& state() const { return state_; }
  const EpisodeState& episode() const { return episode_; }
  const Scene& scene() const { return *scene_; }
  const CurriculumStage& stage() const { return stage_; }
  const EnvConfig& config() const { return config_; }
  double control_dt() const { return config_.physics_dt * config_.action_repeat; }

 private:
  Observation observe();

  EnvConfig config_;
  std::mt19937_64 rng_;
  ScenePtr scene_;
  CurriculumStage stage_;
  QuadState state_;
  EpisodeState episode_;
  bool needs_reset_ = true;
};

}  // namespace gaterace
