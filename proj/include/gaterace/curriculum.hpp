#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <vector>

#include <json.hpp>

#include "gaterace/world.hpp"

namespace gaterace {

struct CurriculumStage {
  int level = 1;
  double v_d = 3.0;
  int density = 0;
  double gate_xy_range = 0.5;
  double gate_z_range = 0.15;
  bool vd_penalty_enabled = true;
  double advance_threshold = 0.8;
  int window = 100;

  void validate() const;
};

// Tunable schedule behind stage_config. Defaults follow the three-level
// scheme: slow obstacle-free, slow with obstacles, fast and dense.
struct CurriculumSchedule {
  double low_speed = 3.0;
  double target_speed = 10.0;
  double speed_step = 1.0;  // level-3 ramp per successful check
  int level2_density = 2;
  int level3_density = 3;
  double early_xy_range = 0.5;
  double early_z_range = 0.15;
  double full_xy_range = 1.0;
  double full_z_range = 0.3;
  double advance_threshold = 0.8;
  int window = 100;
  int start_level = 1;
  int final_level = 3;
  // Skip the curriculum: train directly at the final level and target speed.
  bool one_step = false;
};

CurriculumStage stage_config(int level, const CurriculumSchedule& schedule = {});

bool should_advance(const std::deque<bool>& recent, const CurriculumStage& stage);

struct SceneAssignment {
  int n_envs = 0;
  int n_scenes = 0;
  std::vector<int> group_of_env;
  std::vector<ScenePtr> scenes;
  std::vector<std::uint64_t> seeds;

  const ScenePtr& scene_for(int env) const { return scenes[group_of_env[env]]; }
  std::vector<int> group_sizes() const;
  std::size_t distinct_hashes() const;
};

// Builds one scene: gate randomization followed by obstacle generation.
Scene make_stage_scene(const Track& base, const CurriculumStage& stage,
                       std::uint64_t seed, const GeneratorConfig& gen = {});

SceneAssignment assign_scenes(int n_envs, int n_scenes,
                              const CurriculumStage& stage, const Track& track,
                              std::mt19937_64& rng);

SceneAssignment refresh(const SceneAssignment& assignment,
                        const CurriculumStage& stage, const Track& track,
                        std::mt19937_64& rng);

struct CurriculumEvent {
  std::int64_t step = 0;
  int from_level = 0;
  int to_level = 0;
  double v_d = 0.0;
  double success_rate = 0.0;
};

// Owns the level, the success window and the level-3 speed ramp.
class CurriculumController {
 public:
  explicit CurriculumController(CurriculumSchedule schedule = {});

  const CurriculumStage& stage() const { return stage_; }
  const CurriculumSchedule& schedule() const { return schedule_; }
  const std::vector<CurriculumEvent>& events() const { return events_; }

  void record_episode(bool success);
  // Checks the window and moves to the next level (or ramps v_d on the last
  // level). Returns true when the stage changed.
  bool maybe_advance(std::int64_t step);
  double window_success_rate() const;

  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& j);

 private:
  CurriculumSchedule schedule_;
  CurriculumStage stage_;
  std::deque<bool> recent_;
  std::vector<CurriculumEvent> events_;
};

}  // namespace gaterace
