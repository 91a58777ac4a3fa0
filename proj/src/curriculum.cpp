#include "gaterace/curriculum.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "gaterace/rng.hpp"

namespace gaterace {

void CurriculumStage::validate() const {
  if (level < 1 || level > 3) {
    throw std::invalid_argument("curriculum level must be 1, 2 or 3");
  }
  if (level == 1 && density != 0) {
    throw std::invalid_argument("level 1 is obstacle-free");
  }
  if (level == 3 && vd_penalty_enabled) {
    throw std::invalid_argument("level 3 runs without the speed penalty");
  }
  if (window <= 0 || advance_threshold < 0.0 || advance_threshold > 1.0) {
    throw std::invalid_argument("invalid advancement window or threshold");
  }
}

CurriculumStage stage_config(int level, const CurriculumSchedule& s) {
  CurriculumStage st;
  st.level = level;
  st.advance_threshold = s.advance_threshold;
  st.window = s.window;
  switch (level) {
    case 1:
      st.v_d = s.low_speed;
      st.density = 0;
      st.gate_xy_range = s.early_xy_range;
      st.gate_z_range = s.early_z_range;
      st.vd_penalty_enabled = true;
      break;
    case 2:
      st.v_d = s.low_speed;
      st.density = s.level2_density;
      st.gate_xy_range = s.early_xy_range;
      st.gate_z_range = s.early_z_range;
      st.vd_penalty_enabled = true;
      break;
    case 3:
      st.v_d = s.target_speed;
      st.density = s.level3_density;
      st.gate_xy_range = s.full_xy_range;
      st.gate_z_range = s.full_z_range;
      st.vd_penalty_enabled = false;
      break;
    default:
      throw std::invalid_argument("stage_config: level must be 1, 2 or 3");
  }
  st.validate();
  return st;
}

bool should_advance(const std::deque<bool>& recent,
                    const CurriculumStage& stage) {
  if (static_cast<int>(recent.size()) < stage.window) return false;
  const auto first = recent.end() - stage.window;
  const auto successes = std::count(first, recent.end(), true);
  return static_cast<double>(successes) >=
         stage.advance_threshold * static_cast<double>(stage.window);
}

std::vector<int> SceneAssignment::group_sizes() const {
  std::vector<int> sizes(n_scenes, 0);
  for (int g : group_of_env) ++sizes[g];
  return sizes;
}

std::size_t SceneAssignment::distinct_hashes() const {
  std::set<std::uint64_t> hashes;
  for (const ScenePtr& s : scenes) hashes.insert(s->hash());
  return hashes.size();
}

Scene make_stage_scene(const Track& base, const CurriculumStage& stage,
                       std::uint64_t seed, const GeneratorConfig& gen) {
  std::mt19937_64 gate_rng(derive_seed(seed, 1));
  const Track track =
      randomize_track(base, stage.gate_xy_range, stage.gate_z_range, gate_rng);
  Scene scene = generate_obstacles(track, stage.density, track.shapes,
                                   derive_seed(seed, 2), gen);
  return Scene(scene.track(), scene.obstacles(), seed, stage.density);
}

namespace {

std::vector<std::uint64_t> fresh_seeds(int n, std::mt19937_64& rng) {
  std::vector<std::uint64_t> seeds;
  std::set<std::uint64_t> used;
  while (static_cast<int>(seeds.size()) < n) {
    const std::uint64_t s = rng();
    if (used.insert(s).second) seeds.push_back(s);
  }
  return seeds;
}

void build_scenes(SceneAssignment& a, const CurriculumStage& stage,
                  const Track& track, std::mt19937_64& rng) {
  a.seeds = fresh_seeds(a.n_scenes, rng);
  a.scenes.clear();
  for (std::uint64_t s : a.seeds) {
    a.scenes.push_back(
        std::make_shared<const Scene>(make_stage_scene(track, stage, s)));
  }
}

}  // namespace

SceneAssignment assign_scenes(int n_envs, int n_scenes,
                              const CurriculumStage& stage, const Track& track,
                              std::mt19937_64& rng) {
  if (n_scenes < 1 || n_scenes > n_envs) {
    throw std::invalid_argument("assign_scenes: need 1 <= n_scenes <= n_envs");
  }
  SceneAssignment a;
  a.n_envs = n_envs;
  a.n_scenes = n_scenes;
  a.group_of_env.resize(n_envs);
  for (int e = 0; e < n_envs; ++e) a.group_of_env[e] = e % n_scenes;
  build_scenes(a, stage, track, rng);
  return a;
}

SceneAssignment refresh(const SceneAssignment& assignment,
                        const CurriculumStage& stage, const Track& track,
                        std::mt19937_64& rng) {
  SceneAssignment a = assignment;
  build_scenes(a, stage, track, rng);
  return a;
}

CurriculumController::CurriculumController(CurriculumSchedule schedule)
    : schedule_(schedule) {
  if (schedule_.one_step) {
    stage_ = stage_config(schedule_.final_level, schedule_);
  } else {
    stage_ = stage_config(schedule_.start_level, schedule_);
    if (stage_.level == 3) {
      stage_.v_d = std::min(schedule_.target_speed,
                            schedule_.low_speed + schedule_.speed_step);
    }
  }
}

void CurriculumController::record_episode(bool success) {
  recent_.push_back(success);
  while (static_cast<int>(recent_.size()) > stage_.window) recent_.pop_front();
}

double CurriculumController::window_success_rate() const {
  if (recent_.empty()) return 0.0;
  return static_cast<double>(std::count(recent_.begin(), recent_.end(), true)) /
         static_cast<double>(recent_.size());
}

bool CurriculumController::maybe_advance(std::int64_t step) {
  if (!should_advance(recent_, stage_)) return false;
  CurriculumEvent ev;
  ev.step = step;
  ev.from_level = stage_.level;
  ev.success_rate = window_success_rate();
  if (stage_.level < schedule_.final_level) {
    stage_ = stage_config(stage_.level + 1, schedule_);
    if (stage_.level == 3) {
      stage_.v_d = std::min(schedule_.target_speed,
                            schedule_.low_speed + schedule_.speed_step);
    }
  } else if (stage_.level == 3 && stage_.v_d < schedule_.target_speed) {
    stage_.v_d = std::min(schedule_.target_speed, stage_.v_d + schedule_.speed_step);
  } else {
    return false;
  }
  ev.to_level = stage_.level;
  ev.v_d = stage_.v_d;
  events_.push_back(ev);
  recent_.clear();
  return true;
}

nlohmann::json CurriculumController::to_json() const {
  nlohmann::json events = nlohmann::json::array();
  for (const CurriculumEvent& e : events_) {
    events.push_back({{"step", e.step},
                      {"from", e.from_level},
                      {"to", e.to_level},
                      {"v_d", e.v_d},
                      {"success_rate", e.success_rate}});
  }
  return {{"level", stage_.level},
          {"v_d", stage_.v_d},
          {"recent", std::vector<bool>(recent_.begin(), recent_.end())},
          {"events", events}};
}

void CurriculumController::load_json(const nlohmann::json& j) {
  stage_ = stage_config(j.at("level").get<int>(), schedule_);
  stage_.v_d = j.at("v_d").get<double>();
  recent_.clear();
  for (bool b : j.at("recent")) recent_.push_back(b);
  events_.clear();
  for (const auto& e : j.at("events")) {
    events_.push_back({e.at("step").get<std::int64_t>(), e.at("from").get<int>(),
                       e.at("to").get<int>(), e.at("v_d").get<double>(),
                       e.at("success_rate").get<double>()});
  }
}

}  // namespace gaterace
