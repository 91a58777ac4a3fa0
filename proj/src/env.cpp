#include "gaterace/env.hpp"

#include <stdexcept>

namespace gaterace {

const char* to_string(DoneReason r) {
  switch (r) {
    case DoneReason::kRunning:
      return "running";
    case DoneReason::kCrash:
      return "crash";
    case DoneReason::kLapComplete:
      return "lap_complete";
    case DoneReason::kTimeout:
      return "timeout";
    case DoneReason::kDivergence:
      return "divergence";
  }
  return "unknown";
}

int following_gate(const Track& track, int gate) {
  if (track.closed) return track.wrap(gate + 1);
  return std::min(gate + 1, static_cast<int>(track.gates.size()) - 1);
}

Observation assemble_observation(const QuadState& state, const Track& track,
                                 int next_gate_index, double v_d,
                                 DepthImage depth) {
  const Quat to_body = state.q.conjugate();
  const Vec3& g1 = track.gates[next_gate_index].center;
  const Vec3& g2 = track.gates[following_gate(track, next_gate_index)].center;
  const Vec3 p1 = to_body * (g1 - state.p_W);
  const Vec3 p2 = to_body * (g2 - state.p_W);
  const Vec3 v = to_body * state.v_W;

  Observation obs;
  auto& s = obs.state;
  for (int i = 0; i < 3; ++i) {
    s[i] = p1[i];
    s[3 + i] = p2[i];
    s[6 + i] = v[i];
    s[14 + i] = state.omega[i];
  }
  s[9] = v_d;
  s[10] = state.q.w();
  s[11] = state.q.x();
  s[12] = state.q.y();
  s[13] = state.q.z();
  obs.depth = std::move(depth);
  return obs;
}

RewardBreakdown compute_reward(const EpisodeState& prev, const QuadState& state,
                               const ActionCTBR& action, const Scene& scene,
                               const CurriculumStage& stage,
                               const StepEvents& events,
                               const RewardWeights& w, double drone_radius) {
  const Track& track = scene.track();
  const int target = events.passed
                         ? following_gate(track, prev.next_gate_index)
                         : prev.next_gate_index;
  const Vec3& gate = track.gates[target].center;

  RewardBreakdown r;
  if (!events.passed) {
    const double d_t = (gate - state.p_W).norm();
    r.prog = w.prog * (prev.prev_distance - d_t);
  }

  const Vec3 to_gate = gate - state.p_W;
  const double bearing = std::atan2(to_gate.y(), to_gate.x());
  r.theta = w.theta * std::exp(-std::abs(wrap_angle(yaw_of(state.q) - bearing)));

  const Eigen::Vector4d u = action.as_vector();
  r.cmd = w.cmd * u.norm() +
          w.cmd_delta * (u - prev.prev_action.as_vector()).norm();

  if (stage.vd_penalty_enabled) {
    const double excess = state.v_W.norm() - stage.v_d;
    r.vd = w.vd * (w.vd_clamped ? std::max(0.0, excess) : excess);
  }

  const double d_col =
      distance_to_nearest_collision(state.p_W, drone_radius, scene);
  r.avoid = w.avoid / (d_col + w.b_omega);
  r.pass = events.passed ? w.pass : 0.0;
  r.crash = events.crashed ? w.crash : 0.0;
  r.total = r.prog + r.theta + r.cmd + r.vd + r.avoid + r.pass + r.crash;
  return r;
}

RacingEnv::RacingEnv(EnvConfig config, std::uint64_t seed)
    : config_(std::move(config)), rng_(seed) {
  config_.camera.validate();
}

Observation RacingEnv::observe() {
  DepthImage depth;
  if (config_.use_depth) {
    depth = to_observation(render_depth(state_, *scene_, config_.camera),
                           config_.camera, config_.depth_sigma, rng_);
  }
  return assemble_observation(state_, scene_->track(), episode_.next_gate_index,
                              stage_.v_d, std::move(depth));
}

Observation RacingEnv::reset() {
  if (!scene_) throw std::logic_error("RacingEnv::reset: no scene assigned");
  const Track& track = scene_->track();
  std::uniform_int_distribution<int> pick(
      0, static_cast<int>(track.start_points.size()) - 1);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  for (int attempt = 0; attempt < config_.max_reset_tries; ++attempt) {
    const int idx = config_.fixed_start ? *config_.fixed_start : pick(rng_);
    const StartPoint& sp = track.start_points.at(idx);
    const double j = config_.start_jitter;
    const Vec3 p = sp.position + j * Vec3(jitter(rng_), jitter(rng_), jitter(rng_));
    if (distance_to_nearest_collision(p, config_.drone_radius, *scene_) <= 0.0) {
      continue;
    }
    const Vec3 to_gate = track.gates[sp.next_gate].center - p;
    state_ = QuadState{};
    state_.p_W = p;
    state_.q = quat_from_yaw(std::atan2(to_gate.y(), to_gate.x()));

    episode_ = EpisodeState{};
    episode_.next_gate_index = sp.next_gate;
    episode_.gates_to_finish = track.gates_to_finish(sp);
    episode_.prev_action.thrust = -track.quad.g.z();
    episode_.prev_distance = to_gate.norm();
    needs_reset_ = false;
    return observe();
  }
  throw std::runtime_error("RacingEnv::reset: every jittered start collides");
}

StepResult RacingEnv::step(const ActionCTBR& action) {
  if (needs_reset_) {
    throw std::logic_error("RacingEnv::step called after a terminal step");
  }
  const Track& track = scene_->track();
  const QuadParams& quad = track.quad;
  const EpisodeState prev = episode_;

  StepEvents events;
  DoneReason done = DoneReason::kRunning;
  for (int sub = 0; sub < config_.action_repeat; ++sub) {
    const Vec3 p_prev = state_.p_W;
    try {
      state_ = gaterace::step(state_, action, config_.physics_dt, quad);
    } catch (const SimulationDivergence&) {
      events.crashed = true;
      done = DoneReason::kDivergence;
      break;
    }
    episode_.time += config_.physics_dt;

    if (gate_passed(p_prev, state_.p_W, track.gates[episode_.next_gate_index])) {
      events.passed = true;
      ++episode_.gates_passed;
      if (episode_.gates_passed >= episode_.gates_to_finish) {
        episode_.lap_time = episode_.time;
        done = DoneReason::kLapComplete;
      }
    }
    const bool hit_ground = state_.p_W.z() <= config_.drone_radius;
    if (hit_ground || distance_to_nearest_collision(
                          state_.p_W, config_.drone_radius, *scene_) <= 0.0) {
      events.crashed = true;
      done = DoneReason::kCrash;
    }
    if (done != DoneReason::kRunning) break;
  }

  StepResult result;
  result.reward = compute_reward(prev, state_, action, *scene_, stage_, events,
                                 config_.reward, config_.drone_radius);

  if (events.passed) {
    episode_.next_gate_index = following_gate(track, prev.next_gate_index);
  }
  episode_.prev_distance =
      (track.gates[episode_.next_gate_index].center - state_.p_W).norm();
  episode_.prev_action = action;
  ++episode_.steps;
  if (done == DoneReason::kRunning && episode_.steps >= config_.max_steps) {
    done = DoneReason::kTimeout;
  }
  episode_.done_reason = done;
  needs_reset_ = done != DoneReason::kRunning;

  result.done = done;
  result.obs = observe();
  result.info.d_col =
      distance_to_nearest_collision(state_.p_W, config_.drone_radius, *scene_);
  result.info.gates_passed = episode_.gates_passed;
  result.info.speed = state_.v_W.norm();
  result.info.reward = result.reward;
  result.info.lap_time = episode_.lap_time;
  return result;
}

}  // namespace gaterace
